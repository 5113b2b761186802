"""SpaceEx (SX) XML models and configuration files.

Supported subset:

* base components with real ``param`` entries (``dynamics="any"`` are
  variables, ``dynamics="const"`` constants), ``label`` params, locations
  carrying ``invariant`` and ``flow`` text, transitions with ``guard`` and
  ``assignment``;
* one level of network components whose ``bind`` elements instantiate base
  components through ``map key=...`` entries. A map to a number turns the
  constant into a model parameter; a map to a name renames the variable.
  Several binds compose by interleaving, so they may not share labels.

Conjunction is ``&`` or ``&&``. Flows are ``x' == expr``; assignments are
``x' == expr`` or ``x := expr``. In a configuration, ``initially`` may hold
``loc(c) == name`` clauses that pick the initial location.
"""

import itertools
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

from .errors import ModelError, NonAffineError, ParseError
from .expr import LinExpr, TokenStream, parse_expr
from .model import Condition, HybridAutomaton, Location, Transition, parse_condition

_CONJ = ("&&", "&")


@dataclass(frozen=True)
class SxLocation:
    id: str
    name: str
    invariant: Condition
    flow: dict


@dataclass(frozen=True)
class SxTransition:
    source: str
    target: str
    label: str
    guard: Condition
    reset: dict


@dataclass(frozen=True)
class SxBind:
    component: str
    name: str
    maps: dict          # key -> float or name


@dataclass(frozen=True)
class SxComponent:
    id: str
    variables: tuple
    constants: tuple
    labels: tuple
    locations: tuple = ()
    transitions: tuple = ()
    binds: tuple = ()

    @property
    def is_network(self):
        return bool(self.binds)


@dataclass(frozen=True)
class SxDocument:
    components: dict
    source: str = "<memory>"

    def component(self, cid):
        try:
            return self.components[cid]
        except KeyError:
            raise ModelError("SX document has no component '%s'" % cid)


@dataclass(frozen=True)
class SxConfig:
    system: str = None
    initially: str = None
    locations: dict = field(default_factory=dict)   # bind/component -> location
    time_horizon: float = None


def _local(tag):
    return tag.rsplit("}", 1)[-1]


def _children(el, name):
    return [c for c in el if _local(c.tag) == name]


def _text(el, name):
    found = _children(el, name)
    if not found:
        return None
    return (found[0].text or "").strip()


###############################################################################
# Expression text
###############################################################################

class _Classifier:
    def __init__(self, variables, constants, where, source):
        self.variables = set(variables)
        self.constants = set(constants)
        self.where = where
        self.source = source

    def __call__(self, name, tok):
        if name in self.constants:
            return "param"
        if name in self.variables:
            return "var"
        raise ParseError("unknown name '%s' in %s" % (name, self.where),
                         tok.line, tok.column, self.source)


def _stream(text, where, source):
    return TokenStream(text, "%s (%s)" % (source, where))


def _condition(text, cls, where, source):
    if text is None or not text.strip() or text.strip() == "true":
        return Condition.true()
    ts = _stream(text, where, source)
    cond = parse_condition(ts, cls, conj=_CONJ)
    if not ts.at_kind("eof"):
        ts.error("unexpected %s" % ts.describe())
    return cond


def _flow(text, cls, variables, where, source):
    flow = {}
    if text is None or not text.strip():
        return flow
    ts = _stream(text, where, source)
    while True:
        tok = ts.tok
        var = ts.expect_id("variable")
        if var not in variables:
            ts.error("flow for unknown variable '%s'" % var, tok)
        ts.expect("'", "derivative x'")
        ts.expect("==")
        try:
            e = parse_expr(ts, cls)
        except NonAffineError as err:
            raise NonAffineError("non-affine flow for %s: %s" % (var, err.message),
                                 err.line, err.column, err.source)
        if any(v.endswith("'") for v in e.variables):
            ts.error("derivative on the right of a flow equation", tok)
        if var in flow:
            ts.error("two flow equations for '%s'" % var, tok)
        flow[var] = e
        if not ts.accept(*_CONJ):
            break
    if not ts.at_kind("eof"):
        ts.error("unexpected %s in flow" % ts.describe())
    return flow


def _assignment(text, cls, variables, where, source):
    reset = {}
    if text is None or not text.strip():
        return reset
    ts = _stream(text, where, source)
    while True:
        tok = ts.tok
        var = ts.expect_id("variable")
        if var not in variables:
            ts.error("assignment to unknown variable '%s'" % var, tok)
        if ts.accept(":="):
            pass
        else:
            ts.expect("'", "x' == e or x := e")
            ts.expect("==")
        e = parse_expr(ts, cls)
        if any(v.endswith("'") for v in e.variables):
            ts.error("primed variable on the right of an assignment", tok)
        reset[var] = e
        if not ts.accept(*_CONJ):
            break
    if not ts.at_kind("eof"):
        ts.error("unexpected %s in assignment" % ts.describe())
    return reset


###############################################################################
# Document
###############################################################################

def parse_sx(xml, source="<memory>"):
    """Parse SX XML text into an :class:`SxDocument`."""
    try:
        root = ET.fromstring(xml)
    except ET.ParseError as e:
        line, col = e.position
        raise ParseError("malformed XML: %s" % e, line, col + 1, source)
    comps = {}
    for el in _children(root, "component"):
        cid = el.get("id")
        if not cid:
            raise ParseError("component without id", None, None, source)
        if cid in comps:
            raise ParseError("duplicate component '%s'" % cid, None, None, source)
        comps[cid] = _component(el, cid, source)
    if not comps:
        raise ParseError("no component in SX document", None, None, source)
    for c in comps.values():
        for b in c.binds:
            if b.component not in comps:
                raise ModelError("bind '%s' in %s refers to unknown component '%s'"
                                 % (b.name, c.id, b.component))
    return SxDocument(comps, source)


def load_sx(path):
    with open(path, encoding="utf-8") as fh:
        return parse_sx(fh.read(), str(path))


def _component(el, cid, source):
    variables, constants, labels = [], [], []
    for p in _children(el, "param"):
        name = p.get("name")
        kind = p.get("type", "real")
        if kind == "label":
            labels.append(name)
        elif p.get("dynamics", "any") == "const":
            constants.append(name)
        else:
            variables.append(name)
    cls = _Classifier(variables, constants, "component %s" % cid, source)
    locs = []
    ids = {}
    for l in _children(el, "location"):
        lid = l.get("id")
        name = l.get("name") or "loc%s" % lid
        if lid in ids:
            raise ParseError("duplicate location id %s in %s" % (lid, cid), None, None, source)
        where = "location %s of %s" % (name, cid)
        inv = _condition(_text(l, "invariant"), cls, where, source)
        flow = _flow(_text(l, "flow"), cls, variables, where, source)
        ids[lid] = name
        locs.append(SxLocation(lid, name, inv, flow))
    names = [l.name for l in locs]
    if len(set(names)) != len(names):
        raise ParseError("duplicate location name in %s" % cid, None, None, source)
    trans = []
    for t in _children(el, "transition"):
        src, dst = t.get("source"), t.get("target")
        for end in (src, dst):
            if end not in ids:
                raise ParseError("transition in %s refers to unknown location id %s"
                                 % (cid, end), None, None, source)
        where = "transition %s->%s of %s" % (ids[src], ids[dst], cid)
        label = _text(t, "label") or None
        guard = _condition(_text(t, "guard"), cls, where, source)
        reset = _assignment(_text(t, "assignment"), cls, variables, where, source)
        trans.append(SxTransition(ids[src], ids[dst], label, guard, reset))
    binds = []
    for b in _children(el, "bind"):
        maps = {}
        for m in _children(b, "map"):
            key = m.get("key")
            val = (m.text or "").strip()
            try:
                maps[key] = float(val)
            except ValueError:
                maps[key] = val
        binds.append(SxBind(b.get("component"), b.get("as") or b.get("component"), maps))
    return SxComponent(cid, tuple(variables), tuple(constants), tuple(labels),
                       tuple(locs), tuple(trans), tuple(binds))


###############################################################################
# Configuration
###############################################################################

_LOC_RE = re.compile(r"^loc\s*\(\s*([A-Za-z_][\w.]*)?\s*\)\s*==\s*([A-Za-z_]\w*)$")


def _split_conj(text):
    parts, depth, cur, i = [], 0, [], 0
    while i < len(text):
        ch = text[i]
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "&" and depth == 0:
            parts.append("".join(cur))
            cur = []
            i += 2 if text[i:i + 2] == "&&" else 1
            continue
        cur.append(ch)
        i += 1
    parts.append("".join(cur))
    return [p.strip() for p in parts if p.strip()]


def parse_sx_config(text, source="<memory>"):
    """Parse a SpaceEx ``key = value`` configuration."""
    values = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected key = value", n, 1, source)
        key, val = line.split("=", 1)
        key = key.strip()
        val = val.strip()
        if len(val) >= 2 and val[0] == val[-1] and val[0] in "\"'":
            val = val[1:-1]
        values[key] = (val, n)
    system = values.get("system", (None, 0))[0]
    horizon = None
    if "time-horizon" in values:
        val, n = values["time-horizon"]
        try:
            horizon = float(val)
        except ValueError:
            raise ParseError("time-horizon must be a number", n, 1, source)
    init_text = values.get("initially", ("", 0))[0]
    locs = {}
    conds = []
    for part in _split_conj(init_text):
        m = _LOC_RE.match(part)
        if m:
            locs[m.group(1) or ""] = m.group(2)
        else:
            conds.append(part)
    return SxConfig(system, " & ".join(conds) if conds else None, locs, horizon)


def load_sx_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_sx_config(fh.read(), str(path))


###############################################################################
# Flattening
###############################################################################

def _rename(e, mapping):
    return e.rename(mapping) if mapping else e


def _instance(comp, bind, network):
    """Base component under a bind: renamed variables, constant parameters."""
    ren, params = {}, {}
    maps = dict(bind.maps) if bind else {}
    for c in comp.constants:
        if c not in maps:
            raise ModelError("constant '%s' of component %s has no value; "
                             "bind it with a map" % (c, comp.id))
        v = maps[c]
        if isinstance(v, str):
            raise ModelError("constant '%s' of %s must map to a number, not '%s'"
                             % (c, comp.id, v))
        params[c] = v
    for v in comp.variables:
        target = maps.get(v, v)
        if not isinstance(target, str):
            raise ModelError("variable '%s' of %s cannot map to a number" % (v, comp.id))
        if network is not None and target not in network.variables:
            raise ModelError("bind %s maps '%s' to '%s', unknown in %s"
                             % (bind.name, v, target, network.id))
        if target != v:
            ren[v] = target
    return ren, params


def flatten(doc, cfg=None):
    """One flat automaton for ``cfg.system`` (default: the last component)."""
    cfg = cfg or SxConfig()
    sys_id = cfg.system or list(doc.components)[-1]
    top = doc.component(sys_id)
    if top.is_network:
        parts = []
        for b in top.binds:
            base = doc.component(b.component)
            if base.is_network:
                raise ModelError("nested network: bind %s in %s instantiates network %s; "
                                 "only one level of binds is supported"
                                 % (b.name, top.id, base.id))
            parts.append((b.name, base) + _instance(base, b, top))
        variables = tuple(top.variables)
    else:
        parts = [(top.id, top) + _instance(top, None, None)]
        variables = tuple(top.variables)

    # a constant bound to different values by different binds gets the
    # bind name as prefix
    seen = {}
    for _, _, _, ps in parts:
        for k, v in ps.items():
            seen.setdefault(k, set()).add(v)
    params = {}
    for name, base, ren, ps in parts:
        for k, v in ps.items():
            if len(seen[k]) > 1:
                ren[k] = "%s_%s" % (name, k)
            params[ren.get(k, k)] = v
    if set(params) & set(variables):
        raise ModelError("constant names clash with variables")
    label_owner = {}
    for name, base, _, _ in parts:
        used = {t.label for t in base.transitions if t.label}
        for lab in used:
            if lab in label_owner:
                raise ModelError("label '%s' is shared by binds %s and %s; synchronised "
                                 "composition is not supported" % (lab, label_owner[lab], name))
            label_owner[lab] = name

    def ren_cond(c, ren):
        return c.map_exprs(lambda e: _rename(e, ren))

    # interleaving product of the parts
    loc_lists = [[(l.name, l) for l in base.locations] for _, base, _, _ in parts]
    single = len(parts) == 1
    locations = []
    transitions = []
    zero = LinExpr()
    for combo in itertools.product(*loc_lists):
        lname = combo[0][0] if single else "_".join(n for n, _ in combo)
        flow = {v: zero for v in variables}
        owner = {}
        inv = Condition.true()
        for (pname, base, ren, _), (_, loc) in zip(parts, combo):
            inv = inv & ren_cond(loc.invariant, ren)
            for v, e in loc.flow.items():
                target = ren.get(v, v)
                if target in owner:
                    raise ModelError("variable '%s' has flows in binds %s and %s"
                                     % (target, owner[target], pname))
                owner[target] = pname
                flow[target] = _rename(e, ren)
        locations.append(Location(lname, flow, inv))
    names = [l.name for l in locations]
    if len(set(names)) != len(names):
        raise ModelError("flattened location names collide")
    for idx, combo in enumerate(itertools.product(*loc_lists)):
        src_name = names[idx]
        for pi, (pname, base, ren, _) in enumerate(parts):
            for t in base.transitions:
                if t.source != combo[pi][0]:
                    continue
                tgt = [n for n, _ in combo]
                tgt[pi] = t.target
                tname = tgt[0] if single else "_".join(tgt)
                reset = {ren.get(v, v): _rename(e, ren) for v, e in t.reset.items()}
                transitions.append(Transition(src_name, tname, ren_cond(t.guard, ren), reset))

    init_loc = _initial_location(cfg, parts, names, single)
    if cfg.initially is not None:
        cls = _Classifier(variables, params, "initially", "configuration")
        init = _condition(cfg.initially, cls, "initially", "configuration")
    else:
        init = _box_from_invariant(locations[names.index(init_loc)], variables)
    return HybridAutomaton(sys_id, variables, params, tuple(locations), tuple(transitions),
                           (init_loc, init))


def _initial_location(cfg, parts, names, single):
    if not cfg.locations:
        return names[0]
    chosen = []
    for pname, base, _, _ in parts:
        pick = cfg.locations.get(pname)
        if pick is None and single:
            pick = next(iter(cfg.locations.values()))
        if pick is None:
            pick = base.locations[0].name
        if pick not in [l.name for l in base.locations]:
            raise ModelError("initially selects unknown location '%s' of %s" % (pick, pname))
        chosen.append(pick)
    return chosen[0] if single else "_".join(chosen)


def _box_from_invariant(loc, variables):
    """Single-variable bounds of ``loc``'s invariant as an initial box."""
    out = []
    for p in loc.invariant.conjuncts:
        d = p.difference()
        if p.is_mode or len(d.variables) != 1 or d.parameters:
            continue
        out.append(p)
    return Condition(tuple(out))


def import_sx(xml_path, cfg_path=None):
    """Load and flatten; returns (automaton, config)."""
    doc = load_sx(xml_path)
    cfg = load_sx_config(cfg_path) if cfg_path else SxConfig()
    return flatten(doc, cfg), cfg
