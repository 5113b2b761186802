"""Feature monitors and their product with a hybrid automaton.

The monitor for an n-stage feature has locations ``w0 .. w{n-1}`` (waiting
for stage k) and ``accept``. The advance edge out of ``wk`` checks stage k's
level guard, the delay window on the monitor clock (stages after the first)
and, for event stages, the rising edge of the event predicate. Its resets
store the captures, restart the clock, and on the last edge write ``feat``.

In the product every location (l, q) runs l's flow extended with
``mon_t' = 1`` (global time), ``mon_c' = 1`` (delay clock) and constant
registers. Model jumps keep q; monitor advances keep l. Rising edges are not
encoded as extra discrete state: advance transitions carry the event
predicate in ``Transition.event`` and the analyses fire them only at
instants where it turns true.
"""

from collections import deque
from dataclasses import dataclass, field

from .errors import ModelError
from .expr import LinExpr, TIME
from .model import (Condition, HybridAutomaton, Location, Porv, Transition,
                    mode_matches)
from .trace import Sample, Trace, TraceStep

TIME_VAR = "mon_t"
CLOCK_VAR = "mon_c"
FEAT_VAR = "feat"
ACCEPT = "accept"


@dataclass(frozen=True)
class MonitorEdge:
    stage: int
    source: str
    target: str
    guard: Condition
    event: Condition        # None for level stages
    reset: dict


@dataclass(frozen=True)
class MonitorAutomaton:
    feature: str
    locations: tuple
    edges: tuple
    clock: str
    time_var: str
    registers: tuple        # feature locals + feat

    @property
    def accept(self):
        return self.locations[-1]


def _time_to_var(e):
    if TIME in e.variables:
        return e.substitute({TIME: LinExpr.var(TIME_VAR)})
    return e


def compile_monitor(f):
    spec = f.resolved
    n = len(spec.stages)
    locs = tuple("w%d" % k for k in range(n)) + (ACCEPT,)
    edges = []
    for k, stage in enumerate(spec.stages):
        guard = stage.guard.map_exprs(_time_to_var)
        if k > 0:
            win = spec.stages[k - 1].delay_to_next
            clk = LinExpr.var(CLOCK_VAR)
            extra = [Porv(clk, ">=", LinExpr.const(win.lower))]
            if not win.is_open:
                extra.append(Porv(clk, "<=", LinExpr.const(win.upper)))
            guard = guard & Condition(tuple(extra))
        event = stage.event_condition
        if event is not None:
            event = event.map_exprs(_time_to_var)
        reset = {name: _time_to_var(e) for name, e in stage.captures}
        reset[CLOCK_VAR] = LinExpr.const(0.0)
        if k == n - 1:
            # compute reads the pre-state, so same-edge captures are inlined
            reset[FEAT_VAR] = spec.compute.substitute(
                {name: _time_to_var(e) for name, e in stage.captures})
        edges.append(MonitorEdge(k, locs[k], locs[k + 1], guard, event, reset))
    return MonitorAutomaton(spec.name, locs, tuple(edges), CLOCK_VAR, TIME_VAR,
                            tuple(spec.locals) + (FEAT_VAR,))


def product_name(loc, q):
    return "%s__%s" % (loc, q)


@dataclass(frozen=True)
class ProductModel:
    automaton: HybridAutomaton
    feat_var: str
    accept_locations: tuple
    source_model: str
    source_feature: str
    model: HybridAutomaton = None
    feature: object = None
    monitor: MonitorAutomaton = None
    pairs: dict = field(default_factory=dict)   # product loc -> (model loc, monitor loc)

    @property
    def time_var(self):
        return TIME_VAR

    @property
    def monitor_variables(self):
        return tuple(v for v in self.automaton.variables if v not in self.model.variables)

    def model_mode(self, loc):
        return self.pairs[loc][0]

    def monitor_state(self, loc):
        return self.pairs[loc][1]

    def is_accept(self, loc):
        return loc in self.accept_locations

    def project(self, tr):
        """Erase the monitor from a product trace."""
        keep = set(self.model.variables)
        steps = []
        for s in tr.steps:
            mode = None if s.mode is None else self.pairs.get(s.mode, (s.mode,))[0]
            samples = tuple(Sample(smp.t, {k: v for k, v in smp.values.items() if k in keep},
                                   None if smp.widths is None else
                                   {k: v for k, v in smp.widths.items() if k in keep})
                            for smp in s.samples)
            steps.append(TraceStep(s.index, mode, s.t0, s.t1, samples, s.is_null))
        return Trace(tuple(steps), tr.source, self.model.name, dict(tr.meta))


def _resolve_modes(cond, ha, where):
    for m in cond.modes:
        if not any(mode_matches(m, l) for l in ha.location_names):
            raise ModelError("unresolved monitor predicate location '%s' in %s" % (m, where))


def _mode_filter(cond, loc):
    """Drop location predicates satisfied by ``loc``; None if one fails."""
    kept = []
    for p in cond.conjuncts:
        if p.is_mode:
            if not mode_matches(p.mode, loc):
                return None
        else:
            kept.append(p)
    return Condition(tuple(kept))


def product(ha, m, feature=None):
    """Compose ``ha`` with monitor ``m``; unreachable pairs are pruned."""
    registers = [r for r in m.registers]
    extra = [m.time_var, m.clock] + registers
    clash = set(extra) & (set(ha.variables) | set(ha.parameters))
    if clash:
        raise ModelError("monitor variable(s) %s clash with model names" % ", ".join(sorted(clash)))
    variables = tuple(ha.variables) + tuple(extra)
    allowed = set(variables)
    for e in m.edges:
        where = "stage %d of feature %s" % (e.stage + 1, m.feature)
        conds = [e.guard] + ([e.event] if e.event is not None else [])
        for c in conds:
            bad = c.variables - allowed
            if bad:
                raise ModelError("unresolved monitor predicate variable(s) %s in %s"
                                 % (", ".join(sorted(bad)), where))
            _resolve_modes(c, ha, where)
        for v, r in e.reset.items():
            bad = r.variables - allowed
            if bad:
                raise ModelError("unresolved capture variable(s) %s in %s"
                                 % (", ".join(sorted(bad)), where))

    one = LinExpr.const(1.0)
    zero = LinExpr()
    mon_flow = {m.time_var: one, m.clock: one}
    mon_flow.update({r: zero for r in registers})

    # discrete successor structure on pairs
    def successors(l, qi):
        out = []
        for t in ha.outgoing(l):
            out.append(("model", t, t.target, qi))
        if qi < len(m.edges):
            e = m.edges[qi]
            guard = _mode_filter(e.guard, l)
            event = None if e.event is None else _mode_filter(e.event, l)
            if guard is not None and (e.event is None or event is not None):
                out.append(("advance", e, l, qi + 1))
        return out

    init = (ha.initial[0], 0)
    seen = {init}
    order = [init]
    queue = deque([init])
    while queue:
        l, qi = queue.popleft()
        for _, _, l2, q2 in successors(l, qi):
            if (l2, q2) not in seen:
                seen.add((l2, q2))
                order.append((l2, q2))
                queue.append((l2, q2))
    order.sort(key=lambda p: (p[1], ha.location_names.index(p[0])))

    locations = []
    transitions = []
    pairs = {}
    for l, qi in order:
        mloc = ha.location(l)
        name = product_name(l, m.locations[qi])
        pairs[name] = (l, m.locations[qi])
        flow = dict(mloc.flow)
        flow.update(mon_flow)
        locations.append(Location(name, flow, mloc.invariant, mloc.urgent))
        for kind, obj, l2, q2 in successors(l, qi):
            target = product_name(l2, m.locations[q2])
            if kind == "model":
                transitions.append(Transition(name, target, obj.guard, dict(obj.reset)))
            else:
                guard = _mode_filter(obj.guard, l)
                transitions.append(Transition(name, target, guard, dict(obj.reset),
                                              obj.event, "advance", obj.stage))

    zero_init = Condition(tuple(Porv(LinExpr.var(v), "==", LinExpr()) for v in extra))
    automaton = HybridAutomaton(
        "%s_x_%s" % (ha.name, m.feature), variables, dict(ha.parameters),
        tuple(locations), tuple(transitions),
        (product_name(ha.initial[0], m.locations[0]), ha.initial[1] & zero_init))
    accept = tuple(n for n, (l, q) in pairs.items() if q == m.accept)
    return ProductModel(automaton, FEAT_VAR, accept, ha.name, m.feature,
                        ha, feature, m, pairs)


def build_product(ha, f):
    """compile_monitor + product for a bound feature."""
    return product(ha, compile_monitor(f), f)
