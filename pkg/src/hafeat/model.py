"""In-memory hybrid automata: conditions, locations, transitions."""

from dataclasses import dataclass, field

from .expr import LinExpr, TIME, parse_expr

RELATIONS = ("<=", "<", ">=", ">", "==")
MODE_KEYWORDS = ("mode", "state")
EQ_TOL = 1e-9


def mode_matches(pred, actual):
    """Location predicate test; falls back to a case-insensitive match."""
    return pred == actual or pred.casefold() == str(actual).casefold()


@dataclass(frozen=True)
class Porv:
    """``lhs rel rhs`` over variables, or ``state == mode`` when ``mode`` is set."""

    lhs: LinExpr = LinExpr()
    relation: str = "=="
    rhs: LinExpr = LinExpr()
    mode: str = None

    @classmethod
    def location(cls, name):
        return cls(mode=name)

    @property
    def is_mode(self):
        return self.mode is not None

    @property
    def variables(self):
        return self.lhs.variables | self.rhs.variables

    @property
    def parameters(self):
        return self.lhs.parameters | self.rhs.parameters

    def difference(self):
        return self.lhs - self.rhs

    def map_exprs(self, fn):
        if self.is_mode:
            return self
        return Porv(fn(self.lhs), self.relation, fn(self.rhs))

    def holds(self, values, mode=None, params=()):
        if self.is_mode:
            return mode is not None and mode_matches(self.mode, mode)
        d = self.lhs.evaluate(values, params) - self.rhs.evaluate(values, params)
        return _compare(d, self.relation)

    def format(self, mode_keyword="mode", var_style=None):
        if self.is_mode:
            return "%s == %s" % (mode_keyword, self.mode)
        return "%s %s %s" % (self.lhs.format(var_style), self.relation,
                             self.rhs.format(var_style))

    def __str__(self):
        return self.format()


def _compare(d, rel):
    if rel == "<=":
        return d <= 0.0
    if rel == "<":
        return d < 0.0
    if rel == ">=":
        return d >= 0.0
    if rel == ">":
        return d > 0.0
    return abs(d) <= EQ_TOL


@dataclass(frozen=True)
class Condition:
    conjuncts: tuple = ()

    @classmethod
    def true(cls):
        return cls(())

    def __and__(self, other):
        return Condition(self.conjuncts + other.conjuncts)

    def __bool__(self):
        return True

    @property
    def is_true(self):
        return not self.conjuncts

    @property
    def variables(self):
        out = set()
        for p in self.conjuncts:
            out |= p.variables
        return frozenset(out)

    @property
    def parameters(self):
        out = set()
        for p in self.conjuncts:
            out |= p.parameters
        return frozenset(out)

    @property
    def modes(self):
        return tuple(p.mode for p in self.conjuncts if p.is_mode)

    def map_exprs(self, fn):
        return Condition(tuple(p.map_exprs(fn) for p in self.conjuncts))

    def linear(self):
        return Condition(tuple(p for p in self.conjuncts if not p.is_mode))

    def holds(self, values, mode=None, params=()):
        return all(p.holds(values, mode, params) for p in self.conjuncts)

    def format(self, mode_keyword="mode", var_style=None):
        if not self.conjuncts:
            return "true"
        return " && ".join(p.format(mode_keyword, var_style) for p in self.conjuncts)

    def __str__(self):
        return self.format()


@dataclass(frozen=True)
class Location:
    name: str
    flow: dict
    invariant: Condition = Condition()
    urgent: bool = False


@dataclass(frozen=True)
class Transition:
    source: str
    target: str
    guard: Condition = Condition()
    reset: dict = field(default_factory=dict)
    # product-level annotations; plain models leave the defaults
    event: Condition = None
    kind: str = "model"
    stage: int = None


@dataclass(frozen=True)
class HybridAutomaton:
    name: str
    variables: tuple
    parameters: dict
    locations: tuple
    transitions: tuple
    initial: tuple          # (location-name, Condition)

    def location(self, name):
        for loc in self.locations:
            if loc.name == name:
                return loc
        raise KeyError(name)

    @property
    def location_names(self):
        return tuple(loc.name for loc in self.locations)

    def outgoing(self, name):
        return tuple(t for t in self.transitions if t.source == name)


@dataclass(frozen=True)
class Valuation:
    mode: str
    values: dict
    time: float = 0.0


###############################################################################
# Operations
###############################################################################

@dataclass(frozen=True)
class Diagnostic:
    kind: str
    element: str

    def __str__(self):
        return "%s: %s" % (self.kind, self.element)


def validate(ha, mode_names=None):
    """Return the list of well-formedness problems of ``ha`` (empty if none).

    ``mode_names`` overrides the names location predicates may refer to
    (a product automaton's predicates name the original model's locations).
    """
    diags = []

    def bad(kind, element):
        diags.append(Diagnostic(kind, element))

    variables = set()
    for v in ha.variables:
        if v in variables:
            bad("duplicate variable", v)
        variables.add(v)
    params = set(ha.parameters)
    for p in sorted(params & variables):
        bad("variable/parameter clash", p)
    for p, value in sorted(ha.parameters.items()):
        try:
            ok = float(value) == float(value) and abs(float(value)) != float("inf")
        except (TypeError, ValueError):
            ok = False
        if not ok:
            bad("non-finite parameter", p)

    names = set()
    for loc in ha.locations:
        if loc.name in names:
            bad("duplicate location", loc.name)
        names.add(loc.name)

    def check_expr(e, where, allowed=variables):
        for v in sorted(e.variables - allowed):
            bad("undeclared variable", "%s in %s" % (v, where))
        for p in sorted(e.parameters - params):
            bad("undeclared parameter", "%s in %s" % (p, where))

    def check_cond(c, where):
        for p in c.conjuncts:
            if p.is_mode:
                if not any(mode_matches(p.mode, n) for n in (mode_names or names)):
                    bad("unknown location in predicate", "%s in %s" % (p.mode, where))
            else:
                check_expr(p.lhs, where)
                check_expr(p.rhs, where)

    for loc in ha.locations:
        where = "location %s" % loc.name
        missing = [v for v in ha.variables if v not in loc.flow]
        if missing:
            bad("incomplete flow", "%s lacks ddt %s" % (loc.name, ", ".join(missing)))
        for v, e in loc.flow.items():
            if v not in variables:
                bad("flow for undeclared variable", "%s in %s" % (v, where))
            check_expr(e, where)
        check_cond(loc.invariant, where)

    for i, t in enumerate(ha.transitions):
        where = "transition %d (%s->%s)" % (i, t.source, t.target)
        if t.source not in names:
            bad("undeclared source location", where)
        if t.target not in names:
            bad("undeclared target location", where)
        check_cond(t.guard, where)
        if t.event is not None:
            check_cond(t.event, where)
        for v, e in t.reset.items():
            if v not in variables:
                bad("reset of undeclared variable", "%s in %s" % (v, where))
            check_expr(e, where)

    init_loc, init_cond = ha.initial
    if init_loc not in names:
        bad("undeclared initial location", str(init_loc))
    check_cond(init_cond, "initial condition")
    return diags


def eval_lin(e, v, params=None):
    """Evaluate an expression at a valuation; ``$time`` reads the global clock."""
    values = v.values
    if TIME in e.variables:
        values = dict(values)
        values[TIME] = v.time
    return e.evaluate(values, params or {})


def eval_condition(c, v, params=None):
    values = v.values
    if TIME in c.variables:
        values = dict(values)
        values[TIME] = v.time
    return c.holds(values, v.mode, params or {})


def resolve_automaton(ha):
    """Copy of ``ha`` with every parameter replaced by its value."""
    p = ha.parameters
    res = lambda e: e.resolve(p)
    locs = tuple(Location(l.name, {v: res(e) for v, e in l.flow.items()},
                          l.invariant.map_exprs(res), l.urgent) for l in ha.locations)
    trans = tuple(Transition(t.source, t.target, t.guard.map_exprs(res),
                             {v: res(e) for v, e in t.reset.items()},
                             None if t.event is None else t.event.map_exprs(res),
                             t.kind, t.stage) for t in ha.transitions)
    return HybridAutomaton(ha.name, ha.variables, dict(ha.parameters), locs, trans,
                           (ha.initial[0], ha.initial[1].map_exprs(res)))


###############################################################################
# Condition parsing (shared by the frontends)
###############################################################################

def parse_condition(ts, classify, on_mode=None, conj=("&&",), mode_keywords=MODE_KEYWORDS):
    """Parse ``atom (&& atom)*``; atoms are porvs, mode tests or parenthesised.

    ``on_mode(token, primed, name)`` may intercept location predicates; it
    returns a Porv to keep or None to drop.
    """
    out = []
    parse_condition_atom(ts, classify, on_mode, conj, mode_keywords, out)
    while ts.accept(*conj):
        parse_condition_atom(ts, classify, on_mode, conj, mode_keywords, out)
    return Condition(tuple(out))


def parse_condition_atom(ts, classify, on_mode, conj, mode_keywords, out):
    """Parse one conjunct and append its porvs to ``out``."""
    t = ts.tok
    if t.kind == "id" and t.value in mode_keywords:
        primed = ts.peek().value == "'"
        nxt = ts.peek(2 if primed else 1)
        if nxt.value == "==":
            ts.advance()
            if primed:
                ts.advance()
            ts.advance()
            name = ts.expect_id("location name")
            porv = Porv.location(name)
            if on_mode is not None:
                porv = on_mode(t, primed, name)
            elif primed:
                ts.error("primed location predicate not allowed here", t)
            if porv is not None:
                out.append(porv)
            return
    if t.value == "(":
        save = ts.pos
        ts.advance()
        try:
            inner = parse_condition(ts, classify, on_mode, conj, mode_keywords)
            ts.expect(")")
            out.extend(inner.conjuncts)
            return
        except Exception:
            ts.pos = save
    lhs = parse_expr(ts, classify)
    if not ts.at(*RELATIONS):
        if ts.at("!="):
            ts.error("'!=' is not supported in conditions")
        ts.error("expected relation, found %s" % ts.describe())
    rel = ts.advance().value
    rhs = parse_expr(ts, classify)
    out.append(Porv(lhs, rel, rhs))
