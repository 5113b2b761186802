"""Feature specifications: parsing, printing and parameter binding.

A feature is a delay-separated sequence of stages followed by a compute
expression::

    feature settlingTime(Vr, E);
    begin
      var st;
      (v >= Vr+E) ##[0:$]
      @+(state == Open) && (v <= Vr+E), st = $time
      ##[0:$] @+(state == Open) && (v <= Vr+E)
        |-> settlingTime = st;
    end

Each stage is a conjunction of level predicates and rising edges ``@+(P)``,
optionally followed by captures ``local = expr`` (``$time`` is the global
clock). ``##[a:b]`` bounds the time between consecutive stage matches and
``$`` leaves the upper end open.
"""

import math
from dataclasses import dataclass

from .errors import BindError
from .expr import LinExpr, TIME, TokenStream, format_number, parse_expr
from .model import MODE_KEYWORDS, Condition, parse_condition, parse_condition_atom

OPEN = math.inf


@dataclass(frozen=True)
class DelayWindow:
    lower: float = 0.0
    upper: float = OPEN

    @property
    def is_open(self):
        return self.upper == OPEN

    def contains(self, d, tol=0.0):
        return self.lower - tol <= d <= self.upper + tol

    def __str__(self):
        hi = "$" if self.is_open else format_number(self.upper)
        return "##[%s:%s]" % (format_number(self.lower), hi)


@dataclass(frozen=True)
class EventEdge:
    predicate: Condition
    polarity: str = "rising"


@dataclass(frozen=True)
class Stage:
    guard: Condition = Condition()
    events: tuple = ()
    captures: tuple = ()            # ((local, LinExpr), ...)
    delay_to_next: DelayWindow = None

    @property
    def event_condition(self):
        """Conjunction of all event predicates, or None for a level stage."""
        if not self.events:
            return None
        c = Condition.true()
        for e in self.events:
            c = c & e.predicate
        return c

    def map_exprs(self, fn):
        return Stage(self.guard.map_exprs(fn),
                     tuple(EventEdge(e.predicate.map_exprs(fn), e.polarity) for e in self.events),
                     tuple((n, fn(e)) for n, e in self.captures),
                     self.delay_to_next)


def capture_kind(expr):
    if expr == LinExpr.var(TIME):
        return "now_time"
    if len(expr.terms) == 1 and expr.terms[0].coef == 1.0 and expr.terms[0].var:
        return "variable"
    return "linear-combination"


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    formals: tuple
    locals: tuple
    stages: tuple
    compute: LinExpr

    @property
    def model_variables(self):
        """Names the stages read from the model (excludes locals and $time)."""
        out = set()
        for s in self.stages:
            out |= s.guard.variables
            for e in s.events:
                out |= e.predicate.variables
            for _, c in s.captures:
                out |= c.variables
        return frozenset(out - set(self.locals) - {TIME})

    @property
    def location_names(self):
        out = []
        for s in self.stages:
            out.extend(s.guard.modes)
            for e in s.events:
                out.extend(e.predicate.modes)
        return tuple(out)


@dataclass(frozen=True)
class BoundFeature:
    spec: FeatureSpec
    bindings: dict

    @property
    def resolved(self):
        """The feature with every formal replaced by its bound value."""
        fn = lambda e: e.resolve(self.bindings)
        return FeatureSpec(self.spec.name, (), self.spec.locals,
                           tuple(s.map_exprs(fn) for s in self.spec.stages),
                           fn(self.spec.compute))

    @property
    def name(self):
        return self.spec.name


###############################################################################
# Parser
###############################################################################

def parse_feature(text, source="<memory>"):
    return _FeatureParser(text, source).parse()


def load_feature(path):
    with open(path, encoding="utf-8") as fh:
        return parse_feature(fh.read(), str(path))


class _FeatureParser:
    def __init__(self, text, source):
        self.ts = TokenStream(text, source)
        self.formals = []
        self.locals = []

    def classify_model(self, name, tok):
        if name in self.formals:
            return "param"
        return "var"

    def classify_compute(self, name, tok):
        if name in self.formals:
            return "param"
        if name in self.locals:
            return "var"
        self.ts.error("compute expression may only use locals and formals, not '%s'" % name, tok)

    def parse(self):
        ts = self.ts
        ts.expect("feature")
        name = ts.expect_id("feature name")
        ts.expect("(")
        if not ts.at(")"):
            self.formals.append(ts.expect_id("formal parameter"))
            while ts.accept(","):
                self.formals.append(ts.expect_id("formal parameter"))
        ts.expect(")")
        ts.expect(";")
        if len(set(self.formals)) != len(self.formals):
            ts.error("duplicate formal parameter")
        ts.expect("begin")
        while ts.accept("var"):
            while True:
                tok = ts.tok
                local = ts.expect_id("local variable")
                if local in self.locals or local in self.formals:
                    ts.error("'%s' declared twice" % local, tok)
                self.locals.append(local)
                if not ts.accept(","):
                    break
            ts.expect(";")
        stages = []
        window = None
        while True:
            stage = self._stage()
            if stages:
                stages[-1] = Stage(stages[-1].guard, stages[-1].events,
                                   stages[-1].captures, window)
            stages.append(stage)
            if ts.at("##"):
                window = self._delay()
                continue
            break
        ts.expect("|->")
        tok = ts.tok
        target = ts.expect_id("feature name")
        if target != name:
            ts.error("result assigned to '%s', expected '%s'" % (target, name), tok)
        ts.expect("=")
        compute = parse_expr(ts, self.classify_compute)
        ts.expect(";")
        ts.expect("end")
        if not ts.at_kind("eof"):
            ts.error("text after feature 'end'")
        return FeatureSpec(name, tuple(self.formals), tuple(self.locals), tuple(stages), compute)

    def _delay(self):
        ts = self.ts
        start = ts.expect("##")
        ts.expect("[")
        if ts.at("$"):
            ts.error("'$' cannot be a lower bound")
        lo = self._number()
        ts.expect(":")
        if ts.accept("$"):
            hi = OPEN
        else:
            hi = self._number()
        ts.expect("]")
        if lo < 0:
            ts.error("negative delay bound", start)
        if hi < lo:
            ts.error("empty delay window [%s:%s]" % (format_number(lo), format_number(hi)), start)
        return DelayWindow(lo, hi)

    def _number(self):
        ts = self.ts
        sign = -1.0 if ts.accept("-") else 1.0
        if not ts.at_kind("num"):
            ts.error("expected number, found %s" % ts.describe())
        return sign * float(ts.advance().value)

    def _stage(self):
        ts = self.ts
        levels = []
        events = []
        while True:
            if ts.at("@-"):
                ts.error("falling edges '@-' are not supported; only '@+' events")
            if ts.accept("@+"):
                ts.expect("(")
                pred = parse_condition(ts, self.classify_model)
                ts.expect(")")
                events.append(EventEdge(pred))
            else:
                parse_condition_atom(ts, self.classify_model, None, ("&&",),
                                     MODE_KEYWORDS, levels)
            if not ts.accept("&&"):
                break
        captures = []
        while ts.accept(","):
            tok = ts.tok
            local = ts.expect_id("local variable")
            if local not in self.locals:
                ts.error("capture of undeclared local '%s'" % local, tok)
            if any(n == local for n, _ in captures):
                ts.error("local '%s' captured twice in one stage" % local, tok)
            ts.expect("=")
            captures.append((local, parse_expr(ts, self.classify_model)))
        return Stage(Condition(tuple(levels)), tuple(events), tuple(captures), None)


###############################################################################
# Binding and printing
###############################################################################

def bind_feature_params(spec, values):
    values = dict(values)
    for f in spec.formals:
        if f not in values:
            raise BindError("feature %s: missing binding for formal '%s'" % (spec.name, f))
    for k in values:
        if k not in spec.formals:
            raise BindError("feature %s: unknown formal '%s'" % (spec.name, k))
    return BoundFeature(spec, {k: float(v) for k, v in values.items()})


def print_feature(spec):
    lines = ["feature %s(%s);" % (spec.name, ", ".join(spec.formals)), "begin"]
    if spec.locals:
        lines.append("  var %s;" % ", ".join(spec.locals))
    for i, s in enumerate(spec.stages):
        items = ["@+(%s)" % e.predicate.format("state") for e in s.events]
        items += ["(%s)" % p.format("state") for p in s.guard.conjuncts]
        text = " && ".join(items) if items else "(0 <= 1)"
        if s.captures:
            text += ", " + ", ".join("%s = %s" % (n, e) for n, e in s.captures)
        lead = "  " if i == 0 else "  %s " % spec.stages[i - 1].delay_to_next
        lines.append(lead + text)
    lines.append("    |-> %s = %s;" % (spec.name, spec.compute))
    lines.append("end")
    return "\n".join(lines) + "\n"
