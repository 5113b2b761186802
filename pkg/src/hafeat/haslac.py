"""Reader and writer for HASLAC model text.

Grammar accepted (``;`` terminates statements, ``//`` starts a comment)::

    module    := 'module' ID '(' [ID {',' ID}] ')' {item} 'endmodule'
    item      := ('output' | 'input') ID {',' ID} ';'
               | 'parameter' ID '=' NUMBER {',' ID '=' NUMBER} ';'
               | ['urgent'] 'mode' ID 'begin' {'ddt' ID '=' expr ';'} 'end'
               | 'property' 'inv' ID cond '|=>' cond ';' 'endproperty'
               | 'property' 'trans' ID cond '|=>' resets ';' 'endproperty'
               | 'initial' 'begin' 'set' 'begin' {cond ';'} 'end' 'end'
    cond      := atom {'&&' atom}
    atom      := expr REL expr | ('mode' | 'state') ['\\''] '==' ID | '(' cond ')'
    resets    := 'true' | ID '\\'' '==' expr {'&&' ID '\\'' '==' expr}

``output``/``input`` lists are accepted and ignored. Urgent modes may omit
their ``ddt`` lines (they never let time pass); other modes must give one
ODE per module variable.
"""

from .errors import ParseError
from .expr import LinExpr, TokenStream, format_number, parse_expr
from .model import (Condition, HybridAutomaton, Location, Transition,
                    parse_condition, validate)

_PARAM_BLOCK_END = ";"


def parse_haslac(text, source="<memory>"):
    return _HaslacParser(text, source).parse()


def load_haslac(path):
    with open(path, encoding="utf-8") as fh:
        return parse_haslac(fh.read(), str(path))


class _HaslacParser:
    def __init__(self, text, source):
        self.ts = TokenStream(text, source)
        self.variables = []
        self.params = self._prescan_parameters()
        self.modes = {}
        self.mode_order = []
        self.invariants = {}
        self.transitions = []
        self.initial = None
        self.mode_refs = []

    def _prescan_parameters(self):
        # parameters may be declared after use
        names = set()
        toks = self.ts.tokens
        i = 0
        while i < len(toks):
            if toks[i].kind == "id" and toks[i].value == "parameter":
                i += 1
                expect_name = True
                while i < len(toks) and toks[i].value != _PARAM_BLOCK_END:
                    if expect_name and toks[i].kind == "id":
                        names.add(toks[i].value)
                        expect_name = False
                    elif toks[i].value == ",":
                        expect_name = True
                    i += 1
            i += 1
        return names

    def classify(self, name, tok):
        if name in self.params:
            return "param"
        if name in self.variables:
            return "var"
        self.ts.error("undeclared name '%s'" % name, tok)

    # -- top level ---------------------------------------------------------
    def parse(self):
        ts = self.ts
        ts.expect("module")
        name = ts.expect_id("module name")
        ts.expect("(")
        if not ts.at(")"):
            self.variables.append(ts.expect_id("variable"))
            while ts.accept(","):
                self.variables.append(ts.expect_id("variable"))
        ts.expect(")")
        ts.accept(";")
        dup = {v for v in self.variables if self.variables.count(v) > 1}
        if dup:
            ts.error("duplicate variable '%s' in module header" % sorted(dup)[0])
        parameters = {}
        while not ts.at("endmodule"):
            t = ts.tok
            if t.kind == "eof":
                ts.error("missing 'endmodule'")
            if ts.accept("output", "input"):
                self._id_list()
                ts.expect(";")
            elif ts.accept("parameter"):
                self._parameters(parameters)
            elif ts.at("mode", "urgent"):
                self._mode()
            elif ts.accept("property"):
                self._property()
            elif ts.accept("initial"):
                self._initial()
            else:
                ts.error("unexpected %s" % ts.describe())
        ts.expect("endmodule")
        if not ts.at_kind("eof"):
            ts.error("text after 'endmodule'")
        if not self.mode_order:
            ts.error("module declares no mode")
        for mode, tok in self.mode_refs:
            if mode not in self.modes:
                ts.error("reference to undeclared mode '%s'" % mode, tok)
        if self.initial is None:
            init = (self.mode_order[0], Condition.true())
        else:
            init = self.initial
        locs = tuple(Location(m, self.modes[m][0], self.invariants.get(m, Condition.true()),
                              self.modes[m][1]) for m in self.mode_order)
        ha = HybridAutomaton(name, tuple(self.variables), parameters, locs,
                             tuple(self.transitions), init)
        diags = validate(ha)
        if diags:
            raise ParseError("; ".join(str(d) for d in diags), None, None, ts.source)
        return ha

    def _id_list(self):
        out = [self.ts.expect_id()]
        while self.ts.accept(","):
            out.append(self.ts.expect_id())
        return out

    def _parameters(self, parameters):
        ts = self.ts
        while True:
            tok = ts.tok
            name = ts.expect_id("parameter name")
            if name in self.variables:
                ts.error("parameter '%s' clashes with a variable" % name, tok)
            if name in parameters:
                ts.error("duplicate parameter '%s'" % name, tok)
            ts.expect("=")
            sign = -1.0 if ts.accept("-") else 1.0
            if not sign < 0:
                ts.accept("+")
            if not ts.at_kind("num"):
                ts.error("parameter value must be a number, found %s" % ts.describe())
            parameters[name] = sign * float(ts.advance().value)
            if not ts.accept(","):
                break
        ts.expect(";")

    def _mode(self):
        ts = self.ts
        urgent = bool(ts.accept("urgent"))
        ts.expect("mode")
        tok = ts.tok
        name = ts.expect_id("mode name")
        if name in self.modes:
            ts.error("duplicate mode '%s'" % name, tok)
        ts.expect("begin")
        flow = {}
        while ts.accept("ddt"):
            vtok = ts.tok
            var = ts.expect_id("variable")
            if var not in self.variables:
                ts.error("ddt of undeclared variable '%s'" % var, vtok)
            if var in flow:
                ts.error("second ddt for '%s' in mode %s" % (var, name), vtok)
            ts.expect("=")
            flow[var] = parse_expr(ts, self.classify)
            ts.expect(";")
        end = ts.expect("end")
        missing = [v for v in self.variables if v not in flow]
        if missing:
            if not urgent:
                ts.error("mode %s has no ddt for %s" % (name, ", ".join(missing)), end)
            for v in missing:
                flow[v] = LinExpr()
        self.modes[name] = ({v: flow[v] for v in self.variables}, urgent)
        self.mode_order.append(name)

    def _property(self):
        ts = self.ts
        kind_tok = ts.tok
        kind = ts.expect_id("'inv' or 'trans'")
        ts.expect_id("property name")
        if kind == "inv":
            seen = []

            def on_mode(tok, primed, name):
                if primed:
                    ts.error("primed mode in invariant property", tok)
                seen.append((tok, name))
                return None

            ante = parse_condition(ts, self.classify, on_mode)
            if len(seen) != 1 or ante.conjuncts:
                ts.error("invariant antecedent must be exactly 'mode==NAME'", kind_tok)
            mtok, mode = seen[0]
            self._check_mode(mode, mtok)
            ts.expect("|=>")
            cond = parse_condition(ts, self.classify)
            ts.expect(";")
            self.invariants[mode] = self.invariants.get(mode, Condition.true()) & cond
        elif kind == "trans":
            src, dst = [], []

            def on_mode(tok, primed, name):
                (dst if primed else src).append((tok, name))
                return None

            guard = parse_condition(ts, self.classify, on_mode)
            if len(src) != 1 or len(dst) != 1:
                ts.error("transition needs exactly one mode==A and one mode'==B", kind_tok)
            for tok, m in src + dst:
                self._check_mode(m, tok)
            for p in guard.conjuncts:
                if any(v.endswith("'") for v in p.variables):
                    ts.error("primed variable in transition guard", kind_tok)
            ts.expect("|=>")
            reset = self._resets()
            ts.expect(";")
            self.transitions.append(Transition(src[0][1], dst[0][1], guard, reset))
        else:
            ts.error("unknown property kind '%s'" % kind, kind_tok)
        ts.expect("endproperty")

    def _check_mode(self, name, tok):
        # forward references are allowed; checked once all modes are known
        self.mode_refs.append((name, tok))

    def _resets(self):
        ts = self.ts
        reset = {}
        if ts.accept("true"):
            return reset
        while True:
            vtok = ts.tok
            var = ts.expect_id("primed variable")
            ts.expect("'", "primed variable (x')")
            if var not in self.variables:
                ts.error("reset of undeclared variable '%s'" % var, vtok)
            if var in reset:
                ts.error("variable '%s' reset twice" % var, vtok)
            ts.expect("==")
            e = parse_expr(ts, self.classify)
            if any(v.endswith("'") for v in e.variables):
                ts.error("primed variable on the right of a reset", vtok)
            reset[var] = e
            if not ts.accept("&&"):
                return reset

    def _initial(self):
        ts = self.ts
        if self.initial is not None:
            ts.error("second initial block")
        ts.expect("begin")
        ts.expect("set")
        ts.expect("begin")
        modes = []

        def on_mode(tok, primed, name):
            if primed:
                ts.error("primed mode in initial set", tok)
            modes.append((tok, name))
            return None

        cond = Condition.true()
        while not ts.at("end"):
            if ts.at_kind("eof"):
                ts.error("unterminated initial set")
            cond = cond & parse_condition(ts, self.classify, on_mode)
            ts.expect(";")
        ts.expect("end")
        ts.expect("end")
        if len(modes) != 1:
            ts.error("initial set must name exactly one mode")
        self._check_mode(modes[0][1], modes[0][0])
        self.initial = (modes[0][1], cond)


def print_haslac(ha):
    """Render ``ha`` as HASLAC text that :func:`parse_haslac` reads back."""
    out = []
    w = out.append
    w("module %s(%s)" % (ha.name, ", ".join(ha.variables)))
    if ha.variables:
        w("    output %s;" % ", ".join(ha.variables))
    if ha.parameters:
        w("    parameter")
        items = list(ha.parameters.items())
        for i, (name, value) in enumerate(items):
            w("        %s = %s%s" % (name, format_number(value),
                                    ";" if i == len(items) - 1 else ","))
    for loc in ha.locations:
        w("    %smode %s" % ("urgent " if loc.urgent else "", loc.name))
        w("    begin")
        for v in ha.variables:
            w("        ddt %s = %s;" % (v, loc.flow[v]))
        w("    end")
    for loc in ha.locations:
        if loc.invariant.is_true:
            continue
        w("    property inv %s" % loc.name)
        w("        mode == %s |=> %s;" % (loc.name, loc.invariant))
        w("    endproperty")
    used = {}
    for t in ha.transitions:
        base = "%s_%s" % (t.source, t.target)
        used[base] = used.get(base, 0) + 1
        pname = base if used[base] == 1 else "%s_%d" % (base, used[base])
        ante = ["mode == %s" % t.source, "mode' == %s" % t.target]
        if not t.guard.is_true:
            ante.append(str(t.guard))
        if t.reset:
            cons = " && ".join("%s' == %s" % (v, e) for v, e in t.reset.items())
        else:
            cons = "true"
        w("    property trans %s" % pname)
        w("        %s |=> %s;" % (" && ".join(ante), cons))
        w("    endproperty")
    init_loc, init_cond = ha.initial
    w("    initial begin")
    w("        set begin")
    w("            mode == %s;" % init_loc)
    for p in init_cond.conjuncts:
        w("            %s;" % p)
    w("        end")
    w("    end")
    w("endmodule")
    return "\n".join(out) + "\n"
