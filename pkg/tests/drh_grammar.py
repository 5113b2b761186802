"""Recursive-descent checker for the dReach 3.x ``.drh`` model format.

Covers the subset a model without nonlinear functions needs::

    model   := define* decl+ mode+ init goal
    define  := '#define' ID NUMBER
    decl    := '[' expr ',' expr ']' ID ';'
    mode    := '{' 'mode' INT ';' 'invt:' (form ';')* 'flow:' (ode ';')*
               'jump:' (form '==>' '@' INT form ';')* '}'
    ode     := 'd/dt[' ID ']' '=' expr
    init    := 'init:' '@' INT form ';'
    goal    := 'goal:' ('@' INT form ';')+
    form    := 'true' | 'false' | '(' ('and' | 'or') form* ')'
             | '(' 'not' form ')' | '(' expr REL expr ')'
    expr    := infix arithmetic over numbers and identifiers (ID' allowed)

``check`` raises :class:`DrhSyntaxError` or returns a summary dict.
"""

import re

_TOKEN = re.compile(r"""
    (?P<ws>\s+|//[^\n]*)
  | (?P<define>\#define)
  | (?P<ddt>d/dt\[)
  | (?P<label>(invt|flow|jump|init|goal):)
  | (?P<num>\d+\.\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?)
  | (?P<id>[A-Za-z_]\w*'?)
  | (?P<op>==>|>=|<=|[-+*/^()\[\];,{}@=<>])
""", re.X)


class DrhSyntaxError(Exception):
    pass


def tokenize(text):
    out, pos = [], 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            line = text.count("\n", 0, pos) + 1
            raise DrhSyntaxError("line %d: unexpected character %r" % (line, text[pos]))
        pos = m.end()
        kind = m.lastgroup
        if kind != "ws":
            out.append((kind, m.group()))
    out.append(("eof", ""))
    return out


class _Checker:
    def __init__(self, text):
        self.toks = tokenize(text)
        self.i = 0

    @property
    def tok(self):
        return self.toks[self.i]

    def at(self, value):
        return self.tok[1] == value

    def take(self, value=None, kind=None):
        k, v = self.tok
        if (value is not None and v != value) or (kind is not None and k != kind):
            raise DrhSyntaxError("expected %s, got %r (token %d)"
                                 % (value or kind, v, self.i))
        self.i += 1
        return v

    def integer(self):
        v = self.take(kind="num")
        if not v.isdigit():
            raise DrhSyntaxError("expected a mode number, got %r" % v)
        return int(v)

    # expressions
    def expr(self):
        self.term()
        while self.tok[1] in ("+", "-"):
            self.i += 1
            self.term()

    def term(self):
        self.factor()
        while self.tok[1] in ("*", "/"):
            self.i += 1
            self.factor()

    def factor(self):
        self.unary()
        if self.at("^"):
            self.i += 1
            self.factor()

    def unary(self):
        if self.tok[1] in ("-", "+"):
            self.i += 1
            self.unary()
            return
        k, v = self.tok
        if k in ("num", "id") and v not in ("and", "or", "not", "true", "false"):
            self.i += 1
        elif v == "(":
            self.i += 1
            self.expr()
            self.take(")")
        else:
            raise DrhSyntaxError("expected an expression, got %r" % v)

    # formulas
    def form(self):
        if self.tok[1] in ("true", "false"):
            self.i += 1
            return
        self.take("(")
        if self.tok[1] in ("and", "or"):
            self.i += 1
            while not self.at(")"):
                self.form()
        elif self.at("not"):
            self.i += 1
            self.form()
        else:
            self.expr()
            if self.tok[1] not in (">=", "<=", "=", "<", ">"):
                raise DrhSyntaxError("expected a relation, got %r" % self.tok[1])
            self.i += 1
            self.expr()
        self.take(")")

    def check(self):
        defines, decls, modes, goals = {}, [], {}, []
        while self.at("#define"):
            self.i += 1
            name = self.take(kind="id")
            sign = -1.0 if self.at("-") else 1.0
            if sign < 0:
                self.i += 1
            defines[name] = sign * float(self.take(kind="num"))
        while self.at("["):
            self.i += 1
            self.expr()
            self.take(",")
            self.expr()
            self.take("]")
            decls.append(self.take(kind="id"))
            self.take(";")
        if not decls:
            raise DrhSyntaxError("no variable declarations")
        while self.at("{"):
            self.i += 1
            self.take("mode")
            n = self.integer()
            if n in modes:
                raise DrhSyntaxError("mode %d defined twice" % n)
            self.take(";")
            self.take("invt:")
            invt = 0
            while not self.at("flow:"):
                self.form()
                self.take(";")
                invt += 1
            self.take("flow:")
            flows = []
            while self.tok[0] == "ddt":
                self.i += 1
                flows.append(self.take(kind="id"))
                self.take("]")
                self.take("=")
                self.expr()
                self.take(";")
            self.take("jump:")
            jumps = []
            while not self.at("}"):
                self.form()
                self.take("==>")
                self.take("@")
                jumps.append(self.integer())
                self.form()
                self.take(";")
            self.take("}")
            modes[n] = {"invariants": invt, "flows": flows, "jumps": jumps}
        if not modes:
            raise DrhSyntaxError("no mode blocks")
        self.take("init:")
        self.take("@")
        init_mode = self.integer()
        self.form()
        self.take(";")
        self.take("goal:")
        while self.at("@"):
            self.i += 1
            start = self.i
            goals.append((self.integer(), self._text_until_semicolon(start)))
            self.form()
            self.take(";")
        if not goals:
            raise DrhSyntaxError("empty goal section")
        self.take(kind="eof")
        return {"defines": defines, "variables": decls, "modes": modes,
                "init": init_mode, "goals": goals}

    def _text_until_semicolon(self, start):
        j = start + 1
        parts = []
        while self.toks[j][1] != ";":
            parts.append(self.toks[j][1])
            j += 1
        return " ".join(parts)


def check(text):
    """Parse ``text``; returns defines, variables, modes, init and goals."""
    info = _Checker(text).check()
    for n, m in info["modes"].items():
        for target in m["jumps"]:
            if target not in info["modes"]:
                raise DrhSyntaxError("mode %d jumps to undefined mode %d" % (n, target))
        unknown = set(m["flows"]) - set(info["variables"])
        if unknown:
            raise DrhSyntaxError("mode %d has flows for undeclared %s" % (n, sorted(unknown)))
    return info
