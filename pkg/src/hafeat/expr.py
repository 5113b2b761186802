"""Affine expressions and the tokenizer shared by the text frontends.

A :class:`LinExpr` is affine in the automaton variables but may carry
symbolic parameters as polynomial coefficients (``a10c*i``, ``D*T``).
Parameters are kept symbolic so that printers can reproduce them; numeric
consumers call :meth:`LinExpr.resolve` first.
"""

import math
import re
from dataclasses import dataclass

from .errors import NonAffineError, ParseError, UnresolvedName

TIME = "$time"


###############################################################################
# Affine expressions
###############################################################################

def _merge_powers(a, b):
    acc = dict(a)
    for name, k in b:
        acc[name] = acc.get(name, 0) + k
    return tuple((n, k) for n, k in acc.items() if k != 0)


@dataclass(frozen=True)
class Term:
    coef: float
    var: str = None
    params: tuple = ()     # ((name, power), ...) in order of appearance

    @property
    def key(self):
        return (self.var or "", tuple(sorted(self.params)))


@dataclass(frozen=True)
class LinExpr:
    """Sum of terms ``coef * prod(param**k) * var`` with at most one var each.

    Like terms are merged; term order follows first appearance so printed
    text reads like the source.
    """

    terms: tuple = ()

    # -- construction -------------------------------------------------------
    @classmethod
    def of(cls, terms):
        acc = {}
        order = {}
        for t in terms:
            k = t.key
            acc[k] = acc.get(k, 0.0) + t.coef
            order[k] = t
        out = []
        for k in acc:
            c = acc[k]
            if c == 0.0:
                continue
            if not math.isfinite(c):
                raise ValueError("non-finite coefficient in expression")
            t = order[k]
            out.append(Term(float(c), t.var, t.params))
        return cls(tuple(out))

    @classmethod
    def const(cls, value):
        return cls.of([Term(float(value))])

    @classmethod
    def var(cls, name, coef=1.0):
        return cls.of([Term(float(coef), name)])

    @classmethod
    def param(cls, name):
        return cls.of([Term(1.0, None, ((name, 1),))])

    @classmethod
    def affine(cls, constant, coefficients):
        return cls.of([Term(float(constant))] +
                      [Term(float(c), v) for v, c in coefficients.items()])

    # -- arithmetic ---------------------------------------------------------
    def __add__(self, other):
        other = _lift(other)
        return LinExpr.of(self.terms + other.terms)

    __radd__ = __add__

    def __neg__(self):
        return LinExpr.of([Term(-t.coef, t.var, t.params) for t in self.terms])

    def __sub__(self, other):
        return self + (-_lift(other))

    def __rsub__(self, other):
        return _lift(other) - self

    def __mul__(self, other):
        other = _lift(other)
        if self.variables and other.variables:
            raise NonAffineError("product of two variable expressions")
        out = []
        for a in self.terms:
            for b in other.terms:
                out.append(Term(a.coef * b.coef, a.var or b.var,
                                _merge_powers(a.params, b.params)))
        return LinExpr.of(out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _lift(other)
        if len(other.terms) != 1 or other.terms[0].var is not None:
            raise NonAffineError("division by a non-monomial or by a variable")
        d = other.terms[0]
        inv = tuple((n, -k) for n, k in d.params)
        return LinExpr.of([Term(t.coef / d.coef, t.var, _merge_powers(t.params, inv))
                           for t in self.terms])

    # -- inspection ---------------------------------------------------------
    @property
    def variables(self):
        return frozenset(t.var for t in self.terms if t.var is not None)

    @property
    def parameters(self):
        return frozenset(n for t in self.terms for n, _ in t.params)

    @property
    def is_numeric(self):
        return not self.parameters

    @property
    def constant(self):
        self._require_numeric()
        return sum(t.coef for t in self.terms if t.var is None)

    @property
    def coefficients(self):
        self._require_numeric()
        return {t.var: t.coef for t in self.terms if t.var is not None}

    def _require_numeric(self):
        if not self.is_numeric:
            raise UnresolvedName(sorted(self.parameters)[0])

    # -- substitution / evaluation -----------------------------------------
    def resolve(self, params):
        """Replace every parameter by its numeric value."""
        out = []
        for t in self.terms:
            c = t.coef
            for name, k in t.params:
                if name not in params:
                    raise UnresolvedName(name)
                c *= float(params[name]) ** k
            out.append(Term(c, t.var))
        return LinExpr.of(out)

    def substitute(self, mapping):
        """Replace variables by expressions (names absent from mapping stay)."""
        acc = LinExpr()
        for t in self.terms:
            base = LinExpr((Term(t.coef, None, t.params),))
            if t.var is None:
                acc = acc + base
            elif t.var in mapping:
                acc = acc + base * _lift(mapping[t.var])
            else:
                acc = acc + LinExpr((t,))
        return acc

    def rename(self, mapping):
        return LinExpr.of([Term(t.coef, mapping.get(t.var, t.var) if t.var else None,
                                tuple((mapping.get(n, n), k) for n, k in t.params))
                           for t in self.terms])

    def evaluate(self, values, params=()):
        total = 0.0
        params = params or {}
        for t in self.terms:
            c = t.coef
            for name, k in t.params:
                if name not in params:
                    raise UnresolvedName(name)
                c *= float(params[name]) ** k
            if t.var is not None:
                if t.var not in values:
                    raise UnresolvedName(t.var)
                c *= values[t.var]
            total += c
        return total

    # -- printing -----------------------------------------------------------
    def __str__(self):
        return self.format()

    def format(self, var_style=None):
        if not self.terms:
            return "0"
        parts = []
        for i, t in enumerate(self.terms):
            factors = []
            for name, k in t.params:
                if k > 0:
                    factors.extend([name] * k)
            if t.var is not None:
                factors.append(var_style(t.var) if var_style else t.var)
            divisors = [name for name, k in t.params if k < 0 for _ in range(-k)]
            coef = t.coef
            neg = coef < 0
            mag = abs(coef)
            if factors and mag == 1.0:
                body = "*".join(factors)
            else:
                body = "*".join([format_number(mag)] + factors)
            if divisors:
                body += "".join("/" + d for d in divisors)
            if i == 0:
                parts.append("-" + body if neg else body)
            else:
                parts.append(("- " if neg else "+ ") + body)
        return " ".join(parts)


def _lift(x):
    if isinstance(x, LinExpr):
        return x
    return LinExpr.const(x)


def format_number(x):
    x = float(x)
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


###############################################################################
# Tokenizer
###############################################################################

@dataclass(frozen=True)
class Token:
    kind: str       # "num", "id", "op", "eof"
    value: str
    line: int
    column: int


_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>//[^\n]*)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<time>\$time\b)
  | (?P<id>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>\|=>|\|->|\#\#|@\+|@-|&&|\|\||<=|>=|==|!=|:=|[<>()\[\]:,;=+\-*/'$&.^{}@])
""", re.VERBOSE)


def tokenize(text, source="<memory>"):
    tokens = []
    pos = 0
    line, col0 = 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError("unexpected character %r" % text[pos], line,
                             pos - col0 + 1, source)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            col0 = m.end()
        elif kind not in ("ws", "comment"):
            if kind == "time":
                kind = "id"
            tokens.append(Token(kind, m.group(), line, pos - col0 + 1))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - col0 + 1))
    return tokens


class TokenStream:
    """Cursor over a token list with positioned errors."""

    def __init__(self, text, source="<memory>"):
        self.source = source
        self.tokens = tokenize(text, source)
        self.pos = 0

    @property
    def tok(self):
        return self.tokens[self.pos]

    def peek(self, k=1):
        return self.tokens[min(self.pos + k, len(self.tokens) - 1)]

    def at(self, *values):
        t = self.tok
        return t.kind in ("op", "id") and t.value in values

    def at_kind(self, kind):
        return self.tok.kind == kind

    def advance(self):
        t = self.tok
        if t.kind != "eof":
            self.pos += 1
        return t

    def accept(self, *values):
        if self.at(*values):
            return self.advance()
        return None

    def expect(self, value, what=None):
        if not self.at(value):
            self.error("expected %s, found %s" % (what or repr(value), self.describe()))
        return self.advance()

    def expect_id(self, what="identifier"):
        if self.tok.kind != "id" or self.tok.value == TIME:
            self.error("expected %s, found %s" % (what, self.describe()))
        return self.advance().value

    def describe(self, tok=None):
        tok = tok or self.tok
        return "end of input" if tok.kind == "eof" else repr(tok.value)

    def error(self, message, tok=None, cls=ParseError):
        tok = tok or self.tok
        if tok.kind == "eof" and len(self.tokens) > 1:
            tok = self.tokens[-2]
        raise cls(message, tok.line, tok.column, self.source)


###############################################################################
# Expression parser
###############################################################################

def parse_expr(ts, classify):
    """Parse an affine expression from ``ts``.

    ``classify(name, token)`` returns "var" or "param" (or raises). A primed
    identifier ``x'`` is returned as the variable ``x'``.
    """
    lhs = _term(ts, classify)
    while ts.at("+", "-"):
        op = ts.advance().value
        rhs = _term(ts, classify)
        lhs = lhs + rhs if op == "+" else lhs - rhs
    return lhs


def _term(ts, classify):
    lhs = _unary(ts, classify)
    while ts.at("*", "/"):
        optok = ts.advance()
        rhs = _unary(ts, classify)
        try:
            lhs = lhs * rhs if optok.value == "*" else lhs / rhs
        except NonAffineError as e:
            ts.error("non-affine expression: %s" % e.message, optok, NonAffineError)
        except ZeroDivisionError:
            ts.error("division by zero", optok)
    return lhs


def _unary(ts, classify):
    if ts.accept("-"):
        return -_unary(ts, classify)
    if ts.accept("+"):
        return _unary(ts, classify)
    return _atom(ts, classify)


def _atom(ts, classify):
    t = ts.tok
    if t.kind == "num":
        ts.advance()
        return LinExpr.const(float(t.value))
    if t.kind == "id":
        ts.advance()
        name = t.value
        if ts.at("'"):
            ts.advance()
            return LinExpr.var(name + "'")
        kind = classify(name, t)
        if kind == "param":
            return LinExpr.param(name)
        return LinExpr.var(name)
    if ts.accept("("):
        e = parse_expr(ts, classify)
        ts.expect(")")
        return e
    ts.error("expected expression, found %s" % ts.describe())
