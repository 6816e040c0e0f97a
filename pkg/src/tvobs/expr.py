"""Expression trees: parsing, printing, canonical simplification, exact
differentiation and evaluation.

Grammar (EBNF) accepted by :func:`parse`::

    expr     = [ "+" | "-" ] term { ( "+" | "-" ) term } ;
    term     = factor { ( "*" | "/" ) factor } ;
    factor   = atom [ ( "^" | "**" ) exponent ] ;
    exponent = [ "-" | "+" ] atom ;                 (* must fold to a rational *)
    atom     = number | name | call | "(" expr ")" ;
    call     = func "(" expr { "," expr } ")" ;
    func     = "exp" | "log" | "sin" | "cos" | "abs" | "sgn" | "sign" | "sat"
             | "sqrt" | "signed_pow" | "dsat" | "singular" ;
    name     = "t" | "x" digits | "d" [ digits ] | "y" [ digits ] | "z" digits
             | "w" | "theta" | "u" | "s" | "pi" ;

``d`` and ``d1`` are the same variable, as are ``y`` and ``y1``.  Numbers are
read exactly (``0.25`` becomes the rational 1/4).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

Number = Union[Fraction, float]


class ParseError(ValueError):
    """Syntax error or unknown identifier, with a 1-based line/column."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"syntax error at {line}:{col}: {message}")
        self.detail = message
        self.line = line
        self.col = col


class DomainError(ValueError):
    """Evaluation outside the real domain of a node (or on a singular set)."""


# --------------------------------------------------------------------------
# nodes


class Expr:
    __slots__ = ()

    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return add(self, neg(as_expr(other)))

    def __rsub__(self, other):
        return add(as_expr(other), neg(self))

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return mul(self, Pow(as_expr(other), Fraction(-1)))

    def __rtruediv__(self, other):
        return mul(as_expr(other), Pow(self, Fraction(-1)))

    def __pow__(self, k):
        return Pow(self, _as_fraction(k))

    def __neg__(self):
        return neg(self)

    def __str__(self):
        return to_str(self)


@dataclass(frozen=True, repr=False)
class Const(Expr):
    value: Number

    def __repr__(self):
        return f"Const({self.value!r})"


@dataclass(frozen=True, repr=False)
class Var(Expr):
    name: str

    def __repr__(self):
        return self.name


@dataclass(frozen=True, repr=False)
class Add(Expr):
    terms: tuple

    def __repr__(self):
        return f"Add({', '.join(map(repr, self.terms))})"


@dataclass(frozen=True, repr=False)
class Mul(Expr):
    factors: tuple

    def __repr__(self):
        return f"Mul({', '.join(map(repr, self.factors))})"


@dataclass(frozen=True, repr=False)
class Pow(Expr):
    base: Expr
    exp: Fraction

    def __repr__(self):
        return f"Pow({self.base!r}, {self.exp})"


@dataclass(frozen=True, repr=False)
class Func(Expr):
    name: str
    arg: Expr

    def __repr__(self):
        return f"{self.name.capitalize()}({self.arg!r})"


@dataclass(frozen=True, repr=False)
class SignedPow(Expr):
    """sgn(arg) * |arg|**p."""

    arg: Expr
    p: Fraction

    def __repr__(self):
        return f"SignedPow({self.arg!r}, {self.p})"


@dataclass(frozen=True, repr=False)
class Singular(Expr):
    """``body`` everywhere except where ``arg`` vanishes; evaluation there fails."""

    body: Expr
    arg: Expr

    def __repr__(self):
        return f"Singular({self.body!r}, {self.arg!r})"


FUNCS = ("exp", "log", "sin", "cos", "abs", "sgn", "sat", "dsat")
NONSMOOTH = ("abs", "sgn", "sat", "dsat")

ZERO = Const(Fraction(0))
ONE = Const(Fraction(1))


def _as_fraction(k) -> Fraction:
    if isinstance(k, Fraction):
        return k
    if isinstance(k, int):
        return Fraction(k)
    if isinstance(k, Const) and isinstance(k.value, Fraction):
        return k.value
    if isinstance(k, str):
        return Fraction(k)
    if isinstance(k, float) and k.is_integer():
        return Fraction(int(k))
    raise TypeError(f"exponent must be rational, got {k!r}")


def as_expr(v) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, bool):
        raise TypeError("bool is not an expression")
    if isinstance(v, (int, Fraction)):
        return Const(Fraction(v))
    if isinstance(v, float):
        return Const(v)
    if isinstance(v, str):
        return parse(v)
    raise TypeError(f"cannot convert {type(v).__name__} to Expr")


# builders shared by the parser and the operator overloads.  They never
# simplify, so parse(to_str(e)) reproduces the tree built here.


def _num(a: Number, b: Number, op) -> Number:
    r = op(a, b)
    return r


def _exact(e: Expr) -> bool:
    return isinstance(e, Const) and isinstance(e.value, Fraction)


def neg(e: Expr) -> Expr:
    # only exact constants fold, so pi survives a print/parse cycle
    if isinstance(e, Const) and isinstance(e.value, Fraction):
        return Const(-e.value)
    if isinstance(e, Mul):
        first = e.factors[0]
        if isinstance(first, Const) and isinstance(first.value, Fraction):
            return Mul((Const(-first.value),) + e.factors[1:])
        return Mul((Const(Fraction(-1)),) + e.factors)
    return Mul((Const(Fraction(-1)), e))


def add(a: Expr, b: Expr) -> Expr:
    ta = a.terms if isinstance(a, Add) else (a,)
    tb = b.terms if isinstance(b, Add) else (b,)
    return Add(ta + tb)


def mul(a: Expr, b: Expr) -> Expr:
    fa = a.factors if isinstance(a, Mul) else (a,)
    fb = b.factors if isinstance(b, Mul) else (b,)
    return Mul(fa + fb)


def var(name: str) -> Var:
    return Var(canonical_name(name))


def signed_pow(e, p) -> SignedPow:
    return SignedPow(as_expr(e), _as_fraction(p))


def _f(name):
    def build(e):
        return Func(name, as_expr(e))

    build.__name__ = name
    return build


exp = _f("exp")
log = _f("log")
sin = _f("sin")
cos = _f("cos")
sgn = _f("sgn")
sat = _f("sat")
abs_ = _f("abs")


# --------------------------------------------------------------------------
# names

_NAME_RE = re.compile(r"^(t|w|theta|u|s|x[1-9]\d*|d[1-9]?\d*|y[1-9]?\d*|z\d+)$")


def canonical_name(name: str) -> str:
    if not _NAME_RE.match(name):
        raise ValueError(f"unknown identifier {name!r}")
    if name == "d1":
        return "d"
    if name == "y1":
        return "y"
    return name


def x_name(i: int) -> str:
    """Name of the i-th state (1-based)."""
    return f"x{i}"


def d_name(j: int) -> str:
    return "d" if j == 1 else f"d{j}"


def y_name(j: int) -> str:
    return "y" if j == 1 else f"y{j}"


def z_name(i: int) -> str:
    return f"z{i}"


# --------------------------------------------------------------------------
# tokenizer and parser

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\*\*|[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(src: str) -> list[_Tok]:
    toks = []
    pos, line, line_start = 0, 1, 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            raise ParseError(f"unexpected character {src[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        text = m.group()
        if kind == "ws":
            for i, ch in enumerate(text):
                if ch == "\n":
                    line += 1
                    line_start = pos + i + 1
        else:
            if text == "**":
                text = "^"
            toks.append(_Tok(kind, text, line, pos - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, src: str):
        self.toks = _tokenize(src)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def error(self, msg: str, tok: _Tok | None = None):
        tok = tok or self.tok
        raise ParseError(msg, tok.line, tok.col)

    def accept(self, text: str) -> bool:
        if self.tok.kind == "op" and self.tok.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text: str):
        if not self.accept(text):
            self.error(f"expected {text!r}, found {self.tok.text or 'end of input'!r}")

    def parse(self) -> Expr:
        e = self.expr()
        if self.tok.kind != "eof":
            self.error(f"unexpected {self.tok.text!r}")
        return e

    def expr(self) -> Expr:
        sign = -1 if self.accept("-") else (self.accept("+") and 1) or 1
        first = self.term()
        terms = [neg(first) if sign < 0 else first]
        while True:
            if self.accept("+"):
                terms.append(self.term())
            elif self.accept("-"):
                terms.append(neg(self.term()))
            else:
                break
        return terms[0] if len(terms) == 1 else Add(tuple(terms))

    def term(self) -> Expr:
        factors = [self.factor()]
        while True:
            if self.accept("*"):
                f = self.factor()
                if _exact(f) and _exact(factors[-1]):
                    factors[-1] = Const(factors[-1].value * f.value)
                else:
                    factors.append(f)
            elif self.accept("/"):
                tok = self.tok
                f = self.factor()
                if isinstance(f, Const) and f.value == 0:
                    self.error("division by zero constant", tok)
                if _exact(f):
                    if _exact(factors[-1]):
                        factors[-1] = Const(factors[-1].value / f.value)
                    else:
                        factors.append(Const(Fraction(1) / f.value))
                else:
                    factors.append(Pow(f, Fraction(-1)))
            else:
                break
        return factors[0] if len(factors) == 1 else Mul(tuple(factors))

    def factor(self) -> Expr:
        base = self.atom()
        if self.accept("^"):
            tok = self.tok
            sign = -1 if self.accept("-") else (self.accept("+") and 1) or 1
            ex = self.atom()
            k = _const_fraction(ex)
            if k is None:
                self.error("exponent must be a rational constant", tok)
            return Pow(base, sign * k)
        return base

    def atom(self) -> Expr:
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return Const(Fraction(tok.text))
        if tok.kind == "op" and tok.text == "(":
            self.i += 1
            e = self.expr()
            self.expect(")")
            return e
        if tok.kind == "name":
            self.i += 1
            name = tok.text
            if self.tok.kind == "op" and self.tok.text == "(":
                return self.call(name, tok)
            if name == "pi":
                return Const(math.pi)
            try:
                return Var(canonical_name(name))
            except ValueError:
                self.error(f"unknown identifier {name!r}", tok)
        self.error(f"unexpected {tok.text or 'end of input'!r}")

    def call(self, name: str, tok: _Tok) -> Expr:
        self.expect("(")
        args = [self.expr()]
        while self.accept(","):
            args.append(self.expr())
        self.expect(")")
        if name == "sign":
            name = "sgn"
        if name in FUNCS or name == "sqrt":
            if len(args) != 1:
                self.error(f"{name} takes one argument", tok)
            if name == "sqrt":
                return Pow(args[0], Fraction(1, 2))
            return Func(name, args[0])
        if name == "signed_pow":
            if len(args) != 2:
                self.error("signed_pow takes two arguments", tok)
            p = _const_fraction(args[1])
            if p is None:
                self.error("signed_pow exponent must be a rational constant", tok)
            return SignedPow(args[0], p)
        if name == "singular":
            if len(args) != 2:
                self.error("singular takes two arguments", tok)
            return Singular(args[0], args[1])
        self.error(f"unknown function {name!r}", tok)


def _const_fraction(e: Expr) -> Fraction | None:
    """Exact rational value of a constant expression, or None."""
    if isinstance(e, Const):
        return e.value if isinstance(e.value, Fraction) else None
    if isinstance(e, Add):
        vals = [_const_fraction(t) for t in e.terms]
        return None if any(v is None for v in vals) else sum(vals, Fraction(0))
    if isinstance(e, Mul):
        out = Fraction(1)
        for f in e.factors:
            v = _const_fraction(f)
            if v is None:
                return None
            out *= v
        return out
    if isinstance(e, Pow) and e.exp.denominator == 1:
        b = _const_fraction(e.base)
        if b is None or (b == 0 and e.exp < 0):
            return None
        return b ** int(e.exp)
    return None


def parse(src: str) -> Expr:
    """Parse an expression string (see module docstring for the grammar)."""
    return _Parser(src).parse()


# --------------------------------------------------------------------------
# printing


def _num_str(v: Number) -> str:
    if isinstance(v, Fraction):
        return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"
    if v == math.pi:
        return "pi"
    r = float(v) / math.pi
    if r and r * math.pi == v and Fraction(r).limit_denominator(1000) == r:
        # folded multiples of pi print back as such so parsing restores the float
        return f"{_num_str(Fraction(r))}*pi"
    return repr(float(v))


def _neg_led(e: Expr) -> bool:
    if isinstance(e, Const):
        return e.value < 0
    return isinstance(e, Mul) and isinstance(e.factors[0], Const) and e.factors[0].value < 0


def _positive_part(e: Expr) -> Expr:
    """The expression printed after a leading minus sign."""
    if isinstance(e, Const):
        return Const(-e.value)
    c = e.factors[0].value
    if c == -1:
        rest = e.factors[1:]
        return rest[0] if len(rest) == 1 else Mul(rest)
    return Mul((Const(-c),) + e.factors[1:])


def _atomic(e: Expr) -> bool:
    if isinstance(e, (Var, Func, SignedPow, Singular)):
        return True
    if isinstance(e, Const):
        v = e.value
        return isinstance(v, Fraction) and v.denominator == 1 and v >= 0 or (isinstance(v, float) and v >= 0 and v == math.pi)
    return False


def to_str(e: Expr) -> str:
    """Infix text that :func:`parse` maps back to the same tree."""
    if isinstance(e, Add):
        parts = []
        for i, t in enumerate(e.terms):
            if _neg_led(t):
                body = _term_str(_positive_part(t))
                parts.append(("-" if i == 0 else " - ") + body)
            else:
                parts.append(("" if i == 0 else " + ") + _term_str(t))
        return "".join(parts)
    if _neg_led(e) and not isinstance(e, Const):
        return "-" + _term_str(_positive_part(e))
    return _term_str(e)


def _term_str(e: Expr) -> str:
    if isinstance(e, Add):
        return "(" + to_str(e) + ")"
    if isinstance(e, Mul):
        out = []
        for i, f in enumerate(e.factors):
            if i == 0:
                if isinstance(f, Const) and f.value < 0:
                    out.append("(" + _num_str(f.value) + ")" if len(e.factors) > 1 else _num_str(f.value))
                else:
                    out.append(_factor_str(f))
            elif isinstance(f, Pow) and f.exp == -1:
                out.append("/" + _base_str(f.base))
            elif isinstance(f, Const):
                s = _num_str(f.value)
                out.append("*(" + s + ")" if f.value < 0 else "*" + s)
            else:
                out.append("*" + _factor_str(f))
        return "".join(out)
    return _factor_str(e)


def _factor_str(e: Expr) -> str:
    if isinstance(e, Const):
        return _num_str(e.value)
    if isinstance(e, (Add, Mul)):
        return "(" + to_str(e) + ")"
    if isinstance(e, Pow):
        k = e.exp
        ks = str(k.numerator) if (k.denominator == 1 and k >= 0) else f"({_num_str(k)})"
        return _base_str(e.base) + "^" + ks
    return _base_str(e)


def _base_str(e: Expr) -> str:
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Func):
        return f"{e.name}({to_str(e.arg)})"
    if isinstance(e, SignedPow):
        return f"signed_pow({to_str(e.arg)}, {_num_str(e.p)})"
    if isinstance(e, Singular):
        return f"singular({to_str(e.body)}, {to_str(e.arg)})"
    if _atomic(e):
        return _factor_str(e)
    return "(" + to_str(e) + ")"


# --------------------------------------------------------------------------
# traversal helpers


def children(e: Expr) -> tuple:
    if isinstance(e, Add):
        return e.terms
    if isinstance(e, Mul):
        return e.factors
    if isinstance(e, Pow):
        return (e.base,)
    if isinstance(e, (Func, SignedPow)):
        return (e.arg,)
    if isinstance(e, Singular):
        return (e.body, e.arg)
    return ()


def walk(e: Expr):
    yield e
    for c in children(e):
        yield from walk(c)


def free_vars(e: Expr) -> set[str]:
    return {n.name for n in walk(e) if isinstance(n, Var)}


def substitute(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace variables by expressions (no simplification)."""
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, Const):
        return e
    if isinstance(e, Add):
        return Add(tuple(substitute(t, mapping) for t in e.terms))
    if isinstance(e, Mul):
        return Mul(tuple(substitute(f, mapping) for f in e.factors))
    if isinstance(e, Pow):
        return Pow(substitute(e.base, mapping), e.exp)
    if isinstance(e, Func):
        return Func(e.name, substitute(e.arg, mapping))
    if isinstance(e, SignedPow):
        return SignedPow(substitute(e.arg, mapping), e.p)
    if isinstance(e, Singular):
        return Singular(substitute(e.body, mapping), substitute(e.arg, mapping))
    raise TypeError(type(e))


def singular_nodes(e: Expr) -> list[Expr]:
    """Nodes whose evaluation fails on a set where the tree is not C^0/C^1.

    These are explicit ``singular`` annotations left by differentiating
    abs/sgn, ``dsat``, and negative fractional powers.
    """
    out = []
    for n in walk(e):
        if isinstance(n, Singular) or (isinstance(n, Func) and n.name == "dsat"):
            out.append(n)
        elif isinstance(n, Pow) and n.exp < 0 and (n.exp.denominator != 1 or isinstance(n.base, Func) and n.base.name == "abs"):
            out.append(n)
    return out


def structurally_equal(a: Expr, b: Expr, rel_tol: float = 0.0) -> bool:
    """Tree equality; constants compared to ``rel_tol`` relative accuracy."""
    if type(a) is not type(b):
        return False
    if isinstance(a, Const):
        if rel_tol == 0.0:
            return a.value == b.value
        return math.isclose(float(a.value), float(b.value), rel_tol=rel_tol, abs_tol=0.0)
    if isinstance(a, Var):
        return a.name == b.name
    if isinstance(a, Pow) and a.exp != b.exp:
        return False
    if isinstance(a, SignedPow) and a.p != b.p:
        return False
    if isinstance(a, Func) and a.name != b.name:
        return False
    ca, cb = children(a), children(b)
    return len(ca) == len(cb) and all(structurally_equal(x, y, rel_tol) for x, y in zip(ca, cb))


# --------------------------------------------------------------------------
# sign facts (t and s are non-negative by convention)


def is_nonneg(e: Expr) -> bool:
    if isinstance(e, Const):
        return e.value >= 0
    if isinstance(e, Var):
        return e.name in ("t", "s")
    if isinstance(e, Func):
        return e.name in ("exp", "abs") or (e.name in ("sgn", "sat") and is_nonneg(e.arg))
    if isinstance(e, Pow):
        k = e.exp
        return (k.numerator % 2 == 0 and k.denominator % 2 == 1) or is_nonneg(e.base)
    if isinstance(e, SignedPow):
        return is_nonneg(e.arg)
    if isinstance(e, (Mul, Add)):
        return all(is_nonneg(c) for c in children(e))
    return False


def is_pos(e: Expr) -> bool:
    if isinstance(e, Const):
        return e.value > 0
    if isinstance(e, Func):
        return e.name == "exp" or (e.name in ("sgn", "sat") and is_pos(e.arg))
    if isinstance(e, Pow):
        return is_pos(e.base)
    if isinstance(e, SignedPow):
        return is_pos(e.arg)
    if isinstance(e, Mul):
        return all(is_pos(f) for f in e.factors)
    if isinstance(e, Add):
        return all(is_nonneg(t) for t in e.terms) and any(is_pos(t) for t in e.terms)
    return False


# --------------------------------------------------------------------------
# canonical simplification

_EXPAND_LIMIT = 512


def _key(e: Expr) -> str:
    return to_str(e)


def _is_int(k: Fraction) -> bool:
    return k.denominator == 1


def _mk_const(v: Number) -> Const:
    if isinstance(v, float) and v.is_integer() and abs(v) < 2**53:
        # keep floats as floats: exactness was already lost
        return Const(v)
    return Const(v)


def _split(term: Expr) -> tuple[Number, tuple]:
    if isinstance(term, Const):
        return term.value, ()
    if isinstance(term, Mul) and isinstance(term.factors[0], Const):
        return term.factors[0].value, term.factors[1:]
    if isinstance(term, Mul):
        return Fraction(1), term.factors
    return Fraction(1), (term,)


def _join(coef: Number, factors: tuple) -> Expr:
    if coef == 0:
        return ZERO
    if not factors:
        return _mk_const(coef)
    if coef == 1:
        return factors[0] if len(factors) == 1 else Mul(factors)
    return Mul((_mk_const(coef),) + factors)


def simplify(e: Expr) -> Expr:
    """Canonical form: flattened, like terms and powers collected, products
    expanded over sums, constants folded, ``exp`` factors merged."""
    return _simp(e)


@lru_cache(maxsize=65536)
def _simp(e: Expr) -> Expr:
    if isinstance(e, (Const, Var)):
        return e
    if isinstance(e, Add):
        return _collect_add([_simp(t) for t in e.terms])
    if isinstance(e, Mul):
        return _collect_mul([_simp(f) for f in e.factors])
    if isinstance(e, Pow):
        return _pow_simp(_simp(e.base), e.exp)
    if isinstance(e, Func):
        return _func_simp(e.name, _simp(e.arg))
    if isinstance(e, SignedPow):
        return _spow_simp(_simp(e.arg), e.p)
    if isinstance(e, Singular):
        body, arg = _simp(e.body), _simp(e.arg)
        if isinstance(arg, Const) and arg.value != 0:
            return body
        return Singular(body, arg)
    raise TypeError(type(e))


def _collect_add(terms: list) -> Expr:
    flat = []
    for t in terms:
        flat.extend(t.terms if isinstance(t, Add) else (t,))
    acc: dict[tuple, Number] = {}
    order: dict[tuple, None] = {}
    for t in flat:
        c, fs = _split(t)
        if fs in acc:
            acc[fs] = acc[fs] + c
        else:
            acc[fs] = c
            order[fs] = None
    out = [(fs, c) for fs, c in acc.items() if c != 0]
    out.sort(key=lambda p: (len(p[0]) > 0, _key(_join(1, p[0])) if p[0] else ""))
    built = [_join(c, fs) for fs, c in out]
    if not built:
        return ZERO
    return built[0] if len(built) == 1 else Add(tuple(built))


def _collect_mul(factors: list, depth: int = 0) -> Expr:
    flat = []
    for f in factors:
        flat.extend(f.factors if isinstance(f, Mul) else (f,))
    coef: Number = Fraction(1)
    rest = []
    sums = []
    for f in flat:
        if isinstance(f, Const):
            coef = coef * f.value
        elif isinstance(f, Add):
            sums.append(f)
        else:
            rest.append(f)
    if coef == 0:
        return ZERO
    if sums:
        size = 1
        for s in sums:
            size *= len(s.terms)
        if size <= _EXPAND_LIMIT:
            combos = [[_mk_const(coef)] + rest]
            for s in sums:
                combos = [c + [t] for c in combos for t in s.terms]
            return _collect_add([_collect_mul(c, depth) for c in combos])
        rest.extend(sums)

    powers: dict[Expr, Fraction] = {}
    exp_args = []
    for f in rest:
        if isinstance(f, Func) and f.name == "exp":
            exp_args.append(f.arg)
            continue
        if isinstance(f, Pow):
            base, k = f.base, f.exp
        else:
            base, k = f, Fraction(1)
        powers[base] = powers.get(base, Fraction(0)) + k
    rebuilt = []
    changed = False
    for base, k in powers.items():
        p = _pow_simp(base, k)
        if isinstance(p, (Const, Mul)) or (isinstance(p, Pow) and p.base != base) or (
            not isinstance(p, Pow) and p != base
        ):
            changed = True
        rebuilt.append(p)
    if exp_args:
        arg = _collect_add(exp_args) if len(exp_args) > 1 else exp_args[0]
        rebuilt.append(_func_simp("exp", arg))
        changed = changed or len(exp_args) > 1
    if changed and depth < 4:
        return _collect_mul([_mk_const(coef)] + rebuilt, depth + 1)
    out = []
    for p in rebuilt:
        if isinstance(p, Const):
            coef = coef * p.value
        else:
            out.append(p)
    if coef == 0:
        return ZERO
    out = _merge_sign_factors(out)
    out.sort(key=_key)
    return _join(coef, tuple(out))


def _merge_sign_factors(factors: list) -> list:
    """|u|^p * singular(sgn(u), u) -> signed_pow(u, p) for p > 0 (continuous)."""
    sg = [f for f in factors if isinstance(f, Singular) and f.body == Func("sgn", f.arg)]
    if not sg:
        return factors
    out = list(factors)
    for s in sg:
        u = s.arg
        for i, f in enumerate(out):
            if isinstance(f, Pow) and f.base == Func("abs", u) and f.exp > 0:
                p = f.exp
            elif f == Func("abs", u):
                p = Fraction(1)
            else:
                continue
            out[i] = _spow_simp(u, p)
            out.remove(s)
            break
    return out


def _const_pow(b: Number, k: Fraction) -> Number | None:
    if b == 0:
        return None if k < 0 else (Fraction(0) if isinstance(b, Fraction) else 0.0)
    if _is_int(k):
        return b ** int(k)
    try:
        return _rpow_scalar(float(b), k.numerator, k.denominator)
    except DomainError:
        return None


def _pow_simp(b: Expr, k: Fraction) -> Expr:
    if k == 0:
        return ONE
    if k == 1:
        return b
    if isinstance(b, Const):
        v = _const_pow(b.value, k)
        return Pow(b, k) if v is None else _mk_const(v)
    if isinstance(b, Pow):
        j = b.base, b.exp
        v, j = j
        if _is_int(k):
            return _pow_simp(v, j * k)
        if _is_int(j):
            if j.numerator % 2 == 0:
                return _pow_simp(_func_simp("abs", v), j * k)
            if k.denominator % 2 == 1:
                return _pow_simp(v, j * k)
        return Pow(b, k)
    if isinstance(b, Mul) and _is_int(k):
        return _collect_mul([_pow_simp(f, k) for f in b.factors])
    if isinstance(b, Add) and _is_int(k) and 2 <= k <= 6 and len(b.terms) ** int(k) <= _EXPAND_LIMIT:
        return _collect_mul([b] * int(k))
    if isinstance(b, Func) and b.name == "exp":
        return _func_simp("exp", _collect_mul([Const(k), b.arg]))
    if isinstance(b, SignedPow):
        v, p = b.arg, b.p
        if k.denominator % 2 == 1:
            if k.numerator % 2 == 1:
                return _spow_simp(v, p * k)
            return _pow_simp(_func_simp("abs", v), p * k)
        return Pow(b, k)
    if isinstance(b, Func) and b.name == "abs" and _is_int(k) and k.numerator % 2 == 0:
        return _pow_simp(b.arg, k)
    return Pow(b, k)


def _spow_simp(a: Expr, p: Fraction) -> Expr:
    if p == 1:
        return a
    if isinstance(a, Const):
        v = float(a.value)
        return _mk_const(_spow_scalar(v, float(p))) if not (_is_int(p) and isinstance(a.value, Fraction)) else _mk_const(
            (1 if a.value > 0 else -1 if a.value < 0 else 0) * abs(a.value) ** int(p)
        )
    if isinstance(a, SignedPow):
        return _spow_simp(a.arg, a.p * p)
    if _is_int(p) and p.numerator % 2 == 1:
        return _pow_simp(a, p)
    if is_nonneg(a):
        return _pow_simp(a, p)
    if isinstance(a, Mul) and isinstance(a.factors[0], Const):
        c = a.factors[0].value
        cp = _spow_scalar(float(c), float(p)) if not _is_int(p) else (1 if c > 0 else -1) * abs(c) ** int(p)
        rest = a.factors[1:]
        inner = rest[0] if len(rest) == 1 else Mul(rest)
        return _collect_mul([_mk_const(cp), _spow_simp(inner, p)])
    return SignedPow(a, p)


def _func_simp(name: str, a: Expr) -> Expr:
    if isinstance(a, Const):
        v = a.value
        exact = isinstance(v, Fraction)
        if name == "abs":
            return Const(abs(v))
        if name == "sgn":
            return Const(Fraction((v > 0) - (v < 0)) if exact else float((v > 0) - (v < 0)))
        if name == "sat":
            return Const(v if abs(v) < 1 else (Fraction(1) if v > 0 else Fraction(-1)) if exact else (1.0 if v > 0 else -1.0))
        if name == "exp" and v == 0:
            return ONE
        if name == "log" and v == 1:
            return ZERO
        if name in ("sin",) and v == 0:
            return ZERO
        if name == "cos" and v == 0:
            return ONE
        try:
            return _mk_const(_SCALAR_FUNCS[name](float(v)))
        except (DomainError, OverflowError, ValueError):
            return Func(name, a)
    if name == "abs":
        if is_nonneg(a):
            return a
        if isinstance(a, Func) and a.name == "abs":
            return a
        if isinstance(a, SignedPow):
            return _pow_simp(_func_simp("abs", a.arg), a.p)
        if isinstance(a, Pow) and _is_int(a.exp):
            return _pow_simp(_func_simp("abs", a.base), a.exp)
        if isinstance(a, Mul):
            return _collect_mul([_func_simp("abs", f) for f in a.factors])
        if isinstance(a, Const):
            return Const(abs(a.value))
        return Func("abs", a)
    if name == "sgn":
        if is_pos(a):
            return ONE
        if isinstance(a, SignedPow):
            return _func_simp("sgn", a.arg)
        return Func("sgn", a)
    if name == "log" and isinstance(a, Func) and a.name == "exp":
        return a.arg
    return Func(name, a)


# --------------------------------------------------------------------------
# differentiation


def diff(e: Expr, v: str) -> Expr:
    """Exact derivative of ``e`` with respect to variable ``v`` (simplified).

    abs and sgn differentiate to ``singular`` nodes that fail to evaluate
    where their argument vanishes; signed_pow(u, p) gives p*|u|^(p-1)*u'.
    """
    return simplify(_d(e, canonical_name(v)))


def _d(e: Expr, v: str) -> Expr:
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == v else ZERO
    if v not in free_vars(e):
        return ZERO
    if isinstance(e, Add):
        return Add(tuple(_d(t, v) for t in e.terms))
    if isinstance(e, Mul):
        terms = []
        fs = e.factors
        for i, f in enumerate(fs):
            df = _d(f, v)
            if df == ZERO:
                continue
            terms.append(Mul(fs[:i] + (df,) + fs[i + 1 :]))
        return Add(tuple(terms)) if terms else ZERO
    if isinstance(e, Pow):
        k = e.exp
        return Mul((Const(k), Pow(e.base, k - 1), _d(e.base, v)))
    if isinstance(e, SignedPow):
        u, p = e.arg, e.p
        return Mul((Const(p), Pow(Func("abs", u), p - 1), _d(u, v)))
    if isinstance(e, Func):
        u = e.arg
        du = _d(u, v)
        n = e.name
        if n == "exp":
            inner = e
        elif n == "log":
            inner = Pow(u, Fraction(-1))
        elif n == "sin":
            inner = Func("cos", u)
        elif n == "cos":
            inner = Mul((Const(Fraction(-1)), Func("sin", u)))
        elif n == "abs":
            inner = Singular(Func("sgn", u), u)
        elif n == "sgn":
            inner = Singular(ZERO, u)
        elif n == "sat":
            inner = Func("dsat", u)
        elif n == "dsat":
            inner = Singular(ZERO, Add((Pow(u, Fraction(2)), Const(Fraction(-1)))))
        else:
            raise TypeError(n)
        return Mul((inner, du))
    if isinstance(e, Singular):
        return Singular(_d(e.body, v), e.arg)
    raise TypeError(type(e))


def gradient(e: Expr, names: Sequence[str]) -> list[Expr]:
    return [diff(e, n) for n in names]


# --------------------------------------------------------------------------
# scalar semantics


def _sgn_scalar(u):
    return float((u > 0) - (u < 0))


def _sat_scalar(u):
    return u if abs(u) < 1 else (1.0 if u > 0 else -1.0)


def _dsat_scalar(u):
    a = abs(u)
    if a == 1:
        raise DomainError("derivative of sat evaluated at |u| = 1")
    return 1.0 if a < 1 else 0.0


def _spow_scalar(u, p):
    if u == 0:
        return 0.0
    return math.copysign(abs(u) ** p, u)


def _rpow_scalar(b, num, den):
    if b == 0:
        if num < 0:
            raise DomainError("zero raised to a negative power")
        return 0.0
    if den == 1:
        return b**num
    if b < 0:
        if den % 2 == 0:
            raise DomainError(f"negative base {b!r} with exponent {num}/{den}")
        r = abs(b) ** (num / den)
        return -r if num % 2 else r
    return b ** (num / den)


def _ipow_scalar(b, n):
    if b == 0 and n < 0:
        raise DomainError("division by zero")
    return b**n


def _nz_scalar(a):
    if a == 0:
        raise DomainError("evaluation on the singular set of a non-smooth node")
    return 0


def _log_scalar(u):
    if u <= 0:
        raise DomainError(f"log of non-positive value {u!r}")
    return math.log(u)


def _exp_scalar(u):
    try:
        return math.exp(u)
    except OverflowError:
        return math.inf


_SCALAR_FUNCS: dict[str, Callable] = {
    "exp": _exp_scalar,
    "log": _log_scalar,
    "sin": math.sin,
    "cos": math.cos,
    "abs": abs,
    "sgn": _sgn_scalar,
    "sat": _sat_scalar,
    "dsat": _dsat_scalar,
}


def evaluate(e: Expr, binding: Mapping[str, float]) -> float:
    """Tree-walking evaluation.  Every free variable must be bound."""
    if isinstance(e, Const):
        return float(e.value)
    if isinstance(e, Var):
        try:
            return float(binding[e.name])
        except KeyError:
            raise KeyError(f"unbound variable {e.name!r}") from None
    if isinstance(e, Add):
        return math.fsum(evaluate(t, binding) for t in e.terms)
    if isinstance(e, Mul):
        out = 1.0
        for f in e.factors:
            out *= evaluate(f, binding)
        return out
    if isinstance(e, Pow):
        return _rpow_scalar(evaluate(e.base, binding), e.exp.numerator, e.exp.denominator)
    if isinstance(e, Func):
        return float(_SCALAR_FUNCS[e.name](evaluate(e.arg, binding)))
    if isinstance(e, SignedPow):
        return _spow_scalar(evaluate(e.arg, binding), float(e.p))
    if isinstance(e, Singular):
        _nz_scalar(evaluate(e.arg, binding))
        return evaluate(e.body, binding)
    raise TypeError(type(e))


# --------------------------------------------------------------------------
# numpy semantics


def _np_sat(u):
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) < 1, u, np.sign(u))


def _np_dsat(u):
    a = np.abs(np.asarray(u, dtype=float))
    if np.any(a == 1):
        raise DomainError("derivative of sat evaluated at |u| = 1")
    return np.where(a < 1, 1.0, 0.0)


def _np_spow(u, p):
    u = np.asarray(u, dtype=float)
    return np.sign(u) * np.abs(u) ** p


def _np_rpow(b, num, den):
    b = np.asarray(b, dtype=float)
    if num < 0 and np.any(b == 0):
        raise DomainError("zero raised to a negative power")
    if den == 1:
        return b ** float(num)
    if np.any(b < 0):
        if den % 2 == 0:
            raise DomainError(f"negative base with exponent {num}/{den}")
        r = np.abs(b) ** (num / den)
        return np.sign(b) * r if num % 2 else r
    return b ** (num / den)


def _np_ipow(b, n):
    b = np.asarray(b, dtype=float)
    if n < 0 and np.any(b == 0):
        raise DomainError("division by zero")
    return b ** float(n)


def _np_nz(a):
    if np.any(np.asarray(a) == 0):
        raise DomainError("evaluation on the singular set of a non-smooth node")
    return 0


def _np_log(u):
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0):
        raise DomainError("log of non-positive value")
    return np.log(u)


_NP_FUNCS = {
    "exp": np.exp,
    "log": _np_log,
    "sin": np.sin,
    "cos": np.cos,
    "abs": np.abs,
    "sgn": np.sign,
    "sat": _np_sat,
    "dsat": _np_dsat,
}


# --------------------------------------------------------------------------
# code generation


def _code(e: Expr) -> str:
    if isinstance(e, Const):
        return repr(float(e.value))
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Add):
        return "(" + " + ".join(_code(t) for t in e.terms) + ")"
    if isinstance(e, Mul):
        return "(" + " * ".join(_code(f) for f in e.factors) + ")"
    if isinstance(e, Pow):
        k = e.exp
        if _is_int(k):
            n = int(k)
            if 0 <= n <= 4:
                return f"({_code(e.base)})**{n}" if n else "1.0"
            return f"_ipow({_code(e.base)}, {n})"
        return f"_rpow({_code(e.base)}, {k.numerator}, {k.denominator})"
    if isinstance(e, Func):
        return f"_{e.name}({_code(e.arg)})"
    if isinstance(e, SignedPow):
        return f"_spow({_code(e.arg)}, {float(e.p)!r})"
    if isinstance(e, Singular):
        return f"(_nz({_code(e.arg)}), {_code(e.body)})[1]"
    raise TypeError(type(e))


def _namespace(backend: str) -> dict:
    if backend == "math":
        ns = {f"_{k}": v for k, v in _SCALAR_FUNCS.items()}
        ns.update(_spow=_spow_scalar, _rpow=_rpow_scalar, _ipow=_ipow_scalar, _nz=_nz_scalar)
    elif backend == "numpy":
        ns = {f"_{k}": v for k, v in _NP_FUNCS.items()}
        ns.update(_spow=_np_spow, _rpow=_np_rpow, _ipow=_np_ipow, _nz=_np_nz)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return ns


@lru_cache(maxsize=1024)
def _compile_cached(exprs: tuple, args: tuple, backend: str):
    missing = set().union(*(free_vars(e) for e in exprs)) - set(args) if exprs else set()
    if missing:
        raise KeyError(f"unbound variables {sorted(missing)}")
    body = ", ".join(_code(e) for e in exprs)
    src = f"def _f({', '.join(args)}):\n    return ({body},)\n"
    ns = _namespace(backend)
    exec(compile(src, "<tvobs-expr>", "exec"), ns)
    return ns["_f"]


def compile_exprs(exprs: Iterable[Expr], args: Sequence[str], backend: str = "math") -> Callable:
    """Compile expressions into one Python function of positional ``args``
    returning a tuple.  ``backend='numpy'`` accepts arrays."""
    return _compile_cached(tuple(exprs), tuple(args), backend)


def lambdify(e: Expr, args: Sequence[str], backend: str = "math") -> Callable:
    f = compile_exprs((e,), args, backend)
    return lambda *a: f(*a)[0]
