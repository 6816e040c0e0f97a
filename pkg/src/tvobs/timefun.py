"""Scalar comparison functions of time and the gain clock q."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np
from scipy import integrate

from . import expr as E

CLASSES = ("Kplus", "Kstar", "Kinf", "plain")

DEFAULT_GRID = np.linspace(0.0, 10.0, 2001)
_HORIZONS = (1000.0, 100.0, 30.0, 10.0, 3.0, 1.0)

KSTAR_TAIL_TOL = 1e-3


class ClassCheckError(ValueError):
    def __init__(self, message: str, t: float | None = None):
        super().__init__(message)
        self.t = t


class GainClockWarning(UserWarning):
    """q does not dominate |phi'|/phi + phi^2 everywhere on the grid."""


@dataclass(frozen=True)
class ScalarTimeFunction:
    body: E.Expr
    claimed_class: str = "plain"
    var: str = "t"

    def __post_init__(self):
        if isinstance(self.body, str):
            object.__setattr__(self, "body", E.parse(self.body))
        elif not isinstance(self.body, E.Expr):
            object.__setattr__(self, "body", E.as_expr(self.body))
        if self.claimed_class not in CLASSES:
            raise ValueError(f"unknown class {self.claimed_class!r}; expected one of {CLASSES}")
        extra = E.free_vars(self.body) - {self.var}
        if extra:
            raise ValueError(f"time function depends on {sorted(extra)} besides {self.var}")

    @classmethod
    def of(cls, src, claimed_class: str = "plain", var: str = "t") -> "ScalarTimeFunction":
        if isinstance(src, ScalarTimeFunction):
            return cls(src.body, claimed_class if claimed_class != "plain" else src.claimed_class, src.var)
        return cls(E.as_expr(src), claimed_class, var)

    def __call__(self, t):
        f = E.compile_exprs((self.body,), (self.var,), "numpy" if np.ndim(t) else "math")
        out = f(t)[0]
        if np.ndim(t):
            return np.broadcast_to(np.asarray(out, dtype=float), np.shape(t)).copy()
        return float(out)

    def derivative(self) -> "ScalarTimeFunction":
        return ScalarTimeFunction(E.diff(self.body, self.var), "plain", self.var)

    def __str__(self):
        return E.to_str(self.body)

    def integral(self, t, t0: float = 0.0) -> float:
        """Integral of the function from ``t0`` to ``t``."""
        F = antiderivative(self.body, self.var)
        if F is not None:
            return _eval_anti(F, self.var, t) - _eval_anti(F, self.var, t0)
        val, _ = integrate.quad(self, t0, t, limit=200, epsabs=0.0, epsrel=1e-12)
        return float(val)

    def log_integral(self, t, t0: float = 0.0) -> float:
        """log of the integral, robust when the integral overflows a double."""
        F = antiderivative(self.body, self.var)
        if F is not None and _is_single_exp(self.body, self.var):
            c, lam = _is_single_exp(self.body, self.var)
            # c/lam (e^{lam t} - e^{lam t0})
            if t <= t0:
                return -math.inf
            return math.log(c / lam) + lam * t + math.log1p(-math.exp(-lam * (t - t0)))
        return math.log(self.integral(t, t0))


# --------------------------------------------------------------------------
# closed-form antiderivatives for sums of c*t^k and c*exp(lam*t)


def _linear_coeff(e: E.Expr, v: str):
    """If e == lam*v with constant lam, return lam."""
    if isinstance(e, E.Var) and e.name == v:
        return 1.0
    if isinstance(e, E.Mul) and len(e.factors) == 2:
        c, x = e.factors
        if isinstance(c, E.Const) and isinstance(x, E.Var) and x.name == v:
            return float(c.value)
    return None


def _term_kind(term: E.Expr, v: str):
    c, fs = E._split(term)
    c = float(c)
    if not fs:
        return ("poly", c, 0)
    if len(fs) == 1:
        f = fs[0]
        if isinstance(f, E.Var) and f.name == v:
            return ("poly", c, 1)
        if isinstance(f, E.Pow) and isinstance(f.base, E.Var) and f.base.name == v and f.exp.denominator == 1 and f.exp >= 0:
            return ("poly", c, int(f.exp))
        if isinstance(f, E.Func) and f.name == "exp":
            lam = _linear_coeff(f.arg, v)
            if lam is not None and lam != 0:
                return ("exp", c, lam)
    return None


def antiderivative(e: E.Expr, v: str = "t"):
    """List of closed-form pieces, or None when not of the supported shape."""
    e = E.simplify(e)
    terms = e.terms if isinstance(e, E.Add) else (e,)
    pieces = []
    for term in terms:
        k = _term_kind(term, v)
        if k is None:
            return None
        pieces.append(k)
    return pieces


def _eval_anti(pieces, v, t) -> float:
    total = 0.0
    for kind, c, p in pieces:
        if kind == "poly":
            total += c * t ** (p + 1) / (p + 1)
        else:
            total += c / p * math.exp(p * t)
    return total


def _is_single_exp(e: E.Expr, v: str):
    pieces = antiderivative(e, v)
    if pieces and len(pieces) == 1 and pieces[0][0] == "exp" and pieces[0][1] > 0 and pieces[0][2] > 0:
        return pieces[0][1], pieces[0][2]
    return None


# --------------------------------------------------------------------------
# class checks


@dataclass
class ClassReport:
    claimed_class: str
    checks: dict = field(default_factory=dict)
    failure_t: float | None = None
    message: str = ""

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def __str__(self):
        parts = [f"{k}={'pass' if v else 'FAIL'}" for k, v in self.checks.items()]
        status = "pass" if self.passed else "FAIL"
        extra = f" ({self.message})" if self.message else ""
        return f"{self.claimed_class}: {status} [{', '.join(parts)}]{extra}"


def _sample(body: E.Expr, var: str, grid: np.ndarray) -> np.ndarray:
    fn = E.compile_exprs((body,), (var,), "math")
    out = np.empty(len(grid))
    for i, t in enumerate(grid):
        try:
            out[i] = fn(float(t))[0]
        except (E.DomainError, ZeroDivisionError, OverflowError, ValueError) as exc:
            raise ClassCheckError(f"evaluation failed at {var}={float(t)!r}: {exc}", float(t)) from exc
    return out


def default_grid(f: ScalarTimeFunction, n: int = 2001) -> np.ndarray:
    """Longest standard horizon on which f stays below 1e150."""
    fn = E.compile_exprs((f.body,), (f.var,), "math")
    for T in _HORIZONS:
        try:
            if all(abs(fn(x)[0]) < 1e150 for x in (T, T / 2)):
                return np.linspace(0.0, T, n)
        except (E.DomainError, ZeroDivisionError, OverflowError, ValueError):
            continue
    return DEFAULT_GRID


def check_class(f: ScalarTimeFunction, grid=None, tol: float = KSTAR_TAIL_TOL) -> ClassReport:
    """Sample-based evidence for the claimed class of ``f``."""
    grid = default_grid(f) if grid is None else np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2 or not np.all(np.isfinite(grid)) or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be finite and strictly increasing with at least two points")
    rep = ClassReport(f.claimed_class)
    try:
        vals = _sample(f.body, f.var, grid)
    except ClassCheckError as exc:
        rep.checks["evaluable"] = False
        rep.message = str(exc)
        rep.failure_t = exc.t
        return rep
    rep.checks["finite"] = bool(np.all(np.isfinite(vals)))
    cls = f.claimed_class
    if cls == "plain":
        return rep
    if cls in ("Kplus", "Kstar"):
        rep.checks["positive"] = bool(np.all(vals > 0))
    if cls == "Kstar":
        rep.checks["nondecreasing"] = bool(np.all(np.diff(vals) >= -1e-12 * np.maximum(1.0, np.abs(vals[1:]))))
        rep.checks["at_least_one_at_0"] = bool(_sample(f.body, f.var, np.array([0.0]))[0] >= 1.0)
        try:
            dvals = _sample(E.diff(f.body, f.var), f.var, grid)
        except ClassCheckError as exc:
            rep.checks["tail_ratio"] = False
            rep.message = str(exc)
            return rep
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            ratio = (dvals / vals) / vals
        tail = ratio[int(0.9 * len(grid)) :]
        ok = bool(np.all(np.isfinite(tail)) and np.all(np.abs(tail) < tol))
        ok = ok and bool(np.all(np.diff(tail) <= 1e-15 + 1e-9 * np.abs(tail[:-1])))
        rep.checks["tail_ratio"] = ok
        if not ok:
            rep.message = f"q'/q^2 at {f.var}={grid[-1]:g} is {ratio[-1]:.3e} (tol {tol:g})"
    if cls == "Kinf":
        rep.checks["zero_at_0"] = abs(_sample(f.body, f.var, np.array([0.0]))[0]) <= 1e-15
        rep.checks["increasing"] = bool(np.all(np.diff(vals) > 0))
        # unboundedness proxy: the last doubling of the argument gains at
        # least 3/4 of what the previous doubling gained
        T = grid[-1]
        f4, f2, f1 = _sample(f.body, f.var, np.array([T / 4, T / 2, T]))
        rep.checks["unbounded"] = bool(f1 - f2 >= 0.75 * (f2 - f4) and f1 > f2)
    bad = [k for k, v in rep.checks.items() if not v]
    if bad and not rep.message:
        rep.message = "failed: " + ", ".join(bad)
    return rep


# --------------------------------------------------------------------------
# gain clock


def derive_q(phi: ScalarTimeFunction) -> ScalarTimeFunction:
    """q = |phi'|/phi + phi^2 + 1, simplified; the +1 keeps the domination
    strict and makes q(0) >= 1 automatic."""
    dphi = E.diff(phi.body, phi.var)
    if E.singular_nodes(dphi):
        raise ValueError(
            f"phi = {phi} is not differentiable as an expression; supply q explicitly"
        )
    q = E.Func("abs", dphi) * E.Pow(phi.body, Fraction(-1)) + E.Pow(phi.body, Fraction(2)) + 1
    return ScalarTimeFunction(E.simplify(q), "Kstar", phi.var)


@dataclass(frozen=True)
class QValidation:
    ok: bool
    shortfall: float
    worst_t: float

    def __str__(self):
        if self.ok:
            return "q dominates |phi'|/phi + phi^2 on the grid"
        return f"q falls short of |phi'|/phi + phi^2 by {self.shortfall:.6g} (worst at t={self.worst_t:g})"


def required_q(phi: ScalarTimeFunction) -> E.Expr:
    dphi = E.diff(phi.body, phi.var)
    return E.simplify(E.Func("abs", dphi) * E.Pow(phi.body, Fraction(-1)) + E.Pow(phi.body, Fraction(2)))


def validate_q(q: ScalarTimeFunction, phi: ScalarTimeFunction, grid=None, warn: bool = True) -> QValidation:
    """Check q(t) >= |phi'(t)|/phi(t) + phi(t)^2 on the grid.

    A user-supplied q is accepted either way; a shortfall only warns.
    """
    grid = np.linspace(0.0, 2.0, 401) if grid is None else np.asarray(grid, dtype=float)
    need = _sample(required_q(phi), phi.var, grid)
    have = _sample(q.body, q.var, grid)
    gap = need - have
    i = int(np.argmax(gap))
    short = float(gap[i])
    ok = short <= 1e-12 * max(1.0, abs(need[i]))
    res = QValidation(ok, max(short, 0.0), float(grid[i]))
    if not ok and warn:
        warnings.warn(str(res), GainClockWarning, stacklevel=2)
    return res


def as_callable(f) -> Callable[[float], float]:
    """Scalar callable from a ScalarTimeFunction, a Python callable or an expression in one variable."""
    if isinstance(f, ScalarTimeFunction) or (callable(f) and not isinstance(f, E.Expr)):
        return f
    e = E.as_expr(f)
    fv = sorted(E.free_vars(e))
    if len(fv) > 1:
        raise ValueError(f"expected one free variable, found {fv}")
    return ScalarTimeFunction(e, "plain", fv[0] if fv else "t")
