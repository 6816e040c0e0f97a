"""Plant models and observability chains.

For a single-output chain with output map g, normaliser a and injections
phi_i (all functions of t and the measured output y), the chain is

    y_0 = g(t, h(t, x))
    y_i = (dy_{i-1}/dt + dy_{i-1}/dx . f(t, x, d) + phi_i(t, h(t, x))) / a(t, h(t, x))

and each y_i must not depend on the disturbance d.  The closure adds
y_{m+1} = dy_m/dt + dy_m/dx . f together with a user-supplied
reconstruction Psi(t, y, z_1..z_m) and the derivative closure
y~_{m+1}(t, y, z) = y_{m+1}(t, Psi(t, y, z)).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import expr as E


class ModelError(ValueError):
    pass


class NotRobustlyObservable(ModelError):
    pass


class RegularizationError(ModelError):
    pass


class IdentityError(ModelError):
    pass


SAMPLE_T = (0.0, 2.0)
SAMPLE_X = 2.0


def _exprs(items) -> tuple:
    return tuple(E.as_expr(i) for i in items)


@dataclass(frozen=True)
class SystemModel:
    """x' = f(t, x, d), y = h(t, x), d in the box D."""

    f: tuple
    h: tuple
    D: tuple = ()
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "f", _exprs(self.f))
        object.__setattr__(self, "h", _exprs(self.h))
        object.__setattr__(self, "D", tuple((float(lo), float(hi)) for lo, hi in self.D))
        for lo, hi in self.D:
            if not lo <= hi:
                raise ModelError(f"empty disturbance interval [{lo}, {hi}]")
        allowed = {"t"} | set(self.state_names) | set(self.dist_names)
        for i, fi in enumerate(self.f, 1):
            bad = E.free_vars(fi) - allowed
            if bad:
                raise ModelError(f"f.{i} uses unknown variables {sorted(bad)}")
        for j, hj in enumerate(self.h, 1):
            bad = E.free_vars(hj) - ({"t"} | set(self.state_names))
            if bad:
                raise ModelError(f"h.{j} must depend on t and x only, found {sorted(bad)}")

    @property
    def n(self) -> int:
        return len(self.f)

    @property
    def k_out(self) -> int:
        return len(self.h)

    @property
    def l_dist(self) -> int:
        return len(self.D)

    @property
    def state_names(self) -> tuple:
        return tuple(E.x_name(i) for i in range(1, self.n + 1))

    @property
    def dist_names(self) -> tuple:
        return tuple(E.d_name(j) for j in range(1, self.l_dist + 1))

    @property
    def output_names(self) -> tuple:
        return tuple(E.y_name(j) for j in range(1, self.k_out + 1))

    @property
    def args(self) -> tuple:
        return ("t",) + self.state_names + self.dist_names

    def rhs(self, t: float, x, d=()) -> np.ndarray:
        fn = E.compile_exprs(self.f, self.args, "math")
        return np.array(fn(t, *x, *d), dtype=float)

    def output(self, t: float, x) -> np.ndarray:
        fn = E.compile_exprs(self.h, ("t",) + self.state_names, "math")
        return np.array(fn(t, *x), dtype=float)

    def d_center(self) -> np.ndarray:
        return np.array([(lo + hi) / 2 for lo, hi in self.D])

    def sample_d(self, rng, size: int) -> np.ndarray:
        if not self.D:
            return np.zeros((size, 0))
        lo = np.array([b[0] for b in self.D])
        hi = np.array([b[1] for b in self.D])
        return lo + (hi - lo) * rng.random((size, self.l_dist))

    def validate(self, rng=None, samples: int = 256, require_origin: bool = True, lipschitz: bool = True) -> dict:
        """Sampled checks of the standing assumptions; raises ModelError."""
        rng = np.random.default_rng(0) if rng is None else rng
        report = {}
        ts = rng.uniform(*SAMPLE_T, size=samples)
        ds = self.sample_d(rng, samples)
        zero = np.zeros(self.n)
        if require_origin:
            worst = 0.0
            for t, d in zip(ts, ds):
                worst = max(worst, float(np.max(np.abs(self.rhs(t, zero, d)), initial=0.0)))
                worst = max(worst, float(np.max(np.abs(self.output(t, zero)), initial=0.0)))
            if worst > 1e-12:
                raise ModelError(f"f(t,0,d) or h(t,0) is nonzero (max {worst:.3e})")
            report["origin"] = worst
        if lipschitz:
            report["lipschitz"] = lipschitz_estimate(
                lambda t, x, d: self.rhs(t, x, d), self.n, rng, samples, ts, ds
            )
        return report


def lipschitz_estimate(fn, dim: int, rng, samples: int, ts, ds, radius: float = SAMPLE_X) -> float:
    """Finite-difference Lipschitz constant of fn(t, v, d) in v over a box.

    Raises ModelError if shrinking the increment makes the estimate blow up,
    which happens next to points where fn is not locally Lipschitz.
    """
    ests = []
    for h in (1e-3, 1e-6):
        worst = 0.0
        for t, d in zip(ts, ds):
            v = rng.uniform(-radius, radius, size=dim)
            dv = rng.normal(size=dim)
            dv *= h / np.linalg.norm(dv)
            try:
                diff = np.linalg.norm(np.asarray(fn(t, v + dv, d)) - np.asarray(fn(t, v, d)))
            except (E.DomainError, ZeroDivisionError):
                continue
            worst = max(worst, float(diff / h))
        ests.append(worst)
    if ests[1] > 100.0 * max(ests[0], 1.0):
        raise ModelError(f"Lipschitz estimate diverges ({ests[0]:.3g} -> {ests[1]:.3g}) near sampled points")
    return max(ests)


@dataclass(frozen=True)
class ObservabilityChain:
    sys: SystemModel
    g: E.Expr
    a: E.Expr
    injections: tuple
    y_exprs: tuple
    Psi: tuple | None = None
    y_next: E.Expr | None = None
    y_next_tilde: E.Expr | None = None
    known_disturbance: bool = False
    reports: dict = field(default_factory=dict, compare=False)

    @property
    def m(self) -> int:
        return len(self.y_exprs) - 1

    @property
    def z_names(self) -> tuple:
        """Arguments z1..zm of Psi and y~_{m+1}."""
        return tuple(E.z_name(i) for i in range(1, self.m + 1))

    @property
    def psi_args(self) -> tuple:
        return ("t",) + self.sys.output_names + self.z_names

    @property
    def closed(self) -> bool:
        return self.Psi is not None

    def _x_args(self) -> tuple:
        return ("t",) + self.sys.state_names + self.sys.dist_names

    def eval_y(self, t: float, x, d=None) -> np.ndarray:
        """(y_0, ..., y_m) at (t, x)."""
        d = self.sys.d_center() if d is None else d
        fn = E.compile_exprs(self.y_exprs, self._x_args(), "math")
        return np.array(fn(t, *x, *d), dtype=float)

    def eval_Dy(self, t: float, x, d=None) -> np.ndarray:
        return self.eval_y(t, x, d)[1:]

    def eval_y_next(self, t: float, x, d=None) -> float:
        d = self.sys.d_center() if d is None else d
        fn = E.compile_exprs((self.y_next,), self._x_args(), "math")
        return float(fn(t, *x, *d)[0])

    def eval_g(self, t: float, y) -> float:
        fn = E.compile_exprs((self.g,), ("t",) + self.sys.output_names, "math")
        return float(fn(t, *np.atleast_1d(y))[0])

    def eval_a(self, t: float, y) -> float:
        fn = E.compile_exprs((self.a,), ("t",) + self.sys.output_names, "math")
        return float(fn(t, *np.atleast_1d(y))[0])

    def eval_psi(self, t: float, y, z) -> np.ndarray:
        if self.Psi is None:
            raise ModelError("chain has no reconstruction map")
        fn = E.compile_exprs(self.Psi, self.psi_args, "math")
        return np.array(fn(t, *np.atleast_1d(y), *z), dtype=float)

    def eval_y_next_tilde(self, t: float, y, z, d=None) -> float:
        d = self.sys.d_center() if d is None else d
        fn = E.compile_exprs((self.y_next_tilde,), self.psi_args + self.sys.dist_names, "math")
        return float(fn(t, *np.atleast_1d(y), *z, *d)[0])

    def chain_defect(self, t: float, x, d, i: int) -> float:
        """d/dt y_i along f minus (a y_{i+1} - phi_{i+1}), for 0 <= i < m."""
        sys = self.sys
        dyi = E.simplify(
            E.Add(
                (E.diff(self.y_exprs[i], "t"),)
                + tuple(E.diff(self.y_exprs[i], xn) * fj for xn, fj in zip(sys.state_names, sys.f))
            )
        )
        args = self._x_args()
        lhs = E.compile_exprs((dyi,), args, "math")(t, *x, *d)[0]
        y = sys.output(t, x)
        yi1 = self.eval_y(t, x, d)[i + 1]
        phi = E.compile_exprs((self.injections[i],), ("t",) + sys.output_names, "math")(t, *y)[0]
        return float(lhs - (self.eval_a(t, y) * yi1 - phi))


def _output_subst(sys: SystemModel) -> dict:
    return {name: hj for name, hj in zip(sys.output_names, sys.h)}


def lie_derivative(e: E.Expr, sys: SystemModel) -> E.Expr:
    """de/dt + de/dx . f, simplified."""
    terms = [E.diff(e, "t")]
    for xn, fj in zip(sys.state_names, sys.f):
        dj = E.diff(e, xn)
        if dj != E.ZERO:
            terms.append(E.Mul((dj, fj)))
    return E.simplify(E.Add(tuple(terms)))


def _check_regular(e: E.Expr, label: str, sys: SystemModel | None = None):
    """y_i must be C^1: no singular node in it or in its partial derivatives."""
    bad = E.singular_nodes(e)
    if not bad and sys is not None:
        for v in ("t",) + sys.state_names:
            bad = E.singular_nodes(E.diff(e, v))
            if bad:
                break
    if bad:
        raise RegularizationError(
            f"{label} = {E.to_str(e)} is not C^1: node {E.to_str(bad[0])} does not cancel; "
            "choose an injection that removes it"
        )


def d_dependence(e: E.Expr, sys: SystemModel, rng, n_d: int = 64, n_x: int = 512) -> float:
    """Max over sampled (t, x) of the spread of e over sampled d."""
    if not (E.free_vars(e) & set(sys.dist_names)):
        return 0.0
    args = ("t",) + sys.state_names + sys.dist_names
    fn = E.compile_exprs((e,), args, "numpy")
    ts = rng.uniform(*SAMPLE_T, size=n_x)
    xs = rng.uniform(-SAMPLE_X, SAMPLE_X, size=(n_x, sys.n))
    ds = sys.sample_d(rng, n_d)
    worst = 0.0
    for t, x in zip(ts, xs):
        try:
            vals = np.broadcast_to(fn(t, *x, *ds.T)[0], (n_d,))
        except E.DomainError:
            continue
        spread = float(np.max(vals) - np.min(vals))
        worst = max(worst, spread / max(1.0, float(np.max(np.abs(vals)))))
    return worst


def build_chain(
    sys: SystemModel,
    g,
    a,
    injections: Sequence,
    m: int | None = None,
    tol: float = 1e-9,
    seed: int = 0,
) -> ObservabilityChain:
    """Recursive chain y_0..y_m; raises if some y_i depends on d."""
    injections = _exprs(injections)
    m = len(injections) if m is None else m
    if m < 0 or len(injections) != m:
        raise ModelError(f"need exactly m={m} injections, got {len(injections)}")
    g, a = E.as_expr(g), E.as_expr(a)
    out_vars = {"t"} | set(sys.output_names)
    for label, e in [("g", g), ("a", a)] + [(f"inject.{i}", p) for i, p in enumerate(injections, 1)]:
        bad = E.free_vars(e) - out_vars
        if bad:
            raise ModelError(f"{label} must depend on (t, y) only, found {sorted(bad)}")
    rng = np.random.default_rng(seed)
    _check_maps(sys, g, a, injections, rng)
    sub = _output_subst(sys)
    a_x = E.simplify(E.substitute(a, sub))
    inv_a = None if a_x == E.ONE else E.Pow(a_x, Fraction(-1))
    ys = [E.simplify(E.substitute(g, sub))]
    _check_regular(ys[0], "y_0", sys)
    spreads = {}
    for i in range(1, m + 1):
        body = E.Add((lie_derivative(ys[-1], sys), E.substitute(injections[i - 1], sub)))
        yi = E.simplify(body if inv_a is None else E.Mul((body, inv_a)))
        _check_regular(yi, f"y_{i}", sys)
        spread = d_dependence(yi, sys, rng)
        spreads[i] = spread
        if spread > tol:
            raise NotRobustlyObservable(
                f"not robustly observable under supplied injections: y_{i} = {E.to_str(yi)} "
                f"depends on the disturbance (spread {spread:.3e})"
            )
        ys.append(yi)
    return ObservabilityChain(sys, g, a, injections, tuple(ys), reports={"d_spread": spreads})


def _check_maps(sys, g, a, injections, rng, samples: int = 256):
    y_args = ("t",) + sys.output_names
    ts = rng.uniform(*SAMPLE_T, size=samples)
    ys = rng.uniform(-10, 10, size=(samples, sys.k_out))
    a_fn = E.compile_exprs((a,), y_args, "math")
    a_min = min(a_fn(t, *y)[0] for t, y in zip(ts, ys))
    if not a_min > 0:
        raise ModelError(f"a(t, y) must be positive; sampled minimum {a_min:.3g}")
    zero = np.zeros(sys.k_out)
    fns = E.compile_exprs((g,) + tuple(injections), y_args, "math")
    for t in ts[:32]:
        vals = fns(t, *zero)
        if max(abs(v) for v in vals) > 1e-12:
            raise ModelError("g(t, 0) and every injection phi_i(t, 0) must vanish")


def build_closure(
    chain: ObservabilityChain,
    Psi: Sequence,
    y_next_tilde=None,
    identity: bool = True,
    known_disturbance: bool = False,
    tol: float = 1e-9,
    samples: int = 512,
    seed: int = 1,
) -> ObservabilityChain:
    """Attach Psi and (optionally) the derivative closure y~_{m+1}.

    ``identity`` asks that Psi(t, h(t,x), Dy(t,x)) = x on samples.  With
    ``known_disturbance`` the closure may depend on d (the d-independence
    check of y_{m+1} is skipped); otherwise it is enforced.
    """
    sys = chain.sys
    Psi = _exprs(Psi)
    rng = np.random.default_rng(seed)
    allowed = set(chain.psi_args)
    for i, p in enumerate(Psi, 1):
        bad = E.free_vars(p) - allowed
        if bad:
            raise ModelError(f"Psi.{i} must depend on (t, y, z1..zm), found {sorted(bad)}")
    y_next = lie_derivative(chain.y_exprs[-1], sys)
    reports = dict(chain.reports)
    if not known_disturbance:
        spread = d_dependence(y_next, sys, rng)
        reports["y_next_d_spread"] = spread
        if spread > tol and y_next_tilde is not None:
            raise NotRobustlyObservable(
                f"y_{chain.m + 1} = {E.to_str(y_next)} depends on the disturbance (spread {spread:.3e})"
            )
    out = replace(chain, Psi=Psi, y_next=y_next, known_disturbance=known_disturbance, reports=reports)
    if identity:
        if len(Psi) != sys.n:
            raise ModelError(f"identity reconstruction needs {sys.n} components, got {len(Psi)}")
        err = reconstruction_error(out, rng, samples)
        reports["psi_identity"] = err
        if err > tol:
            raise IdentityError(f"Psi(t, h, Dy) differs from x by {err:.3e} on samples")
    if y_next_tilde is not None:
        ynt = E.as_expr(y_next_tilde)
        bad = E.free_vars(ynt) - allowed - (set(sys.dist_names) if known_disturbance else set())
        if bad:
            raise ModelError(f"y_next_tilde uses unexpected variables {sorted(bad)}")
        out = replace(out, y_next_tilde=ynt)
        err = closure_error(out, rng, samples)
        reports["closure_identity"] = err
        if err > tol:
            raise IdentityError(f"y~_{chain.m + 1}(t, h, Dy) differs from y_{chain.m + 1} by {err:.3e}")
        reports["closure_lipschitz"] = _closure_lipschitz(out, rng)
    return out


def _sample_points(sys, rng, samples):
    ts = rng.uniform(*SAMPLE_T, size=samples)
    xs = rng.uniform(-SAMPLE_X, SAMPLE_X, size=(samples, sys.n))
    ds = sys.sample_d(rng, samples)
    return ts, xs, ds


def reconstruction_error(chain: ObservabilityChain, rng=None, samples: int = 512) -> float:
    """max |Psi(t, h(t,x), Dy(t,x)) - x| / max(1, |x|) on a sample cloud."""
    rng = np.random.default_rng(2) if rng is None else rng
    sys = chain.sys
    worst = 0.0
    for t, x, d in zip(*_sample_points(sys, rng, samples)):
        xhat = chain.eval_psi(t, sys.output(t, x), chain.eval_Dy(t, x, d))
        worst = max(worst, float(np.max(np.abs(xhat - x))) / max(1.0, float(np.max(np.abs(x)))))
    return worst


def closure_error(chain: ObservabilityChain, rng=None, samples: int = 512) -> float:
    rng = np.random.default_rng(3) if rng is None else rng
    sys = chain.sys
    worst = 0.0
    for t, x, d in zip(*_sample_points(sys, rng, samples)):
        exact = chain.eval_y_next(t, x, d)
        approx = chain.eval_y_next_tilde(t, sys.output(t, x), chain.eval_Dy(t, x, d), d)
        worst = max(worst, abs(exact - approx) / max(1.0, abs(exact)))
    return worst


def _closure_lipschitz(chain: ObservabilityChain, rng, samples: int = 256) -> float:
    sys = chain.sys
    n, m = sys.n, chain.m

    def fn(t, v, d):
        x, z = v[:n], v[n:]
        return chain.eval_y_next_tilde(t, sys.output(t, x), z, d)

    ts = rng.uniform(*SAMPLE_T, size=samples)
    ds = sys.sample_d(rng, samples)
    return lipschitz_estimate(fn, n + m, rng, samples, ts, ds)
