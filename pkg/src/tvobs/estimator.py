"""Estimators and saturated observers built on an observability chain.

State z = (z_0, ..., z_m) tracks (g(t, y), y_1, ..., y_m).  With the
innovation e = z_0 - g(t, y) and v_i = a(t, y) (R q(t))^{i+1} k_i e:

    z_i' = a(t, y) z_{i+1} - phi_{i+1}(t, y) + v_i      (i < m)
    z_m' = v_m                                          (estimator)
    z_m' = beta(t, w) sat(y~_{m+1}(t, y, z_1..z_m) / beta(t, w)) + v_m,
    w'   = -w,    beta(t, w) = beta~(t) (1 + exp(t) |w|)  (observer)

and the state estimate is Psi(t, y, z_1, ..., z_m).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import expr as E
from .gaindesign import GainDesign
from .obsmap import ObservabilityChain, SystemModel
from .timefun import ScalarTimeFunction

ESTIMATOR = "estimator"
OBSERVER = "observer"


class EstimatorError(ValueError):
    pass


@dataclass(frozen=True)
class BoundData:
    """Magnitude bounds attached to a model.

    beta_tilde(t) * kappa_a(|x0|) bounds |y| + |y_0| + |Dy| + |y_m'| along
    solutions, and rfc_mu(t) * rfc_a(|x0|) bounds |x(t)|.
    """

    beta_tilde: ScalarTimeFunction | None = None
    kappa_a: ScalarTimeFunction | None = None
    rfc_mu: ScalarTimeFunction | None = None
    rfc_a: ScalarTimeFunction | None = None

    @classmethod
    def of(cls, beta_tilde=None, kappa_a=None, rfc_mu=None, rfc_a=None) -> "BoundData":
        def tf(v, cls_, var):
            return None if v is None else ScalarTimeFunction.of(v, cls_, var)

        return cls(tf(beta_tilde, "Kplus", "t"), tf(kappa_a, "Kinf", "s"), tf(rfc_mu, "Kplus", "t"),
                   tf(rfc_a, "Kinf", "s"))


@dataclass(frozen=True)
class EstimatorSpec:
    kind: str
    chain: ObservabilityChain
    design: GainDesign
    phi: ScalarTimeFunction
    rhs: tuple
    beta_tilde: ScalarTimeFunction | None = None

    @property
    def m(self) -> int:
        return self.chain.m

    @property
    def sys(self) -> SystemModel:
        return self.chain.sys

    @property
    def z_names(self) -> tuple:
        return tuple(E.z_name(i) for i in range(self.m + 1))

    @property
    def state_names(self) -> tuple:
        return self.z_names + (("w",) if self.kind == OBSERVER else ())

    @property
    def dim(self) -> int:
        return len(self.state_names)

    @property
    def rhs_args(self) -> tuple:
        return ("t",) + self.sys.output_names + self.state_names + self.sys.dist_names

    def z_dot(self, t: float, y, s, d=None) -> np.ndarray:
        d = self.sys.d_center() if d is None else d
        fn = E.compile_exprs(self.rhs, self.rhs_args, "math")
        return np.array(fn(t, *np.atleast_1d(y), *s, *d), dtype=float)

    def pretty(self) -> list[str]:
        return [f"{n}' = {E.to_str(r)}" for n, r in zip(self.state_names, self.rhs)]

    def beta(self, t: float, w: float) -> float:
        return self.beta_tilde(t) * (1.0 + np.exp(t) * abs(w))

    def reconstruct(self, t: float, y, z) -> np.ndarray:
        """Psi(t, y, z_1..z_m); z_0 is not used."""
        return reconstruct(self, t, y, z)


def _innovation(chain: ObservabilityChain) -> E.Expr:
    return E.simplify(E.Var("z0") - chain.g)


def _injection_terms(chain: ObservabilityChain, design: GainDesign) -> list:
    m = chain.m
    if design.n_chain != m + 1:
        raise EstimatorError(f"gain design has dimension {design.n_chain}, chain needs {m + 1}")
    Rq = E.Mul((E.Const(float(design.R)), design.q.body))
    innov = _innovation(chain)
    return [
        E.Mul((chain.a, E.Pow(Rq, Fraction(i + 1)), E.Const(float(design.k[i])), innov))
        for i in range(m + 1)
    ]


def _chain_part(chain: ObservabilityChain, v: list) -> list:
    m = chain.m
    out = []
    for i in range(m):
        out.append(E.Add((E.Mul((chain.a, E.Var(E.z_name(i + 1)))), E.neg(chain.injections[i]), v[i])))
    return out


def build_estimator(chain: ObservabilityChain, design: GainDesign, phi) -> EstimatorSpec:
    v = _injection_terms(chain, design)
    rhs = _chain_part(chain, v) + [v[chain.m]]
    rhs = tuple(E.simplify(r) for r in rhs)
    return EstimatorSpec(ESTIMATOR, chain, design, ScalarTimeFunction.of(phi), rhs)


def beta_expr(beta_tilde: ScalarTimeFunction) -> E.Expr:
    return E.Mul((beta_tilde.body, E.Add((E.ONE, E.Mul((E.Func("exp", E.Var("t")), E.Func("abs", E.Var("w"))))))))


def build_observer(chain: ObservabilityChain, design: GainDesign, phi, bounds: BoundData) -> EstimatorSpec:
    if chain.y_next_tilde is None:
        raise EstimatorError("observer needs the derivative closure y~_{m+1}")
    if bounds is None or bounds.beta_tilde is None:
        raise EstimatorError("observer needs beta~ in the bound data")
    v = _injection_terms(chain, design)
    beta = E.simplify(beta_expr(bounds.beta_tilde))
    # kept factored so the printed form reads beta*sat(y~/beta)
    drift = E.Mul((beta, E.Func("sat", E.Mul((E.simplify(chain.y_next_tilde), E.Pow(beta, Fraction(-1)))))))
    rhs = [E.simplify(r) for r in _chain_part(chain, v)]
    rhs += [E.Add((drift, E.simplify(v[chain.m]))), E.neg(E.Var("w"))]
    rhs = tuple(rhs)
    return EstimatorSpec(OBSERVER, chain, design, ScalarTimeFunction.of(phi), rhs, bounds.beta_tilde)


def consistent_init(chain: ObservabilityChain, bounds: BoundData | None, t0: float, x0, margin: float = 0.1,
                    d=None):
    """z0 = (g(t0, h(t0, x0)), Dy(t0, x0)), w0 = kappa_a(|x0|) exp(-t0) (1 + margin)."""
    x0 = np.asarray(x0, dtype=float)
    y = chain.sys.output(t0, x0)
    z0 = np.concatenate(([chain.eval_g(t0, y)], chain.eval_Dy(t0, x0, d)))
    w0 = None
    if bounds is not None and bounds.kappa_a is not None:
        w0 = bounds.kappa_a(float(np.linalg.norm(x0))) * np.exp(-t0) * (1.0 + margin)
    return z0, w0


def reconstruct(spec: EstimatorSpec, t: float, y, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if len(z) < spec.m + 1:
        raise EstimatorError(f"need {spec.m + 1} estimator states, got {len(z)}")
    return spec.chain.eval_psi(t, y, z[1 : spec.m + 1])


# --------------------------------------------------------------------------
# joint vector fields for co-simulation


class JointField:
    """Plant plus estimator as one ODE with the disturbance frozen.

    ``coords='direct'`` integrates s = (x, z[, w]).  ``coords='scaled'``
    integrates s = (x, eta[, w]) with eta_i = (R q)^{m+1-i} (z_i - y_i(t, x)),
    which removes the cancellation in z_0 - g(t, y) when R q is large:

        eta' = a R q (A + k c') eta + diag(m+1-i) (q'/q) eta
               + R q (drift - y_{m+1}(t, x, d)) e_m.
    """

    def __init__(self, spec: EstimatorSpec, coords: str = "scaled"):
        if coords not in ("direct", "scaled"):
            raise ValueError(f"unknown coordinates {coords!r}")
        self.spec = spec
        self.coords = coords
        sys, ch, dg = spec.sys, spec.chain, spec.design
        self.n, self.m = sys.n, ch.m
        self.observer = spec.kind == OBSERVER
        self._f = E.compile_exprs(sys.f, sys.args, "math")
        self._h = E.compile_exprs(sys.h, ("t",) + sys.state_names, "math")
        if self.observer:
            self._obs = E.compile_exprs(
                (spec.beta_tilde.body, ch.y_next_tilde), ch.psi_args + sys.dist_names, "math"
            )
        if coords == "direct":
            self._z = E.compile_exprs(spec.rhs, spec.rhs_args, "math")
            return
        y_next = ch.y_next if ch.y_next is not None else _lie(ch)
        self._y = E.compile_exprs(ch.y_exprs + (y_next,), sys.args, "math")
        self._a = E.compile_exprs((ch.a,), ("t",) + sys.output_names, "math")
        q = dg.q.body
        self._q = E.compile_exprs((q, E.diff(q, "t")), ("t",), "math")
        self.R = float(dg.R)
        self.k = np.asarray(dg.k, dtype=float)
        m = self.m
        self.F = np.eye(m + 1, k=1)
        self.F[:, 0] += self.k
        self.B = np.arange(m + 1, 0, -1, dtype=float)

    @property
    def dim(self) -> int:
        return self.n + self.spec.dim

    # conversions between (x, z[, w]) and the integrated state

    def pack(self, t: float, x, z, w=None, d=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        if self.coords == "scaled":
            d = self.spec.sys.d_center() if d is None else d
            ys = np.array(self._y(t, *x, *d)[: self.m + 1])
            Rq = self.R * self._q(t)[0]
            z = (z - ys) * Rq ** self.B
        tail = [w] if self.observer else []
        return np.concatenate((x, z, tail)).astype(float)

    def unpack(self, t: float, s, d=None):
        """(x, z, w, sat_arg) from the integrated state."""
        n, m = self.n, self.m
        x = np.asarray(s[:n])
        zz = np.asarray(s[n : n + m + 1])
        w = float(s[n + m + 1]) if self.observer else None
        if self.coords == "scaled":
            d = self.spec.sys.d_center() if d is None else d
            ys = np.array(self._y(t, *x, *d)[: m + 1])
            Rq = self.R * self._q(t)[0]
            zz = ys + zz / Rq ** self.B
        sat_arg = None
        if self.observer:
            y = self._h(t, *x)
            bt, ynt = self._obs(t, *y, *zz[1:], *(d if d is not None else self.spec.sys.d_center()))
            sat_arg = ynt / (bt * (1.0 + np.exp(t) * abs(w)))
        return x, zz, w, sat_arg

    def __call__(self, t: float, s, d) -> np.ndarray:
        n, m = self.n, self.m
        x = s[:n]
        out = np.empty(self.dim)
        out[:n] = self._f(t, *x, *d)
        y = self._h(t, *x)
        if self.coords == "direct":
            out[n:] = self._z(t, *y, *s[n:], *d)
            return out
        eta = s[n : n + m + 1]
        vals = self._y(t, *x, *d)
        ys, y_next = vals[: m + 1], vals[m + 1]
        a = self._a(t, *y)[0]
        q, dq = self._q(t)
        Rq = self.R * q
        deta = a * Rq * (self.F @ eta) + (dq / q) * self.B * eta
        drift = 0.0
        if self.observer:
            w = s[n + m + 1]
            zs = [ys[i] + eta[i] / Rq ** self.B[i] for i in range(1, m + 1)]
            bt, ynt = self._obs(t, *y, *zs, *d)
            beta = bt * (1.0 + np.exp(t) * abs(w))
            u = ynt / beta
            drift = beta * (u if abs(u) < 1 else np.sign(u))
            out[n + m + 1] = -w
        deta[m] += Rq * (drift - y_next)
        out[n : n + m + 1] = deta
        return out


def _lie(chain: ObservabilityChain) -> E.Expr:
    from .obsmap import lie_derivative

    return lie_derivative(chain.y_exprs[-1], chain.sys)
