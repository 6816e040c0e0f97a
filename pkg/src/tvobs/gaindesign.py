"""Time-varying high-gain injection design for the chain of integrators

    x_i' = a(t, theta) x_{i+1} + v_i,   x_n' = v_n + u,
    v = a(t, theta) diag(R q, R^2 q^2, ..., R^n q^n) k x_1.

The design picks a Hurwitz k, certifies it with P (A + k c')+(A + k c')' P
<= -mu P, sets R from the Lyapunov constants and the lower bound l of a,
and evaluates the constants (gamma, M, rho) of the weighted ISS estimate

    phi(t)|x(t)| <= rho(t0) exp(-gamma (t - t0)) |x0| + M sup |u|/phi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from . import expr as E
from . import linalg
from .timefun import ScalarTimeFunction, derive_q, validate_q


class DesignError(ValueError):
    pass


def default_roots(n: int, scale: float = 1.0) -> list:
    return [-scale * (i + 1) for i in range(n)]


def place_gain(n: int, roots) -> np.ndarray:
    """k with char(A + k c') = prod (s - r_i).

    A + k c' has first column k and ones on the superdiagonal, so its
    characteristic polynomial is s^n - k_1 s^{n-1} - ... - k_n.
    """
    roots = [complex(r) for r in roots]
    if len(roots) != n:
        raise DesignError(f"need {n} roots, got {len(roots)}")
    if any(r.real >= 0 for r in roots):
        raise DesignError("roots must have negative real part")
    if not linalg.conjugate_closed(roots):
        raise DesignError("roots must be closed under conjugation")
    coeffs = linalg.poly_from_roots(roots)
    return -coeffs[1:]


def closed_loop_matrix(k) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    F = linalg.shift_matrix(len(k))
    F[:, 0] += k
    return F


def pole_error(k, roots) -> float:
    """Distance between eig(A + k c') and the requested roots (matched greedily)."""
    ev = list(linalg.eigvals(closed_loop_matrix(k)))
    worst = 0.0
    for r in roots:
        i = int(np.argmin([abs(e - r) for e in ev]))
        worst = max(worst, abs(ev.pop(i) - r))
    return worst


@dataclass(frozen=True)
class Certificate:
    P: np.ndarray
    mu: float
    K1: float
    K2: float
    residual: float
    abs_residual: float = 0.0


def lyapunov_certificate(k) -> Certificate:
    """P(A+kc') + (A+kc')'P = -I, mu = 1/lambda_max(P), K1/K2 = eigen bounds.

    ``abs_residual`` is lambda_max(P F + F' P + mu P), which should be <= 0.
    The inequality is homogeneous in P and tight for this mu, so its computed
    value is rounding noise of size eps |P| |F|; ``residual`` is the same
    quantity for the normalised certificate P / lambda_max(P).
    """
    F = closed_loop_matrix(k)
    try:
        P = linalg.lyapunov_solve(F)
    except linalg.LinalgError as exc:
        raise DesignError(f"Lyapunov solve failed: {exc}") from exc
    eig = linalg.sym_eigs(P)
    K1, K2 = float(eig[0]), float(eig[-1])
    if K1 <= 0:
        raise DesignError("Lyapunov solution is not positive definite (A + kc' not Hurwitz)")
    mu = 1.0 / K2
    S = P @ F + F.T @ P + mu * P
    abs_res = float(linalg.sym_eigs(0.5 * (S + S.T))[-1])
    return Certificate(P, mu, K1, K2, abs_res / K2, abs_res)


def compute_R(n: int, mu: float, K1: float, K2: float, l: float, multiplier: float = 1.0) -> float:
    if min(mu, K1, K2, l) <= 0 or n < 1:
        raise DesignError("n, mu, K1, K2 and l must be positive")
    if multiplier < 1:
        raise DesignError("R multiplier must be >= 1")
    return multiplier * max(1.0, 8.0 * math.sqrt(n) * K2 / (mu * K1 * l))


@dataclass(frozen=True)
class GainDesign:
    k: np.ndarray
    roots: tuple
    cert: Certificate
    l: float
    R: float
    q: ScalarTimeFunction
    R_multiplier: float = 1.0
    constants: "EstimateConstants | None" = field(default=None, compare=False)

    @property
    def n_chain(self) -> int:
        return len(self.k)

    @property
    def P(self):
        return self.cert.P

    @property
    def mu(self) -> float:
        return self.cert.mu

    @property
    def K1(self) -> float:
        return self.cert.K1

    @property
    def K2(self) -> float:
        return self.cert.K2

    @property
    def gamma(self) -> float:
        return self.mu * self.R * self.l / 16.0

    @property
    def M(self) -> float | None:
        return None if self.constants is None else self.constants.M

    def rho(self, t0: float) -> float:
        return self.constants.rho(t0)

    def summary(self) -> dict:
        out = {
            "n": self.n_chain,
            "k": tuple(float(v) for v in self.k),
            "mu": self.mu,
            "K1": self.K1,
            "K2": self.K2,
            "l": self.l,
            "R": self.R,
            "gamma": self.gamma,
            "q": str(self.q),
        }
        if self.constants is not None:
            c = self.constants
            out.update(M=c.M, M1=c.M1, K=c.K, G=c.G)
        return out


def injection_vector(design: GainDesign, t: float, a_val: float) -> np.ndarray:
    """a_val * (R q k_1, R^2 q^2 k_2, ..., R^n q^n k_n)."""
    Rq = design.R * design.q(t)
    powers = Rq ** np.arange(1, design.n_chain + 1)
    return a_val * powers * design.k


# --------------------------------------------------------------------------
# estimate constants


@dataclass(frozen=True)
class EstimateConstants:
    gamma: float
    M1: float
    a_exp: float
    K: float
    G: float
    M: float
    log_K: float
    phi: ScalarTimeFunction
    q: ScalarTimeFunction

    def log_rho(self, t0: float) -> float:
        """log of M1 K phi(t0) exp(gamma * int_0^t0 q)."""
        return math.log(self.M1) + self.log_K + math.log(self.phi(t0)) + self.gamma * self.q.integral(t0)

    def rho(self, t0: float) -> float:
        lr = self.log_rho(t0)
        return math.exp(lr) if lr < 709.0 else math.inf


def _log_y_series(q: ScalarTimeFunction, a_exp: float, gamma: float, ts: np.ndarray) -> np.ndarray:
    """log(q^a(t) exp(-gamma int_0^t q))."""
    qv = q(ts)
    Q = np.array([q.integral(float(t)) for t in ts])
    return a_exp * np.log(qv) - gamma * Q


def _tail_grid(q: ScalarTimeFunction, start: float, n: int = 400) -> np.ndarray:
    from .timefun import default_grid

    T = max(float(default_grid(q)[-1]), start + 1.0)
    return np.linspace(start, T, n)


def _maximize_log_y(q, a_exp, gamma, horizon: float) -> float:
    if a_exp == 0:
        return 0.0  # exp(-gamma int q) peaks at t = 0
    ts = np.linspace(0.0, horizon, 4001)
    ly = _log_y_series(q, a_exp, gamma, ts)
    i = int(np.argmax(ly))
    best = float(ly[i])
    lo, hi = ts[max(i - 1, 0)], ts[min(i + 1, len(ts) - 1)]
    if hi > lo:
        res = optimize.minimize_scalar(
            lambda t: -_log_y_series(q, a_exp, gamma, np.array([t]))[0], bounds=(lo, hi), method="bounded",
            options={"xatol": 1e-12},
        )
        best = max(best, -float(res.fun))
    # beyond the horizon y must keep decreasing: gamma - a q'/q^2 > 0
    tail = _tail_grid(q, horizon)
    dq = q.derivative()
    ratio = dq(tail) / q(tail) / q(tail)
    if not np.all(gamma - a_exp * ratio > 0) or i == len(ts) - 1:
        raise DesignError("maximisation of q^a exp(-gamma int q) did not converge; widen the grid")
    return best


def _sup_g(q: ScalarTimeFunction, a_exp: float, c: float, horizon: float) -> float:
    """Bound on g of  g' = -q (c - 2a q'/q^2) g + q'/q,  g(0) = 0."""
    dq = q.derivative()
    if np.all(np.abs(dq(np.linspace(0.0, horizon, 201))) == 0.0):
        return 0.0

    qdq = E.compile_exprs((q.body, dq.body), (q.var,), "math")

    def rhs(t, g):
        qt, dqt = qdq(t)
        return [-qt * (c - 2 * a_exp * dqt / qt**2) * g[0] + dqt / qt]

    def jac(t, g):
        qt, dqt = qdq(t)
        return [[-qt * (c - 2 * a_exp * dqt / qt**2)]]

    # g can grow by many decades; LSODA is ~100x cheaper than Radau here, and the
    # 0.1% inflation covers the spread seen between solvers
    sol = integrate.solve_ivp(rhs, (0.0, horizon), [0.0], method="LSODA", jac=jac, rtol=1e-13, atol=1e-14,
                              max_step=horizon / 200)
    if not sol.success:
        raise DesignError(f"integration of the g bound failed: {sol.message}")
    G = 1.001 * float(np.max(sol.y[0]))
    # past the horizon g <= max(g(T), sup B/A) whenever A > 0 there
    tail = _tail_grid(q, horizon)
    qv, dqv = q(tail), dq(tail)
    A = qv * (c - 2 * a_exp * dqv / qv**2)
    if not np.all(A > 0):
        raise DesignError("decay coefficient of g is not positive on the tail")
    return max(G, float(sol.y[0][-1]), float(np.max((dqv / qv) / A)))


def estimate_constants(design: GainDesign, phi, horizon: float = 2.0, check_q: bool = True) -> EstimateConstants:
    """gamma, M1, K, G, M = M2 and rho for the weighted ISS estimate."""
    phi = ScalarTimeFunction.of(phi)
    n, K1, K2, mu, R, l = design.n_chain, design.K1, design.K2, design.mu, design.R, design.l
    q = design.q
    if check_q:
        validate_q(q, phi)
    gamma = design.gamma
    a_exp = (n - 1) * (1.0 + K2 / K1)
    M1 = math.sqrt(K2 / K1) * R ** (n - 1)
    log_K = _maximize_log_y(q, a_exp, gamma, horizon)
    G = _sup_g(q, a_exp, mu * R * l / 4.0, horizon)
    M2sq = 16.0 * K2**2 / (mu**2 * K1**2 * R**2 * l**2) * (1.0 + 2.0 * a_exp * G)
    return EstimateConstants(
        gamma=gamma, M1=M1, a_exp=a_exp, K=math.exp(log_K), G=G, M=math.sqrt(M2sq), log_K=log_K, phi=phi, q=q
    )


def design(
    n: int,
    roots=None,
    l: float = 1.0,
    phi=None,
    q=None,
    R_multiplier: float = 1.0,
    R: float | None = None,
    with_constants: bool = True,
) -> GainDesign:
    """Full pipeline: k, certificate, R, clock q and the estimate constants.

    ``q`` defaults to derive_q(phi); ``R`` overrides the computed value
    (it must not be smaller unless the caller accepts losing the estimate).
    """
    roots = default_roots(n) if roots is None else list(roots)
    k = place_gain(n, roots)
    err = pole_error(k, roots)
    if err > 1e-6 * max(1.0, max(abs(complex(r)) for r in roots)):
        raise DesignError(f"placed poles are off by {err:.3e}")
    cert = lyapunov_certificate(k)
    if cert.residual > 1e-8:
        raise DesignError(f"Lyapunov certificate residual {cert.residual:.3e} > 1e-8")
    R_val = compute_R(n, cert.mu, cert.K1, cert.K2, l, R_multiplier) if R is None else float(R)
    phi_f = ScalarTimeFunction.of("1" if phi is None else phi, "Kplus")
    q_f = derive_q(phi_f) if q is None else ScalarTimeFunction.of(q, "Kstar")
    gd = GainDesign(np.asarray(k, dtype=float), tuple(complex(r) for r in roots), cert, float(l), R_val, q_f,
                    R_multiplier)
    if with_constants:
        consts = estimate_constants(gd, phi_f, check_q=q is not None)
        gd = GainDesign(gd.k, gd.roots, gd.cert, gd.l, gd.R, gd.q, gd.R_multiplier, consts)
    return gd
