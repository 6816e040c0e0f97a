"""Deterministic integration under piecewise-constant disturbances.

The integrator restarts at every disturbance breakpoint, so d is never
interpolated.  Fixed-step RK4 is implemented here; adaptive methods are
delegated to scipy's solve_ivp.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline

from .estimator import EstimatorSpec, JointField, reconstruct
from .obsmap import SystemModel

ADAPTIVE = ("RK45", "DOP853", "Radau", "BDF", "LSODA")
METHODS = ("RK4",) + ADAPTIVE

BLOWUP = 1e100


@dataclass(frozen=True)
class SimConfig:
    t0: float = 0.0
    T: float = 1.5
    method: str = "RK45"
    rtol: float = 1e-9
    atol: float = 1e-12
    max_steps: int = 200_000
    min_step: float = 1e-14
    dt: float = 1e-3
    n_out: int = 301

    def __post_init__(self):
        if not self.T > self.t0:
            raise ValueError("need T > t0")
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.n_out < 2:
            raise ValueError("n_out must be at least 2")

    def grid(self) -> np.ndarray:
        return np.linspace(self.t0, self.T, self.n_out)


@dataclass(frozen=True)
class DisturbanceSignal:
    """Right-continuous piecewise-constant d: values[i] on [b_{i-1}, b_i)."""

    breakpoints: tuple
    values: tuple

    def __post_init__(self):
        bps = tuple(float(b) for b in self.breakpoints)
        vals = tuple(np.atleast_1d(np.asarray(v, dtype=float)) for v in self.values)
        if len(vals) != len(bps) + 1:
            raise ValueError("need one more value than breakpoints")
        if any(b2 <= b1 for b1, b2 in zip(bps, bps[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, value) -> "DisturbanceSignal":
        return cls((), (value,))

    def __call__(self, t: float) -> np.ndarray:
        return self.values[int(np.searchsorted(self.breakpoints, t, side="right"))]

    def check_box(self, D) -> bool:
        for v in self.values:
            if len(v) != len(D) or any(not lo <= vi <= hi for vi, (lo, hi) in zip(v, D)):
                return False
        return True

    def segments(self, t0: float, T: float):
        """(start, end, value) pieces covering [t0, T]."""
        cuts = [t0] + [b for b in self.breakpoints if t0 < b < T] + [T]
        return [(a, b, self(a)) for a, b in zip(cuts, cuts[1:])]


def random_disturbance(rng, D, horizon, n_pieces: int) -> DisturbanceSignal:
    """Uniform values in the box D with n_pieces - 1 sorted uniform breakpoints."""
    if n_pieces < 1:
        raise ValueError("n_pieces must be >= 1")
    t0, T = (0.0, float(horizon)) if np.ndim(horizon) == 0 else map(float, horizon)
    lo = np.array([b[0] for b in D], dtype=float)
    hi = np.array([b[1] for b in D], dtype=float)
    bps = np.sort(rng.uniform(t0, T, size=n_pieces - 1))
    vals = [lo + (hi - lo) * rng.random(len(D)) for _ in range(n_pieces)]
    return DisturbanceSignal(tuple(bps), tuple(vals))


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    z: np.ndarray | None = None
    w: np.ndarray | None = None
    y: np.ndarray | None = None
    xhat: np.ndarray | None = None
    status: str = "ok"
    message: str = ""
    steps: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def abs_err(self) -> np.ndarray:
        return np.linalg.norm(self.xhat - self.x, axis=1)


# --------------------------------------------------------------------------
# integrators


def _rk4(rhs, t0, t1, s0, dt):
    """Classical RK4 on a uniform partition of [t0, t1] with step <= dt.

    Returns node times, node states, node slopes, status and message.
    """
    n = max(1, int(np.ceil((t1 - t0) / dt - 1e-9)))
    h = (t1 - t0) / n
    ts = t0 + h * np.arange(n + 1)
    ts[-1] = t1
    out = np.empty((n + 1, len(s0)))
    slopes = np.empty_like(out)
    s = np.array(s0, dtype=float)
    out[0] = s
    for i in range(n):
        t = ts[i]
        k1 = rhs(t, s)
        k2 = rhs(t + h / 2, s + h / 2 * k1)
        k3 = rhs(t + h / 2, s + h / 2 * k2)
        k4 = rhs(t + h, s + h * k3)
        slopes[i] = k1
        s = s + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i + 1] = s
        if not np.all(np.isfinite(s)) or np.max(np.abs(s)) > BLOWUP:
            return ts[: i + 2], out[: i + 2], slopes[: i + 2], "blowup", f"state diverged at t={ts[i + 1]:.6g}"
    slopes[n] = rhs(ts[n], s)
    return ts, out, slopes, "ok", ""


def _segment(rhs, t0, t1, s0, cfg: SimConfig, t_eval, jac=None):
    """Integrate one constant-d piece.

    Returns (times, states, status, message, work, end_state).
    """
    if cfg.method == "RK4":
        ts, ys, ks, status, msg = _rk4(rhs, t0, t1, s0, cfg.dt)
        t_eval = t_eval[t_eval <= ts[-1]]
        if len(ts) > 1 and len(t_eval):
            out = CubicHermiteSpline(ts, ys, ks, axis=0)(t_eval)
            # nodes are returned exactly, not through the interpolant
            for i, t in enumerate(t_eval):
                j = np.searchsorted(ts, t)
                if j < len(ts) and ts[j] == t:
                    out[i] = ys[j]
        else:
            out = np.empty((0, len(s0)))
        return t_eval, out, status, msg, len(ts) - 1, ys[-1]

    def blow(t, s):
        return BLOWUP - np.max(np.abs(s))

    blow.terminal = True
    kw = dict(method=cfg.method, rtol=cfg.rtol, atol=cfg.atol, t_eval=t_eval, events=blow)
    if cfg.method in ("Radau", "BDF", "LSODA") and jac is not None:
        kw["jac"] = jac
    try:
        sol = solve_ivp(rhs, (t0, t1), s0, **kw)
    except (ValueError, ArithmeticError) as exc:
        return t_eval[:0], np.empty((0, len(s0))), "failed", str(exc), 0, None
    status, msg = "ok", ""
    if sol.status == 1:
        status, msg = "blowup", f"state exceeded {BLOWUP:g} at t={sol.t_events[0][0]:.6g}"
    elif sol.status != 0:
        status, msg = "failed", sol.message
    end = sol.y[:, -1] if sol.y.shape[1] else None
    return sol.t, sol.y.T, status, msg, sol.nfev, end


def integrate(rhs: Callable, s0, cfg: SimConfig, d: DisturbanceSignal | None = None) -> Trajectory:
    """Integrate s' = rhs(t, s, d(t)) on [t0, T], restarting at breakpoints."""
    d = DisturbanceSignal.constant(()) if d is None else d
    return _integrate(lambda t, s, dv: rhs(t, s, dv), np.asarray(s0, dtype=float), cfg, d)


def _integrate(rhs, s0, cfg: SimConfig, d: DisturbanceSignal, jac_factory=None) -> Trajectory:
    grid = cfg.grid()
    times, states, steps, ends = [], [], [], []
    s = s0.copy()
    status, msg = "ok", ""
    segs = d.segments(cfg.t0, cfg.T)
    for j, (a, b, dv) in enumerate(segs):
        last = j == len(segs) - 1
        mask = (grid >= a) & ((grid <= b) if last else (grid < b))
        t_eval = grid[mask]
        rhs_d = (lambda dv_: (lambda t, x: rhs(t, x, dv_)))(dv)
        jac = jac_factory(dv) if jac_factory else None
        if cfg.method == "RK4":
            ts, ys, st, m, nst, end = _segment(rhs_d, a, b, s, cfg, t_eval)
        else:
            # include b so the restart state is the integrator's own endpoint
            te = np.unique(np.concatenate((t_eval, [b])))
            ts, ys, st, m, nst, _ = _segment(rhs_d, a, b, s, cfg, te, jac)
            end = ys[-1] if len(ys) and st == "ok" else None
            keep = np.isin(ts, t_eval)
            ts, ys = ts[keep], ys[keep]
        times.append(ts)
        states.append(ys)
        steps.append((a, b, nst))
        if st == "ok":
            ends.append((b, np.array(end, dtype=float)))
        if st != "ok":
            status, msg = st, m
            break
        s = np.array(end, dtype=float)
    t = np.concatenate(times) if times else np.empty(0)
    X = np.concatenate(states) if states else np.empty((0, len(s0)))
    if len(X) and not np.all(np.isfinite(X)):
        bad = int(np.argmax(~np.all(np.isfinite(X), axis=1)))
        t, X = t[:bad], X[:bad]
        status, msg = "blowup", "non-finite state"
    return Trajectory(t=t, x=X, status=status, message=msg, steps=steps, extra={"segment_ends": ends})


# --------------------------------------------------------------------------
# co-simulation


def _fd_jacobian(field_):
    def factory(dv):
        def jac(t, s):
            f0 = field_(t, s, dv)
            J = np.empty((len(s), len(s)))
            for i in range(len(s)):
                h = 1e-7 * max(1.0, abs(s[i]))
                sp = s.copy()
                sp[i] += h
                J[:, i] = (field_(t, sp, dv) - f0) / h
            return J

        return jac

    return factory


def cosimulate(
    sys: SystemModel,
    spec: EstimatorSpec,
    d: DisturbanceSignal,
    x0,
    z0,
    w0: float | None = None,
    cfg: SimConfig | None = None,
    coords: str = "auto",
) -> Trajectory:
    """Plant and estimator integrated jointly, y = h(t, x) fed continuously.

    ``coords='auto'`` uses scaled error coordinates (see JointField).
    """
    cfg = SimConfig(method="Radau", rtol=1e-9, atol=1e-12) if cfg is None else cfg
    if sys is not spec.sys and sys != spec.sys:
        raise ValueError("estimator was built for a different system")
    if spec.kind == "observer" and w0 is None:
        raise ValueError("observer needs an initial w")
    coords = "scaled" if coords == "auto" else coords
    field_ = JointField(spec, coords)
    x0 = np.asarray(x0, dtype=float)
    z0 = np.asarray(z0, dtype=float)
    if len(x0) != sys.n or len(z0) != spec.m + 1:
        raise ValueError(f"x0 needs {sys.n} entries and z0 {spec.m + 1}")
    d0 = d(cfg.t0)
    s0 = field_.pack(cfg.t0, x0, z0, w0, d0)
    jf = _fd_jacobian(field_) if cfg.method in ("Radau", "BDF") else None
    raw = _integrate(field_, s0, cfg, d, jf)
    return _finish(raw, field_, spec, d)


def _finish(raw: Trajectory, field_: JointField, spec: EstimatorSpec, d: DisturbanceSignal) -> Trajectory:
    N = len(raw.t)
    n, m = field_.n, field_.m
    X = raw.x[:, :n]
    Z = np.empty((N, m + 1))
    W = np.empty(N) if field_.observer else None
    Y = np.empty((N, spec.sys.k_out))
    XH = np.empty((N, n))
    sat = np.empty(N) if field_.observer else None
    for i, (t, s) in enumerate(zip(raw.t, raw.x)):
        dv = d(t)
        x, z, w, sa = field_.unpack(t, s, dv)
        Z[i] = z
        Y[i] = spec.sys.output(t, x)
        XH[i] = reconstruct(spec, t, Y[i], z)
        if W is not None:
            W[i] = w
            sat[i] = sa
    extra = {"coords": field_.coords, "segment_ends": raw.extra.get("segment_ends", [])}
    if field_.coords == "scaled":
        extra["eta"] = raw.x[:, n : n + m + 1]
    if sat is not None:
        extra["sat_arg"] = sat
    return replace(raw, x=X, z=Z, w=W, y=Y, xhat=XH, extra=extra)


def simulate_plant(sys: SystemModel, d: DisturbanceSignal, x0, cfg: SimConfig | None = None) -> Trajectory:
    cfg = SimConfig() if cfg is None else cfg
    from . import expr as E

    f = E.compile_exprs(sys.f, sys.args, "math")
    tr = integrate(lambda t, s, dv: np.array(f(t, *s, *dv)), x0, cfg, d)
    tr.y = np.array([sys.output(t, x) for t, x in zip(tr.t, tr.x)]) if len(tr.t) else None
    return tr


# --------------------------------------------------------------------------
# CSV export


def csv_header(traj: Trajectory) -> list[str]:
    n = traj.x.shape[1]
    cols = ["t"] + [f"x{i}" for i in range(1, n + 1)]
    if traj.z is not None:
        cols += [f"z{i}" for i in range(traj.z.shape[1])]
    if traj.w is not None:
        cols.append("w")
    if traj.xhat is not None:
        cols += [f"xhat{i}" for i in range(1, n + 1)] + ["abs_err", "weighted_err"]
    return cols


def to_csv(traj: Trajectory, phi=None) -> str:
    """Header row then one row per output time, 17 significant digits."""
    cols = [traj.t[:, None], traj.x]
    if traj.z is not None:
        cols.append(traj.z)
    if traj.w is not None:
        cols.append(traj.w[:, None])
    if traj.xhat is not None:
        err = traj.abs_err
        wts = np.ones_like(err) if phi is None else np.asarray(phi(traj.t), dtype=float)
        cols += [traj.xhat, err[:, None], (wts * err)[:, None]]
    data = np.hstack(cols) if len(traj.t) else np.empty((0, len(csv_header(traj))))
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(csv_header(traj))
    for row in data:
        wr.writerow(["%.17g" % v for v in row])
    return buf.getvalue()
