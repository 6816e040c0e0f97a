"""Acceptance criteria, one test (and one summary line) per criterion."""

import math
import random
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from exprgen import VARS, smooth_text
from tvobs import expr as E
from tvobs import verify as V
from tvobs.estimator import build_estimator
from tvobs.gaindesign import design, lyapunov_certificate, place_gain, pole_error
from tvobs.systems import builtin, reference_design


def verdict(num, title, ok, detail=""):
    line = f"[{num:>3}] {'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


# 1 ------------------------------------------------------------------------


def test_01_gain_reproduction():
    start = time.perf_counter()
    k = place_gain(2, (-6 + 6j, -6 - 6j))
    b = builtin("ex2.5")
    dg = design(2, (-6 + 6j, -6 - 6j), phi="exp(5*t)", q="exp(10*t)", with_constants=False)
    spec = build_estimator(b.chain, dg, "exp(5*t)")
    printed = spec.pretty()
    elapsed = time.perf_counter() - start
    R = dg.R
    want = [E.simplify(E.parse(f"y + z1 - 12*{R!r}*exp(10*t)*(z0 - y)")),
            E.simplify(E.parse(f"-72*{R!r}^2*exp(20*t)*(z0 - y)"))]
    same = all(E.structurally_equal(g, w, rel_tol=1e-12) for g, w in zip(spec.rhs, want))
    ok = tuple(k) == (-12.0, -72.0) and same and len(printed) == 2 and elapsed < 1.0
    assert verdict(1, "gain reproduction k=(-12,-72), printed estimator RHS", ok, f"{elapsed:.3f} s")


# 2 ------------------------------------------------------------------------


def test_02_chain_oracle():
    ex = builtin("ex2.5").chain
    rm = builtin("remark2.5c").chain
    sym = (E.structurally_equal(ex.y_exprs[1], E.simplify(E.parse("x2^3")))
           and E.structurally_equal(rm.y_exprs[1], E.parse("x2")))
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        t = rng.uniform(0, 2)
        x = rng.uniform(-5, 5, 2)
        d = rng.uniform(-1, 1, 1)
        got = ex.eval_y(t, x, d)
        want = np.array([x[0], x[1] ** 3])
        worst = max(worst, float(np.max(np.abs(got - want) / np.maximum(1.0, np.abs(want)))))
        got = rm.eval_y(t, x)
        worst = max(worst, float(np.max(np.abs(got - x) / np.maximum(1.0, np.abs(x)))))
    ok = sym and worst <= 1e-12
    assert verdict(2, "chain oracle y1=x2^3 and y1=x2, 1e3 points", ok, f"max rel err {worst:.1e}")


# 3 ------------------------------------------------------------------------


def test_03_rfc_envelope():
    start = time.perf_counter()
    rep, trajs = V.run_rfc(builtin("ex2.5"), range(100), T=1.5, n_pieces=4, tol=1e-9)
    elapsed = time.perf_counter() - start
    ok = rep.passed and len(trajs) == 100 and all(tr.ok for tr in trajs) and elapsed < 10
    assert verdict(3, "RFC envelope |x| <= exp(t)|x0| + 1e-9, 100 runs", ok,
                   f"max violation {rep.max_violation:.2e}, {elapsed:.1f} s")


# 4 ------------------------------------------------------------------------


def test_04_holder_bound():
    rep = V.check_holder(builtin("ex2.5").chain, samples=10_000, scalar_pairs=100_000, bound=2.0)
    ok = rep.passed and rep.max_ratio <= 2 and rep.scalar_max_ratio <= 2
    assert verdict(4, "Holder bound ratio <= 2 (1e4 triples, 1e5 scalar pairs)", ok,
                   f"max {rep.max_ratio:.4f} / scalar {rep.scalar_max_ratio:.4f}")


# 5 ------------------------------------------------------------------------


@pytest.fixture(scope="module")
def estimator_runs():
    return V.run_estimator(builtin("ex3.2"), range(20), T=1.5, n_pieces=4, window=(0.2, 1.5), min_rate=0.9)


def test_05_estimator_convergence(estimator_runs):
    rows = estimator_runs.runs
    complete = len(rows) == 20 and all("rate" in r for r in rows)
    rates = [r["rate"] for r in rows if "rate" in r]
    ok = complete and all(r["rate_ok"] for r in rows) and all(r["cert_ok"] for r in rows)
    assert verdict(5, "estimator decay rate >= 0.9 on [0.2, 1.5], z-error under certified bound", ok,
                   f"min rate {min(rates):.2f}")


@pytest.mark.xfail(strict=True, reason="a disturbance jump after t=0.2 re-excites the z-error on some seeds")
def test_05b_weighted_z_error_below_its_value_at_0_2(estimator_runs):
    bad = [r["seed"] for r in estimator_runs.runs if not r.get("zw_ok", False)]
    ok = not bad
    verdict("5b", "exp(5t)|z-(y,Dy)| stays below its t=0.2 value", ok,
            f"exceeded on seeds {bad}" if bad else "")
    assert ok


# 6 ------------------------------------------------------------------------


def test_06_consistent_initialization():
    rep = V.run_observer(builtin("ex3.4"), range(10), T=1.0, consistent=True, tol=1e-6)
    err = max(r["max_err"] for r in rep.runs)
    sat = max(r["max_sat"] for r in rep.runs)
    ok = rep.passed and err <= 1e-6 and sat <= 1
    assert verdict(6, "consistent start tracks exactly, sat argument in [-1, 1]", ok,
                   f"max err {err:.1e}, max |sat arg| {sat:.3f}")


# 7 ------------------------------------------------------------------------


def test_07_observer_from_inconsistent_start():
    rep = V.run_observer(builtin("ex3.4"), range(10), T=1.0, consistent=False, perturb=0.5, ratio=1e-3)
    worst = max(r["final_over_max"] for r in rep.runs)
    ok = rep.passed and all(math.isfinite(r["max_weighted"]) for r in rep.runs) and worst <= 1e-3
    assert verdict(7, "perturbed z0: weighted error bounded, final error <= 1e-3 x max", ok,
                   f"worst final/max {worst:.1e}")


# 8 ------------------------------------------------------------------------


@pytest.fixture(scope="module")
def chain3():
    return reference_design(builtin("chain(3)").settings, 3, with_constants=True)


def test_08_iss_estimate(chain3):
    free = V.check_iss_chain(chain3, "exp(t)", V.default_iss_runs(3, range(10), forced=False, T=1.0), tol=1e-6)
    forced = V.check_iss_chain(chain3, "exp(t)", V.default_iss_runs(3, range(10), forced=True, T=5.0), tol=0.0)
    ok = free.passed and forced.passed
    assert verdict(8, "chain(3) ISS estimate, 10 unforced + 10 forced runs", ok,
                   f"rel excess {free.max_violation:.2e} / {forced.max_violation:.2e}")


# 9 ------------------------------------------------------------------------


def random_hurwitz(rng):
    n = int(rng.integers(1, 6))
    roots = []
    while len(roots) < n:
        re = -rng.uniform(0.2, 8.0)
        if n - len(roots) >= 2 and rng.random() < 0.5:
            im = rng.uniform(0.2, 8.0)
            cand = [complex(re, im), complex(re, -im)]
        else:
            cand = [complex(re, 0.0)]
        if all(abs(c - r) >= 0.5 for c in cand for r in roots):
            roots += cand
    return roots


def test_09_lyapunov_certificates():
    rng = np.random.default_rng(9)
    worst_res, worst_pole, sandwich = -math.inf, 0.0, True
    for _ in range(10):
        roots = random_hurwitz(rng)
        k = place_gain(len(roots), roots)
        c = lyapunov_certificate(k)
        worst_res = max(worst_res, c.residual)
        worst_pole = max(worst_pole, pole_error(k, roots) / max(1.0, max(abs(r) for r in roots)))
        I = np.eye(len(k))
        sandwich &= bool(np.linalg.eigvalsh(c.P - c.K1 * I)[0] >= -1e-12 * c.K2)
        sandwich &= bool(np.linalg.eigvalsh(c.K2 * I - c.P)[0] >= -1e-12 * c.K2)
    ok = worst_res <= 1e-8 and sandwich and worst_pole <= 1e-9
    assert verdict(9, "Lyapunov certificates for 10 random Hurwitz sets (n <= 5)", ok,
                   f"max residual {worst_res:.1e}, pole err {worst_pole:.1e}")


# 10 -----------------------------------------------------------------------


def test_10_lemma_oracle():
    got = (V.lemma211_oracle("1", "1", 0.0).status,
           V.lemma211_oracle(lambda t: t - 1, lambda t: 1.0, 1.0).status,
           V.lemma211_oracle("1", "exp(t/2)", 0.0).status)
    ok = got == (V.BOUNDED, V.BOUNDED, V.HYPOTHESIS_FAILURE)
    assert verdict(10, "boundedness oracle: bounded / bounded / hypothesis failure", ok, " / ".join(got))


# 11 -----------------------------------------------------------------------


def test_11_detectability():
    rep, trajs = V.run_detect(builtin("ex2.8"), range(20), tol=1e-9)
    ok = rep.passed and len(trajs) == 20
    assert verdict(11, "detectability |x - Psi| = |x3| <= exp(-(t-t0))|x3(t0)| + 1e-9, 20 runs", ok,
                   f"max violation {rep.max_violation:.1e}")


# 12 -----------------------------------------------------------------------


def test_12_autodiff_sanity():
    rng = random.Random(12)
    worst = 0.0
    for _ in range(1000):
        e = E.parse(smooth_text(rng))
        env = {v: rng.uniform(-1, 1) for v in VARS}
        v = rng.choice(VARS)
        d = E.evaluate(E.diff(e, v), env)
        h = 1e-6
        hi, lo = dict(env), dict(env)
        hi[v] += h
        lo[v] -= h
        fd = (E.evaluate(e, hi) - E.evaluate(e, lo)) / (2 * h)
        worst = max(worst, abs(d - fd) / max(1.0, abs(d)))
    ok = worst <= 1e-5
    assert verdict(12, "symbolic vs central differences on 1e3 smooth expressions", ok, f"max rel err {worst:.1e}")
