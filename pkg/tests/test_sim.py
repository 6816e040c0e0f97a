import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tvobs.sim import (
    DisturbanceSignal,
    SimConfig,
    cosimulate,
    integrate,
    random_disturbance,
    simulate_plant,
    to_csv,
)
from tvobs.systems import builtin

EX25 = builtin("ex2.5").sys
EX28 = builtin("ex2.8").sys


def test_scalar_exponential():
    cfg = SimConfig(T=1.0, method="RK45", rtol=1e-10, atol=1e-12)
    tr = integrate(lambda t, s, d: s, [1.0], cfg)
    assert tr.ok
    assert abs(tr.x[-1, 0] - math.e) <= 1e-9


def test_rk4_fixed_step():
    cfg = SimConfig(T=1.0, method="RK4", dt=1e-3)
    tr = integrate(lambda t, s, d: -s, [1.0], cfg)
    assert abs(tr.x[-1, 0] - math.exp(-1)) <= 1e-12


def test_ex25_from_unit_first_state():
    cfg = SimConfig(T=1.5, rtol=1e-11, atol=1e-13)
    tr = simulate_plant(EX25, DisturbanceSignal.constant(0.0), (1.0, 0.0), cfg)
    assert np.max(np.abs(tr.x[:, 0] - np.exp(tr.t)) / np.exp(tr.t)) <= 1e-9
    assert np.all(tr.x[:, 1] == 0.0)


def test_ex28_third_state_decays():
    cfg = SimConfig(T=1.5, rtol=1e-11, atol=1e-13)
    tr = simulate_plant(EX28, DisturbanceSignal.constant(0.0), (0.0, 0.0, 1.0), cfg)
    assert np.max(np.abs(tr.x[:, 2] - np.exp(-tr.t))) <= 1e-9


def test_origin_is_an_equilibrium():
    tr = simulate_plant(EX25, DisturbanceSignal.constant(0.7), (0.0, 0.0))
    assert np.all(tr.x == 0.0)


def test_joint_origin_stays_zero():
    b = builtin("ex3.2")
    tr = cosimulate(b.sys, b.estimator, DisturbanceSignal.constant(0.3), (0.0, 0.0), (0.0, 0.0),
                    cfg=SimConfig(T=1.0, method="Radau", n_out=21))
    assert tr.ok
    assert np.all(tr.x == 0) and np.all(tr.z == 0) and np.all(tr.xhat == 0)


def test_blowup_is_flagged_and_truncated():
    cfg = SimConfig(T=2.0, rtol=1e-8, atol=1e-10)
    tr = integrate(lambda t, s, d: s**2, [1.0], cfg)
    assert tr.status != "ok"
    assert len(tr.t) < cfg.n_out and np.all(np.isfinite(tr.x))
    assert tr.t[-1] <= 1.0


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(t0=1.0, T=1.0)
    with pytest.raises(ValueError):
        SimConfig(rtol=0.0)
    with pytest.raises(ValueError):
        SimConfig(method="Euler")


def test_disturbance_semantics():
    d = DisturbanceSignal((0.5,), ((-1.0,), (1.0,)))
    assert d(0.0)[0] == -1.0 and d(0.5)[0] == 1.0 and d(0.49)[0] == -1.0
    assert d.check_box(((-1.0, 1.0),))
    assert not d.check_box(((0.0, 1.0),))
    with pytest.raises(ValueError):
        DisturbanceSignal((0.5, 0.2), ((0,), (0,), (0,)))
    with pytest.raises(ValueError):
        DisturbanceSignal((0.5,), ((0,),))


@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_random_disturbance_counts_and_box(seed, k):
    D = ((-1.0, 1.0), (-3.2, 3.2))
    d = random_disturbance(np.random.default_rng(seed), D, 1.5, k)
    assert len(d.breakpoints) == k - 1
    assert all(0 <= b <= 1.5 for b in d.breakpoints)
    assert d.check_box(D)
    again = random_disturbance(np.random.default_rng(seed), D, 1.5, k)
    assert again.breakpoints == d.breakpoints
    assert all(np.array_equal(a, b) for a, b in zip(again.values, d.values))


def test_single_piece_is_constant():
    d = random_disturbance(np.random.default_rng(0), ((-1.0, 1.0),), 2.0, 1)
    assert d.breakpoints == () and len(d.values) == 1


def test_restart_matches_concatenated_constant_runs():
    d = DisturbanceSignal((0.5,), ((0.8,), (-0.6,)))
    full = simulate_plant(EX25, d, (0.4, 0.3), SimConfig(T=1.0, n_out=101))
    first = simulate_plant(EX25, DisturbanceSignal.constant(0.8), (0.4, 0.3), SimConfig(T=0.5, n_out=51))
    mid = first.extra["segment_ends"][-1][1]
    second = simulate_plant(EX25, DisturbanceSignal.constant(-0.6), mid, SimConfig(t0=0.5, T=1.0, n_out=51))
    assert np.array_equal(full.extra["segment_ends"][0][1], mid)
    assert np.array_equal(full.extra["segment_ends"][1][1], second.extra["segment_ends"][-1][1])
    assert np.allclose(full.x[:50], first.x[:50], rtol=1e-14, atol=0)
    assert np.allclose(full.x[50:], second.x, rtol=1e-14, atol=0)


def test_halving_rtol_is_a_small_change():
    d = DisturbanceSignal((0.3, 0.9), ((0.5,), (-1.0,), (0.2,)))
    ends = []
    for rtol in (1e-6, 5e-7, 1e-12):
        tr = simulate_plant(EX25, d, (0.6, -0.7), SimConfig(T=1.5, rtol=rtol, atol=rtol * 1e-3))
        ends.append(tr.x[-1])
    coarse_err = np.linalg.norm(ends[0] - ends[2])
    assert np.linalg.norm(ends[0] - ends[1]) <= max(2 * coarse_err, 1e-6 * np.linalg.norm(ends[2]))


def test_deterministic_csv():
    b = builtin("ex3.2")
    d = random_disturbance(np.random.default_rng(3), b.sys.D, 1.0, 3)
    cfg = SimConfig(T=1.0, method="Radau", n_out=51)
    runs = [to_csv(cosimulate(b.sys, b.estimator, d, (0.3, 0.2), (0.0, 0.0), cfg=cfg), b.estimator.phi)
            for _ in range(2)]
    assert runs[0] == runs[1]
    lines = runs[0].splitlines()
    assert lines[0] == "t,x1,x2,z0,z1,xhat1,xhat2,abs_err,weighted_err"
    assert len(lines) == 52
    assert len(lines[1].split(",")) == 9
