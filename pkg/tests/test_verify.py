import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tvobs.estimator import BoundData
from tvobs.sim import DisturbanceSignal, SimConfig, Trajectory, simulate_plant
from tvobs.systems import builtin, reference_design
from tvobs import verify as V

EX25 = builtin("ex2.5")
T = np.linspace(0.0, 1.5, 151)


# --------------------------------------------------------------------------
# fits and weighted errors


def test_fit_exact_exponential():
    f = V.fit_decay(3 * np.exp(-2 * T), T)
    assert f.C == pytest.approx(3, rel=1e-6) and f.lam == pytest.approx(2, rel=1e-6)


def test_fit_with_noise_floor_term():
    t = np.linspace(0, 10, 501)
    f = V.fit_decay(np.exp(-t) + 1e-15, t)
    assert abs(f.lam - 1) <= 1e-3


def test_fit_constant_series():
    assert abs(V.fit_decay(np.full_like(T, 4.0), T).lam) <= 1e-12


def test_fit_needs_samples_above_floor():
    with pytest.raises(V.DecayFitError):
        V.fit_decay(np.full(20, 1e-13), np.arange(20.0))


def test_suffix_envelope_is_nonincreasing_majorant():
    s = np.array([1.0, 3.0, 2.0, 2.5, 0.5])
    assert list(V.suffix_envelope(s)) == [3.0, 3.0, 2.5, 2.5, 0.5]


def _traj(x, xhat):
    return Trajectory(t=T, x=x, xhat=xhat)


def test_weighted_error_cases():
    x = np.column_stack((np.sin(T), np.cos(T)))
    assert np.all(V.weighted_error(_traj(x, x.copy()), "exp(5*t)") == 0)
    xh = x + np.array([3.0, 4.0])
    assert V.weighted_error(_traj(x, xh)) == pytest.approx(np.full_like(T, 5.0))
    assert V.weighted_error(_traj(x, xh), "exp(t)") == pytest.approx(5 * np.exp(T))


# --------------------------------------------------------------------------
# forward completeness


def test_rfc_origin_is_trivial():
    tr = simulate_plant(EX25.sys, DisturbanceSignal.constant(0.5), (0.0, 0.0))
    rep = V.check_rfc(tr, EX25.bounds)
    assert rep.passed and rep.max_violation == 0.0


def test_rfc_wrong_bound_is_caught():
    tr = simulate_plant(EX25.sys, DisturbanceSignal.constant(0.0), (1.0, 0.0), SimConfig(rtol=1e-11, atol=1e-13))
    assert V.check_rfc(tr, EX25.bounds).passed
    wrong = BoundData.of(rfc_mu="exp(t/2)", rfc_a="s")
    rep = V.check_rfc(tr, wrong)
    assert not rep.passed
    assert rep.max_violation == pytest.approx(math.exp(1.5) - math.exp(0.75), rel=1e-8)


def test_rfc_batch():
    rep, trajs = V.run_rfc(EX25, range(10))
    assert rep.passed and len(trajs) == 10


@given(st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_random_x0_in_ball(seed, n):
    x = V.random_x0(np.random.default_rng(seed), n)
    assert x.shape == (n,) and np.linalg.norm(x) <= 1.0


# --------------------------------------------------------------------------
# Holder and modulus


def test_cube_root_pair_values():
    assert V.cbrt_pair_ratio(1.0, 0.0) == 1.0
    assert V.cbrt_pair_ratio(8.0, -8.0) == pytest.approx(4 / 16 ** (1 / 3), rel=1e-14)
    assert V.cbrt_pair_ratio(8.0, -8.0) == pytest.approx(1.5874, abs=1e-4)


def test_holder_bound_holds():
    rep = V.check_holder(EX25.chain, samples=2000, scalar_pairs=20_000)
    assert rep.passed and rep.max_ratio <= 2 and rep.scalar_max_ratio <= 2
    # the supremum 2^(2/3) is approached on antipodal pairs
    assert rep.scalar_max_ratio == pytest.approx(2 ** (2 / 3), rel=1e-6)


def test_holder_with_smaller_bound_fails():
    assert not V.check_holder(EX25.chain, samples=2000, scalar_pairs=0, bound=1.5).passed


@given(st.floats(-100, 100), st.floats(-100, 100))
def test_scalar_holder_property(a, b):
    if a != b:
        assert V.cbrt_pair_ratio(a, b) <= 2 ** (2 / 3) * (1 + 1e-12)


def test_modulus_candidate_passes():
    rep = V.check_modulus(EX25.chain, "2*s^(1/3)", "s", "1", samples=2000)
    assert rep.passed


def test_modulus_equal_points_give_zero():
    assert V.modulus_excess(EX25.chain, "2*s^(1/3)", "s", "1", 0.0, (1.0,), (3.0,), (3.0,)) == 0.0


def test_halved_modulus_fails_by_sampling():
    # at (z, Dy) = (1, 0) with y = 0 the halved candidate is exactly tight
    assert V.modulus_excess(EX25.chain, "s^(1/3)", "s", "1", 0.0, (0.0,), (1.0,), (0.0,)) == 0.0
    # small antipodal pairs break it: 2 e^(1/3) against (2e)^(1/3) + 2e^2
    assert V.modulus_excess(EX25.chain, "s^(1/3)", "s", "1", 0.0, (0.0,), (0.1,), (-0.1,)) > 0.3
    rep = V.check_modulus(EX25.chain, "s^(1/3)", "s", "1", samples=2000)
    assert not rep.passed and rep.worst_excess > 0.1


# --------------------------------------------------------------------------
# boundedness lemma


def test_lemma_closed_form():
    rep = V.lemma211_oracle("1", "1", 0.0)
    assert rep.status == V.BOUNDED and rep.sup_y < 1
    assert np.allclose(rep.y, 1 - np.exp(-rep.t), atol=1e-8)


def test_lemma_delayed_positivity():
    rep = V.lemma211_oracle(lambda t: t - 1, lambda t: 1.0, 1.0)
    assert rep.status == V.BOUNDED
    assert 1 < rep.sup_y < 10


def test_lemma_hypothesis_failure():
    rep = V.lemma211_oracle("1", "exp(t/2)", 0.0)
    assert rep.status == V.HYPOTHESIS_FAILURE
    assert any("b/a" in f for f in rep.failures)


def test_lemma_negative_b_is_reported():
    assert "b takes negative values" in V.lemma211_hypotheses(lambda t: 1.0, lambda t: -1.0, 0.0, 10.0)


# --------------------------------------------------------------------------
# chain ISS estimate


@pytest.fixture(scope="module")
def chain3():
    b = builtin("chain(3)")
    return reference_design(b.settings, 3, with_constants=True)


def test_iss_zero_state_zero_input(chain3):
    run = V.IssRun(0.0, (0.0, 0.0, 0.0), lambda t: 0.0, lambda t: 0.0)
    t, X = V.simulate_chain(chain3, run)
    assert np.all(X == 0)
    assert V.check_iss_chain(chain3, "exp(t)", [run]).passed


def test_iss_unforced_runs(chain3):
    rep = V.check_iss_chain(chain3, "exp(t)", V.default_iss_runs(3, range(3), forced=False))
    assert rep.passed and rep.max_violation < 0


def test_iss_needs_constants():
    b = builtin("chain(2)")
    with pytest.raises(ValueError):
        V.check_iss_chain(reference_design(b.settings, 2), "exp(t)", [])


# --------------------------------------------------------------------------
# detectability and estimator runs


def test_detectability_example():
    rep, _ = V.run_detect(builtin("ex2.8"), range(5))
    assert rep.passed


def test_detectability_zero_third_state():
    b = builtin("ex2.8")
    tr = simulate_plant(b.sys, DisturbanceSignal.constant(0.2), (0.3, -0.4, 0.0), SimConfig(T=1.0))
    assert np.max(V.detectability_error(b.chain, tr)) <= 1e-12


def test_estimator_run_rates():
    rep = V.run_estimator(builtin("ex3.2"), [0, 1])
    for row in rep.runs:
        assert row["rate_ok"] and row["rate"] >= 0.9 and row["cert_ok"]


def test_observer_consistent_tracks():
    rep = V.run_observer(builtin("ex3.4"), [0, 1])
    assert rep.passed
    assert all(r["max_sat"] <= 1 for r in rep.runs)


def test_report_lines_are_key_value():
    rep = V.check_decay("demo", T, np.exp(-T), (0.2, 1.5), 0.9)
    lines = rep.lines()
    assert lines[0] == "check=demo" and lines[1] == "status=pass"
    assert all("=" in line for line in lines)
