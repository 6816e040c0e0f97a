import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, strategies as st

from tvobs.gaindesign import (
    DesignError,
    closed_loop_matrix,
    compute_R,
    design,
    injection_vector,
    lyapunov_certificate,
    place_gain,
    pole_error,
)

EX32_ROOTS = (-6 + 6j, -6 - 6j)


@pytest.mark.parametrize("roots,k", [
    (EX32_ROOTS, (-12.0, -72.0)),
    ((-1,), (-1.0,)),
    ((-1, -2, -3), (-6.0, -11.0, -6.0)),
])
def test_place_gain_examples(roots, k):
    assert tuple(place_gain(len(roots), roots)) == pytest.approx(k, abs=1e-12)


def test_closed_loop_matrix_has_gain_in_first_column():
    F = closed_loop_matrix([-6.0, -11.0, -6.0])
    assert np.array_equal(F, [[-6, 1, 0], [-11, 0, 1], [-6, 0, 0]])
    assert sorted(np.linalg.eigvals(F).real) == pytest.approx([-3, -2, -1])


@pytest.mark.parametrize("roots", [(1.0,), (-1 + 1j, -2 - 1j), (0.0, -1.0)])
def test_place_gain_rejects_bad_roots(roots):
    with pytest.raises(DesignError):
        place_gain(len(roots), roots)


def test_scalar_certificate():
    c = lyapunov_certificate([-1.0])
    assert c.P[0, 0] == 0.5 and c.mu == 2.0 and c.K1 == c.K2 == 0.5


def test_ex32_certificate_against_scipy():
    k = (-12.0, -72.0)
    c = lyapunov_certificate(k)
    F = closed_loop_matrix(k)
    P = scipy.linalg.solve_continuous_lyapunov(F.T, -np.eye(2))
    assert np.allclose(c.P, P, rtol=1e-12, atol=0)
    assert np.max(np.abs(c.P - c.P.T)) <= 1e-12
    S = c.P @ F + F.T @ c.P + c.mu * c.P
    assert np.max(np.linalg.eigvalsh(S)) <= 1e-8


def test_compute_R_examples():
    assert compute_R(1, 2.0, 0.5, 0.5, 1.0) == 4.0
    assert compute_R(1, 100.0, 1.0, 1.0, 1.0) == 1.0
    assert compute_R(4, 2.0, 0.5, 0.5, 1.0) == 2 * compute_R(1, 2.0, 0.5, 0.5, 1.0)
    assert compute_R(1, 2.0, 0.5, 0.5, 1.0, multiplier=3.0) == 12.0
    with pytest.raises(DesignError):
        compute_R(1, 0.0, 0.5, 0.5, 1.0)
    with pytest.raises(DesignError):
        compute_R(1, 2.0, 0.5, 0.5, 1.0, multiplier=0.5)


def test_ex32_design_values():
    d = design(2, EX32_ROOTS, l=1.0, phi="exp(5*t)", q="exp(10*t)", with_constants=False)
    P = scipy.linalg.solve_continuous_lyapunov(closed_loop_matrix((-12, -72)).T, -np.eye(2))
    ev = np.linalg.eigvalsh(P)
    R = 8 * math.sqrt(2) * ev[1] / ((1 / ev[1]) * ev[0])
    assert d.R == pytest.approx(R, rel=1e-12)
    assert d.R == pytest.approx(2616.32, abs=0.01)
    assert d.gamma == pytest.approx(d.mu * d.R / 16, rel=1e-15)


def test_injection_vector_follows_clock():
    d = design(2, EX32_ROOTS, phi="exp(5*t)", q="exp(10*t)", R=1.0, with_constants=False)
    assert injection_vector(d, 0.0, 1.0) == pytest.approx([-12, -72], rel=1e-15)
    assert injection_vector(d, 0.1, 1.0) == pytest.approx([-12 * math.e, -72 * math.e**2], rel=1e-14)
    assert np.all(injection_vector(d, 0.1, 0.0) == 0)


def test_scalar_constants_with_constant_clock():
    d = design(1, [-1], l=1.0, phi="1", q="1")
    c = d.constants
    assert d.R == 4.0 and d.gamma == 0.5
    assert c.K == 1.0 and c.G == 0.0
    # M^2 = 16 K2^2 / (mu^2 K1^2 R^2 l^2) when G = 0
    assert c.M == pytest.approx(math.sqrt(16 * 0.25 / (4 * 0.25 * 16)), rel=1e-15)
    assert c.rho(0.0) == pytest.approx(1.0, rel=1e-12)


def test_chain3_constants_are_finite():
    d = design(3, None, l=0.5, phi="exp(t)")
    c = d.constants
    assert d.R >= 1 and math.isfinite(c.M) and c.M > 0
    assert math.isfinite(c.log_rho(0.0))


@st.composite
def hurwitz_roots(draw):
    """Conjugate-closed sets with distinct members (repeated roots are ill-conditioned)."""
    n = draw(st.integers(1, 5))
    roots = []
    while len(roots) < n:
        re = -draw(st.floats(0.1, 10))
        if n - len(roots) >= 2 and draw(st.booleans()):
            im = draw(st.floats(0.1, 10))
            cand = [complex(re, im), complex(re, -im)]
        else:
            cand = [complex(re, 0)]
        if all(abs(c - r) >= 0.5 for c in cand for r in roots):
            roots += cand
    return roots


@given(hurwitz_roots())
def test_certificate_invariants(roots):
    n = len(roots)
    k = place_gain(n, roots)
    assert pole_error(k, roots) <= 1e-9 * max(1.0, max(abs(r) for r in roots))
    c = lyapunov_certificate(k)
    assert c.residual <= 1e-8
    assert c.abs_residual <= 1e-8 * c.K2
    ev = np.linalg.eigvalsh(c.P)
    assert c.K1 == pytest.approx(ev[0], rel=1e-8) and c.K2 == pytest.approx(ev[-1], rel=1e-8)
    assert c.K1 > 0
