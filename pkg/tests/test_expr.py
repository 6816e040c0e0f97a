import math
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tvobs import expr as E

from exprgen import VARS, any_text, smooth_text


def ev(text, **kw):
    return E.evaluate(E.parse(text), kw)


def test_parse_sum_of_power():
    e = E.parse("x1 + x2^3")
    assert isinstance(e, E.Add)
    assert E.Var("x1") in e.terms
    assert E.Pow(E.Var("x2"), Fraction(3)) in e.terms


def test_parse_signed_pow_keeps_exact_exponent():
    e = E.parse("signed_pow(x1, 1/3)")
    assert isinstance(e, E.SignedPow)
    assert e.p == Fraction(1, 3)


@pytest.mark.parametrize("text,env,want", [
    ("sat(u)", {"u": 3.0}, 1.0),
    ("signed_pow(s, 1/3)", {"s": -8.0}, -2.0),
    ("abs(s)", {"s": 0.0}, 0.0),
    ("x1^(1/3)", {"x1": -27.0}, -3.0),
    ("2^-1", {}, 0.5),
    ("sqrt(x1)", {"x1": 9.0}, 3.0),
])
def test_evaluate_examples(text, env, want):
    assert ev(text, **env) == pytest.approx(want, abs=1e-15)


def test_plant_rhs_at_unit_point():
    f = [E.parse("x1 + x2^3"), E.parse("-x1*x2^2 + d*x2")]
    env = {"t": 0.0, "x1": 1.0, "x2": 1.0, "d": 0.0}
    assert [E.evaluate(fi, env) for fi in f] == [2.0, -1.0]


@pytest.mark.parametrize("x", [0.0, 0.5, 1.0, 2.0, -0.5, -1.0, -2.0])
def test_sat_and_sgn_match_definitions(x):
    sat = x if abs(x) < 1 else x / abs(x)
    sgn = 0.0 if x == 0 else math.copysign(1.0, x)
    assert ev("sat(u)", u=x) == sat
    assert ev("sgn(u)", u=x) == sgn


def test_even_root_of_negative_is_domain_error():
    with pytest.raises(E.DomainError):
        ev("x1^(1/2)", x1=-1.0)


@pytest.mark.parametrize("bad,col", [("x1 +* 2", 5), ("sin(x1", 7), ("foo(x1)", 1), ("x1^y", 4), ("q + 1", 1)])
def test_syntax_errors_carry_position(bad, col):
    with pytest.raises(E.ParseError) as info:
        E.parse(bad)
    assert str(info.value).startswith(f"syntax error at 1:{col}")


def test_power_rule():
    assert E.structurally_equal(E.simplify(E.diff(E.parse("x2^3"), "x2")), E.simplify(E.parse("3*x2^2")))


def test_signed_pow_derivative_at_eight():
    dexpr = E.diff(E.parse("signed_pow(x1, 1/3)"), "x1")
    assert E.evaluate(dexpr, {"x1": 8.0}) == pytest.approx(1 / 12, rel=1e-14)
    h = 1e-6
    fd = (ev("signed_pow(x1, 1/3)", x1=8 + h) - ev("signed_pow(x1, 1/3)", x1=8 - h)) / (2 * h)
    assert fd == pytest.approx(1 / 12, rel=1e-8)


def test_time_derivative_of_exponential():
    d = E.simplify(E.diff(E.parse("exp(5*t)"), "t"))
    assert E.structurally_equal(d, E.simplify(E.parse("5*exp(5*t)")))


def test_abs_derivative_is_flagged_singular():
    d = E.diff(E.parse("abs(x1)"), "x1")
    assert E.singular_nodes(d)
    with pytest.raises(E.DomainError):
        E.evaluate(d, {"x1": 0.0})
    assert E.evaluate(d, {"x1": -2.0}) == -1.0


def test_abs_power_derivative_simplifies_to_signed_pow():
    d = E.simplify(E.diff(E.parse("abs(x1)^(4/3)"), "x1"))
    assert E.structurally_equal(d, E.simplify(E.parse("4/3*signed_pow(x1, 1/3)")))
    assert not E.singular_nodes(d)


def test_free_vars_and_substitute():
    e = E.parse("x1*y + sin(t)")
    assert E.free_vars(e) == {"x1", "y", "t"}
    s = E.substitute(e, {"y": E.parse("x1")})
    assert E.evaluate(s, {"x1": 2.0, "t": 0.0}) == 4.0


def test_compile_backends_agree():
    e = E.parse("signed_pow(x1, 1/3) + exp(t)*sat(x2)")
    fm = E.lambdify(e, ("t", "x1", "x2"), "math")
    fn = E.lambdify(e, ("t", "x1", "x2"), "numpy")
    ts, x1, x2 = np.array([0.0, 1.0]), np.array([-8.0, 27.0]), np.array([0.5, 3.0])
    assert np.allclose(fn(ts, x1, x2), [fm(*a) for a in zip(ts, x1, x2)], rtol=1e-15)


# --------------------------------------------------------------------------
# properties


@given(any_text())
def test_print_parse_round_trip(text):
    e = E.parse(text)
    assert E.parse(E.to_str(e)) == e


@given(any_text(), st.lists(st.floats(-2, 2), min_size=len(VARS) + 2, max_size=len(VARS) + 2))
def test_simplify_preserves_value(text, vals):
    e = E.parse(text)
    env = dict(zip(VARS + ("y", "z1"), vals))
    env["t"] = abs(env["t"])  # simplify relies on t >= 0
    try:
        want = E.evaluate(e, env)
    except (E.DomainError, ZeroDivisionError, OverflowError, ValueError):
        return
    got = E.evaluate(E.simplify(e), env)
    assert got == pytest.approx(want, rel=1e-9, abs=1e-9)


@given(st.integers(0, 2**32 - 1))
def test_autodiff_matches_central_differences(seed):
    rng = random.Random(seed)
    e = E.parse(smooth_text(rng))
    env = {v: rng.uniform(-1, 1) for v in VARS}
    v = rng.choice(VARS)
    d = E.evaluate(E.diff(e, v), env)
    h = 1e-6
    hi, lo = dict(env), dict(env)
    hi[v] += h
    lo[v] -= h
    fd = (E.evaluate(e, hi) - E.evaluate(e, lo)) / (2 * h)
    assert abs(d - fd) <= 1e-5 * (1 + abs(E.evaluate(e, env)))


@given(st.floats(-100, 100), st.floats(-100, 100))
def test_signed_pow_is_odd_and_monotone(a, b):
    f = E.lambdify(E.parse("signed_pow(u, 1/3)"), ("u",))
    assert f(-a) == -f(a)
    if a < b:
        assert f(a) <= f(b)
