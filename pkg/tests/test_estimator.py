import math

import numpy as np
import pytest

from tvobs import expr as E
from tvobs.estimator import (
    BoundData,
    EstimatorError,
    JointField,
    build_estimator,
    build_observer,
    consistent_init,
    reconstruct,
)
from tvobs.gaindesign import design
from tvobs.obsmap import SystemModel, build_chain, build_closure
from tvobs.sim import DisturbanceSignal, SimConfig, cosimulate
from tvobs.systems import builtin, with_estimator

EX32 = builtin("ex3.2")
EX34 = builtin("ex3.4")


def test_estimator_rhs_is_the_printed_system():
    spec = EX32.estimator
    R = spec.design.R
    want = [
        E.simplify(E.parse(f"y + z1 - 12*{R!r}*exp(10*t)*(z0 - y)")),
        E.simplify(E.parse(f"-72*{R!r}^2*exp(20*t)*(z0 - y)")),
    ]
    for got, w in zip(spec.rhs, want):
        assert E.structurally_equal(got, w, rel_tol=1e-12)


def test_injection_sign_gives_plus_y():
    # phi_1 = -y enters as -phi_1 = +y; at z = 0 with y = 1 only that term and the gain remain
    spec = EX32.estimator
    R = spec.design.R
    dz = spec.z_dot(0.0, (1.0,), (1.0, 0.0))
    assert dz[0] == pytest.approx(1.0, abs=0)
    dz = spec.z_dot(0.0, (0.0,), (1.0, 0.0))
    assert dz == pytest.approx([-12 * R, -72 * R**2], rel=1e-13)


def test_m0_chain_gives_scalar_estimator():
    sys = SystemModel(("-x1",), ("x1",), ())
    ch = build_closure(build_chain(sys, "y", "1", []), ("y",))
    dg = design(1, [-1], phi="1", q="1", with_constants=False)
    spec = build_estimator(ch, dg, "1")
    assert spec.state_names == ("z0",) and len(spec.rhs) == 1
    R = dg.R
    assert spec.z_dot(0.0, (2.0,), (3.0,)) == pytest.approx([-R * 1.0])


def test_dimension_mismatch_is_rejected():
    dg = design(3, None, phi="1", q="1", with_constants=False)
    with pytest.raises(EstimatorError):
        build_estimator(EX32.chain, dg, "1")


def test_observer_layout_and_beta():
    spec = EX34.estimator
    assert spec.state_names == ("z0", "z1", "w")
    assert E.structurally_equal(spec.rhs[-1], E.parse("-w"))
    assert spec.beta(0.0, 0.0) == 3.0
    assert spec.beta(0.5, -2.0) == pytest.approx(3 * math.exp(2.5) * (1 + math.exp(0.5) * 2), rel=1e-15)


def test_observer_needs_closure_and_beta():
    ch = builtin("ex2.8").chain
    dg = EX34.estimator.design
    with pytest.raises(EstimatorError):
        build_observer(ch, dg, "exp(5*t)", EX34.bounds)
    with pytest.raises(EstimatorError):
        build_observer(EX34.chain, dg, "exp(5*t)", BoundData())


def _drift(spec, t, y, z, w, d):
    """z_m' minus its gain term: the saturated closure."""
    est = EX32.estimator
    full = spec.z_dot(t, (y,), (z[0], z[1], w), (d,))[1]
    gain = est.z_dot(t, (y,), z, (d,))[1]
    return full - gain


def test_sat_passes_small_closure_exactly():
    spec = EX34.estimator
    y, z, d = 0.5, (0.5, 1.0), 0.3
    ynt = 3 * d * z[1] - 3 * y * abs(z[1]) ** (4 / 3)
    assert abs(ynt) < spec.beta(0.0, 0.0)
    assert _drift(spec, 0.0, y, z, 0.0, d) == pytest.approx(ynt, rel=1e-12)


def test_sat_clamps_large_closure():
    spec = EX34.estimator
    # y~ = -3 y |z1|^(4/3) = 5 * beta with beta(0, 0) = 3
    z1 = 1.0
    y = -5.0
    assert -3 * y * abs(z1) ** (4 / 3) / spec.beta(0.0, 0.0) == 5.0
    assert _drift(spec, 0.0, y, (y, z1), 0.0, 0.0) == pytest.approx(spec.beta(0.0, 0.0), rel=1e-12)


def test_consistent_init_examples():
    z0, w0 = consistent_init(EX34.chain, EX34.bounds, 0.0, (1.0, 1.0))
    assert list(z0) == [1.0, 1.0]
    s = math.sqrt(2)
    assert w0 == pytest.approx((s + s**3 + s**5) * 1.1, rel=1e-14)
    assert w0 >= 7 * s
    z0, w0 = consistent_init(EX34.chain, EX34.bounds, 0.0, (0.0, 0.0))
    assert list(z0) == [0.0, 0.0] and w0 == 0.0
    _, w1 = consistent_init(EX34.chain, EX34.bounds, 1.0, (1.0, 1.0))
    assert w1 == pytest.approx(consistent_init(EX34.chain, EX34.bounds, 0.0, (1.0, 1.0))[1] / math.e, rel=1e-14)


@pytest.mark.parametrize("y,z,want", [((1.0,), (0.0, 8.0), (1.0, 2.0)), ((0.0,), (0.0, 0.0), (0.0, 0.0)),
                                      ((2.0,), (5.0, -27.0), (2.0, -3.0))])
def test_reconstruct_examples(y, z, want):
    assert reconstruct(EX32.estimator, 0.0, y, z) == pytest.approx(want, rel=1e-15)


def test_reconstruct_ignores_z0():
    a = reconstruct(EX32.estimator, 0.0, (1.0,), (-100.0, 8.0))
    b = reconstruct(EX32.estimator, 0.0, (1.0,), (100.0, 8.0))
    assert np.array_equal(a, b)


def test_scaled_pack_roundtrip():
    f = JointField(EX34.estimator, "scaled")
    x, z, w, d = np.array([0.4, -0.3]), np.array([0.1, 0.2]), 2.0, np.array([0.5])
    s = f.pack(0.3, x, z, w, d)
    x2, z2, w2, _ = f.unpack(0.3, s, d)
    assert np.allclose(x2, x) and np.allclose(z2, z, rtol=1e-12) and w2 == w


def test_scaled_and_direct_coordinates_agree():
    b = builtin("remark2.5c")
    spec = with_estimator(b).estimator
    cfg = SimConfig(T=0.5, method="Radau", rtol=1e-10, atol=1e-12, n_out=51)
    d = DisturbanceSignal.constant(())
    a = cosimulate(b.sys, spec, d, (0.5, -0.2), (0.1, 0.3), cfg=cfg, coords="scaled")
    c = cosimulate(b.sys, spec, d, (0.5, -0.2), (0.1, 0.3), cfg=cfg, coords="direct")
    assert a.ok and c.ok
    assert np.allclose(a.x, c.x, rtol=1e-7, atol=1e-9)
    assert np.allclose(a.z, c.z, rtol=1e-6, atol=1e-8)
