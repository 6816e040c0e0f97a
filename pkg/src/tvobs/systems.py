"""Built-in example systems with their observability data and bounds."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

from . import expr as E
from .estimator import BoundData, EstimatorSpec, build_estimator, build_observer
from .gaindesign import GainDesign, design
from .obsmap import ObservabilityChain, SystemModel, build_chain, build_closure

NAMES = ("ex2.5", "ex2.8", "remark2.5c", "chain(n)", "ex3.2", "ex3.4")

CHAIN_A = "1 + 1/2*sin(t + theta)"
CHAIN_L = 0.5


@dataclass(frozen=True)
class BuiltinBundle:
    name: str
    sys: SystemModel
    chain: ObservabilityChain | None
    bounds: BoundData
    estimator: EstimatorSpec | None = None
    description: str = ""
    settings: dict = field(default_factory=dict)

    def to_spec(self) -> str:
        return to_spec_text(self)


_EX25_F = ("x1 + x2^3", "-x1*x2^2 + d*x2")
_EX25_PSI = ("y", "signed_pow(z1, 1/3)")
_EX25_CLOSURE = "3*d*z1 - 3*y*abs(z1)^(4/3)"
_EX25_BOUNDS = dict(beta_tilde="3*exp(5*t)", kappa_a="s + s^3 + s^5", rfc_mu="exp(t)", rfc_a="s")
_EX32 = dict(phi="exp(5*t)", roots=(-6 + 6j, -6 - 6j), q="exp(10*t)", R_multiplier=1.0)


def _ex25(name="ex2.5") -> BuiltinBundle:
    sys = SystemModel(_EX25_F, ("x1",), ((-1.0, 1.0),), name=name)
    ch = build_chain(sys, "y", "1", ["-y"])
    ch = build_closure(ch, _EX25_PSI, _EX25_CLOSURE, known_disturbance=True)
    settings = dict(_EX32, kind="estimator", T=1.5, n_pieces=4)
    return BuiltinBundle(name, sys, ch, BoundData.of(**_EX25_BOUNDS),
                         description="two-state system with unobservable linearization", settings=settings)


def _ex28() -> BuiltinBundle:
    sys = SystemModel(_EX25_F + ("-(1 + abs(d))*x3",), ("x1",), ((-1.0, 1.0),), name="ex2.8")
    ch = build_chain(sys, "y", "1", ["-y"])
    ch = build_closure(ch, _EX25_PSI + ("0",), None, identity=False)
    return BuiltinBundle("ex2.8", sys, ch, BoundData.of(rfc_mu="exp(t)", rfc_a="s"),
                         description="detectable extension with a stable unmeasured third state",
                         settings=dict(_EX32, kind="estimator", T=1.5, n_pieces=4))


def _remark25c() -> BuiltinBundle:
    sys = SystemModel(("abs(x1) + x2", "0"), ("signed_pow(x1, 1/3)",), (), name="remark2.5c")
    ch = build_chain(sys, "y^3", "1", ["-abs(y^3)"])
    ch = build_closure(ch, ("y^3", "z1"), "0")
    # |x1| + x2 gives |x| <= exp(t)|x0| after one Gronwall step on |x1| + |x2|
    return BuiltinBundle("remark2.5c", sys, ch, BoundData.of(rfc_mu="2*exp(t)", rfc_a="s"),
                         description="non-smooth output regularised by the injection -|y^3|",
                         settings=dict(phi="exp(t)", roots=(-1, -2), kind="estimator", T=1.5, n_pieces=1))


def chain_system(n: int) -> SystemModel:
    """x_i' = a(t, theta) x_{i+1}, x_n' = u with d = theta and d2 = u."""
    if n < 1:
        raise ValueError("chain length must be >= 1")
    a = CHAIN_A.replace("theta", "d")
    f = [f"({a})*x{i + 1}" for i in range(1, n)] + ["d2"]
    return SystemModel(f, ("x1",), ((-3.2, 3.2), (-1.0, 1.0)), name=f"chain({n})")


def _chain(n: int) -> BuiltinBundle:
    sys = chain_system(n)
    lo = min(1.0 + 0.5 * math.sin(s) for s in np.linspace(0.0, 2 * math.pi, 4097))
    assert lo >= CHAIN_L > 0, "a(t, theta) must stay above its lower bound l"
    return BuiltinBundle(f"chain({n})", sys, None, BoundData(),
                         description="integrator chain with time-varying gain a(t, theta)",
                         settings=dict(a=CHAIN_A, l=CHAIN_L, phi="exp(t)", n=n))


def reference_design(settings: dict, n_chain: int, with_constants: bool = False) -> GainDesign:
    return design(n_chain, settings.get("roots"), l=settings.get("l", 1.0), phi=settings["phi"], q=settings.get("q"),
                  R_multiplier=settings.get("R_multiplier", 1.0), with_constants=with_constants)


def with_estimator(b: BuiltinBundle, kind: str | None = None) -> BuiltinBundle:
    """Attach the estimator (or saturated observer) described by the bundle settings."""
    if b.chain is None:
        raise ValueError(f"{b.name} has no observability chain to build an estimator on")
    kind = kind or b.settings.get("kind", "estimator")
    dg = reference_design(b.settings, b.chain.m + 1)
    if kind == "estimator":
        spec = build_estimator(b.chain, dg, b.settings["phi"])
    elif kind == "observer":
        spec = build_observer(b.chain, dg, b.settings["phi"], b.bounds)
    else:
        raise ValueError(f"unknown estimator kind {kind!r}")
    return replace(b, estimator=spec, settings=dict(b.settings, kind=kind))


def builtin(name: str) -> BuiltinBundle:
    name = name.strip()
    m = re.fullmatch(r"chain\((\d+)\)", name)
    if m:
        return _chain(int(m.group(1)))
    if name == "ex2.5":
        return _ex25()
    if name == "ex2.8":
        return _ex28()
    if name == "remark2.5c":
        return _remark25c()
    if name == "ex3.2":
        return with_estimator(_ex25(name), "estimator")
    if name == "ex3.4":
        b = _ex25(name)
        return with_estimator(replace(b, settings=dict(b.settings, T=1.0, n_pieces=1)), "observer")
    raise KeyError(f"unknown builtin {name!r}; available: {', '.join(NAMES)}")


# --------------------------------------------------------------------------
# export


def _q(e) -> str:
    return '"' + (E.to_str(e) if isinstance(e, E.Expr) else str(e)) + '"'


def _roots_text(roots) -> str:
    parts = []
    for r in roots:
        r = complex(r)
        parts.append(repr(r.real) if r.imag == 0 else f"{r.real!r}{r.imag:+}j")
    return '"' + ", ".join(parts) + '"'


def to_spec_text(b: BuiltinBundle) -> str:
    sys = b.sys
    lines = [f"# builtin {b.name}: {b.description}", "[system]", f"n = {sys.n}"]
    if sys.D:
        lines.append('D = "' + "; ".join(f"[{lo!r}, {hi!r}]" for lo, hi in sys.D) + '"')
    lines += [f"f.{i} = {_q(fi)}" for i, fi in enumerate(sys.f, 1)]
    lines += [f"h.{j} = {_q(hj)}" for j, hj in enumerate(sys.h, 1)]
    st = b.settings
    if b.chain is not None:
        ch = b.chain
        lines += ["", "[chain]", f"m = {ch.m}", f"g = {_q(ch.g)}", f"a = {_q(ch.a)}"]
        lines += [f"inject.{i} = {_q(p)}" for i, p in enumerate(ch.injections, 1)]
        if ch.Psi is not None:
            lines += [f"Psi.{i} = {_q(p)}" for i, p in enumerate(ch.Psi, 1)]
            ident = "ex2.8" not in b.name
            lines.append(f"identity = {str(ident).lower()}")
        if ch.y_next_tilde is not None:
            lines.append(f"y_next_tilde = {_q(ch.y_next_tilde)}")
        lines.append(f"known_disturbance = {str(ch.known_disturbance).lower()}")
        lines += ["", "[estimator]", f"kind = {st.get('kind', 'estimator')}", f"phi = {_q(st['phi'])}",
                  f"roots = {_roots_text(st['roots'])}", f"R_multiplier = {st.get('R_multiplier', 1.0)!r}"]
        if st.get("q"):
            lines.append(f"q = {_q(st['q'])}")
    else:
        lines += ["", "[chain]", f"a = {_q(st['a'])}", f"l = {st['l']!r}", "", "[estimator]",
                  f"phi = {_q(st['phi'])}"]
    bd = b.bounds
    for key in ("beta_tilde", "kappa_a"):
        v = getattr(bd, key)
        if v is not None:
            lines.append(f"{key} = {_q(v.body)}")
    if bd.rfc_mu is not None:
        lines += ["", "[bounds]", f"rfc_mu = {_q(bd.rfc_mu.body)}", f"rfc_a = {_q(bd.rfc_a.body)}"]
    lines += ["", "[sim]", "t0 = 0.0", f"T = {st.get('T', 1.5)!r}", "method = Radau", "rtol = 1e-09",
              "atol = 1e-12", "seed = 0", f"n_pieces = {st.get('n_pieces', 1)}"]
    return "\n".join(lines) + "\n"
