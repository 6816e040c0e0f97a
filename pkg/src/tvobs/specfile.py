"""Reader for the line-oriented system description format.

    [system]   n, D ("[lo, hi]; [lo, hi]"), f.1 .. f.n, h.1 .. h.k
    [chain]    g, a, inject.1 .. inject.m, Psi.1 .. Psi.n, y_next_tilde, m,
               identity, known_disturbance      (or a, l for an integrator chain)
    [estimator] kind, phi, roots, R_multiplier, q, beta_tilde, kappa_a, l
    [bounds]   rfc_mu, rfc_a
    [sim]      t0, T, method, rtol, atol, seed, n_pieces

Expressions are double-quoted strings.  Errors carry the file position.
"""

from __future__ import annotations

import configparser
import re
from pathlib import Path

from . import expr as E
from .estimator import BoundData
from .obsmap import SystemModel, build_chain, build_closure
from .systems import BuiltinBundle, builtin, with_estimator

SIM_DEFAULTS = dict(t0=0.0, T=1.5, method="Radau", rtol=1e-9, atol=1e-12, seed=0, n_pieces=1)


class SpecError(ValueError):
    pass


class _Source:
    """Keeps the raw text so expression errors can be mapped back to file positions."""

    def __init__(self, text: str, name: str):
        self.lines = text.splitlines()
        self.name = name

    def locate(self, section: str, key: str):
        current = None
        for i, line in enumerate(self.lines, 1):
            s = line.strip()
            m = re.fullmatch(r"\[(.+)\]", s)
            if m:
                current = m.group(1).strip()
                continue
            if current == section:
                m = re.match(r"\s*([^=:\s]+)\s*[=:]\s*", line)
                if m and m.group(1) == key:
                    rest = line[m.end():]
                    return i, m.end() + (1 if rest.startswith('"') else 0) + 1
        return None, None


def _unquote(v: str) -> str:
    v = v.strip()
    if len(v) >= 2 and v[0] == v[-1] == '"':
        return v[1:-1]
    return v


class _Reader:
    def __init__(self, cp: configparser.ConfigParser, src: _Source):
        self.cp, self.src = cp, src

    def has(self, sec, key) -> bool:
        return self.cp.has_option(sec, key)

    def raw(self, sec, key, default=None):
        if not self.has(sec, key):
            if default is None:
                raise SpecError(f"{self.src.name}: missing [{sec}] {key}")
            return default
        return _unquote(self.cp.get(sec, key))

    def expr(self, sec, key, default=None) -> E.Expr:
        text = self.raw(sec, key, default)
        try:
            return E.parse(text)
        except E.ParseError as exc:
            line, col = self.src.locate(sec, key)
            if line is None:
                raise
            raise E.ParseError(exc.detail, line, col + exc.col - 1) from None

    def indexed(self, sec, prefix) -> list:
        if not self.cp.has_section(sec):
            return []
        idx = sorted(int(k.split(".", 1)[1]) for k in self.cp.options(sec) if re.fullmatch(rf"{prefix}\.\d+", k))
        if idx != list(range(1, len(idx) + 1)):
            raise SpecError(f"{self.src.name}: [{sec}] {prefix}.i must be numbered 1..N without gaps")
        return [self.expr(sec, f"{prefix}.{i}") for i in idx]

    def num(self, sec, key, default, cast=float):
        if not self.has(sec, key):
            return default
        try:
            return cast(self.raw(sec, key))
        except ValueError:
            raise SpecError(f"{self.src.name}: [{sec}] {key} is not a valid {cast.__name__}") from None

    def flag(self, sec, key, default: bool) -> bool:
        if not self.has(sec, key):
            return default
        try:
            return self.cp.getboolean(sec, key)
        except ValueError:
            raise SpecError(f"{self.src.name}: [{sec}] {key} must be true or false") from None


def _box(text: str) -> tuple:
    if not text.strip():
        return ()
    out = []
    for part in text.split(";"):
        m = re.fullmatch(r"\s*\[\s*([^,\]]+)\s*,\s*([^\]]+)\s*\]\s*", part)
        if not m:
            raise SpecError(f"malformed box component {part.strip()!r}; expected [lo, hi]")
        lo, hi = float(m.group(1)), float(m.group(2))
        if lo > hi:
            raise SpecError(f"empty box component [{lo}, {hi}]")
        out.append((lo, hi))
    return tuple(out)


def parse_roots(text: str) -> list:
    try:
        return [complex(p.replace(" ", "")) for p in text.split(",") if p.strip()]
    except ValueError:
        raise SpecError(f"cannot read roots {text!r}") from None


def loads(text: str, name: str = "<spec>") -> BuiltinBundle:
    src = _Source(text, name)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=name)
    except configparser.Error as exc:
        raise SpecError(f"{name}: {exc}") from None
    r = _Reader(cp, src)
    if not cp.has_section("system"):
        raise SpecError(f"{name}: missing [system] section")
    f = r.indexed("system", "f")
    h = r.indexed("system", "h")
    n = r.num("system", "n", len(f), int)
    if n != len(f):
        raise SpecError(f"{name}: n = {n} but {len(f)} equations f.i given")
    if not h:
        raise SpecError(f"{name}: no outputs h.j given")
    D = _box(r.raw("system", "D", ""))
    sys = SystemModel(tuple(f), tuple(h), D, name=Path(name).stem)

    est = "estimator"
    settings = {}
    if cp.has_section(est):
        settings["kind"] = r.raw(est, "kind", "estimator")
        if r.has(est, "phi"):
            settings["phi"] = r.expr(est, "phi")
        if r.has(est, "roots"):
            settings["roots"] = parse_roots(r.raw(est, "roots"))
        settings["R_multiplier"] = r.num(est, "R_multiplier", 1.0)
        if r.has(est, "q"):
            settings["q"] = r.expr(est, "q")
        if r.has(est, "l"):
            settings["l"] = r.num(est, "l", 1.0)
    bounds = BoundData.of(
        beta_tilde=r.expr(est, "beta_tilde") if r.has(est, "beta_tilde") else None,
        kappa_a=r.expr(est, "kappa_a") if r.has(est, "kappa_a") else None,
        rfc_mu=r.expr("bounds", "rfc_mu") if r.has("bounds", "rfc_mu") else None,
        rfc_a=r.expr("bounds", "rfc_a") if r.has("bounds", "rfc_a") else None,
    )
    if (bounds.rfc_mu is None) != (bounds.rfc_a is None):
        raise SpecError(f"{name}: [bounds] needs both rfc_mu and rfc_a")
    for key, default, cast in (("t0", 0.0, float), ("T", 1.5, float), ("rtol", 1e-9, float),
                               ("atol", 1e-12, float), ("seed", 0, int), ("n_pieces", 1, int)):
        settings[key] = r.num("sim", key, SIM_DEFAULTS.get(key, default), cast)
    settings["method"] = r.raw("sim", "method", SIM_DEFAULTS["method"])

    chain = None
    if cp.has_section("chain") and r.has("chain", "g"):
        inj = r.indexed("chain", "inject")
        m = r.num("chain", "m", len(inj), int)
        if len(inj) != m:
            raise SpecError(f"{name}: m = {m} but {len(inj)} injections inject.i given")
        chain = build_chain(sys, r.expr("chain", "g"), r.expr("chain", "a", "1"), inj, m=m)
        psi = r.indexed("chain", "Psi")
        if psi:
            if len(psi) != sys.n:
                raise SpecError(f"{name}: Psi has {len(psi)} components, system has n = {sys.n}")
            ynt = r.expr("chain", "y_next_tilde") if r.has("chain", "y_next_tilde") else None
            chain = build_closure(chain, tuple(psi), ynt, identity=r.flag("chain", "identity", True),
                                  known_disturbance=r.flag("chain", "known_disturbance", False))
    elif cp.has_section("chain"):
        # integrator chain experiment: only a(t, theta) and its lower bound l
        settings["a"] = r.raw("chain", "a")
        r.expr("chain", "a")
        settings["l"] = r.num("chain", "l", 1.0)
        settings.setdefault("phi", E.parse("1"))
        settings["n"] = sys.n
    bundle = BuiltinBundle(sys.name, sys, chain, bounds, None, f"loaded from {name}", settings)
    if chain is not None and "phi" in settings and chain.closed:
        bundle = with_estimator(bundle)
    return bundle


def load(src: str) -> BuiltinBundle:
    """A builtin name or a path to a spec file."""
    try:
        b = builtin(src)
        if b.estimator is None and b.chain is not None and b.chain.closed and "phi" in b.settings:
            b = with_estimator(b)
        return b
    except KeyError:
        pass
    p = Path(src)
    if not p.exists():
        raise SpecError(f"no builtin or file named {src!r}")
    return loads(p.read_text(), str(p))
