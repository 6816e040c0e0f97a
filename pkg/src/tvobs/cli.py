"""tvobs command line: design, simulate and verify.

Exit codes: 0 pass, 1 check failed, 2 usage or parse/validation error,
3 numerical failure (blow-up, failed integration, singular solve).
"""

from __future__ import annotations

import argparse
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import expr as E
from . import linalg, verify
from .estimator import EstimatorError, consistent_init
from .gaindesign import DesignError, design
from .obsmap import ModelError
from .sim import SimConfig, cosimulate, random_disturbance, to_csv
from .specfile import SpecError, load, parse_roots
from .systems import NAMES, BuiltinBundle, with_estimator
from .timefun import ClassCheckError, GainClockWarning

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

CHECKS = ("rfc", "holder", "modulus", "iss", "lemma211", "estimator", "observer", "detect")
SEEDED = ("rfc", "estimator", "observer", "detect")


class NumericalFailure(RuntimeError):
    pass


def _vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",") if v.strip()], dtype=float)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from None


def _emit(lines, out=None):
    out = out or sys.stdout
    for line in lines:
        print(line, file=out)


# --------------------------------------------------------------------------
# design


def _design_for(b: BuiltinBundle, args):
    st = b.settings
    if b.chain is not None:
        n = b.chain.m + 1
    else:
        n = b.sys.n
    roots = parse_roots(args.roots) if args.roots else st.get("roots")
    mult = args.R_multiplier if args.R_multiplier is not None else st.get("R_multiplier", 1.0)
    return design(n, roots, l=st.get("l", 1.0), phi=st.get("phi", "1"), q=st.get("q"), R_multiplier=mult,
                  with_constants=not args.no_constants)


def cmd_design(args) -> int:
    b = load(args.spec)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", GainClockWarning)
        dg = _design_for(b, args)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    np.set_printoptions(precision=12, suppress=False)
    print(f"system = {b.name}")
    print("k = (" + ", ".join(f"{v:.12g}" for v in dg.k) + ")")
    print("P =")
    for row in dg.P:
        print("    " + "  ".join(f"{v: .12e}" for v in row))
    for key, val in (("mu", dg.mu), ("K1", dg.K1), ("K2", dg.K2), ("l", dg.l), ("R", dg.R), ("gamma", dg.gamma)):
        print(f"{key} = {val:.12g}")
    print(f"q = {dg.q}")
    if dg.constants is not None:
        c = dg.constants
        print(f"M = {c.M:.12g}")
        print(f"M1 = {c.M1:.12g}")
        print(f"K = {c.K:.6e}")
        print(f"G = {c.G:.6e}")
        print(f"log_rho(t0) = {c.log_rho(float(b.settings.get('t0', 0.0))):.12g}")
    print(f"certificate_residual = {dg.cert.residual:.3e}")
    print(f"certificate_abs_residual = {dg.cert.abs_residual:.3e}")
    return EXIT_OK


# --------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    b = load(args.spec)
    spec = b.estimator
    if spec is None:
        raise SpecError(f"{b.name} does not describe an estimator; add [estimator] with phi and roots")
    st = b.settings
    seed = args.seed if args.seed is not None else st.get("seed", 0)
    rng = np.random.default_rng(seed)
    T = args.T if args.T is not None else st.get("T", 1.5)
    t0 = st.get("t0", 0.0)
    cfg = SimConfig(t0=t0, T=T, method=st.get("method", "Radau"), rtol=st.get("rtol", 1e-9),
                    atol=st.get("atol", 1e-12), n_out=args.n_out)
    x0 = args.x0 if args.x0 is not None else verify.random_x0(rng, b.sys.n)
    d = random_disturbance(rng, b.sys.D, (t0, T), st.get("n_pieces", 1))
    zc, w0 = consistent_init(b.chain, b.bounds if spec.kind == "observer" else None, t0, x0, d=d(t0))
    if args.consistent:
        z0 = zc
    elif args.z0 is not None:
        z0 = args.z0
    else:
        z0 = verify.random_x0(rng, spec.m + 1)
    if len(x0) != b.sys.n or len(z0) != spec.m + 1:
        raise SpecError(f"--x0 needs {b.sys.n} values and --z0 {spec.m + 1}")
    tr = cosimulate(b.sys, spec, d, x0, z0, w0, cfg)
    text = to_csv(tr, spec.phi)
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    if not tr.ok:
        print(f"numerical failure: {tr.status}: {tr.message} (CSV truncated at t={tr.t[-1] if len(tr.t) else t0:g})",
              file=sys.stderr)
        return EXIT_NUMERIC
    if args.out not in (None, "-"):
        print(f"wrote {len(tr.t)} rows to {args.out}; final abs_err={tr.abs_err[-1]:.3e}")
    return EXIT_OK


# --------------------------------------------------------------------------
# verify


def _seed_job(check: str, src: str, seed: int, opts: dict):
    b = load(src)
    if check == "rfc":
        if b.bounds.rfc_mu is None:
            raise SpecError(f"{b.name} has no [bounds] rfc_mu/rfc_a")
        return verify.run_rfc(b, [seed], T=opts["T"], n_pieces=opts["n_pieces"])[0]
    if check == "detect":
        return verify.run_detect(b, [seed], T=opts["T"], n_pieces=opts["n_pieces"])[0]
    if check == "estimator":
        if b.estimator is None or b.estimator.kind != "estimator":
            b = with_estimator(b, "estimator")
        return verify.run_estimator(b, [seed], T=opts["T"], n_pieces=opts["n_pieces"])
    if check == "observer":
        if b.estimator is None or b.estimator.kind != "observer":
            b = with_estimator(b, "observer")
        cons = verify.run_observer(b, [seed], T=opts["T"], consistent=True)
        inc = verify.run_observer(b, [seed], T=opts["T"], consistent=False)
        return verify.ConvergenceReport(cons.passed and inc.passed,
                                        [dict(r, start="consistent") for r in cons.runs]
                                        + [dict(r, start="perturbed") for r in inc.runs])
    raise ValueError(check)


def _merge(check: str, reports: list):
    if isinstance(reports[0], verify.EnvelopeReport):
        worst = max(r.max_violation for r in reports)
        tol = reports[0].details.get("tol", 0.0)
        return verify.EnvelopeReport(check, worst, all(r.passed for r in reports),
                                     details={"runs": sum(r.details.get("runs", 1) for r in reports), "tol": tol})
    return verify.ConvergenceReport(all(r.passed for r in reports), [row for r in reports for row in r.runs])


def _run_seeded(check: str, args) -> object:
    b = load(args.spec)
    st = b.settings
    horizon = {"rfc": 1.5, "detect": 3.0, "estimator": 1.5, "observer": 1.0}[check]
    opts = {"T": args.T if args.T is not None else horizon,
            "n_pieces": args.n_pieces if args.n_pieces is not None else max(st.get("n_pieces", 1), 1)}
    if check == "observer":
        opts["n_pieces"] = 1
    seeds = list(range(args.seed0, args.seed0 + args.seeds))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            reports = list(ex.map(_seed_job, [check] * len(seeds), [args.spec] * len(seeds), seeds,
                                  [opts] * len(seeds)))
    else:
        reports = [_seed_job(check, args.spec, s, opts) for s in seeds]
    return _merge(check, reports)


def cmd_verify(args) -> int:
    check = args.check
    if check in SEEDED:
        if args.spec is None:
            raise SpecError(f"verify {check} needs a spec file or builtin name")
        rep = _run_seeded(check, args)
    elif check == "holder":
        b = _need_chain(args)
        rep = verify.check_holder(b.chain, samples=args.samples, bound=args.bound, exponent=args.exponent,
                                  seed=args.seed0)
    elif check == "modulus":
        b = _need_chain(args)
        rep = verify.check_modulus(b.chain, args.a1, args.a2, args.beta, samples=args.samples, seed=args.seed0)
    elif check == "iss":
        rep = _verify_iss(args)
    elif check == "lemma211":
        rep = verify.lemma211_oracle(args.a, args.b, args.y0, args.T if args.T is not None else 20.0)
    else:  # guarded by argparse choices
        raise SpecError(f"unknown check {check!r}")
    _emit(rep.lines())
    passed = rep.bounded if isinstance(rep, verify.Lemma211Report) else rep.passed
    if check == "lemma211" and args.expect:
        passed = rep.status == args.expect
    print(f"RESULT {check}: {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if passed else EXIT_FAIL


def _need_chain(args) -> BuiltinBundle:
    if args.spec is None:
        raise SpecError(f"verify {args.check} needs a spec file or builtin name")
    b = load(args.spec)
    if b.chain is None or not b.chain.closed:
        raise SpecError(f"{b.name} has no reconstruction map Psi")
    return b


def _verify_iss(args):
    if args.spec is None:
        raise SpecError("verify iss needs an integrator chain spec, e.g. chain(3)")
    b = load(args.spec)
    st = b.settings
    if "a" not in st:
        raise SpecError(f"{b.name} is not an integrator chain spec ([chain] a and l)")
    a_expr = E.parse(st["a"])
    a_c = E.compile_exprs((a_expr,), ("t", "theta"), "math")
    dg = design(b.sys.n, st.get("roots"), l=st["l"], phi=st.get("phi", "1"))
    seeds = range(args.seed0, args.seed0 + args.seeds)
    runs = verify.default_iss_runs(b.sys.n, seeds, forced=False, T=1.0)
    runs += verify.default_iss_runs(b.sys.n, seeds, forced=True, T=5.0)
    return verify.check_iss_chain(dg, st.get("phi", "1"), runs, a_fn=lambda t, th: a_c(t, th)[0])


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tvobs", description="Time-varying high-gain observers and estimators.",
                                epilog="builtins: " + ", ".join(NAMES))
    sub = p.add_subparsers(dest="cmd", required=True)

    d = sub.add_parser("design", help="print the gain design for a spec")
    d.add_argument("spec", help="spec file or builtin name")
    d.add_argument("--roots", help='override roots, e.g. "-6+6j, -6-6j"')
    d.add_argument("--R-multiplier", dest="R_multiplier", type=float)
    d.add_argument("--no-constants", action="store_true", help="skip the estimate constants (gamma only)")
    d.set_defaults(func=cmd_design)

    s = sub.add_parser("simulate", help="co-simulate plant and estimator, write CSV")
    s.add_argument("spec")
    s.add_argument("--out", "-o", help="CSV path (default stdout)")
    s.add_argument("--seed", type=int)
    s.add_argument("--x0", type=_vector, help="initial state, comma separated (use --x0=-1,2 for negatives)")
    s.add_argument("--z0", type=_vector, help="initial estimator state z_0..z_m")
    s.add_argument("--consistent", action="store_true", help="start from the true chain values")
    s.add_argument("--T", type=float, help="final time")
    s.add_argument("--n-out", dest="n_out", type=int, default=301)
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("verify", help="run a numerical check")
    v.add_argument("check", choices=CHECKS)
    v.add_argument("spec", nargs="?", help="spec file or builtin name (not needed for lemma211)")
    v.add_argument("--seeds", type=int, default=10, help="number of seeded runs")
    v.add_argument("--seed0", type=int, default=0)
    v.add_argument("--jobs", type=int, default=1, help="worker processes for independent seeds")
    v.add_argument("--T", type=float)
    v.add_argument("--n-pieces", dest="n_pieces", type=int)
    v.add_argument("--samples", type=int, default=10_000)
    v.add_argument("--bound", type=float, default=2.0)
    v.add_argument("--exponent", type=float, default=1 / 3)
    v.add_argument("--a1", default="2*s^(1/3)")
    v.add_argument("--a2", default="s")
    v.add_argument("--beta", default="1")
    v.add_argument("--a", default="1", help="lemma211: a(t)")
    v.add_argument("--b", default="1", help="lemma211: b(t)")
    v.add_argument("--y0", type=float, default=0.0)
    v.add_argument("--expect", choices=(verify.BOUNDED, verify.UNBOUNDED, verify.HYPOTHESIS_FAILURE),
                   help="lemma211: pass iff the oracle returns this status")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except E.ParseError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (SpecError, ModelError, DesignError, EstimatorError, ClassCheckError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalFailure, linalg.LinalgError, FloatingPointError, OverflowError, E.DomainError,
            RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
