"""Command-line front end: ``delaycert {analyze,simulate,margin,max-delay,verify-only}``.

Exit codes: 0 certified / decaying, 1 not certified / not decaying,
2 input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, fileio, simulator, solver
from .errors import (DelayCertError, DimensionError, HypothesisError, MarginUndefinedError,
                     ModelFormatError, NumericalError, SizeGuardError, WellPosednessError)
from .lmi import DELAY_DEPENDENT, TESTS
from .model import WELL_POSED_THRESHOLD, validate_model
from .polytope import vertex_counts

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("delaycert")


class InputError(Exception):
    """Bad command-line input; reported with exit code 2."""


def load_model(path, threshold: float = WELL_POSED_THRESHOLD):
    """Parse and validate a model file; raises :class:`InputError` with diagnostics."""
    try:
        model = fileio.read_model(path)
    except ModelFormatError as exc:
        raise InputError(f"schema error: {exc}") from exc
    diags = validate_model(model, threshold)
    if diags:
        lines = "\n".join(f"  [{d.code}] {d.message}" for d in diags)
        raise InputError(f"invalid model {path}:\n{lines}")
    return model


def _floats(text, what):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise InputError(f"malformed {what}: {text!r}") from exc


def parse_theta_spec(text: str, theta, seed: int):
    """``constant[:v1,v2..]``, ``vertex_switch[:dwell=D]``, ``sinusoid:amp=a1,a2;freq=f``."""
    kind, _, rest = text.partition(":")
    params = {}
    try:
        if kind == "constant":
            if rest:
                params["value"] = _floats(rest, "--theta")
        elif kind == "vertex_switch":
            for item in filter(None, rest.split(";")):
                key, eq, val = item.partition("=")
                if not eq:
                    key, val = "dwell", key
                if key != "dwell":
                    raise InputError(f"unknown vertex_switch parameter {key!r}")
                params["dwell"] = float(val)
        elif kind == "sinusoid":
            for item in filter(None, rest.split(";")):
                key, eq, val = item.partition("=")
                if not eq or key not in ("amp", "freq"):
                    raise InputError(f"malformed sinusoid parameter {item!r}")
                if key == "amp":
                    params["amplitude"] = _floats(val, "amplitude")
                else:
                    params["frequency"] = float(val)
        else:
            raise InputError(f"unknown --theta kind {kind!r}")
        return simulator.make_signal(kind, params, theta, seed)
    except (ValueError, DimensionError) as exc:
        raise InputError(f"--theta: {exc}") from exc


def parse_phi(text: str, n: int):
    """``const:v1[,v2..]`` (one value is broadcast) or a CSV / JSON table of ``t, x1..xn``."""
    if text.startswith("const:"):
        vals = _floats(text[6:], "--phi")
        if len(vals) == 1:
            vals = vals * n
        if len(vals) != n:
            raise InputError(f"--phi needs 1 or {n} values")
        return simulator.History.constant(vals)
    path = Path(text)
    if not path.exists():
        raise InputError(f"--phi: no such file {text!r} (use const:v for a constant)")
    try:
        if path.suffix == ".json":
            rows = json.loads(path.read_text())
            table = np.asarray(rows, dtype=float)
        else:
            table = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
        return simulator.History.table(table[:, 0], table[:, 1:])
    except (ValueError, IndexError, DimensionError) as exc:
        raise InputError(f"--phi: cannot read table {text!r}: {exc}") from exc


def _solver_kw(args):
    return {"tol": args.tol, "max_iters": args.max_iters, "restarts": args.restarts, "seed": args.seed}


def _report_base(args, model, command):
    return {
        "tool": "delaycert",
        "version": __version__,
        "command": command,
        "model": str(args.model),
        "model_digest": fileio.model_digest(model),
        "tolerances": {"strictness": args.tol, "side_floor": args.tol,
                       "well_posedness": args.wp_threshold, "max_iters": args.max_iters,
                       "restarts": args.restarts, "seed": args.seed},
        "threads": int(os.environ.get("DELAYCERT_THREADS", "1") or 1),
    }


def _finish(report, args, started):
    # timestamps live in one field so reports diff cleanly
    report["timing"] = {"wall_time_s": round(time.perf_counter() - started, 6),
                        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds")}
    text = json.dumps(report, indent=2, sort_keys=True)
    if getattr(args, "out", None):
        fileio.atomic_write(args.out, text + "\n")
    print(text)


def _cert_path(args):
    if args.cert:
        return Path(args.cert)
    if args.out:
        out = Path(args.out)
        return out.with_name(out.stem + ".cert.json")
    return None


def cmd_analyze(args) -> int:
    started = time.perf_counter()
    model = load_model(args.model, args.wp_threshold)
    hbar = None
    if args.test in DELAY_DEPENDENT:
        hbar = _floats(args.hbar, "--hbar") if args.hbar else list(model.delays)
        if len(hbar) != model.r:
            raise InputError(f"--hbar needs {model.r} values, got {len(hbar)}")
    elif args.hbar:
        raise InputError(f"--hbar only applies to {', '.join(DELAY_DEPENDENT)}")
    counts, v, vbar = vertex_counts(model, not args.no_dedup)
    report = _report_base(args, model, "analyze")
    report.update({"test_id": args.test, "hbar": hbar, "vertex_counts": counts, "v": v, "v_bar": vbar,
                   "multipliers": args.multipliers, "dedup": not args.no_dedup})
    result = solver.analyze(model, args.test, hbar=hbar, force=args.force,
                            dedup=not args.no_dedup, multipliers=args.multipliers, **_solver_kw(args))
    report["diagnostics"] = [d.to_dict() for d in result.diagnostics]
    report["search_skipped"] = result.skipped
    if result.certified:
        cert = result.result
        path = _cert_path(args)
        report.update({"verdict": "certified", "margin": cert.margin, "iterations": cert.iterations,
                       "certificate": str(path) if path else None})
        if path:
            fileio.write_json(path, cert.to_dict())
        code = EXIT_OK
    else:
        fail = result.result
        report.update({"verdict": "not-certified", "margin": None, "best_value": _finite(fail.best_value),
                       "iterations": fail.iterations, "reason": fail.reason, "certificate": None})
        code = EXIT_FAIL
    for d in result.diagnostics:
        print(f"precheck: {d.message}", file=sys.stderr)
    _finish(report, args, started)
    return code


def _finite(x):
    return x if np.isfinite(x) else None


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    model = load_model(args.model, args.wp_threshold)
    signal = parse_theta_spec(args.theta, model.theta, args.seed)
    phi = parse_phi(args.phi, model.n)
    try:
        res = simulator.simulate(model, signal, phi, args.horizon, args.step, threshold=args.wp_threshold)
    except (ValueError, DimensionError) as exc:
        raise InputError(str(exc)) from exc
    if args.out:
        tmp = Path(args.out).with_suffix(".tmp.csv")
        simulator.write_csv(res, tmp)
        os.replace(tmp, args.out)
    report = _report_base(args, model, "simulate")
    report.update({"signal": args.theta, "phi": args.phi, "classification": res.classification,
                   "final_norm": float(res.norm[-1]), "final_envelope": float(res.envelope[-1]),
                   "initial_norm": res.initial_norm, "integrator": res.meta,
                   "trajectory": args.out})
    args.out = args.report
    _finish(report, args, started)
    return EXIT_OK if res.classification == "decaying" else EXIT_FAIL


def cmd_margin(args) -> int:
    started = time.perf_counter()
    if not args.sigma_max > 0:
        raise InputError("--sigma-max must be positive (empty search range)")
    if not args.bisect_tol > 0:
        raise InputError("--bisect-tol must be positive")
    model = load_model(args.model, args.wp_threshold)
    report = _report_base(args, model, "margin")
    report.update({"test_id": args.test, "sigma_max": args.sigma_max, "bisect_tol": args.bisect_tol})
    try:
        res = solver.stability_margin(model, args.test, args.sigma_max, args.bisect_tol, **_solver_kw(args))
    except MarginUndefinedError as exc:
        print(f"margin undefined: {exc}", file=sys.stderr)
        report.update({"verdict": "not-certified", "sigma_m": None, "error": "margin undefined"})
        _finish(report, args, started)
        return EXIT_FAIL
    report.update({"verdict": "certified", "sigma_m": res.value, "probes": res.probes})
    print(f"sigma_m = {res.value:.6g}", file=sys.stderr)
    _finish(report, args, started)
    return EXIT_OK


def cmd_max_delay(args) -> int:
    started = time.perf_counter()
    model = load_model(args.model, args.wp_threshold)
    ratio = _floats(args.ratio, "--ratio") if args.ratio else [1.0] * model.r
    if len(ratio) != model.r:
        raise InputError(f"--ratio needs {model.r} values, got {len(ratio)}")
    if not args.h_max > 0 or not args.bisect_tol > 0:
        raise InputError("--h-max and --bisect-tol must be positive")
    report = _report_base(args, model, "max-delay")
    report.update({"test_id": args.test, "ratio": ratio, "h_max": args.h_max, "bisect_tol": args.bisect_tol})
    try:
        res = solver.max_certified_delay(model, args.test, ratio, args.h_max, args.bisect_tol,
                                         **_solver_kw(args))
    except MarginUndefinedError as exc:
        print(str(exc), file=sys.stderr)
        report.update({"verdict": "not-certified", "beta": None, "error": str(exc)})
        _finish(report, args, started)
        return EXIT_FAIL
    bounds = [res.value * q for q in ratio]
    ok = res.value > 0
    report.update({"verdict": "certified" if ok else "not-certified", "beta": res.value,
                   "bounds": bounds, "probes": res.probes})
    print(f"beta = {res.value:.6g}; bounds = {', '.join(f'{b:.6g}' for b in bounds)}", file=sys.stderr)
    _finish(report, args, started)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_verify_only(args) -> int:
    model = load_model(args.model, args.wp_threshold)
    try:
        data = json.loads(Path(args.certificate).read_text())
        cert = solver.Certificate.from_dict(data)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise InputError(f"cannot read certificate {args.certificate}: {exc}") from exc
    ok, worst = solver.verify_certificate(model, cert)
    print(json.dumps({"test_id": cert.test_id, "valid": ok, "worst_lambda_max": worst,
                      "stored_margin": cert.margin, "margin_difference": abs(worst - cert.margin)},
                     indent=2, sort_keys=True))
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="delaycert", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"delaycert {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("model", help="model JSON file")
    common.add_argument("--tol", type=float, default=solver.DEFAULT_TOL, help="relative strictness (default 1e-6)")
    common.add_argument("--max-iters", type=int, default=solver.DEFAULT_MAX_ITERS)
    common.add_argument("--restarts", type=int, default=solver.DEFAULT_RESTARTS)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--wp-threshold", type=float, default=WELL_POSED_THRESHOLD,
                        help="well-posedness threshold on sigma_min(I - Dpq Delta)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", parents=[common], help="run one LMI test")
    p.add_argument("--test", choices=TESTS, default="cor3")
    p.add_argument("--hbar", help="comma list of r delay bounds (thm2/cor5)")
    p.add_argument("--multipliers", choices=("per-vertex", "shared"), default="per-vertex")
    p.add_argument("--no-dedup", action="store_true", help="enumerate vertex tuples without merging duplicates")
    p.add_argument("--force", action="store_true", help="search even when the precheck fails")
    p.add_argument("--out", help="report JSON path")
    p.add_argument("--cert", help="certificate JSON path (default: next to --out)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", parents=[common], help="integrate the delayed system")
    p.add_argument("--theta", default="constant", help="constant[:v..] | vertex_switch[:dwell=D] | sinusoid:amp=..;freq=f")
    p.add_argument("--phi", default="const:1", help="const:v[,..] or a CSV/JSON table t,x1..xn")
    p.add_argument("--horizon", type=float, default=20.0)
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--out", help="trajectory CSV path")
    p.add_argument("--report", help="report JSON path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("margin", parents=[common], help="bisect the robust stability margin")
    p.add_argument("--test", choices=TESTS, default="cor3")
    p.add_argument("--sigma-max", type=float, default=1.0)
    p.add_argument("--bisect-tol", type=float, default=0.05)
    p.add_argument("--out")
    p.set_defaults(func=cmd_margin)

    p = sub.add_parser("max-delay", parents=[common], help="bisect the certified delay bound")
    p.add_argument("--test", choices=DELAY_DEPENDENT, default="thm2")
    p.add_argument("--ratio", help="comma list of r nonnegative weights (default all ones)")
    p.add_argument("--h-max", type=float, default=10.0)
    p.add_argument("--bisect-tol", type=float, default=0.01)
    p.add_argument("--out")
    p.set_defaults(func=cmd_max_delay)

    p = sub.add_parser("verify-only", parents=[common], help="re-check a stored certificate")
    p.add_argument("certificate")
    p.set_defaults(func=cmd_verify_only)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, which matches the input-error code
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (HypothesisError, SizeGuardError, DimensionError, ModelFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, WellPosednessError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DelayCertError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
