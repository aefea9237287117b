"""Batch command-line front end.

Subcommands: classify, evolve, kernel, spectrum, verify, simulate, fixtures.
All data goes to files under --out (or $OSCILLAX_OUT, default '.'); stdout
carries only the paths of written files, errors go to stderr.  Exit codes:
0 ok, 1 verification failure, 2 invalid input, 3 numeric non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .errors import (
    LeakDominated,
    NoConvergence,
    OscillaxError,
    PlateauNotReached,
    SequenceTooNoisy,
    ValidationError,
)
from .evolve import Window, default_window, marginal_sequence
from .model import DriftCase, load_model, save_model

EXIT_OK = 0
EXIT_VERIFY_FAIL = 1
EXIT_BAD_INPUT = 2
EXIT_NO_CONVERGENCE = 3


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def _outdir(args) -> Path:
    out = args.out or os.environ.get("OSCILLAX_OUT") or "."
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_json(path: Path, payload) -> None:
    def default(o):
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(f"not serializable: {type(o)}")

    path.write_text(json.dumps(payload, indent=1, sort_keys=True, default=default) + "\n")
    print(path)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    print(path)


def _window(args, model, horizon) -> Window:
    if args.window:
        return Window(-args.window, args.window)
    return default_window(model, horizon)


def cmd_classify(args) -> int:
    from .regimes import predict

    model = load_model(args.model)
    report = predict(model)
    _write_json(_outdir(args) / "classify.json", report)
    return EXIT_OK


def _check_rational(args, model) -> None:
    if args.rational and not model.exact:
        raise ValidationError(
            "--rational requires a model with exact (rational) probabilities")


def cmd_evolve(args) -> int:
    model = load_model(args.model)
    _check_rational(args, model)
    horizon = args.horizon
    window = _window(args, model, horizon)
    rescaled = args.rescaled or model.drift_case in (DriftCase.PP, DriftCase.NP, DriftCase.NN)
    if args.rational and rescaled:
        raise ValidationError("--rational is incompatible with the rescaled log-scale DP")
    table = marginal_sequence(model, args.start, args.target, horizon, window,
                              leak_budget=None, exact=args.rational,
                              rescaled=rescaled)
    vals = table.data["values"]
    rows = [(n, float(vals[n]), float(table.leak[n])) for n in range(1, horizon + 1)]
    _write_csv(_outdir(args) / "evolve.csv", ["n", "value", "leak"], rows)
    return EXIT_OK


def cmd_kernel(args) -> int:
    from .model import essential_class
    from .switching import build_Q, switching_time_marginals

    model = load_model(args.model)
    horizon = args.horizon
    window = _window(args, model, horizon)
    rows_x = essential_class(model)
    hist = build_Q(model, horizon, window, rows=rows_x)
    T = switching_time_marginals(model, 0, horizon, window)
    out = []
    for n in range(1, horizon + 1):
        for x in rows_x:
            t = hist[x]
            bl, bh = t.data["band"]
            for y in range(bl, bh + 1):
                out.append((n, x, y, float(t.data["arrivals"][n][y - bl]),
                            float(T[n][window.index(y)]) if window.lo <= y <= window.hi else 0.0))
    _write_csv(_outdir(args) / "kernel.csv", ["n", "x", "y", "Qn", "Tn"], out)
    return EXIT_OK


def cmd_spectrum(args) -> int:
    from .switching import WeightSpec, default_weight, power_iterate, switching_kernel

    model = load_model(args.model)
    window = _window(args, model, args.horizon)
    if args.weight == "auto":
        weight = default_weight(model, args.delta if args.delta else None)
    elif args.weight == "polynomial":
        weight = WeightSpec("polynomial", args.delta or 0.5)
    else:
        weight = default_weight(model, args.delta or 0.1)
    spectral = power_iterate(switching_kernel(model, window), weight)
    _write_json(_outdir(args) / "spectrum.json", spectral.report())
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .verify import simulate

    model = load_model(args.model)
    res = simulate(model, args.start, args.horizon, args.paths, args.seed)
    path = _outdir(args) / "simulate.json"
    path.write_text(res.to_json() + "\n")
    print(path)
    return EXIT_OK


def cmd_fixtures(args) -> int:
    from .fixtures import FIXTURES, SUBCASE_FIXTURES

    out = _outdir(args)
    for name, fn in FIXTURES.items():
        save_model(fn(), out / f"{name}.json")
        print(out / f"{name}.json")
    for name, fn in SUBCASE_FIXTURES.items():
        save_model(fn(), out / f"FIX-PP-{name}.json")
        print(out / f"FIX-PP-{name}.json")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .regimes import classify
    from .verify import convergence_suite, fit_rate_exponent, identity_suite

    model = load_model(args.model)
    _check_rational(args, model)
    suites = ["identities", "convergence", "asymptotics"] if args.suite == "all" else [args.suite]
    report = {}
    ok = True
    for suite in suites:
        if suite == "identities":
            exact = model.exact and not args.float_mode
            rep = identity_suite(model, exact=exact)
            tol = 0.0 if exact else 1e-12
            passed = (rep["trajectory_decomposition_residual"] <= tol
                      and rep["tilting_residual"] <= tol
                      and rep["duality_residual"] <= tol)
            rep["passed"] = passed
            report["identities"] = rep
            ok &= passed
        elif suite == "convergence":
            rep = convergence_suite(model, horizon=args.horizon,
                                    window=_window(args, model, args.horizon))
            passed = (rep["scalar_geometric_renewal_error"] < 1e-9
                      and rep["scalar_tail_convolution_error"] < 0.1)
            if "sqrt_n_Tn_final" in rep:
                passed &= 0.9 <= rep["sqrt_n_Tn_final"] <= 1.1
                passed &= 0.9 <= rep["rn_tail_final"] <= 1.1
            rep["passed"] = passed
            report["convergence"] = rep
            ok &= passed
        elif suite == "asymptotics":
            from .verify import effective_leak

            pred = classify(model)
            horizon = args.horizon
            window = _window(args, model, horizon)
            rescaled = pred.rate < 1.0 - 1e-9
            table = marginal_sequence(model, 0, 0, horizon, window,
                                      leak_budget=None, rescaled=rescaled)
            fit = fit_rate_exponent(
                values=None if rescaled else table.data["values"],
                log_values=table.data.get("log_values"),
                leaks=effective_leak(table, model, rate=pred.rate),
                fit_window=(max(64, horizon // 8), horizon),
            )
            exp_tol = 0.15 if pred.exponent >= 1.0 else 0.05
            passed = fit.matches(pred.rate, pred.exponent, 1e-3, exp_tol)
            report["asymptotics"] = {
                "predicted": pred.report(),
                "fit": {
                    "rho_hat": fit.rho_hat,
                    "beta_hat": fit.beta_hat,
                    "C_hat": fit.C_hat,
                    "residual_rms": fit.residual_rms,
                    "plateau_series": fit.plateau_series,
                },
                "passed": passed,
            }
            ok &= passed
        else:
            raise ValidationError(f"unknown suite {suite!r}")
    report["passed"] = ok
    _write_json(_outdir(args) / "verify.json", report)
    return EXIT_OK if ok else EXIT_VERIFY_FAIL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="oscillax",
                                 description="oscillating random walk laboratory")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, model=True):
        if model:
            p.add_argument("model", help="model JSON file")
        p.add_argument("--window", "-W", type=int, default=None,
                       help="window half-width (default: diffusive rule)")
        p.add_argument("--horizon", "-n", type=int, default=4096)
        p.add_argument("--seed", "-s", type=int, default=20240817)
        p.add_argument("--threads", "-j", type=int, default=0,
                       help="worker threads (0 = library default)")
        p.add_argument("--rational", action="store_true",
                       help="exact rational arithmetic where supported")
        p.add_argument("--out", "-o", default=None,
                       help="output directory (fallback: $OSCILLAX_OUT, then '.')")

    p = sub.add_parser("classify", help="regime classification report")
    common(p)
    p.set_defaults(fn=cmd_classify)

    p = sub.add_parser("evolve", help="P_x[X_n=y] sequence to CSV")
    common(p)
    p.add_argument("--from", dest="start", type=int, required=True)
    p.add_argument("--to", dest="target", type=int, required=True)
    p.add_argument("--rescaled", action="store_true",
                   help="renormalized log-scale DP (auto for transient cases)")
    p.set_defaults(fn=cmd_evolve)

    p = sub.add_parser("kernel", help="switching kernels Q_n and renewal T_n to CSV")
    common(p)
    p.set_defaults(fn=cmd_kernel, horizon=256)

    p = sub.add_parser("spectrum", help="dominant eigenpair of the switching kernel")
    common(p)
    p.add_argument("--weight", choices=["auto", "polynomial", "exponential"],
                   default="auto")
    p.add_argument("--delta", type=float, default=None)
    p.set_defaults(fn=cmd_spectrum)

    p = sub.add_parser("verify", help="identity/convergence/asymptotics suites")
    common(p)
    p.add_argument("--suite", choices=["identities", "convergence", "asymptotics", "all"],
                   default="all")
    p.add_argument("--float-mode", action="store_true",
                   help="force float arithmetic in the identity suite")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("simulate", help="Monte Carlo sampling of the walk")
    common(p)
    p.add_argument("--from", dest="start", type=int, default=0)
    p.add_argument("--paths", type=int, default=100_000)
    p.set_defaults(fn=cmd_simulate, horizon=50)

    p = sub.add_parser("fixtures", help="write the shipped FIX-* model files")
    common(p, model=False)
    p.set_defaults(fn=cmd_fixtures)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads and args.threads > 0:
        os.environ.setdefault("OMP_NUM_THREADS", str(args.threads))
    try:
        return args.fn(args)
    except (ValidationError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (NoConvergence, PlateauNotReached, SequenceTooNoisy, LeakDominated) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except OscillaxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
