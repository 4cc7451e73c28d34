"""Command-line entry point: ``causal-agg simulate|estimate|perturb|report|predict``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import harness
from .boosting import AggregateModel
from .errors import CausalAggError, NumericalError, Underidentified, ValidationError
from .sem import PRESETS

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _groups(text: str) -> list[list[str]]:
    """``"a,b;c;d,e"`` -> ``[["a", "b"], ["c"], ["d", "e"]]``."""
    return [[c.strip() for c in g.split(",") if c.strip()] for g in text.split(";")]


def _lambda(text: str) -> float | str:
    if text == "auto":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("lambda must be a number or 'auto'") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="causal-agg", description="Aggregate causal constraints across environments.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run seeded replications of a preset study")
    sim.add_argument("preset", choices=PRESETS)
    sim.add_argument("--n", type=int, default=1000, help="samples per environment")
    sim.add_argument("--reps", type=int, default=100)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--alpha", type=float, default=0.05)
    sim.add_argument("--jobs", type=int, default=None, help="worker processes (default: available cores)")
    sim.add_argument("--target", choices=("I", "II"), default="I", help="response function of boost_sim_* presets")
    sim.add_argument("--n-grid", type=_int_list, default=None, help="sample sizes of the boosting loss curve")
    sim.add_argument("--adjustment-fit", choices=("same", "other"), default="same")
    sim.add_argument("--out", type=Path, default=None)

    est = sub.add_parser("estimate", help="estimate from a study manifest")
    est.add_argument("--manifest", type=Path, required=True)
    est.add_argument("--mode", choices=harness.MODES, default=None)
    est.add_argument("--alpha", type=float, default=None)
    est.add_argument("--lambda", dest="lam", type=_lambda, default=None)
    est.add_argument("--seed", type=int, default=None)
    est.add_argument("--out", type=Path, default=None)

    per = sub.add_parser("perturb", help="inject a binary confounder into covariate groups")
    per.add_argument("csv", type=Path)
    per.add_argument("--groups", type=_groups, required=True, help='column groups, e.g. "a,b;c,d;e,f"')
    per.add_argument("--m", type=float, default=4.0, help="shift magnitude on the response")
    per.add_argument("--seed", type=int, default=0)
    per.add_argument("--response", default=None, help="response column (default: last column)")
    per.add_argument("--out", type=Path, required=True)

    rep = sub.add_parser("report", help="render a JSON report as a table")
    rep.add_argument("report", type=Path)
    rep.add_argument("--csv", type=Path, default=None)

    pre = sub.add_parser("predict", help="evaluate a fitted boosting model on a CSV")
    pre.add_argument("--model", type=Path, required=True)
    pre.add_argument("--csv", type=Path, required=True)
    pre.add_argument("--out", type=Path, default=None)
    return parser


def _predict(args) -> str:
    payload = json.loads(args.model.read_text(encoding="utf-8"))
    model = AggregateModel.from_dict(payload["model"])
    header, values = harness._read_csv(args.csv)
    missing = [c for c in payload["covariates"] if c not in header]
    if missing:
        raise ValidationError(f"{args.csv}: missing covariate columns {missing}")
    X = values[:, [header.index(c) for c in payload["covariates"]]]
    pred = model.predict(X)
    text = "prediction\n" + "".join(f"{float(v)!r}\n" for v in np.asarray(pred))
    if args.out:
        args.out.write_text(text, encoding="utf-8")
        return f"wrote {len(pred)} predictions to {args.out}\n"
    return text


def run(args) -> str:
    if args.command == "simulate":
        report = harness.simulate_command(
            args.preset,
            args.n,
            args.reps,
            args.seed,
            alpha=args.alpha,
            jobs=args.jobs,
            out_dir=args.out,
            target=args.target,
            n_grid=args.n_grid,
            adjustment_fit=args.adjustment_fit,
        )
        return harness.render_report(report)
    if args.command == "estimate":
        report = harness.estimate_command(
            args.manifest, args.mode, alpha=args.alpha, lam=args.lam, seed=args.seed, out_dir=args.out
        )
        return harness.render_report(report)
    if args.command == "perturb":
        manifest = harness.perturb_command(args.csv, args.groups, args.out, m=args.m, seed=args.seed, response=args.response)
        return f"wrote {len(manifest.environments)} environments and {args.out / 'manifest.json'}\n"
    if args.command == "report":
        report = json.loads(args.report.read_text(encoding="utf-8"))
        if args.csv:
            args.csv.write_text(harness.report_csv(report), encoding="utf-8")
        return harness.render_report(report)
    return _predict(args)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        sys.stdout.write(run(args))
    except Underidentified as exc:
        sys.stderr.write(f"error: {exc}\n")
        if exc.diagnosis is not None:
            sys.stderr.write(json.dumps(exc.diagnosis, sort_keys=True, indent=2) + "\n")
        return EXIT_INVALID
    except (ValidationError, OSError, json.JSONDecodeError, KeyError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INVALID
    except NumericalError as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERICAL
    except CausalAggError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
