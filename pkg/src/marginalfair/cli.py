"""Command line interface.

Subcommands: ``simulate`` (bivariate-normal study), ``generate`` (synthetic
portfolio with stored truth), ``audit`` (two-step fairness audit),
``sensitivity`` (per-grid-point sensitivity report), ``report`` (summarize
a previous audit run). Exit codes: 0 success, 2 validation error, 3
numerical error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .distortion import WeightFunction
from .errors import (
    ConvergenceError,
    DegenerateDenominator,
    EstimationError,
    InvalidInput,
    NoFairRule,
    NumericalError,
    SingularDesign,
    TooFewExceedances,
)
from .pipeline import RunConfig, audit, generate_synthetic_portfolio, simulate
from .sensitivity import SensitivityReport, mc_conditional

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

_NUMERICAL_ERRORS = (
    NumericalError,
    ConvergenceError,
    SingularDesign,
    DegenerateDenominator,
    NoFairRule,
    TooFewExceedances,
    EstimationError,
    np.linalg.LinAlgError,
)


def _parse_rho(text):
    if text == "ev":
        return WeightFunction.expected_value()
    if text.startswith("es:"):
        try:
            level = float(text.split(":", 1)[1])
        except ValueError:
            raise InvalidInput(f"cannot parse expected-shortfall level from {text!r}")
        return WeightFunction.expected_shortfall(level)
    raise InvalidInput(f"--rho must be 'ev' or 'es:<level>', got {text!r}")


def _load_config(args):
    config = RunConfig() if args.config is None else RunConfig.from_json(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    return config


def build_parser():
    parser = argparse.ArgumentParser(
        prog="marginalfair",
        description="Marginally fair decision rules for distortion risk measures",
    )
    parser.add_argument("--config", type=Path, default=None, help="JSON run config")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", type=Path, default=Path("."), help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", help="emit the simulation-study series")

    gen = sub.add_parser("generate", help="draw a synthetic portfolio CSV")
    gen.add_argument("--rows", type=int, default=None, help="number of policies")

    aud = sub.add_parser("audit", help="run the two-step fairness audit")
    aud.add_argument("--data", type=Path, default=None,
                     help="portfolio CSV; generated on the fly when omitted")

    sens = sub.add_parser("sensitivity", help="sensitivity report on the x grid")
    sens.add_argument("--rho", type=str, default="ev", help="ev or es:<level>")
    sens.add_argument("--variant", choices=("marginal", "cascade"), default="marginal")

    rep = sub.add_parser("report", help="print a summary of an audit run")
    rep.add_argument("--run", type=Path, required=True, help="audit output directory")
    return parser


def _cmd_simulate(args):
    config = _load_config(args)
    paths = simulate(config, args.out)
    for name, path in sorted(paths.items()):
        print(f"{name}: {path}")
    return EXIT_OK


def _cmd_generate(args):
    config = _load_config(args)
    rows = args.rows if args.rows is not None else config.n_rows
    csv_path, truth = generate_synthetic_portfolio(config.seed, rows, out_dir=args.out)
    print(f"portfolio: {csv_path}")
    print(f"truth: {csv_path.with_name(csv_path.stem + '_truth.json')}")
    return EXIT_OK


def _cmd_audit(args):
    config = _load_config(args)
    if args.data is None:
        frame, _ = generate_synthetic_portfolio(config.seed, config.n_rows)
    else:
        frame = args.data
    report = audit(config, frame, out_dir=args.out)
    print(json.dumps(report.decision_summary, sort_keys=True, indent=2))
    print(f"gini: {json.dumps(report.gini_indices, sort_keys=True)}")
    print(f"report: {args.out / ('audit_report_' + report.config_hash + '.json')}")
    return EXIT_OK


def _cmd_sensitivity(args):
    config = _load_config(args)
    rho = _parse_rho(args.rho)
    scenario = config.scenario()
    grid = config.grid()
    values, ses = [], []
    for j, x in enumerate(grid):
        est = mc_conditional(scenario, x, rho, variant=args.variant,
                             n_draws=config.mc_draws, seed=config.seed + j)
        values.append(est.sens[0])
        ses.append(est.sens_se[0])
    report = SensitivityReport(
        x=grid,
        values=np.array(values),
        se=np.array(ses),
        method=f"{args.variant}_continuous",
        protected_index=0,
        weight_label=rho.label,
        metadata={"n_draws": config.mc_draws, "seed": config.seed,
                  "config_hash": config.config_hash()},
    )
    args.out.mkdir(parents=True, exist_ok=True)
    tag = config.config_hash()
    csv_path = args.out / f"sensitivity_{args.variant}_{rho.label}_{tag}.csv"
    json_path = args.out / f"sensitivity_{args.variant}_{rho.label}_{tag}.json"
    report.write_csv(csv_path)
    report.write_json(json_path)
    print(f"csv: {csv_path}")
    print(f"json: {json_path}")
    return EXIT_OK


def _cmd_report(args):
    reports = sorted(Path(args.run).glob("audit_report_*.json"))
    if not reports:
        raise InvalidInput(f"no audit report found under {args.run}")
    with open(reports[-1]) as fh:
        doc = json.load(fh)
    print(f"audit report {reports[-1].name} (config {doc['config_hash']})")
    print("\ndecision summary (min / q25 / q50 / q75 / max):")
    for name, s in sorted(doc["decision_summary"].items()):
        print(f"  {name:22s} " + " ".join(f"{s[k]:10.2f}" for k in
                                          ("min", "q25", "q50", "q75", "max")))
    print("\nadjustment summary:")
    for name, s in sorted(doc["adjustment_summary"].items()):
        print(f"  {name:22s} " + " ".join(f"{s[k]:10.2f}" for k in
                                          ("min", "q25", "q50", "q75", "max")))
    print("\ngini indices:")
    for name, value in sorted(doc["gini_indices"].items()):
        print(f"  {name:22s} {value:8.4f}")
    print(f"\nflags: {json.dumps(doc['flags'], sort_keys=True)}")
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "generate": _cmd_generate,
    "audit": _cmd_audit,
    "sensitivity": _cmd_sensitivity,
    "report": _cmd_report,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except InvalidInput as err:
        print(f"validation error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FileNotFoundError, json.JSONDecodeError, KeyError) as err:
        print(f"validation error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except _NUMERICAL_ERRORS as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
