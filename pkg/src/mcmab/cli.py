"""Command-line interface: run experiments, verify oracles, build reports.

Exit codes: 0 on success, 1 on verification failure, 2 on usage or
configuration errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import ConfigError, ExperimentConfig, parse_seed_spec
from .verify import SUITES

USAGE_ERROR = 2
VERIFY_FAILURE = 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcmab",
        description="Budget-allocation bandit simulator and benchmark.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the experiment described by a config file")
    run.add_argument("--config", required=True, help="path to the experiment config")
    run.add_argument("--seeds", help="override: seed count or comma-separated list")
    run.add_argument("--out", help="override: output directory")
    run.add_argument("--threads", type=int, default=1, help="parallel replications")

    ver = sub.add_parser("verify", help="run an oracle verification suite")
    ver.add_argument(
        "suite",
        choices=sorted(SUITES) + ["all"],
        help="which suite to run",
    )
    ver.add_argument("--seed", type=int, default=0, help="suite RNG seed")
    ver.add_argument("--out", help="directory for failure replay files")

    rep = sub.add_parser("report", help="aggregate a trace directory")
    rep.add_argument("trace_dir", help="directory holding trace_seed*.csv files")
    rep.add_argument("--out", help="output directory (defaults to trace_dir)")
    return parser


def _cmd_run(args) -> int:
    try:
        config = ExperimentConfig.from_file(args.config)
    except FileNotFoundError:
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return USAGE_ERROR
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    seeds = None
    if args.seeds:
        try:
            seeds = parse_seed_spec(args.seeds)
        except (ValueError, ConfigError) as exc:
            print(f"error: bad --seeds: {exc}", file=sys.stderr)
            return USAGE_ERROR
    from .runner import run_experiment

    manifest = run_experiment(config, out_dir=args.out, seeds=seeds, threads=args.threads)
    out = args.out or config.output_dir
    print(f"wrote {len(manifest['trace_files'])} trace file(s) and aggregate.csv to {out}")
    return 0


def _cmd_verify(args) -> int:
    names = sorted(SUITES) if args.suite == "all" else [args.suite]
    all_failures = []
    for name in names:
        rng = np.random.default_rng(args.seed)
        failures = SUITES[name](rng)
        status = "ok" if not failures else f"{len(failures)} failure(s)"
        print(f"verify {name}: {status}")
        all_failures.extend(failures)
    if all_failures:
        out = args.out or "."
        os.makedirs(out, exist_ok=True)
        path = os.path.join(out, "verify_failures.json")
        with open(path, "w") as fh:
            json.dump(all_failures, fh, indent=2)
            fh.write("\n")
        print(f"failure instances written to {path} for replay", file=sys.stderr)
        return VERIFY_FAILURE
    return 0


def _cmd_report(args) -> int:
    from .report import make_report

    try:
        result = make_report(args.trace_dir, args.out)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    for line in result["summary"]:
        print(line)
    print(f"aggregate: {result['aggregate_csv']}")
    for fig in result["figures"]:
        print(f"figure: {fig}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "verify":
        return _cmd_verify(args)
    if args.command == "report":
        return _cmd_report(args)
    parser.error(f"unknown command {args.command!r}")
    return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
