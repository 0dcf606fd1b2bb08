"""``ope-abstract`` command line entry point.

Exit codes: 0 success, 1 property failure, 2 config error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, ExperimentKind, load_config
from .experiments import run_experiment, write_report
from .plots import emit_plots

EXIT_OK, EXIT_PROPERTY, EXIT_CONFIG = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ope-abstract", description="Abstract-state OPE experiments on tabular MDPs.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a JSON config")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--out", type=Path, help="output directory (overrides out_dir)")
    run.add_argument("--seed", type=int, help="master seed (overrides seed)")
    run.add_argument("--jobs", type=int, default=1, help="worker processes for independent cells")
    run.add_argument("--no-plots", action="store_true")

    ver = sub.add_parser("verify-theorems", help="run the exact property battery")
    ver.add_argument("--instances", type=int, default=500)
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--out", type=Path, help="also write a report directory")

    plot = sub.add_parser("plot", help="render SVGs from an existing report directory")
    plot.add_argument("--report", required=True, type=Path)
    return p


def _finish(report, out, plots: bool) -> int:
    write_report(report, out)
    if plots:
        for path in emit_plots(out):
            print(f"wrote {path}")
    print(f"wrote {out / 'summary.csv'} ({report.wall_clock:.1f}s)")
    return EXIT_OK if report.passed else EXIT_PROPERTY


def _print_properties(report) -> None:
    for row in report.summary:
        status = "PASS" if row["passed"] else "FAIL"
        print(f"{status}  {row['property']:<34} n={row['n_checked']:<5} "
              f"max violation {row['max_violation']:.3g} (tol {row['tol']:g})")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    if args.command == "run":
        try:
            config = load_config(args.config)
            config = config.with_overrides(seed=args.seed, out_dir=str(args.out) if args.out else None)
            if args.jobs < 1:
                raise ConfigError("--jobs must be >= 1")
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        report = run_experiment(config, jobs=args.jobs)
        if config.kind is ExperimentKind.THEOREM_SUITE:
            _print_properties(report)
        elif not report.passed:
            print("experiment checks failed; see summary.csv", file=sys.stderr)
        return _finish(report, Path(config.out_dir), not args.no_plots)

    if args.command == "verify-theorems":
        try:
            config = ExperimentConfig(ExperimentKind.THEOREM_SUITE, seed=args.seed, n_instances=args.instances)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        report = run_experiment(config)
        _print_properties(report)
        if args.out:
            write_report(report, args.out)
        return EXIT_OK if report.passed else EXIT_PROPERTY

    if args.command == "plot":
        if not (args.report / "report.jsonl").exists():
            print(f"config error: no report.jsonl in {args.report}", file=sys.stderr)
            return EXIT_CONFIG
        for path in emit_plots(args.report):
            print(f"wrote {path}")
        return EXIT_OK
    return EXIT_CONFIG  # pragma: no cover


if __name__ == "__main__":
    sys.exit(main())
