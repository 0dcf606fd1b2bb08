"""Run every shipped config into runs/<name> and render its plots.

    python scripts/run_all.py [--jobs K] [--only fig3a,violations]
"""

import argparse
from pathlib import Path

from ope_abstract.bench.config import load_config
from ope_abstract.bench.experiments import run_experiment, write_report
from ope_abstract.bench.plots import emit_plots

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--only", default="", help="comma-separated config names (file stems or 'name' fields)")
    ap.add_argument("--out", type=Path, default=ROOT / "runs")
    args = ap.parse_args()
    wanted = {s for s in args.only.split(",") if s}
    for path in sorted((ROOT / "configs").glob("*.json")):
        cfg = load_config(path)
        if wanted and path.stem not in wanted and cfg.name not in wanted:
            continue
        out = args.out / (cfg.name or path.stem)
        report = run_experiment(cfg, jobs=args.jobs)
        write_report(report, out)
        plots = emit_plots(out)
        status = "ok" if report.passed else "CHECKS FAILED"
        print(f"{path.stem:<28} {report.wall_clock:7.1f}s  {status}  -> {out} ({len(plots)} plots)")


if __name__ == "__main__":
    main()
