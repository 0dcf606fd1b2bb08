"""Repeat the m=5 learning-rate grid over several master seeds.

Prints the max/min MSE spread of both DICE estimators per seed together with
the best and worst MSE, which shows what drives the robustness statistic.

    python scripts/hyperparam_seed_study.py --seeds 0 1 2 3
"""

import argparse
from pathlib import Path

from ope_abstract.bench.config import load_config
from ope_abstract.bench.experiments import run_experiment

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3])
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "hyperparam_grid.json")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    base = load_config(args.config)
    print("seed  estimator     spread   min_mse    max_mse    best_lr  worst_lr")
    wins = 0
    for seed in args.seeds:
        rep = run_experiment(base.with_overrides(seed=seed), jobs=args.jobs)
        rows = {r["estimator"]: r for r in rep.tables["robustness"]}
        for est, r in rows.items():
            print(f"{seed:<5} {est:<13} {r['spread']:.3f}    {r['min_mse']:.3e}  {r['max_mse']:.3e}  "
                  f"{r['best_lr']:<8g} {r['worst_lr']:g}")
        wins += rows["AbstractDice"]["spread"] <= rows["GroundDice"]["spread"]
    print(f"abstract spread <= ground spread in {wins}/{len(args.seeds)} seeds")


if __name__ == "__main__":
    main()
