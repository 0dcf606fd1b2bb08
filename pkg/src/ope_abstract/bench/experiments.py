"""Experiment pipelines behind ``ope-abstract run``.

Every pipeline is split into independent cells (a batch size, a learning
rate, a violation variant). Cells only depend on the config, so they can run
in worker processes and the reduction afterwards is order independent.
Dataset seeds come from (master seed, batch size, trial), so ground and
abstract estimators always see the same datasets, and so do all cells of a
learning-rate grid.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from ..abstraction import check_all
from ..dice import DiceConfig, with_learning_rate
from ..domains import TwoPathVariant, build_twopath
from ..estimators import (ESTIMATE_CSV_COLUMNS, dice_estimates, run_estimator,
                          use_plain_mse)
from ..mdp import derive_seed, generate_dataset
from ..occupancy import abstract_occupancy, behavior_distribution, occupancy, policy_value
from ..theorems import run_properties
from .config import ExperimentConfig, ExperimentKind

log = logging.getLogger(__name__)

Z95 = 1.96
LOG_EPS = 1e-9       # keeps log errors finite when an entry is estimated as 0


@dataclass
class RunReport:
    config: ExperimentConfig
    header: dict
    records: list
    summary: list
    tables: dict = field(default_factory=dict)     # extra CSV name -> rows
    traces: dict = field(default_factory=dict)     # trace CSV name -> rows
    wall_clock: float = 0.0
    paths: list = field(default_factory=list)
    passed: bool = True

    @property
    def kind(self) -> ExperimentKind:
        return self.config.kind


def mean_ci(values) -> tuple[float, float, float, float]:
    """(mean, stderr, low, high) with a normal 95% interval; NaNs are dropped."""
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    if x.size == 0:
        return (float("nan"),) * 4
    mean = float(x.mean())
    se = float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0
    return mean, se, mean - Z95 * se, mean + Z95 * se


def _map(fn, tasks, jobs: int):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def _domain(config: ExperimentConfig, variant=None):
    return build_twopath(variant or config.variant, gamma=config.dice.gamma)


def _datasets(config: ExperimentConfig, mdp, pi_D, batch_size: int):
    seeds = [derive_seed(config.seed, batch_size, i) for i in range(config.n_trials)]
    return seeds, [generate_dataset(mdp, pi_D, batch_size, config.horizon, s) for s in seeds]


def _trace_rows(sol) -> list[dict]:
    return [{"epoch": e, "J": J, "mean_zeta": z, "lambda": lam} for e, J, z, lam in sol.trace]


def _dice_config(config: ExperimentConfig, lr: Optional[float]) -> DiceConfig:
    return config.dice if lr is None else with_learning_rate(config.dice, lr)


# --- OPE estimate cells ---------------------------------------------------------------

def _ope_cell(task) -> dict:
    config, kind, batch_size, lr = task
    mdp, pi_e, pi_D, phi = _domain(config)
    rho_e, rho_D = policy_value(mdp, pi_e), policy_value(mdp, pi_D)
    plain = config.mse_mode == "plain" or (config.mse_mode == "auto" and use_plain_mse(rho_e, rho_D))
    seeds, datasets = _datasets(config, mdp, pi_D, batch_size)
    traces = {}
    if kind.uses_dice:
        cfg = _dice_config(config, lr)
        weighted = True if config.weighted is None else config.weighted
        est, sols = dice_estimates(kind, datasets, pi_e, phi, cfg, weighted, config.discounted)
        records = [dict(estimate=float(e), weighted=weighted, diverged=s.diverged) for e, s in zip(est, sols)]
        tag = f"{kind.value}_m{batch_size}" + ("" if lr is None else f"_lr{lr:g}")
        traces[f"trace_{tag}_trial0"] = _trace_rows(sols[0])
    else:
        recs = run_estimator(kind, datasets, mdp, pi_e, pi_D, phi, config.horizon, seeds,
                             weighted=config.weighted, discounted=config.discounted)
        records = [dict(estimate=r.estimate, weighted=r.weighted, diverged=False) for r in recs]
    out = []
    for i, (rec, seed, d) in enumerate(zip(records, seeds, datasets)):
        err = (rec["estimate"] - rho_e) ** 2
        if not plain:
            err = err / (rho_e - d.mean_reward) ** 2
        row = {"estimator": kind.value, "batch_size": batch_size, "trial": i, "seed": seed,
               "estimate": rec["estimate"], "rho_true": rho_e, "mse": err}
        if lr is not None:
            row["lr"] = lr
        row.update(weighted=rec["weighted"], diverged=rec["diverged"], mean_reward=d.mean_reward)
        out.append(row)
    return {"records": out, "traces": traces, "plain": plain}


def _summarize_ope(records: list, with_lr: bool) -> list[dict]:
    keys = []
    for r in records:
        k = (r["estimator"], r.get("lr"), r["batch_size"])
        if k not in keys:
            keys.append(k)
    rows = []
    for est, lr, m in keys:
        cell = [r for r in records if (r["estimator"], r.get("lr"), r["batch_size"]) == (est, lr, m)]
        mse, se, lo, hi = mean_ci([r["mse"] for r in cell])
        estimates = np.array([r["estimate"] for r in cell])
        row = {"estimator": est}
        if with_lr:
            row["lr"] = lr
        row.update({
            "batch_size": m, "n_trials": len(cell), "n_failed": int(np.sum(~np.isfinite(estimates))),
            "mean_estimate": float(np.nanmean(estimates)) if np.isfinite(estimates).any() else float("nan"),
            "rho_true": cell[0]["rho_true"], "mse": mse, "mse_stderr": se, "ci_low": lo, "ci_high": hi,
        })
        rows.append(row)
    return rows


def robustness_rows(summary: list[dict]) -> list[dict]:
    """max/min MSE across learning rates per (estimator, batch size)."""
    out = []
    cells = sorted({(r["estimator"], r["batch_size"]) for r in summary}, key=lambda k: (k[1], k[0]))
    for est, m in cells:
        vals = [(r["lr"], r["mse"]) for r in summary if (r["estimator"], r["batch_size"]) == (est, m)]
        mses = np.array([v for _, v in vals])
        lo, hi = float(np.min(mses)), float(np.max(mses))
        out.append({"estimator": est, "batch_size": m, "n_lr": len(vals),
                    "best_lr": vals[int(np.argmin(mses))][0], "worst_lr": vals[int(np.argmax(mses))][0],
                    "min_mse": lo, "max_mse": hi, "spread": hi / lo if lo > 0 else float("inf")})
    return out


# --- density (ratio correlation) cells --------------------------------------------------

def density_truth(mdp, pi_e, pi_D, phi, horizon: int, abstract: bool, discounted: bool = False):
    """(true d_{pi_e}, exact data distribution d_D) over the space the estimator works in."""
    d_e = occupancy(mdp, pi_e)
    d_D = behavior_distribution(mdp, pi_D, horizon, discounted)
    if abstract:
        d_e, d_D = abstract_occupancy(d_e, phi), abstract_occupancy(d_D, phi)
    return d_e.dist, d_D.dist


def empirical_distribution(dataset, phi, shape) -> np.ndarray:
    """Visit frequencies of (state, action) in the data, abstract ids when ``phi`` is given."""
    states = dataset.states if phi is None else phi.ground_to_abstract[dataset.states]
    counts = np.bincount(states * shape[1] + dataset.actions, minlength=shape[0] * shape[1])
    return counts.reshape(shape) / len(dataset)


def _density_cell(task) -> dict:
    config, variant, kind, batch_size = task
    mdp, pi_e, pi_D, phi = _domain(config, variant)
    d_true, d_D = density_truth(mdp, pi_e, pi_D, phi, config.horizon, kind.is_abstract, config.discounted)
    seeds, datasets = _datasets(config, mdp, pi_D, batch_size)
    _, sols = dice_estimates(kind, datasets, pi_e, phi, config.dice, discounted=config.discounted)
    out = []
    for i, (sol, seed, data) in enumerate(zip(sols, seeds, datasets)):
        zeta = np.full(d_D.shape, np.nan) if sol.diverged else np.asarray(sol.ratios.ratios)
        d_emp = empirical_distribution(data, phi if kind.is_abstract else None, d_D.shape)
        for s, a in np.ndindex(*d_D.shape):
            out.append({"variant": TwoPathVariant(variant).value, "estimator": kind.value,
                        "batch_size": batch_size, "trial": i, "seed": seed, "state": s, "action": a,
                        "d_true": float(d_true[s, a]), "d_hat": float(zeta[s, a] * d_emp[s, a]),
                        "zeta_hat": float(zeta[s, a]), "d_data": float(d_emp[s, a]),
                        "d_data_exact": float(d_D[s, a]), "diverged": sol.diverged})
    traces = {f"trace_{TwoPathVariant(variant).value}_{kind.value}_m{batch_size}_trial0": _trace_rows(sols[0])}
    return {"records": out, "traces": traces}


def _summarize_density(records: list) -> list[dict]:
    keys = []
    for r in records:
        k = (r["variant"], r["estimator"], r["batch_size"], r["state"], r["action"])
        if k not in keys:
            keys.append(k)
    rows = []
    for variant, est, m, s, a in keys:
        cell = [r for r in records if (r["variant"], r["estimator"], r["batch_size"], r["state"], r["action"])
                == (variant, est, m, s, a)]
        d_true = cell[0]["d_true"]
        d_hat = np.array([r["d_hat"] for r in cell])
        mean, se, lo, hi = mean_ci(d_hat)
        rows.append({"variant": variant, "estimator": est, "batch_size": m, "state": s, "action": a,
                     "n_trials": len(cell), "d_true": d_true, "d_hat_mean": mean, "ci_low": lo, "ci_high": hi,
                     "abs_err_of_mean": abs(mean - d_true),
                     "log_err_of_mean": abs(float(np.log((mean + LOG_EPS) / (d_true + LOG_EPS)))),
                     "mean_abs_err": float(np.nanmean(np.abs(d_hat - d_true)))})
    return rows


def violation_rows(config: ExperimentConfig, entries: list[dict]) -> list[dict]:
    """Per-variant assumption checks and the ratio-estimation error.

    The error is the mean over (state, action) entries of
    |log(mean d-hat / d)|, the distance from the diagonal on a log-log
    correlation plot. Densities on TwoPath span five orders of magnitude, so
    an absolute gap would only see the absorbing state.
    """
    rows = []
    for v in config.variants:
        variant = TwoPathVariant(v)
        mdp, pi_e, _, phi = _domain(config, variant)
        reports = check_all(mdp, pi_e, phi)
        failed = {r.assumption for r in reports if not r.holds}
        cell = [e for e in entries if e["variant"] == variant.value]
        rows.append({
            "variant": variant.value,
            "designated": ";".join(str(a) for a in sorted(variant.violates)) or "none",
            "assumption1": reports[0].holds, "assumption2": reports[1].holds, "assumption3": reports[2].holds,
            "checks_as_designed": failed == set(variant.violates),
            "error": float(np.mean([e["log_err_of_mean"] for e in cell])),
            "max_abs_err": max(e["abs_err_of_mean"] for e in cell),
            "mean_abs_err": float(np.mean([e["mean_abs_err"] for e in cell])),
            "n_trials": cell[0]["n_trials"],
        })
    base = next((r["error"] for r in rows if r["variant"] == TwoPathVariant.BASELINE.value), None)
    for r in rows:
        r["exceeds_baseline"] = "" if base is None or r["variant"] == "baseline" else bool(r["error"] > base)
    return rows


# --- drivers ----------------------------------------------------------------------------

def _header(config: ExperimentConfig, **extra) -> dict:
    return {"kind": config.kind.value, "name": config.label, "config": config.to_dict(), **extra}


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> RunReport:
    """Run one configured pipeline; nothing is written to disk here."""
    t0 = time.perf_counter()
    kind = config.kind
    if kind is ExperimentKind.THEOREM_SUITE:
        report = run_theorem_suite(config)
    elif kind is ExperimentKind.HYPERPARAM_GRID:
        report = run_hyperparam_grid(config, jobs)
    elif kind in (ExperimentKind.TRUE_RATIO_MSE, ExperimentKind.DICE_MSE_SWEEP):
        tasks = [(config, est, m, None) for m in config.batch_sizes for est in config.estimators]
        cells = _map(_ope_cell, tasks, jobs)
        records = [r for c in cells for r in c["records"]]
        metric = "plain" if cells[0]["plain"] else "relative"
        report = RunReport(config, _header(config, metric=metric), records, _summarize_ope(records, False),
                           tables={"estimates": [{k: r[k] for k in ESTIMATE_CSV_COLUMNS} for r in records]},
                           traces={k: v for c in cells for k, v in c["traces"].items()})
    elif kind is ExperimentKind.RATIO_CORRELATION:
        tasks = [(config, config.variant, est, m) for m in config.batch_sizes for est in config.estimators]
        cells = _map(_density_cell, tasks, jobs)
        records = [r for c in cells for r in c["records"]]
        report = RunReport(config, _header(config, density_reference="exact data distribution"), records,
                           _summarize_density(records), traces={k: v for c in cells for k, v in c["traces"].items()})
    elif kind is ExperimentKind.VIOLATION_SUITE:
        m = config.batch_sizes[0]
        tasks = [(config, v, est, m) for v in config.variants for est in config.estimators]
        cells = _map(_density_cell, tasks, jobs)
        records = [r for c in cells for r in c["records"]]
        entries = _summarize_density(records)
        summary = violation_rows(config, entries)
        ok = all(r["checks_as_designed"] for r in summary) and all(
            r["exceeds_baseline"] in ("", True) for r in summary)
        report = RunReport(config, _header(config, error_metric="mean entry |log(mean d_hat / d)|", batch_size=m),
                           records, summary, tables={"entries": entries},
                           traces={k: v for c in cells for k, v in c["traces"].items()}, passed=ok)
    else:  # pragma: no cover
        raise ValueError(kind)
    report.wall_clock = time.perf_counter() - t0
    return report


def run_hyperparam_grid(config: ExperimentConfig, jobs: int = 1) -> RunReport:
    """OPE MSE per (estimator, learning rate, batch size) plus the max/min spread."""
    tasks = [(config, est, m, lr) for lr in config.lr_grid for m in config.batch_sizes for est in config.estimators]
    cells = _map(_ope_cell, tasks, jobs)
    records = [r for c in cells for r in c["records"]]
    summary = _summarize_ope(records, True)
    spread = robustness_rows(summary)
    metric = "plain" if cells[0]["plain"] else "relative"
    return RunReport(config, _header(config, metric=metric, robustness=spread), records, summary,
                     tables={"robustness": spread,
                             "estimates": [{k: r[k] for k in ESTIMATE_CSV_COLUMNS} for r in records]},
                     traces={k: v for c in cells for k, v in c["traces"].items()})


def run_theorem_suite(config: ExperimentConfig | None = None, seed: int = 0, n_instances: int = 500) -> RunReport:
    if config is None:
        config = ExperimentConfig(ExperimentKind.THEOREM_SUITE, seed=seed, n_instances=n_instances)
    results = run_properties(config.seed, config.n_instances)
    rows = [r.as_row() for r in results]
    return RunReport(config, _header(config), rows, rows, passed=all(r.passed for r in results))


# --- output -----------------------------------------------------------------------------

def write_csv(rows: list[dict], path: Path) -> Path:
    path = Path(path)
    cols = list(rows[0].keys()) if rows else []
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return path


def _json_default(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.bool_):
        return bool(x)
    raise TypeError(type(x).__name__)


def write_report(report: RunReport, out_dir) -> list[Path]:
    """report.jsonl (header line + one record per line), summary.csv and extra tables."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "report.jsonl", write_csv(report.summary, out / "summary.csv")]
    for name, rows in report.tables.items():
        paths.append(write_csv(rows, out / f"{name}.csv"))
    if report.traces:
        tdir = out / "traces"
        tdir.mkdir(exist_ok=True)
        for name, rows in report.traces.items():
            paths.append(write_csv(rows, tdir / f"{name}.csv"))
    header = dict(report.header, wall_clock_s=round(report.wall_clock, 3), passed=report.passed,
                  files=[str(p.relative_to(out)) for p in paths])
    with (out / "report.jsonl").open("w") as fh:
        fh.write(json.dumps({"header": header}, default=_json_default) + "\n")
        for r in report.records:
            fh.write(json.dumps(r, default=_json_default) + "\n")
    report.paths = [str(p) for p in paths]
    return paths


def read_header(out_dir) -> dict:
    with (Path(out_dir) / "report.jsonl").open() as fh:
        first = fh.readline()
    return json.loads(first)["header"]


def with_out_dir(config: ExperimentConfig, out_dir) -> ExperimentConfig:
    return replace(config, out_dir=str(out_dir))
