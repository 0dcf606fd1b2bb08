"""SVG figures rendered purely from the CSV files of a report directory."""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .experiments import read_header  # noqa: E402

log = logging.getLogger(__name__)

# fixed ids and no timestamp so identical data gives identical bytes
plt.rcParams["svg.hashsalt"] = "ope-abstract"
SVG_META = {"Date": None}
FLOOR = 1e-300


def _read(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with path.open() as fh:
        return list(csv.DictReader(fh))


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata=SVG_META)
    plt.close(fig)
    return path


def plot_mse_curves(rows: list[dict], path: Path, title: str) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for est in dict.fromkeys(r["estimator"] for r in rows):
        cell = [r for r in rows if r["estimator"] == est]
        m = np.array([float(r["batch_size"]) for r in cell])
        mse = np.maximum([float(r["mse"]) for r in cell], FLOOR)
        lo = np.maximum([float(r["ci_low"]) for r in cell], FLOOR)
        hi = np.maximum([float(r["ci_high"]) for r in cell], FLOOR)
        ax.plot(m, mse, marker="o", label=est)
        ax.fill_between(m, lo, hi, alpha=0.25)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("batch size (# trajectories)")
    ax.set_ylabel("MSE")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def plot_density_scatter(rows: list[dict], path: Path, group: str = "variant") -> Path:
    groups = list(dict.fromkeys(r[group] for r in rows))
    fig, axes = plt.subplots(1, len(groups), figsize=(3.6 * len(groups), 3.6), squeeze=False)
    for ax, g in zip(axes[0], groups):
        cell = [r for r in rows if r[group] == g]
        x = np.array([float(r["d_true"]) for r in cell])
        y = np.array([float(r["d_hat_mean"]) for r in cell])
        lo = np.array([float(r["ci_low"]) for r in cell])
        hi = np.array([float(r["ci_high"]) for r in cell])
        ax.errorbar(x, y, yerr=[np.maximum(y - lo, 0), np.maximum(hi - y, 0)], fmt="o", capsize=3)
        top = max(float(np.nanmax(np.concatenate([x, hi]))), 1e-12) * 1.05
        ax.plot([0, top], [0, top], color="black", lw=1)
        ax.set_xlabel("true d")
        ax.set_ylabel("estimated d")
        ax.set_title(g)
    fig.tight_layout()
    return _save(fig, path)


def plot_hyperparams(rows: list[dict], path: Path) -> Path:
    ests = list(dict.fromkeys(r["estimator"] for r in rows))
    sizes = list(dict.fromkeys(r["batch_size"] for r in rows))
    fig, axes = plt.subplots(1, len(sizes), figsize=(4.5 * len(sizes), 3.6), squeeze=False)
    for ax, m in zip(axes[0], sizes):
        lrs = list(dict.fromkeys(r["lr"] for r in rows if r["batch_size"] == m))
        width = 0.8 / len(ests)
        for k, est in enumerate(ests):
            vals = []
            for lr in lrs:
                r = next(r for r in rows if (r["estimator"], r["batch_size"], r["lr"]) == (est, m, lr))
                vals.append(max(float(r["mse"]), FLOOR))
            ax.bar(np.arange(len(lrs)) + k * width, vals, width, label=est)
        ax.set_xticks(np.arange(len(lrs)) + 0.4 - width / 2)
        ax.set_xticklabels(lrs, rotation=30)
        ax.set_yscale("log")
        ax.set_xlabel("learning rate")
        ax.set_ylabel("MSE")
        ax.set_title(f"m = {m}")
        ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def emit_plots(report_dir) -> list[Path]:
    """Render the figures that fit the report's experiment kind."""
    out = Path(report_dir)
    kind = read_header(out)["kind"]
    summary = _read(out / "summary.csv")
    paths: list[Path] = []
    if not summary:
        log.warning("report in %s has no data; no plots written", out)
        return paths
    if kind in ("TrueRatioMse", "DiceMseSweep"):
        paths.append(plot_mse_curves(summary, out / "mse_vs_batch.svg", kind))
    elif kind == "RatioCorrelation":
        paths.append(plot_density_scatter(summary, out / "correlation.svg", group="estimator"))
    elif kind == "ViolationSuite":
        paths.append(plot_density_scatter(_read(out / "entries.csv"), out / "violation_correlation.svg"))
    elif kind == "HyperparamGrid":
        paths.append(plot_hyperparams(summary, out / "hyperparams.svg"))
    else:
        log.warning("no plots defined for %s reports", kind)
    return paths
