"""Marginalized importance sampling estimators and the OPE error metrics.

Estimators take a dataset and a ratio function. A ratio function is anything
that maps integer arrays (states, actions) to non-negative weights: an exact
:class:`RatioTable`, a fitted :class:`DiceSolution` or a plain (S, A) table.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .abstraction import AbstractionMap, build_abstract_policy, weights_from_dataset
from .dice import DiceConfig, DiceSolution, dice_fit_many
from .mdp import AbstractDataset, Dataset, Policy, TabularMdp, derive_seed, generate_dataset, project_dataset
from .occupancy import RatioTable, abstract_ratios, policy_value, true_ratios

RatioFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]
RatioLike = Union[RatioTable, DiceSolution, np.ndarray, RatioFunction]

PLAIN_MSE_GAP = 1e-6


class EstimatorKind(str, enum.Enum):
    GROUND_TRUE = "GroundTrue"
    ABSTRACT_TRUE = "AbstractTrue"
    GROUND_DICE = "GroundDice"
    ABSTRACT_DICE = "AbstractDice"

    @property
    def is_abstract(self) -> bool:
        return self in (EstimatorKind.ABSTRACT_TRUE, EstimatorKind.ABSTRACT_DICE)

    @property
    def uses_dice(self) -> bool:
        return self in (EstimatorKind.GROUND_DICE, EstimatorKind.ABSTRACT_DICE)


@dataclass(frozen=True)
class EstimateRecord:
    estimate: float
    n_samples: int
    dataset_seed: int
    estimator_kind: EstimatorKind
    weighted: bool = False


def as_ratio_function(ratios: RatioLike) -> RatioFunction:
    if isinstance(ratios, DiceSolution):
        return ratios.ratios
    if isinstance(ratios, np.ndarray):
        table = ratios
        return lambda s, a: table[s, a]
    if callable(ratios):
        return ratios
    raise TypeError(f"not a ratio function: {type(ratios).__name__}")


def _weights(dataset: Dataset, ratios: RatioLike) -> np.ndarray:
    if len(dataset) == 0:
        raise ValueError("cannot estimate from an empty dataset")
    z = np.asarray(as_ratio_function(ratios)(dataset.states, dataset.actions), dtype=float)
    if np.any(z < 0):
        raise ValueError("ratio function returned negative weights")
    return z


def _step_weights(dataset: Dataset, gamma: Optional[float]) -> np.ndarray:
    if gamma is None:
        raise ValueError("discounted estimation needs gamma")
    return gamma ** dataset.timesteps.astype(float)


def mis_estimate(dataset: Dataset, ratios: RatioLike, discounted: bool = False,
                 gamma: Optional[float] = None) -> float:
    """(1/N) sum_i zeta(s_i, a_i) r_i over all N = m T transitions.

    With ``discounted`` each step is weighted by gamma^t (normalized), which
    is unbiased when the ratios are taken against the discounted sampling
    distribution.
    """
    z = _weights(dataset, ratios)
    if not discounted:
        return float(np.mean(z * dataset.rewards))
    g = _step_weights(dataset, gamma)
    return float(np.sum(g * z * dataset.rewards) / np.sum(g))


def abstract_mis_estimate(dataset: AbstractDataset, ratios: RatioLike, discounted: bool = False,
                          gamma: Optional[float] = None) -> float:
    """Same average as :func:`mis_estimate`, over abstract state ids."""
    if not isinstance(dataset, AbstractDataset):
        raise TypeError("abstract_mis_estimate needs a projected AbstractDataset")
    return mis_estimate(dataset, ratios, discounted, gamma)


def weighted_mis_estimate(dataset: Dataset, ratios: RatioLike, discounted: bool = False,
                          gamma: Optional[float] = None) -> float:
    """Self-normalized estimate sum(zeta r) / sum(zeta); scale invariant in zeta."""
    z = _weights(dataset, ratios)
    if discounted:
        z = z * _step_weights(dataset, gamma)
    total = float(np.sum(z))
    if not total > 0.0:
        raise ValueError("weighted estimate undefined: total ratio weight is zero")
    return float(np.sum(z * dataset.rewards) / total)


def use_plain_mse(rho_e: float, rho_D: float) -> bool:
    """Relative MSE is ill-posed when both policies have (almost) the same value."""
    return abs(rho_e - rho_D) < PLAIN_MSE_GAP


def relative_mse(estimates: Sequence, rho_true: float, rbar_per_dataset: Optional[Sequence[float]] = None,
                 plain: bool = False) -> float:
    """mean_i (rho - est_i)^2 / (rho - rbar_i)^2, or the plain MSE when ``plain``."""
    est = np.array([e.estimate if isinstance(e, EstimateRecord) else e for e in estimates], dtype=float)
    if est.size == 0:
        raise ValueError("need at least one estimate")
    err = (est - rho_true) ** 2
    if plain:
        return float(err.mean())
    if rbar_per_dataset is None or len(rbar_per_dataset) != est.size:
        raise ValueError("relative MSE needs one dataset mean reward per estimate")
    denom = (rho_true - np.asarray(rbar_per_dataset, dtype=float)) ** 2
    if np.any(denom == 0.0):
        raise ValueError("relative MSE has a zero denominator (rho equals a dataset mean reward); use plain=True")
    return float(np.mean(err / denom))


def dice_estimates(kind: EstimatorKind, datasets: Sequence[Dataset], pi_e: Policy, phi: Optional[AbstractionMap],
                   config: DiceConfig, weighted: bool = True, discounted: bool = False):
    """Fit BestDICE (ground) or AbstractBestDICE on every dataset at once.

    The abstract target pi^phi_e is assembled from pi_e with weights counted
    on the ground data, which is exact when pi_e is constant on blocks.
    Returns (estimates, solutions); diverged fits give NaN estimates.
    """
    if kind.is_abstract:
        data = [project_dataset(d, phi) for d in datasets]
        targets = [build_abstract_policy(pi_e, phi, weights_from_dataset(d, phi)) for d in datasets]
    else:
        data = list(datasets)
        targets = [pi_e] * len(data)
    sols = dice_fit_many(data, targets, config)
    est = []
    for sol, d in zip(sols, data):
        if sol.diverged:
            est.append(float("nan"))
            continue
        fn = weighted_mis_estimate if weighted else mis_estimate
        try:
            est.append(fn(d, sol.ratios, discounted, config.gamma))
        except ValueError:
            est.append(float("nan"))
    return est, sols


def true_ratio_estimates(kind: EstimatorKind, datasets: Sequence[Dataset], mdp: TabularMdp, pi_e: Policy,
                         pi_D: Policy, phi: Optional[AbstractionMap], horizon: int, weighted: bool = False,
                         discounted: bool = False) -> list[float]:
    """Estimates with exact ratios against the distribution the data is sampled from."""
    if kind.is_abstract:
        table = abstract_ratios(mdp, pi_e, pi_D, phi, horizon=horizon, discounted=discounted)
        data = [project_dataset(d, phi) for d in datasets]
    else:
        table = true_ratios(mdp, pi_e, pi_D, horizon=horizon, discounted=discounted)
        data = list(datasets)
    fn = weighted_mis_estimate if weighted else mis_estimate
    return [fn(d, table, discounted, mdp.discount) for d in data]


def run_estimator(kind: EstimatorKind | str, datasets: Sequence[Dataset], mdp: TabularMdp, pi_e: Policy,
                  pi_D: Policy, phi: Optional[AbstractionMap], horizon: int, seeds: Sequence[int],
                  dice_config: Optional[DiceConfig] = None, weighted: Optional[bool] = None,
                  discounted: bool = False) -> list[EstimateRecord]:
    kind = EstimatorKind(kind)
    if weighted is None:
        weighted = kind.uses_dice
    if kind.uses_dice:
        est, _ = dice_estimates(kind, datasets, pi_e, phi, dice_config or DiceConfig(gamma=mdp.discount),
                                weighted, discounted)
    else:
        est = true_ratio_estimates(kind, datasets, mdp, pi_e, pi_D, phi, horizon, weighted, discounted)
    return [EstimateRecord(float(e), len(d), int(seed), kind, weighted) for e, d, seed in zip(est, datasets, seeds)]


@dataclass(frozen=True)
class BiasVarianceRow:
    batch_size: int
    mean: float
    bias: float
    variance: float
    mse: float
    stderr: float
    n_trials: int


def bias_variance_report(mdp: TabularMdp, pi_e: Policy, pi_D: Policy, phi: Optional[AbstractionMap],
                         estimator_kind: EstimatorKind | str, batch_sizes: Sequence[int], horizon: int,
                         n_trials: int, seed: int, dice_config: Optional[DiceConfig] = None,
                         weighted: Optional[bool] = None) -> list[BiasVarianceRow]:
    """Moments of an estimator over ``n_trials`` fresh datasets per batch size.

    Dataset seeds depend only on (seed, batch_size, trial).
    """
    if n_trials < 2:
        raise ValueError("n_trials must be >= 2")
    rho = policy_value(mdp, pi_e)
    rows = []
    for m in batch_sizes:
        seeds = [derive_seed(seed, m, i) for i in range(n_trials)]
        datasets = [generate_dataset(mdp, pi_D, m, horizon, s) for s in seeds]
        recs = run_estimator(estimator_kind, datasets, mdp, pi_e, pi_D, phi, horizon, seeds, dice_config, weighted)
        est = np.array([r.estimate for r in recs])
        var = float(est.var(ddof=1))
        rows.append(BiasVarianceRow(int(m), float(est.mean()), float(est.mean() - rho), var,
                                    float(np.mean((est - rho) ** 2)), float(np.sqrt(var / n_trials)), n_trials))
    return rows


ESTIMATE_CSV_COLUMNS = ("estimator", "batch_size", "trial", "seed", "estimate", "rho_true", "mse")


def estimate_csv_row(record: EstimateRecord, batch_size: int, trial: int, rho_true: float) -> dict:
    """One row of the per-trial estimate CSV; ``mse`` is this trial's squared error."""
    return {
        "estimator": record.estimator_kind.value,
        "batch_size": int(batch_size),
        "trial": int(trial),
        "seed": record.dataset_seed,
        "estimate": record.estimate,
        "rho_true": rho_true,
        "mse": (record.estimate - rho_true) ** 2,
    }
