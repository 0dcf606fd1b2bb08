"""Experiment configuration, loaded from JSON that mirrors the dataclass."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from ..dice import DiceConfig, dice_config_from_dict, dice_config_to_dict
from ..domains import TwoPathVariant
from ..estimators import EstimatorKind

DEFAULT_LR_GRID = (5e-5, 1e-4, 3e-4, 7e-4, 1e-3)
DEFAULT_BATCH_SIZES = (5, 10, 50, 100, 300)


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


class ExperimentKind(str, enum.Enum):
    TRUE_RATIO_MSE = "TrueRatioMse"
    RATIO_CORRELATION = "RatioCorrelation"
    VIOLATION_SUITE = "ViolationSuite"
    DICE_MSE_SWEEP = "DiceMseSweep"
    HYPERPARAM_GRID = "HyperparamGrid"
    THEOREM_SUITE = "TheoremSuite"


DEFAULT_ESTIMATORS = {
    ExperimentKind.TRUE_RATIO_MSE: (EstimatorKind.GROUND_TRUE, EstimatorKind.ABSTRACT_TRUE),
    ExperimentKind.RATIO_CORRELATION: (EstimatorKind.ABSTRACT_DICE,),
    ExperimentKind.VIOLATION_SUITE: (EstimatorKind.ABSTRACT_DICE,),
    ExperimentKind.DICE_MSE_SWEEP: (EstimatorKind.GROUND_DICE, EstimatorKind.ABSTRACT_DICE),
    ExperimentKind.HYPERPARAM_GRID: (EstimatorKind.GROUND_DICE, EstimatorKind.ABSTRACT_DICE),
    ExperimentKind.THEOREM_SUITE: (),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment. ``estimators`` empty means the kind's default set.

    ``weighted`` None uses self-normalized estimates for DICE ratios and
    the plain average for exact ratios. ``mse_mode`` is auto, plain or
    relative; auto picks plain when both policies have the same value.
    """

    kind: ExperimentKind
    name: str = ""
    domain: str = "twopath"
    variant: TwoPathVariant = TwoPathVariant.BASELINE
    variants: tuple = tuple(v.value for v in TwoPathVariant)
    batch_sizes: tuple = DEFAULT_BATCH_SIZES
    horizon: int = 100
    n_trials: int = 15
    seed: int = 0
    estimators: tuple = ()
    dice: DiceConfig = field(default_factory=DiceConfig)
    lr_grid: tuple = DEFAULT_LR_GRID
    weighted: Optional[bool] = None
    discounted: bool = False
    mse_mode: str = "auto"
    n_instances: int = 500
    out_dir: str = "runs/out"

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", ExperimentKind(self.kind))
            object.__setattr__(self, "variant", TwoPathVariant(self.variant))
            object.__setattr__(self, "variants", tuple(TwoPathVariant(v).value for v in self.variants))
            est = tuple(EstimatorKind(e) for e in self.estimators) or DEFAULT_ESTIMATORS[self.kind]
            object.__setattr__(self, "estimators", est)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if isinstance(self.dice, dict):
            try:
                object.__setattr__(self, "dice", dice_config_from_dict(self.dice))
            except (TypeError, ValueError) as exc:
                raise ConfigError(str(exc)) from None
        object.__setattr__(self, "batch_sizes", tuple(int(b) for b in self.batch_sizes))
        object.__setattr__(self, "lr_grid", tuple(float(x) for x in self.lr_grid))
        if self.domain != "twopath":
            raise ConfigError(f"unknown domain {self.domain!r} (available: twopath)")
        if self.n_trials < 1:
            raise ConfigError("n_trials must be >= 1")
        if not self.batch_sizes or min(self.batch_sizes) < 1:
            raise ConfigError("batch_sizes must be a non-empty list of positive sizes")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.mse_mode not in ("auto", "plain", "relative"):
            raise ConfigError("mse_mode must be auto, plain or relative")
        if not self.lr_grid or min(self.lr_grid) <= 0:
            raise ConfigError("lr_grid must hold positive learning rates")
        if self.n_instances < 1:
            raise ConfigError("n_instances must be >= 1")
        if not self.variants:
            raise ConfigError("variants must not be empty")

    @property
    def label(self) -> str:
        return self.name or self.kind.value

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "dice":
                v = dice_config_to_dict(v)
            elif isinstance(v, enum.Enum):
                v = v.value
            elif isinstance(v, tuple):
                v = [x.value if isinstance(x, enum.Enum) else x for x in v]
            out[f.name] = v
        return out

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    if "kind" not in doc:
        raise ConfigError("config needs a 'kind'")
    try:
        return ExperimentConfig(**doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return config_from_dict(doc)
