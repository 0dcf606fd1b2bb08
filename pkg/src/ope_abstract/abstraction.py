"""Partition abstractions, state weightings and the abstract MDP/policy.

Also holds executable checks for the three abstraction assumptions:
reward equality, block-level transition similarity and evaluation-policy
action equality within every abstract state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Optional

import numpy as np

from .mdp import Dataset, Policy, TabularMdp, validate_mdp

DEFAULT_TOL = 1e-9
MAX_WITNESSES = 10
WEIGHT_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class AbstractionMap:
    """Surjective map phi from ground states ``0..n-1`` onto ``0..n_abstract-1``."""

    ground_to_abstract: np.ndarray
    n_abstract: int = -1

    def __post_init__(self):
        g2a = np.array(self.ground_to_abstract, dtype=np.int64)
        if g2a.ndim != 1 or g2a.size == 0:
            raise ValueError("ground_to_abstract must be a non-empty 1-d array")
        if g2a.min() < 0:
            raise ValueError("abstract ids must be non-negative")
        n_abs = int(g2a.max()) + 1 if self.n_abstract < 0 else int(self.n_abstract)
        missing = sorted(set(range(n_abs)) - set(g2a.tolist()))
        if missing or g2a.max() >= n_abs:
            raise ValueError(f"map is not surjective onto [0, {n_abs}); missing {missing}")
        g2a.setflags(write=False)
        object.__setattr__(self, "ground_to_abstract", g2a)
        object.__setattr__(self, "n_abstract", n_abs)

    @classmethod
    def identity(cls, n_states: int) -> "AbstractionMap":
        return cls(np.arange(n_states))

    @property
    def n_ground(self) -> int:
        return len(self.ground_to_abstract)

    def __call__(self, s):
        return self.ground_to_abstract[s]

    def block(self, x: int) -> np.ndarray:
        """Ground states in abstract state ``x`` (phi^-1(x))."""
        return np.flatnonzero(self.ground_to_abstract == x)

    @property
    def blocks(self) -> list[np.ndarray]:
        return [self.block(x) for x in range(self.n_abstract)]

    @property
    def is_identity(self) -> bool:
        return self.n_abstract == self.n_ground

    def aggregation_matrix(self) -> np.ndarray:
        """0/1 matrix M with M[s, x] = 1 iff phi(s) = x."""
        M = np.zeros((self.n_ground, self.n_abstract))
        M[np.arange(self.n_ground), self.ground_to_abstract] = 1.0
        return M

    def merged_pairs(self):
        for blk in self.blocks:
            yield from combinations(blk.tolist(), 2)

    def to_json(self) -> list[int]:
        return self.ground_to_abstract.tolist()

    @classmethod
    def from_json(cls, doc) -> "AbstractionMap":
        if isinstance(doc, dict):
            doc = doc["ground_to_abstract"]
        return cls(doc)


def save_abstraction(phi: AbstractionMap, path) -> None:
    Path(path).write_text(json.dumps(phi.to_json()))


def load_abstraction(path) -> AbstractionMap:
    return AbstractionMap.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class WeightingFunction:
    """Per-block distribution over ground states (``w`` with block sums 1)."""

    weights: np.ndarray
    phi: AbstractionMap

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.shape != (self.phi.n_ground,):
            raise ValueError(f"weights must have shape ({self.phi.n_ground},)")
        if np.any(w < 0) or np.any(w > 1 + WEIGHT_TOL):
            raise ValueError("weights must lie in [0, 1]")
        sums = np.bincount(self.phi.ground_to_abstract, weights=w, minlength=self.phi.n_abstract)
        bad = np.flatnonzero(np.abs(sums - 1.0) > WEIGHT_TOL)
        if bad.size:
            raise ValueError(f"weights do not sum to 1 within abstract states {bad.tolist()}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, phi: AbstractionMap) -> "WeightingFunction":
        sizes = np.bincount(phi.ground_to_abstract, minlength=phi.n_abstract)
        return cls(1.0 / sizes[phi.ground_to_abstract], phi)


@dataclass(frozen=True, eq=False)
class AbstractMdp:
    mdp: TabularMdp
    source: TabularMdp = field(repr=False)
    phi: AbstractionMap = field(repr=False)
    weights: WeightingFunction = field(repr=False)


@dataclass(frozen=True)
class AssumptionReport:
    assumption: int
    holds: bool
    max_violation: float
    tol: float
    witnesses: tuple = ()

    def __str__(self):
        status = "holds" if self.holds else "VIOLATED"
        return f"Assumption {self.assumption}: {status} (max violation {self.max_violation:.3g}, tol {self.tol:g})"


def _report(assumption: int, violations: list, tol: float) -> AssumptionReport:
    # violations: list of (magnitude, witness)
    max_v = max((v for v, _ in violations), default=0.0)
    worst = sorted((item for item in violations if item[0] > tol), key=lambda item: -item[0])
    return AssumptionReport(assumption, max_v <= tol, float(max_v), tol,
                            tuple(w for _, w in worst[:MAX_WITNESSES]))


def check_reward_equality(mdp: TabularMdp, phi: AbstractionMap, tol: float = DEFAULT_TOL) -> AssumptionReport:
    viol = []
    for s1, s2 in phi.merged_pairs():
        for a in range(mdp.n_actions):
            viol.append((abs(mdp.reward[s1, a] - mdp.reward[s2, a]), (s1, s2, a)))
    return _report(1, viol, tol)


def check_transition_similarity(mdp: TabularMdp, phi: AbstractionMap, tol: float = DEFAULT_TOL) -> AssumptionReport:
    # block_P[s, a, x] = sum_{s' in phi^-1(x)} P(s'|s,a)
    block_P = mdp.transition @ phi.aggregation_matrix()
    viol = []
    for s1, s2 in phi.merged_pairs():
        diff = np.abs(block_P[s1] - block_P[s2])
        for a, x in np.ndindex(*diff.shape):
            viol.append((diff[a, x], (s1, s2, a, x)))
    return _report(2, viol, tol)


def check_action_equality(policy: Policy, phi: AbstractionMap, tol: float = DEFAULT_TOL) -> AssumptionReport:
    viol = []
    for s1, s2 in phi.merged_pairs():
        diff = np.abs(policy.probs[s1] - policy.probs[s2])
        a = int(diff.argmax())
        viol.append((diff[a], (s1, s2, a)))
    return _report(3, viol, tol)


def check_all(mdp: TabularMdp, pi_e: Policy, phi: AbstractionMap, tol: float = DEFAULT_TOL) -> list[AssumptionReport]:
    return [check_reward_equality(mdp, phi, tol), check_transition_similarity(mdp, phi, tol),
            check_action_equality(pi_e, phi, tol)]


def block_normalize(mass: np.ndarray, phi: AbstractionMap) -> WeightingFunction:
    """Normalize non-negative ground masses within each block.

    Blocks with zero total mass get uniform weights.
    """
    mass = np.asarray(mass, dtype=float)
    totals = np.bincount(phi.ground_to_abstract, weights=mass, minlength=phi.n_abstract)
    sizes = np.bincount(phi.ground_to_abstract, minlength=phi.n_abstract)
    tot = totals[phi.ground_to_abstract]
    w = np.where(tot > 0, mass / np.where(tot > 0, tot, 1.0), 1.0 / sizes[phi.ground_to_abstract])
    # renormalize to remove rounding drift in the block sums
    w = w / np.bincount(phi.ground_to_abstract, weights=w, minlength=phi.n_abstract)[phi.ground_to_abstract]
    return WeightingFunction(w, phi)


def weights_from_policy(mdp: TabularMdp, policy: Policy, phi: AbstractionMap) -> WeightingFunction:
    """w_pi(s) = d_pi(s) / sum of d_pi over the block of s."""
    from .occupancy import occupancy

    return block_normalize(occupancy(mdp, policy).state_dist, phi)


def weights_from_dataset(dataset: Dataset, phi: AbstractionMap) -> WeightingFunction:
    """Empirical w_D from ground-state visit counts of a (ground) dataset."""
    counts = np.bincount(dataset.states, minlength=phi.n_ground).astype(float)
    return block_normalize(counts, phi)


def _check_weights(w: WeightingFunction, phi: AbstractionMap) -> None:
    if not np.array_equal(w.phi.ground_to_abstract, phi.ground_to_abstract):
        raise ValueError("weighting function was built for a different abstraction map")


def build_abstract_mdp(mdp: TabularMdp, phi: AbstractionMap, w: WeightingFunction) -> AbstractMdp:
    """Project ``mdp`` through ``phi`` using state weights ``w``."""
    _check_weights(w, phi)
    if phi.n_ground != mdp.n_states:
        raise ValueError("abstraction map does not cover the MDP's states")
    M = phi.aggregation_matrix()
    W = M * w.weights[:, None]            # W[s, x] = w(s) [phi(s) = x]
    reward = W.T @ mdp.reward
    P = np.einsum("sx,sap,py->xay", W, mdp.transition, M)
    d0 = M.T @ mdp.initial
    names = None
    if mdp.state_names:
        names = tuple("+".join(mdp.state_names[s] for s in blk) for blk in phi.blocks)
    abs_mdp = TabularMdp(P, reward, d0, mdp.discount, names, f"{mdp.name}/phi")
    problems = validate_mdp(abs_mdp, tol=1e-9)
    if problems:
        raise ValueError(f"abstract MDP is invalid: {problems}")
    return AbstractMdp(abs_mdp, mdp, phi, w)


def build_abstract_policy(policy: Policy, phi: AbstractionMap, w: WeightingFunction) -> Policy:
    """pi^phi(a|x) = sum over the block of x of w(s) pi(a|s)."""
    _check_weights(w, phi)
    W = phi.aggregation_matrix() * w.weights[:, None]
    probs = W.T @ policy.probs
    probs = probs / probs.sum(axis=1, keepdims=True)
    return Policy(probs, f"{policy.name}^phi")


def lift_policy(abstract_policy: Policy, phi: AbstractionMap, name: Optional[str] = None) -> Policy:
    """Ground policy that acts as ``abstract_policy`` on phi(s)."""
    return Policy(abstract_policy.probs[phi.ground_to_abstract], name or abstract_policy.name)
