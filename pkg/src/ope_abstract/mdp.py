"""Finite MDPs, tabular policies, trajectory sampling and offline datasets."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Iterator, NamedTuple, Optional

import numpy as np

if TYPE_CHECKING:
    from .abstraction import AbstractionMap

SUM_TOL = 1e-12

# (rng, states, actions, mean_rewards) -> sampled rewards
RewardSampler = Callable[[np.random.Generator, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def _frozen(x, dtype=float) -> np.ndarray:
    arr = np.array(x, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite discounted MDP with deterministic (mean) rewards.

    ``transition[s, a, s']`` is P(s'|s,a), ``reward[s, a]`` is r(s,a) and
    ``initial`` is the start-state distribution d0. Construction only checks
    shapes; use :func:`validate_mdp` for the stochasticity invariants.
    """

    transition: np.ndarray
    reward: np.ndarray
    initial: np.ndarray
    discount: float
    state_names: Optional[tuple] = None
    name: str = "mdp"

    def __post_init__(self):
        P = _frozen(self.transition)
        r = _frozen(self.reward)
        d0 = _frozen(self.initial)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {P.shape}")
        if r.shape != P.shape[:2]:
            raise ValueError(f"reward must have shape {P.shape[:2]}, got {r.shape}")
        if d0.shape != (P.shape[0],):
            raise ValueError(f"initial must have shape ({P.shape[0]},), got {d0.shape}")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "initial", d0)
        object.__setattr__(self, "discount", float(self.discount))
        if self.state_names is not None:
            if len(self.state_names) != P.shape[0]:
                raise ValueError("state_names must have one entry per state")
            object.__setattr__(self, "state_names", tuple(self.state_names))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def state_name(self, s: int) -> str:
        return self.state_names[s] if self.state_names else f"s{s}"

    def with_discount(self, gamma: float) -> "TabularMdp":
        return TabularMdp(self.transition, self.reward, self.initial, gamma, self.state_names, self.name)

    def to_json(self) -> dict:
        doc = {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "P": self.transition.tolist(),
            "r": self.reward.tolist(),
            "d0": self.initial.tolist(),
            "gamma": self.discount,
        }
        if self.state_names:
            doc["names"] = list(self.state_names)
        return doc

    @classmethod
    def from_json(cls, doc: dict, name: str = "mdp") -> "TabularMdp":
        mdp = cls(doc["P"], doc["r"], doc["d0"], doc["gamma"], doc.get("names"), name)
        if mdp.n_states != doc["n_states"] or mdp.n_actions != doc["n_actions"]:
            raise ValueError("n_states/n_actions disagree with the P array")
        return mdp


def save_mdp(mdp: TabularMdp, path) -> None:
    Path(path).write_text(json.dumps(mdp.to_json()))


def load_mdp(path) -> TabularMdp:
    path = Path(path)
    return TabularMdp.from_json(json.loads(path.read_text()), name=path.stem)


@dataclass(frozen=True, eq=False)
class Policy:
    """Stochastic tabular policy, ``probs[s, a] = pi(a|s)``."""

    probs: np.ndarray
    name: str = "pi"

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 2:
            raise ValueError(f"policy table must be 2-d, got shape {p.shape}")
        if np.any(p < 0):
            raise ValueError("policy has negative probabilities")
        bad = np.flatnonzero(np.abs(p.sum(axis=1) - 1.0) > SUM_TOL)
        if bad.size:
            raise ValueError(f"policy rows do not sum to 1 at states {bad.tolist()}")
        object.__setattr__(self, "probs", p)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    @classmethod
    def uniform(cls, n_states: int, n_actions: int, name: str = "uniform") -> "Policy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions), name)


def validate_mdp(mdp: TabularMdp, tol: float = SUM_TOL) -> list[str]:
    """Return a list of violated invariants; an empty list means valid."""
    problems = []
    P = mdp.transition
    if np.any(P < 0):
        for s, a, sp in np.argwhere(P < 0)[:10]:
            problems.append(f"negative transition probability P({sp}|{s},{a})")
    row_sums = P.sum(axis=2)
    for s, a in np.argwhere(np.abs(row_sums - 1.0) > tol):
        problems.append(f"transition row (s={s}, a={a}) sums to {row_sums[s, a]:.12g}, not 1")
    if np.any(mdp.initial < 0):
        problems.append("initial distribution has negative entries")
    if abs(mdp.initial.sum() - 1.0) > tol:
        problems.append(f"initial distribution sums to {mdp.initial.sum():.12g}, not 1")
    for s, a in np.argwhere(mdp.reward < 0):
        problems.append(f"reward r({s},{a}) = {mdp.reward[s, a]:g} violates non-negativity")
    if not 0.0 <= mdp.discount < 1.0:
        problems.append(f"discount {mdp.discount} outside [0, 1)")
    if not np.all(np.isfinite(P)) or not np.all(np.isfinite(mdp.reward)):
        problems.append("non-finite entries in transition or reward")
    return problems


class Transition(NamedTuple):
    state: int
    action: int
    reward: float
    next_state: int
    is_trajectory_start: bool
    timestep: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Offline data: ``m`` trajectories of fixed length ``horizon``.

    Stored column-wise, trajectory-major (all steps of trajectory 0, then
    trajectory 1, ...). ``start_states`` holds one d0 sample per trajectory.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    timesteps: np.ndarray
    trajectory: np.ndarray
    start_states: np.ndarray
    m: int
    horizon: int

    def __post_init__(self):
        for name in ("states", "actions", "next_states", "timesteps", "trajectory", "start_states"):
            object.__setattr__(self, name, _frozen(getattr(self, name), dtype=np.int64))
        object.__setattr__(self, "rewards", _frozen(self.rewards))
        n = self.m * self.horizon
        lengths = {len(getattr(self, k)) for k in ("states", "actions", "rewards", "next_states", "timesteps", "trajectory")}
        if lengths != {n}:
            raise ValueError(f"expected {n} transitions (m*T), got column lengths {sorted(lengths)}")
        if len(self.start_states) != self.m:
            raise ValueError(f"expected {self.m} start states, got {len(self.start_states)}")
        if n and self.timesteps.max() >= self.horizon:
            raise ValueError("timestep out of range for the dataset horizon")

    def __len__(self) -> int:
        return len(self.states)

    def __iter__(self) -> Iterator[Transition]:
        for i in range(len(self)):
            t = int(self.timesteps[i])
            yield Transition(int(self.states[i]), int(self.actions[i]), float(self.rewards[i]),
                             int(self.next_states[i]), t == 0, t)

    @property
    def transitions(self) -> list[Transition]:
        return list(self)

    @property
    def mean_reward(self) -> float:
        """Unweighted average reward, the r-bar of the relative MSE."""
        if len(self) == 0:
            raise ValueError("empty dataset has no mean reward")
        return float(self.rewards.mean())

    @classmethod
    def empty(cls) -> "Dataset":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, np.zeros(0), z, z, z, z, 0, 1)


@dataclass(frozen=True, eq=False)
class AbstractDataset(Dataset):
    """A :class:`Dataset` whose state ids are abstract-state ids."""

    phi: "AbstractionMap" = None
    source: Optional[Dataset] = field(default=None, repr=False)

    def __post_init__(self):
        super().__post_init__()
        if self.phi is None:
            raise ValueError("AbstractDataset requires the abstraction map it was projected with")
        n = self.phi.n_abstract
        for col in (self.states, self.next_states, self.start_states):
            if col.size and (col.min() < 0 or col.max() >= n):
                raise ValueError("abstract state id outside the range of phi")


def _categorical(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    # cdf rows are cumulative probabilities; last column may be 1 - eps.
    idx = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(idx, cdf.shape[1] - 1)


def _rollout(mdp: TabularMdp, policy: Policy, n: int, horizon: int, rng: np.random.Generator,
             reward_sampler: Optional[RewardSampler] = None):
    """Simulate ``n`` trajectories in lock-step; returns (T, n) arrays."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError("policy shape does not match the MDP")
    d0_cdf = np.cumsum(mdp.initial)[None, :]
    pi_cdf = np.cumsum(policy.probs, axis=1)
    P_cdf = np.cumsum(mdp.transition, axis=2)

    S = np.empty((horizon, n), dtype=np.int64)
    A = np.empty((horizon, n), dtype=np.int64)
    R = np.empty((horizon, n))
    SP = np.empty((horizon, n), dtype=np.int64)
    s = _categorical(np.broadcast_to(d0_cdf, (n, mdp.n_states)), rng.random(n))
    for t in range(horizon):
        a = _categorical(pi_cdf[s], rng.random(n))
        sp = _categorical(P_cdf[s, a], rng.random(n))
        r = mdp.reward[s, a]
        if reward_sampler is not None:
            r = reward_sampler(rng, s, a, r)
        S[t], A[t], R[t], SP[t] = s, a, r, sp
        s = sp
    return S, A, R, SP


def derive_seed(master: int, *key: int) -> int:
    """Deterministic 63-bit child seed for ``key`` under ``master``.

    Children are addressed by key rather than drawn in sequence, so adding
    trials or cells never changes the seeds of existing ones.
    """
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def sample_trajectory(mdp: TabularMdp, policy: Policy, horizon: int, rng_seed,
                      reward_sampler: Optional[RewardSampler] = None) -> list[Transition]:
    S, A, R, SP = _rollout(mdp, policy, 1, horizon, _as_rng(rng_seed), reward_sampler)
    return [Transition(int(S[t, 0]), int(A[t, 0]), float(R[t, 0]), int(SP[t, 0]), t == 0, t)
            for t in range(horizon)]


def generate_dataset(mdp: TabularMdp, behavior: Policy, m: int, horizon: int, rng_seed,
                     reward_sampler: Optional[RewardSampler] = None) -> Dataset:
    """Collect ``m`` independent length-``horizon`` trajectories of ``behavior``.

    ``rng_seed`` may be an int, a ``SeedSequence`` or a ``Generator``.
    """
    if m < 1:
        raise ValueError("batch size m must be >= 1")
    S, A, R, SP = _rollout(mdp, behavior, m, horizon, _as_rng(rng_seed), reward_sampler)
    t = np.broadcast_to(np.arange(horizon)[:, None], (horizon, m))
    traj = np.broadcast_to(np.arange(m)[None, :], (horizon, m))
    col = lambda x: np.ascontiguousarray(x.T).ravel()  # noqa: E731
    return Dataset(col(S), col(A), col(R), col(SP), col(t), col(traj), S[0].copy(), m, horizon)


def project_dataset(dataset: Dataset, phi: "AbstractionMap") -> AbstractDataset:
    """Map every state id through ``phi``; actions, rewards and order are kept."""
    g2a = np.asarray(phi.ground_to_abstract)
    for col in (dataset.states, dataset.next_states, dataset.start_states):
        if col.size and col.max() >= len(g2a):
            bad = int(col[col >= len(g2a)][0])
            raise KeyError(f"state id {bad} is not covered by the abstraction map")
    source = dataset.source if isinstance(dataset, AbstractDataset) else dataset
    return AbstractDataset(g2a[dataset.states], dataset.actions, dataset.rewards, g2a[dataset.next_states],
                           dataset.timesteps, dataset.trajectory, g2a[dataset.start_states],
                           dataset.m, dataset.horizon, phi=phi, source=source)


def write_dataset(dataset: Dataset, path, *, gamma: float, domain: str, seed) -> Path:
    """Write one JSON object per transition plus a ``<stem>.header.json`` sidecar."""
    path = Path(path)
    with path.open("w") as fh:
        for i in range(len(dataset)):
            fh.write(json.dumps({
                "s": int(dataset.states[i]), "a": int(dataset.actions[i]), "r": float(dataset.rewards[i]),
                "sp": int(dataset.next_states[i]), "t": int(dataset.timesteps[i]),
                "traj": int(dataset.trajectory[i]),
            }) + "\n")
    header = {"m": dataset.m, "T": dataset.horizon, "gamma": gamma, "domain": domain, "seed": seed}
    header_path = path.with_name(path.stem + ".header.json")
    header_path.write_text(json.dumps(header))
    return header_path


def read_dataset(path) -> tuple[Dataset, dict]:
    path = Path(path)
    header = json.loads(path.with_name(path.stem + ".header.json").read_text())
    rows = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    cols = {k: np.array([row[k] for row in rows]) for k in ("s", "a", "r", "sp", "t", "traj")}
    if not rows:
        return Dataset.empty(), header
    starts = cols["s"][cols["t"] == 0]
    ds = Dataset(cols["s"], cols["a"], cols["r"].astype(float), cols["sp"], cols["t"], cols["traj"],
                 starts, header["m"], header["T"])
    return ds, header

