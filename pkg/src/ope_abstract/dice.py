"""BestDICE / AbstractBestDICE saddle-point solver for tabular problems.

The objective, for a batch of transitions (s, a, s') and start states s0, is

    J(nu, zeta, lam) = -E[zeta^2 / 2]
                       + E[zeta(s,a) (gamma E_{a'~pi}[nu(s',a')] - nu(s,a) - lam)]
                       + (1 - gamma) E_{s0, a0~pi}[nu(s0,a0)] + lam

minimized over (nu, lam) and maximized over zeta >= 0. Positivity is enforced
by zeta = u^2. The solver runs the same thing for ground data (states are
ground ids) and abstract data (states are phi(s)); only the target policy
table and the state ids differ.

Expectations are taken with a weight table W[s, a, s'] (empirical
frequencies, or exact probabilities for oracle checks), so gradients are
exact for whatever batch is supplied. Several independent problems of the
same shape can be solved in one vectorized run along a leading axis.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .mdp import AbstractDataset, Dataset, Policy, TabularMdp
from .occupancy import OccupancyMeasure, RatioTable

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class Parameterization(str, enum.Enum):
    TABULAR = "tabular"
    LINEAR = "linear"


class OptimizerKind(str, enum.Enum):
    SGD = "sgd"
    ADAM = "adam"


class DiceDivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class DiceConfig:
    alpha_nu: float = 3e-4               # middle of the default lr grid
    alpha_zeta: float = 3e-4
    alpha_lambda: float = 1e-3
    gamma: float = 0.999
    epochs: int = 100_000
    minibatch: Optional[int] = None      # None: every step uses the whole dataset
    parameterization: Parameterization = Parameterization.TABULAR
    optimizer: OptimizerKind = OptimizerKind.ADAM
    seed: int = 0
    log_every: int = 1000
    divergence_threshold: float = 1e8
    converge_tol: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "parameterization", Parameterization(self.parameterization))
        object.__setattr__(self, "optimizer", OptimizerKind(self.optimizer))
        for name in ("alpha_nu", "alpha_zeta", "alpha_lambda"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.minibatch is not None and self.minibatch < 1:
            raise ValueError("minibatch must be >= 1")


@dataclass(frozen=True, eq=False)
class DiceBatch:
    """Expectation weights for the DICE objective.

    ``weights[s, a, s']`` sums to one over the batch, ``start[s]`` is the
    start-state distribution and ``policy[s, a]`` the target policy queried
    at next and start states.
    """

    weights: np.ndarray
    start: np.ndarray
    policy: np.ndarray
    gamma: float

    def __post_init__(self):
        W = np.asarray(self.weights, dtype=float)
        if W.ndim != 3 or W.shape[0] != W.shape[2]:
            raise ValueError("weights must have shape (S, A, S)")
        if self.policy.shape != W.shape[:2]:
            raise ValueError(f"target policy shape {self.policy.shape} does not match batch {W.shape[:2]}")
        if W.sum() <= 0:
            raise ValueError("DICE batch is empty")
        if np.sum(self.start) <= 0:
            raise ValueError("DICE batch needs at least one start state")

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape[:2]

    @property
    def sa_weights(self) -> np.ndarray:
        return self.weights.sum(axis=2)

    @classmethod
    def from_arrays(cls, states, actions, next_states, start_states, policy: Policy | np.ndarray,
                    gamma: float) -> "DiceBatch":
        pi = policy.probs if isinstance(policy, Policy) else np.asarray(policy, dtype=float)
        S, A = pi.shape
        states = np.asarray(states, dtype=np.int64)
        if states.size == 0:
            raise ValueError("DICE batch is empty")
        key = (states * A + np.asarray(actions)) * S + np.asarray(next_states)
        W = np.bincount(key, minlength=S * A * S).reshape(S, A, S) / states.size
        start = np.bincount(np.asarray(start_states, dtype=np.int64), minlength=S).astype(float)
        if start.sum() <= 0:
            raise ValueError("DICE batch needs at least one start state")
        return cls(W, start / start.sum(), pi, gamma)

    @classmethod
    def from_dataset(cls, dataset: Dataset, policy: Policy | np.ndarray, gamma: float) -> "DiceBatch":
        return cls.from_arrays(dataset.states, dataset.actions, dataset.next_states, dataset.start_states,
                               policy, gamma)

    @classmethod
    def from_transitions(cls, transitions, start_samples, policy: Policy | np.ndarray, gamma: float) -> "DiceBatch":
        rows = np.array([(t.state, t.action, t.next_state) for t in transitions], dtype=np.int64).reshape(-1, 3)
        return cls.from_arrays(rows[:, 0], rows[:, 1], rows[:, 2], start_samples, policy, gamma)

    @classmethod
    def exact(cls, mdp: TabularMdp, data_dist: OccupancyMeasure | np.ndarray, policy: Policy,
              gamma: Optional[float] = None) -> "DiceBatch":
        """Population batch: (s, a) ~ data_dist, s' ~ P(.|s,a), s0 ~ d0."""
        d = data_dist.dist if isinstance(data_dist, OccupancyMeasure) else np.asarray(data_dist)
        W = d[:, :, None] * mdp.transition
        return cls(W, mdp.initial, policy.probs, mdp.discount if gamma is None else gamma)


@dataclass(frozen=True, eq=False)
class DiceState:
    """nu parameters, raw zeta parameters (zeta = zeta_raw**2) and lambda."""

    nu_params: np.ndarray
    zeta_raw: np.ndarray
    lam: float

    @classmethod
    def initial(cls, n_states: int, n_actions: int) -> "DiceState":
        return cls(np.zeros((n_states, n_actions)), np.ones((n_states, n_actions)), 0.0)

    @classmethod
    def from_tables(cls, nu: np.ndarray, zeta: np.ndarray, lam: float = 0.0) -> "DiceState":
        zeta = np.asarray(zeta, dtype=float)
        if np.any(zeta < 0):
            raise ValueError("zeta must be non-negative")
        return cls(np.asarray(nu, dtype=float), np.sqrt(zeta), float(lam))


@dataclass(frozen=True)
class DiceGradients:
    nu: np.ndarray
    zeta_raw: np.ndarray
    lam: float


@dataclass(frozen=True, eq=False)
class DiceSolution:
    state: DiceState
    ratios: RatioTable
    trace: list = field(default_factory=list)   # (epoch, J, mean_zeta, lambda)
    converged: bool = False
    diverged: bool = False
    message: str = ""
    features: Optional[tuple] = field(default=None, repr=False)

    @property
    def mean_zeta(self) -> float:
        return self.trace[-1][2] if self.trace else float("nan")


# --- batched tabular core ------------------------------------------------------------
# Shapes: W (B, S, A, S), start (B, S), pi (B, S, A), nu/zeta (B, S, A), lam (B,).

def _terms(nu, zeta, lam, W, start, pi, gamma):
    B, S, A, _ = W.shape
    d = W.sum(axis=3)
    v_next = (pi * nu).sum(axis=2)                                   # (B, S)
    bellman = np.matmul(W.reshape(B, S * A, S), v_next[:, :, None]).reshape(B, S, A)
    lam3 = lam[:, None, None]
    J = (-0.5 * (d * zeta ** 2).sum(axis=(1, 2))
         + (zeta * (gamma * bellman - d * (nu + lam3))).sum(axis=(1, 2))
         + (1.0 - gamma) * (start * v_next).sum(axis=1) + lam)
    return J, d, bellman


def _table_grads(nu, zeta, lam, W, start, pi, gamma):
    """Exact gradients of J w.r.t. the nu table, the zeta table and lambda."""
    B, S, A, _ = W.shape
    J, d, bellman = _terms(nu, zeta, lam, W, start, pi, gamma)
    dz = d * zeta
    g_zeta = -dz + gamma * bellman - d * (nu + lam[:, None, None])
    inflow = np.matmul(zeta.reshape(B, 1, S * A), W.reshape(B, S * A, S)).reshape(B, S)
    g_nu = -dz + pi * (gamma * inflow + (1.0 - gamma) * start)[:, :, None]
    g_lam = 1.0 - dz.sum(axis=(1, 2))
    return J, g_nu, g_zeta, g_lam


class _Adam:
    def __init__(self, shape, lr):
        self.lr = lr
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, g):
        self.t += 1
        self.m = ADAM_BETA1 * self.m + (1 - ADAM_BETA1) * g
        self.v = ADAM_BETA2 * self.v + (1 - ADAM_BETA2) * g * g
        m_hat = self.m / (1 - ADAM_BETA1 ** self.t)
        v_hat = self.v / (1 - ADAM_BETA2 ** self.t)
        return self.lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


class _Sgd:
    def __init__(self, shape, lr):
        self.lr = lr

    def step(self, g):
        return self.lr * g


def _make_opt(kind: OptimizerKind, shape, lr):
    return _Adam(shape, lr) if kind is OptimizerKind.ADAM else _Sgd(shape, lr)


@dataclass
class _Features:
    nu: np.ndarray      # (S*A, k_nu)
    zeta: np.ndarray    # (S*A, k_zeta)


def _unpack(theta_nu, theta_u, feats: Optional[_Features], S, A):
    if feats is None:
        return theta_nu, theta_u
    B = theta_nu.shape[0]
    nu = (theta_nu @ feats.nu.T).reshape(B, S, A)
    u = (theta_u @ feats.zeta.T).reshape(B, S, A)
    return nu, u


def _param_grads(theta_nu, theta_u, lam, W, start, pi, gamma, feats):
    B, S, A, _ = W.shape
    nu, u = _unpack(theta_nu, theta_u, feats, S, A)
    J, g_nu, g_zeta, g_lam = _table_grads(nu, u * u, lam, W, start, pi, gamma)
    g_u = 2.0 * u * g_zeta
    if feats is not None:
        g_nu = g_nu.reshape(B, S * A) @ feats.nu
        g_u = g_u.reshape(B, S * A) @ feats.zeta
    return J, g_nu, g_u, g_lam, u


def _coerce_features(features, S, A) -> Optional[_Features]:
    if features is None:
        return None
    if isinstance(features, np.ndarray):
        features = (features, features)
    f_nu, f_z = (np.asarray(f, dtype=float).reshape(S * A, -1) for f in features)
    return _Features(f_nu, f_z)


def _stack(batches: Sequence[DiceBatch]):
    shapes = {b.weights.shape for b in batches}
    if len(shapes) != 1:
        raise ValueError("all batches in a vectorized fit must share (S, A)")
    W = np.stack([b.weights for b in batches])
    start = np.stack([b.start for b in batches])
    pi = np.stack([b.policy for b in batches])
    return W, start, pi


def dice_objective(state: DiceState, batch: DiceBatch, features=None) -> float:
    """J at ``state`` under the expectation weights of ``batch``."""
    S, A = batch.shape
    feats = _coerce_features(features, S, A)
    nu, u = _unpack(np.asarray(state.nu_params, dtype=float)[None], np.asarray(state.zeta_raw, dtype=float)[None],
                    feats, S, A)
    W, start, pi = _stack([batch])
    J, _, _ = _terms(nu, u * u, np.array([state.lam]), W, start, pi, batch.gamma)
    return float(J[0])


def dice_gradients(state: DiceState, batch: DiceBatch, features=None) -> DiceGradients:
    """Analytic dJ/d(nu_params), dJ/d(zeta_raw), dJ/d(lambda).

    These are plain derivatives of J; the solver ascends along the zeta_raw
    component and descends along the other two.
    """
    S, A = batch.shape
    feats = _coerce_features(features, S, A)
    W, start, pi = _stack([batch])
    theta_nu = np.asarray(state.nu_params, dtype=float)[None]
    theta_u = np.asarray(state.zeta_raw, dtype=float)[None]
    _, g_nu, g_u, g_lam, _ = _param_grads(theta_nu, theta_u, np.array([state.lam]), W, start, pi,
                                          batch.gamma, feats)
    return DiceGradients(g_nu[0], g_u[0], float(g_lam[0]))


def _as_batch(data, target_policy, gamma) -> DiceBatch:
    if isinstance(data, DiceBatch):
        return data
    if isinstance(data, Dataset):
        if len(data) == 0:
            raise ValueError("cannot fit DICE on an empty dataset")
        pi = target_policy.probs if isinstance(target_policy, Policy) else np.asarray(target_policy)
        if isinstance(data, AbstractDataset) and pi.shape[0] != data.phi.n_abstract:
            raise ValueError("abstract data needs a target policy over abstract states (see lift/abstract policy)")
        return DiceBatch.from_dataset(data, pi, gamma)
    raise TypeError(f"cannot build a DICE batch from {type(data).__name__}")


def _minibatch_sampler(datasets, config: DiceConfig, S, A, rng):
    """Return a callable producing fresh (B, S, A, S) weight tensors, or None."""
    if config.minibatch is None or not all(isinstance(d, Dataset) for d in datasets):
        return None
    keys = [((d.states * A + d.actions) * S + d.next_states) for d in datasets]
    B, size, cells = len(keys), config.minibatch, S * A * S

    def sample():
        out = np.empty((B, cells))
        for b, k in enumerate(keys):
            idx = rng.integers(0, len(k), size=size)
            out[b] = np.bincount(k[idx], minlength=cells)
        return out.reshape(B, S, A, S) / size

    return sample


def dice_fit_many(datasets: Sequence, target_policies: Sequence, config: DiceConfig, features=None,
                  init: Optional[DiceState] = None) -> list[DiceSolution]:
    """Fit several independent DICE problems of the same shape in one vectorized run.

    ``datasets`` may hold :class:`Dataset`/:class:`AbstractDataset` objects or
    prebuilt :class:`DiceBatch` weights. Diverged problems are frozen and
    flagged rather than aborting the others.
    """
    if len(datasets) != len(target_policies):
        raise ValueError("need one target policy per dataset")
    batches = [_as_batch(d, p, config.gamma) for d, p in zip(datasets, target_policies)]
    W, start, pi = _stack(batches)
    B, S, A, _ = W.shape
    gamma = config.gamma
    feats = _coerce_features(features, S, A)
    if config.parameterization is Parameterization.LINEAR and feats is None:
        raise ValueError("linear parameterization needs a feature matrix")
    if config.parameterization is Parameterization.TABULAR:
        feats = None

    rng = np.random.Generator(np.random.PCG64(config.seed))
    sampler = _minibatch_sampler(datasets, config, S, A, rng)

    if init is None:
        if feats is None:
            theta_nu = np.zeros((B, S, A))
            theta_u = np.ones((B, S, A))
        else:
            theta_nu = np.zeros((B, feats.nu.shape[1]))
            # least-squares fit of u = 1 so zeta starts near one
            coef = np.linalg.lstsq(feats.zeta, np.ones(S * A), rcond=None)[0]
            theta_u = np.tile(coef, (B, 1))
        lam = np.zeros(B)
    else:
        theta_nu = np.broadcast_to(np.asarray(init.nu_params, dtype=float), (B,) + np.shape(init.nu_params)).copy()
        theta_u = np.broadcast_to(np.asarray(init.zeta_raw, dtype=float), (B,) + np.shape(init.zeta_raw)).copy()
        lam = np.full(B, float(init.lam))

    opt_nu = _make_opt(config.optimizer, theta_nu.shape, config.alpha_nu)
    opt_u = _make_opt(config.optimizer, theta_u.shape, config.alpha_zeta)
    opt_lam = _make_opt(config.optimizer, lam.shape, config.alpha_lambda)

    active = np.ones(B, dtype=bool)
    messages = [""] * B
    traces = [[] for _ in range(B)]
    prev_zeta = None
    last_change = np.full(B, np.inf)
    d_full = W.sum(axis=3)

    for epoch in range(1, config.epochs + 1):
        Wt = sampler() if sampler is not None else W
        J, g_nu, g_u, g_lam, u = _param_grads(theta_nu, theta_u, lam, Wt, start, pi, gamma, feats)

        bad = active & ~(np.isfinite(J) & (np.abs(J) <= config.divergence_threshold))
        if bad.any():
            for b in np.flatnonzero(bad):
                messages[b] = f"diverged at epoch {epoch}: |J| = {abs(J[b]):.3g}"
            active &= ~bad
            if not active.any():
                break

        mask = active.astype(float)
        step_u = opt_u.step(g_u)
        step_nu = opt_nu.step(g_nu)
        step_lam = opt_lam.step(g_lam)
        theta_u = theta_u + step_u * mask.reshape((B,) + (1,) * (theta_u.ndim - 1))
        theta_nu = theta_nu - step_nu * mask.reshape((B,) + (1,) * (theta_nu.ndim - 1))
        lam = lam - step_lam * mask

        if epoch % config.log_every == 0 or epoch == config.epochs:
            nu_t, u_t = _unpack(theta_nu, theta_u, feats, S, A)
            zeta = u_t * u_t
            J_full, _, _ = _terms(nu_t, zeta, lam, W, start, pi, gamma)
            mean_zeta = (d_full * zeta).sum(axis=(1, 2))
            for b in np.flatnonzero(active):
                traces[b].append((epoch, float(J_full[b]), float(mean_zeta[b]), float(lam[b])))
            if prev_zeta is not None:
                last_change = np.abs(zeta - prev_zeta).reshape(B, -1).max(axis=1)
            prev_zeta = zeta

    nu_t, u_t = _unpack(theta_nu, theta_u, feats, S, A)
    solutions = []
    for b in range(B):
        zeta = u_t[b] ** 2
        support = d_full[b] > 0
        table = RatioTable(np.where(support, zeta, 0.0), support)
        diverged = not active[b]
        state = DiceState(theta_nu[b].copy(), theta_u[b].copy(), float(lam[b]))
        solutions.append(DiceSolution(
            state, table, traces[b], converged=(not diverged) and bool(last_change[b] <= config.converge_tol),
            diverged=diverged, message=messages[b],
            features=None if feats is None else (feats.nu, feats.zeta),
        ))
    return solutions


def dice_fit(dataset, target_policy: Policy | np.ndarray, config: DiceConfig, features=None,
             init: Optional[DiceState] = None) -> DiceSolution:
    """Fit one DICE problem; raises :class:`DiceDivergenceError` if it blows up.

    ``dataset`` is a ground :class:`Dataset`, an :class:`AbstractDataset`
    (BestDICE vs AbstractBestDICE) or a :class:`DiceBatch`. The target policy
    must be indexed by the dataset's state ids.
    """
    sol = dice_fit_many([dataset], [target_policy], config, features, init)[0]
    if sol.diverged:
        raise DiceDivergenceError(sol.message)
    return sol


def extract_ratios(solution: DiceSolution) -> RatioTable:
    """Non-negative ratio lookup; pairs never seen in the data map to 0."""
    return solution.ratios


def saddle_point_oracle(mdp: TabularMdp, pi_e: Policy, data_dist: OccupancyMeasure | np.ndarray,
                        gamma: Optional[float] = None) -> tuple[np.ndarray, np.ndarray]:
    """Exact (nu*, zeta*) of J for data drawn from ``data_dist`` in ``mdp``.

    zeta* = d_pi_e / d_D. With the sign convention of J, the zeta-optimality
    condition zeta = gamma P_pi nu - nu - lambda at lambda = 0 gives
    nu* = -(I - gamma P_pi)^-1 zeta*, i.e. minus the solution of the
    change-of-variables relation nu = zeta + gamma P_pi nu.
    """
    from .occupancy import _ratio_table, occupancy

    if gamma is not None and gamma != mdp.discount:
        mdp = mdp.with_discount(gamma)
    d = data_dist.dist if isinstance(data_dist, OccupancyMeasure) else np.asarray(data_dist)
    zeta = _ratio_table(occupancy(mdp, pi_e).dist, d).ratios
    S, A = zeta.shape
    M = (mdp.transition[:, :, :, None] * pi_e.probs[None, None, :, :]).reshape(S * A, S * A)
    x = np.linalg.solve(np.eye(S * A) - mdp.discount * M, zeta.ravel())
    return -x.reshape(S, A), zeta


def write_trace(solution: DiceSolution, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "J", "mean_zeta", "lambda"])
        for epoch, J, mz, lam in solution.trace:
            w.writerow([epoch, repr(J), repr(mz), repr(lam)])


def dice_config_from_dict(doc: dict) -> DiceConfig:
    """Build a config from a JSON object, rejecting unknown keys."""
    known = {f.name for f in fields(DiceConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ValueError(f"unknown dice config keys: {unknown}")
    return DiceConfig(**doc)


def dice_config_to_dict(config: DiceConfig) -> dict:
    out = asdict(config)
    out["parameterization"] = config.parameterization.value
    out["optimizer"] = config.optimizer.value
    return out


def with_learning_rate(config: DiceConfig, lr: float) -> DiceConfig:
    return replace(config, alpha_nu=lr, alpha_zeta=lr)
