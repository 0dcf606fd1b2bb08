"""Exact occupancy measures, policy values and density ratios.

Everything here is computed by dense linear algebra on the model and serves
as the reference that sample-based estimators are checked against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .abstraction import AbstractionMap, block_normalize, build_abstract_policy
from .mdp import Policy, TabularMdp, _as_rng, _rollout

NORM_TOL = 1e-10


class CoverageError(ValueError):
    """Evaluation occupancy has mass where the data distribution has none."""


@dataclass(frozen=True, eq=False)
class OccupancyMeasure:
    """Normalized state-action distribution ``dist[s, a]``."""

    dist: np.ndarray
    gamma: float
    provenance: tuple = ()

    def __post_init__(self):
        d = np.array(self.dist, dtype=float)
        d.setflags(write=False)
        object.__setattr__(self, "dist", d)

    @property
    def state_dist(self) -> np.ndarray:
        return self.dist.sum(axis=1)

    def expect(self, f: np.ndarray) -> float:
        return float(np.sum(self.dist * f))


@dataclass(frozen=True, eq=False)
class RatioTable:
    """Density ratios zeta[s, a] with a mask of pairs the denominator supports.

    Calling the table on integer arrays of states and actions looks ratios up
    elementwise, so it can be handed directly to the MIS estimators.
    """

    ratios: np.ndarray
    support: np.ndarray

    def __post_init__(self):
        z = np.array(self.ratios, dtype=float)
        z.setflags(write=False)
        object.__setattr__(self, "ratios", z)
        m = np.array(self.support, dtype=bool)
        m.setflags(write=False)
        object.__setattr__(self, "support", m)

    def __call__(self, states, actions) -> np.ndarray:
        return self.ratios[states, actions]

    def mean_under(self, occ: OccupancyMeasure | np.ndarray) -> float:
        dist = occ.dist if isinstance(occ, OccupancyMeasure) else np.asarray(occ)
        return float(np.sum(dist * self.ratios))


def policy_transition(mdp: TabularMdp, policy: Policy) -> np.ndarray:
    """State-to-state matrix P_pi[s, s'] = sum_a pi(a|s) P(s'|s,a)."""
    return np.einsum("sa,sap->sp", policy.probs, mdp.transition)


def occupancy(mdp: TabularMdp, policy: Policy) -> OccupancyMeasure:
    """Normalized discounted occupancy d_pi via one dense linear solve.

    Solves d = (1 - gamma) d0 + gamma P_pi^T d for the state marginal and
    multiplies by pi(a|s).
    """
    gamma = mdp.discount
    if not 0.0 <= gamma < 1.0:
        raise ValueError("occupancy requires 0 <= gamma < 1")
    P_pi = policy_transition(mdp, policy)
    A = np.eye(mdp.n_states) - gamma * P_pi.T
    d_state = np.linalg.solve(A, (1.0 - gamma) * mdp.initial)
    d_state = np.clip(d_state, 0.0, None)
    return OccupancyMeasure(d_state[:, None] * policy.probs, gamma, (mdp.name, policy.name))


def truncated_occupancy(mdp: TabularMdp, policy: Policy, horizon: int = 100_000) -> OccupancyMeasure:
    """Brute-force oracle: sum_{t<T} gamma^t mu_t / sum_{t<T} gamma^t."""
    P_pi = policy_transition(mdp, policy)
    gamma = mdp.discount
    mu = mdp.initial.copy()
    acc = np.zeros(mdp.n_states)
    norm = 0.0
    g = 1.0
    for _ in range(horizon):
        acc += g * mu
        norm += g
        mu = mu @ P_pi
        g *= gamma
        if g < 1e-300:
            break
    return OccupancyMeasure((acc / norm)[:, None] * policy.probs, gamma, (mdp.name, policy.name, "truncated"))


def sampling_distribution(mdp: TabularMdp, policy: Policy, horizon: int, discounted: bool = False) -> OccupancyMeasure:
    """Exact distribution of a transition drawn uniformly from length-``horizon`` rollouts.

    With ``discounted=True`` step t is weighted by gamma^t instead. This is
    the d_D that a dataset of fixed-length trajectories actually samples.
    """
    P_pi = policy_transition(mdp, policy)
    mu = mdp.initial.copy()
    acc = np.zeros(mdp.n_states)
    norm = 0.0
    for t in range(horizon):
        wt = mdp.discount ** t if discounted else 1.0
        acc += wt * mu
        norm += wt
        mu = mu @ P_pi
    return OccupancyMeasure((acc / norm)[:, None] * policy.probs, mdp.discount,
                            (mdp.name, policy.name, f"T={horizon}", "discounted" if discounted else "uniform"))


def policy_value(mdp: TabularMdp, policy: Policy) -> float:
    """rho(pi) = E_{d_pi}[r]."""
    return occupancy(mdp, policy).expect(mdp.reward)


def q_function(mdp: TabularMdp, policy: Policy) -> np.ndarray:
    """Solve q = r + gamma P pi q on the (s, a) space."""
    S, A = mdp.n_states, mdp.n_actions
    # M[(s,a), (s',a')] = P(s'|s,a) pi(a'|s')
    M = (mdp.transition[:, :, :, None] * policy.probs[None, None, :, :]).reshape(S * A, S * A)
    q = np.linalg.solve(np.eye(S * A) - mdp.discount * M, mdp.reward.ravel())
    return q.reshape(S, A)


def policy_value_from_q(mdp: TabularMdp, policy: Policy) -> float:
    """rho(pi) = (1 - gamma) E_{s0 ~ d0, a0 ~ pi}[q(s0, a0)]."""
    q = q_function(mdp, policy)
    return float((1.0 - mdp.discount) * np.sum(mdp.initial[:, None] * policy.probs * q))


def _ratio_table(num: np.ndarray, den: np.ndarray, support_tol: float = 0.0) -> RatioTable:
    support = den > support_tol
    uncovered = np.argwhere((num > support_tol) & ~support)
    if uncovered.size:
        pairs = [tuple(int(v) for v in p) for p in uncovered[:10]]
        raise CoverageError(f"coverage violated at (s, a) = {pairs}")
    ratios = np.zeros_like(num)
    np.divide(num, den, out=ratios, where=support)
    return RatioTable(ratios, support)


def behavior_distribution(mdp: TabularMdp, pi_D: Policy, horizon: Optional[int] = None,
                          discounted: bool = False) -> OccupancyMeasure:
    """d_pi_D itself, or the finite-horizon sampling distribution when ``horizon`` is given."""
    if horizon is None:
        return occupancy(mdp, pi_D)
    return sampling_distribution(mdp, pi_D, horizon, discounted)


def true_ratios(mdp: TabularMdp, pi_e: Policy, pi_D: Policy, horizon: Optional[int] = None,
                discounted: bool = False) -> RatioTable:
    """zeta = d_pi_e / d_D, zero (and unmasked) off the support of d_D.

    By default d_D is the discounted occupancy of ``pi_D``. Passing the
    dataset ``horizon`` uses the exact distribution fixed-length trajectories
    sample from, which is the denominator that makes the MIS average unbiased.
    """
    d_e = occupancy(mdp, pi_e).dist
    d_D = behavior_distribution(mdp, pi_D, horizon, discounted).dist
    return _ratio_table(d_e, d_D)


def abstract_occupancy(occ: OccupancyMeasure, phi: AbstractionMap, policy: Optional[Policy] = None) -> OccupancyMeasure:
    """Block-sum an occupancy into abstract state-action space.

    With ``policy`` given, the result is formed as d_{pi^phi}(x) pi^phi(a|x)
    with pi^phi built from the occupancy weights; mathematically identical to
    the block sum, and kept as a second route for cross-checking.
    """
    M = phi.aggregation_matrix()
    if policy is None:
        dist = M.T @ occ.dist
    else:
        d_state = occ.state_dist
        w = block_normalize(d_state, phi)
        pi_abs = build_abstract_policy(policy, phi, w)
        dist = (M.T @ d_state)[:, None] * pi_abs.probs
    return OccupancyMeasure(dist, occ.gamma, occ.provenance + ("phi",))


def abstract_ratios(mdp: TabularMdp, pi_e: Policy, pi_D: Policy, phi: AbstractionMap,
                    horizon: Optional[int] = None, discounted: bool = False) -> RatioTable:
    """zeta^phi = d^phi_e / d^phi_D over (abstract state, action)."""
    d_e = abstract_occupancy(occupancy(mdp, pi_e), phi).dist
    d_D = abstract_occupancy(behavior_distribution(mdp, pi_D, horizon, discounted), phi).dist
    return _ratio_table(d_e, d_D)


def abstract_policy_value(mdp: TabularMdp, policy: Policy, phi: AbstractionMap) -> float:
    """rho(pi^phi) with d_{pi^phi}(x) the block sum of d_pi and pi^phi, r^phi built from w_pi."""
    from .abstraction import build_abstract_mdp

    occ = occupancy(mdp, policy)
    w = block_normalize(occ.state_dist, phi)
    abs_mdp = build_abstract_mdp(mdp, phi, w).mdp
    pi_abs = build_abstract_policy(policy, phi, w)
    d_abs = phi.aggregation_matrix().T @ occ.state_dist
    return float(np.sum(d_abs[:, None] * pi_abs.probs * abs_mdp.reward))


def ratio_variance(occ_e: OccupancyMeasure, occ_D: OccupancyMeasure) -> float:
    """Var_{(s,a) ~ d_D}[zeta] = sum d_D zeta^2 - (sum d_D zeta)^2."""
    table = _ratio_table(occ_e.dist, occ_D.dist)
    d = occ_D.dist
    mean = float(np.sum(d * table.ratios))
    second = float(np.sum(d * table.ratios ** 2))
    return second - mean ** 2


def per_step_covariance(mdp: TabularMdp, pi_e: Policy, pi_D: Policy, horizon: int, n_rollouts: int, seed,
                        phi: Optional[AbstractionMap] = None, ratios: Optional[RatioTable] = None) -> np.ndarray:
    """Monte-Carlo Cov(zeta r at step t, zeta r at step k) over rollouts of ``pi_D``.

    Returns a symmetric (horizon, horizon) matrix. With ``phi`` the abstract
    ratios are applied to projected states.
    """
    if n_rollouts < 2:
        raise ValueError("n_rollouts must be >= 2")
    if ratios is None:
        ratios = abstract_ratios(mdp, pi_e, pi_D, phi) if phi is not None else true_ratios(mdp, pi_e, pi_D)
    S, A, R, _ = _rollout(mdp, pi_D, n_rollouts, horizon, _as_rng(seed))
    if phi is not None:
        S = phi.ground_to_abstract[S]
    X = ratios(S, A) * R          # (T, n)
    X = X - X.mean(axis=1, keepdims=True)
    cov = X @ X.T / (n_rollouts - 1)
    return 0.5 * (cov + cov.T)
