"""Built-in benchmark domains and random instance families.

TwoPath: from the start state, a0 leads to s1 and a1 leads to s2. Both pay
reward 1 and then fall into a zero-reward absorbing state. The evaluation
policy picks a0 with probability 0.01 and the behavior policy with 0.99.
Ground ratios at s1/s2 are then about 0.0101 and 99, but the merged
abstract state gets ratio 1. The 0.01/0.99 probabilities are chosen to give
those magnitudes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .abstraction import AbstractionMap
from .mdp import Policy, TabularMdp

S0, S1, S2, S_ABS = 0, 1, 2, 3
A0, A1 = 0, 1
TWOPATH_GAMMA = 0.999
TWOPATH_NAMES = ("s0", "s1", "s2", "s_abs")


class TwoPathVariant(str, enum.Enum):
    BASELINE = "baseline"
    TRANSITION_VIOLATED = "transition_violated"
    ACTION_EQUALITY_VIOLATED = "action_equality_violated"
    BOTH_VIOLATED = "both_violated"

    @property
    def violates(self) -> frozenset:
        """Assumption numbers this variant is built to break."""
        return {
            TwoPathVariant.BASELINE: frozenset(),
            TwoPathVariant.TRANSITION_VIOLATED: frozenset({2}),
            TwoPathVariant.ACTION_EQUALITY_VIOLATED: frozenset({3}),
            TwoPathVariant.BOTH_VIOLATED: frozenset({2, 3}),
        }[self]


@dataclass(frozen=True)
class Domain:
    mdp: TabularMdp
    pi_e: Policy
    pi_D: Policy
    phi: AbstractionMap

    def __iter__(self):
        return iter((self.mdp, self.pi_e, self.pi_D, self.phi))


def build_twopath(variant: TwoPathVariant | str = TwoPathVariant.BASELINE, gamma: float = TWOPATH_GAMMA) -> Domain:
    """TwoPath MDP, its evaluation/behavior policies and the {s1, s2} merge.

    Violation variants:

    * transition_violated: in s2, a0 returns to s0 while a1 absorbs, so the
      merged block no longer has a single abstract next-state distribution.
    * action_equality_violated: pi_e plays (0.9, 0.1) in s1 and (0.1, 0.9) in s2.
    * both_violated: the s2 dynamics of the transition variant with the
      actions switched (a1 returns, a0 absorbs), plus the same pi_e as above.
    """
    variant = TwoPathVariant(variant)
    P = np.zeros((4, 2, 4))
    P[S0, A0, S1] = 1.0
    P[S0, A1, S2] = 1.0
    P[S1, :, S_ABS] = 1.0
    P[S2, :, S_ABS] = 1.0
    P[S_ABS, :, S_ABS] = 1.0
    if variant is TwoPathVariant.TRANSITION_VIOLATED:
        P[S2] = 0.0
        P[S2, A0, S0] = 1.0
        P[S2, A1, S_ABS] = 1.0
    elif variant is TwoPathVariant.BOTH_VIOLATED:
        P[S2] = 0.0
        P[S2, A1, S0] = 1.0
        P[S2, A0, S_ABS] = 1.0

    r = np.zeros((4, 2))
    r[S1, :] = 1.0
    r[S2, :] = 1.0
    d0 = np.array([1.0, 0.0, 0.0, 0.0])

    pi_e = np.full((4, 2), 0.5)
    pi_e[S0] = (0.01, 0.99)
    pi_D = np.full((4, 2), 0.5)
    pi_D[S0] = (0.99, 0.01)
    if variant in (TwoPathVariant.ACTION_EQUALITY_VIOLATED, TwoPathVariant.BOTH_VIOLATED):
        pi_e[S1] = (0.9, 0.1)
        pi_e[S2] = (0.1, 0.9)

    mdp = TabularMdp(P, r, d0, gamma, TWOPATH_NAMES, f"twopath-{variant.value}")
    phi = AbstractionMap([0, 1, 1, 2])
    return Domain(mdp, Policy(pi_e, "pi_e"), Policy(pi_D, "pi_D"), phi)


def single_state_mdp(n_actions: int = 1, reward=0.0, gamma: float = 0.9) -> TabularMdp:
    P = np.ones((1, n_actions, 1))
    r = np.broadcast_to(np.asarray(reward, dtype=float), (1, n_actions))
    return TabularMdp(P, r, [1.0], gamma, ("s0",), "single-state")


def _dirichlet_rows(rng: np.random.Generator, shape, k: int, alpha: float = 1.0) -> np.ndarray:
    return rng.dirichlet(np.full(k, alpha), size=shape)


def random_partition(rng: np.random.Generator, n_states: int) -> AbstractionMap:
    n_abs = int(rng.integers(1, n_states + 1))
    labels = np.concatenate([np.arange(n_abs), rng.integers(0, n_abs, size=n_states - n_abs)])
    rng.shuffle(labels)
    return AbstractionMap(labels)


def random_reward_equal_instance(rng: np.random.Generator, max_states: int = 12, max_actions: int = 4,
                                 gamma: float | None = None) -> Domain:
    """Random MDP, full-support policy pair and a partition satisfying reward equality.

    Transitions and policies are Dirichlet draws; rewards are drawn per
    (block, action) so merged states always share rewards.
    """
    S = int(rng.integers(2, max_states + 1))
    A = int(rng.integers(1, max_actions + 1))
    if gamma is None:
        gamma = float(rng.uniform(0.5, 0.99))
    phi = random_partition(rng, S)
    P = _dirichlet_rows(rng, (S, A), S)
    block_r = rng.uniform(0.0, 1.0, size=(phi.n_abstract, A))
    r = block_r[phi.ground_to_abstract]
    d0 = rng.dirichlet(np.ones(S))
    pi_e = _full_support_policy(rng, S, A)
    pi_D = _full_support_policy(rng, S, A)
    mdp = TabularMdp(P, r, d0, gamma, name="random")
    return Domain(mdp, Policy(pi_e, "pi_e"), Policy(pi_D, "pi_D"), phi)


def _full_support_policy(rng: np.random.Generator, S: int, A: int) -> np.ndarray:
    p = rng.dirichlet(np.ones(A), size=S) + 0.05
    return p / p.sum(axis=1, keepdims=True)


def random_split_instance(rng: np.random.Generator, max_abstract: int = 6, max_actions: int = 4,
                          gamma: float | None = None) -> Domain:
    """Ground MDP made by cloning states of a random abstract MDP.

    Every transition into an abstract state is split among its ground copies
    with fixed proportions, and policies are constant on blocks. The
    result satisfies all three assumptions, and within-block ratios coincide
    for every action.
    """
    X = int(rng.integers(1, max_abstract + 1))
    A = int(rng.integers(1, max_actions + 1))
    if gamma is None:
        gamma = float(rng.uniform(0.5, 0.99))
    copies = rng.integers(1, 4, size=X)
    g2a = np.repeat(np.arange(X), copies)
    split = np.concatenate([rng.dirichlet(np.ones(c)) for c in copies])  # proportion within block
    P_abs = _dirichlet_rows(rng, (X, A), X)
    r_abs = rng.uniform(0.0, 1.0, size=(X, A))
    d0_abs = rng.dirichlet(np.ones(X))
    P = P_abs[g2a][:, :, g2a] * split[None, None, :]
    d0 = d0_abs[g2a] * split
    pi_e = _full_support_policy(rng, X, A)[g2a]
    pi_D = _full_support_policy(rng, X, A)[g2a]
    mdp = TabularMdp(P, r_abs[g2a], d0, gamma, name="random-split")
    return Domain(mdp, Policy(pi_e, "pi_e"), Policy(pi_D, "pi_D"), AbstractionMap(g2a))
