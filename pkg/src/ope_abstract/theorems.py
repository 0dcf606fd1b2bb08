"""Exact property checks over seeded random instance families.

Each check returns the largest violation it saw, so the same battery backs
the unit tests, the acceptance suite and ``ope-abstract verify-theorems``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .abstraction import AbstractionMap, block_normalize, build_abstract_mdp, build_abstract_policy
from .domains import Domain, random_reward_equal_instance, random_split_instance
from .mdp import derive_seed
from .occupancy import (abstract_occupancy, abstract_policy_value, occupancy, policy_value, policy_value_from_q,
                        ratio_variance, true_ratios)

VARIANCE_TOL = 1e-10
VALUE_TOL = 1e-9
TIE_TOL = 1e-10

# key offsets so each family draws from its own seed stream
_RANDOM_FAMILY, _SPLIT_FAMILY = 0, 1


@dataclass(frozen=True)
class PropertyResult:
    name: str
    n_checked: int
    max_violation: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.max_violation <= self.tol)

    def as_row(self) -> dict:
        return {"property": self.name, "n_checked": self.n_checked, "max_violation": self.max_violation,
                "tol": self.tol, "passed": self.passed}


def instance_rng(seed: int, family: int, i: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, family, i)))


def random_instances(seed: int, n: int) -> list[Domain]:
    return [random_reward_equal_instance(instance_rng(seed, _RANDOM_FAMILY, i)) for i in range(n)]


def split_instances(seed: int, n: int) -> list[Domain]:
    return [random_split_instance(instance_rng(seed, _SPLIT_FAMILY, i)) for i in range(n)]


def variance_pair(dom: Domain, phi: AbstractionMap | None = None) -> tuple[float, float]:
    """(ground, abstract) variance of the exact ratio under d_{pi_D}."""
    mdp, pi_e, pi_D, phi0 = dom
    phi = phi0 if phi is None else phi
    occ_e, occ_D = occupancy(mdp, pi_e), occupancy(mdp, pi_D)
    ground = ratio_variance(occ_e, occ_D)
    abstract = ratio_variance(abstract_occupancy(occ_e, phi), abstract_occupancy(occ_D, phi))
    return ground, abstract


def lemma_gap(dom: Domain, rng: np.random.Generator) -> float:
    """|E_{d_pi^phi, pi^phi}[f] - E_{d_pi, pi}[f(phi(s), a)]| for one random f."""
    mdp, pi, _, phi = dom
    occ = occupancy(mdp, pi)
    f = rng.normal(size=(phi.n_abstract, mdp.n_actions))
    lhs = abstract_occupancy(occ, phi, policy=pi).expect(f)
    rhs = occ.expect(f[phi.ground_to_abstract])
    return abs(lhs - rhs)


def abstract_mdp_value_gap(dom: Domain) -> float:
    """|rho(pi) - value of pi^phi run in the abstract MDP built with w_pi|.

    Needs transition similarity and action equality in addition to reward
    equality, so it is only checked on split instances.
    """
    mdp, pi, _, phi = dom
    w = block_normalize(occupancy(mdp, pi).state_dist, phi)
    abs_mdp = build_abstract_mdp(mdp, phi, w).mdp
    pi_abs = build_abstract_policy(pi, phi, w)
    return abs(policy_value(mdp, pi) - policy_value(abs_mdp, pi_abs))


def run_properties(seed: int = 0, n_instances: int = 500) -> list[PropertyResult]:
    if n_instances < 1:
        raise ValueError("n_instances must be >= 1")
    rand = random_instances(seed, n_instances)
    split = split_instances(seed, n_instances)
    f_rng = np.random.Generator(np.random.PCG64(derive_seed(seed, 2)))

    ineq, ident, prop1, lemma, norm, dual = [], [], [], [], [], []
    for dom in rand:
        mdp, pi_e, pi_D, phi = dom
        g, a = variance_pair(dom)
        ineq.append(a - g)
        gi, ai = variance_pair(dom, AbstractionMap.identity(mdp.n_states))
        ident.append(abs(ai - gi))
        for pi in (pi_e, pi_D):
            prop1.append(abs(policy_value(mdp, pi) - abstract_policy_value(mdp, pi, phi)))
            dual.append(abs(policy_value(mdp, pi) - policy_value_from_q(mdp, pi)))
        lemma.append(lemma_gap(dom, f_rng))
        occ_D = occupancy(mdp, pi_D)
        table = true_ratios(mdp, pi_e, pi_D)
        norm.extend([abs(occupancy(mdp, pi_e).dist.sum() - 1.0), abs(occ_D.dist.sum() - 1.0),
                     abs(table.mean_under(occ_D) - 1.0)])

    tie, split_ineq, split_value = [], [], []
    for dom in split:
        g, a = variance_pair(dom)
        tie.append(abs(a - g) / max(1.0, abs(g)))
        split_ineq.append(a - g)
        split_value.append(abstract_mdp_value_gap(dom))

    mx = lambda xs: float(max(xs))  # noqa: E731
    return [
        PropertyResult("variance_inequality", n_instances, mx(ineq + split_ineq), VARIANCE_TOL),
        PropertyResult("variance_tie_identity", n_instances, mx(ident), 0.0),
        PropertyResult("variance_tie_equal_ratios", n_instances, mx(tie), TIE_TOL),
        PropertyResult("value_preservation", 2 * n_instances, mx(prop1), VALUE_TOL),
        PropertyResult("value_preservation_abstract_mdp", n_instances, mx(split_value), VALUE_TOL),
        PropertyResult("expectation_equality", n_instances, mx(lemma), VALUE_TOL),
        PropertyResult("normalization", 3 * n_instances, mx(norm), VALUE_TOL),
        PropertyResult("dual_value_identity", 2 * n_instances, mx(dual), VALUE_TOL),
    ]
