import numpy as np
import pytest
from hypothesis import given, strategies as st

from ope_abstract.abstraction import AbstractionMap
from ope_abstract.domains import build_twopath, random_reward_equal_instance
from ope_abstract.estimators import (EstimateRecord, EstimatorKind, abstract_mis_estimate, bias_variance_report,
                                     estimate_csv_row, mis_estimate, relative_mse, run_estimator, use_plain_mse,
                                     weighted_mis_estimate)
from ope_abstract.mdp import Dataset, _rollout, derive_seed, generate_dataset, project_dataset
from ope_abstract.occupancy import abstract_ratios, policy_value, true_ratios

RHO = 0.999 * 0.001
SE_FLOOR = 1e-12


def _data(twopath, m=20, T=10, seed=0):
    mdp, _, pi_D, _ = twopath
    return generate_dataset(mdp, pi_D, m, T, seed)


def test_unit_ratios_give_mean_reward(twopath):
    d = _data(twopath)
    ones = np.ones((4, 2))
    assert mis_estimate(d, ones) == pytest.approx(d.mean_reward)
    assert weighted_mis_estimate(d, ones) == pytest.approx(d.mean_reward)
    a = project_dataset(d, twopath.phi)
    assert abstract_mis_estimate(a, np.ones((3, 2))) == pytest.approx(d.mean_reward)


def test_zero_rewards_give_zero():
    z = np.zeros(4, dtype=int)
    d = Dataset(z, z, np.zeros(4), z, np.arange(4), z, z[:1], 1, 4)
    assert mis_estimate(d, np.full((1, 1), 3.0)) == 0.0


def test_empty_dataset_raises():
    with pytest.raises(ValueError):
        mis_estimate(Dataset.empty(), np.ones((1, 1)))
    with pytest.raises(ValueError):
        weighted_mis_estimate(Dataset.empty(), np.ones((1, 1)))


def test_abstract_estimator_needs_abstract_data(twopath):
    with pytest.raises(TypeError):
        abstract_mis_estimate(_data(twopath), np.ones((4, 2)))


def test_weighted_zero_weight_raises(twopath):
    with pytest.raises(ValueError):
        weighted_mis_estimate(_data(twopath), np.zeros((4, 2)))


def test_single_transition_weighted_estimate():
    d = Dataset([0], [1], [0.7], [0], [0], [0], [0], 1, 1)
    assert weighted_mis_estimate(d, np.full((1, 2), 5.0)) == pytest.approx(0.7)


def test_discounted_toggle(twopath):
    d = _data(twopath, T=3)
    g = 0.5
    w = g ** d.timesteps
    expect = np.sum(w * d.rewards) / np.sum(w)
    assert mis_estimate(d, np.ones((4, 2)), discounted=True, gamma=g) == pytest.approx(expect)
    with pytest.raises(ValueError):
        mis_estimate(d, np.ones((4, 2)), discounted=True)


@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_weighted_estimate_is_scale_invariant(seed, c):
    twopath = build_twopath()
    d = _data(twopath, m=5, seed=seed)
    z = np.random.Generator(np.random.PCG64(seed)).uniform(0.1, 2, size=(4, 2))
    assert weighted_mis_estimate(d, c * z) == pytest.approx(weighted_mis_estimate(d, z), rel=1e-12)


@given(st.integers(0, 10_000))
def test_identity_abstraction_is_bit_identical(seed):
    twopath = build_twopath()
    d = _data(twopath, m=5, seed=seed)
    z = np.random.Generator(np.random.PCG64(seed)).uniform(0, 2, size=(4, 2))
    a = project_dataset(d, AbstractionMap.identity(4))
    assert abstract_mis_estimate(a, z) == mis_estimate(d, z)


def test_relative_mse_cases():
    assert relative_mse([0.5, 0.5], 0.5, [0.1, 0.2]) == 0.0
    assert relative_mse([0.1, 0.2], 0.5, [0.1, 0.2]) == pytest.approx(1.0)
    assert relative_mse([0.1, 0.3], 0.5, plain=True) == pytest.approx((0.16 + 0.04) / 2)
    with pytest.raises(ValueError, match="plain"):
        relative_mse([0.4], 0.5, [0.5])
    with pytest.raises(ValueError):
        relative_mse([], 0.5, [])
    rec = EstimateRecord(0.4, 10, 1, EstimatorKind.GROUND_TRUE)
    assert relative_mse([rec], 0.5, plain=True) == pytest.approx(0.01)


def test_twopath_uses_plain_mse(twopath):
    mdp, pi_e, pi_D, _ = twopath
    assert use_plain_mse(policy_value(mdp, pi_e), policy_value(mdp, pi_D))
    assert not use_plain_mse(0.1, 0.2)


def test_csv_row_columns():
    rec = EstimateRecord(0.2, 100, 7, EstimatorKind.ABSTRACT_TRUE)
    row = estimate_csv_row(rec, 5, 3, 0.1)
    assert list(row) == ["estimator", "batch_size", "trial", "seed", "estimate", "rho_true", "mse"]
    assert row["estimator"] == "AbstractTrue" and row["mse"] == pytest.approx(0.01)


def test_run_estimator_records(twopath):
    mdp, pi_e, pi_D, phi = twopath
    seeds = [derive_seed(0, 5, i) for i in range(3)]
    data = [generate_dataset(mdp, pi_D, 5, 100, s) for s in seeds]
    recs = run_estimator("AbstractTrue", data, mdp, pi_e, pi_D, phi, 100, seeds)
    assert [r.dataset_seed for r in recs] == seeds
    assert all(r.n_samples == 500 and not r.weighted for r in recs)
    # every TwoPath trajectory visits the block exactly once, so the abstract estimate is exact
    assert all(r.estimate == pytest.approx(RHO, rel=1e-12) for r in recs)


def test_abstract_variance_below_ground_at_every_batch_size(twopath):
    mdp, pi_e, pi_D, phi = twopath
    for m in (5, 10, 50, 100, 300):
        g = bias_variance_report(mdp, pi_e, pi_D, phi, "GroundTrue", [m], 100, 200, 1)[0]
        a = bias_variance_report(mdp, pi_e, pi_D, phi, "AbstractTrue", [m], 100, 200, 1)[0]
        assert a.variance < g.variance
        assert abs(g.bias) <= 4 * g.stderr


def test_consistency_large_batch_beats_small(twopath):
    mdp, pi_e, pi_D, phi = twopath
    small = bias_variance_report(mdp, pi_e, pi_D, phi, "GroundTrue", [5], 100, 200, 2)[0]
    large = bias_variance_report(mdp, pi_e, pi_D, phi, "GroundTrue", [1000], 100, 200, 2)[0]
    assert large.mse < small.mse


def test_bias_variance_report_needs_two_trials(twopath):
    with pytest.raises(ValueError):
        bias_variance_report(*twopath, "GroundTrue", [5], 10, 1, 0)


def _chunk_estimates(mdp, pi_e, pi_D, phi, m, T, n, seed, abstract):
    """n independent m-trajectory estimates from one big lock-step rollout."""
    S, A, R, _ = _rollout(mdp, pi_D, m * n, T, np.random.Generator(np.random.PCG64(seed)))
    if abstract:
        z = abstract_ratios(mdp, pi_e, pi_D, phi, horizon=T)(phi.ground_to_abstract[S], A)
    else:
        z = true_ratios(mdp, pi_e, pi_D, horizon=T)(S, A)
    per_traj = (z * R).mean(axis=0)
    return per_traj.reshape(n, m).mean(axis=1)


@pytest.mark.parametrize("abstract", [False, True])
def test_unbiased_on_random_mdps(abstract):
    for i in range(20):
        rng = np.random.Generator(np.random.PCG64(derive_seed(7, i)))
        mdp, pi_e, pi_D, phi = random_reward_equal_instance(rng, max_states=8, max_actions=3)
        est = _chunk_estimates(mdp, pi_e, pi_D, phi, 5, 20, 1000, derive_seed(8, i), abstract)
        se = est.std(ddof=1) / np.sqrt(est.size)
        # one abstract state and one action make the estimate constant; allow rounding
        assert abs(est.mean() - policy_value(mdp, pi_e)) <= 4 * se + SE_FLOOR


def test_ground_estimator_unbiased_on_twopath(twopath):
    mdp, pi_e, pi_D, phi = twopath
    est = _chunk_estimates(mdp, pi_e, pi_D, phi, 50, 100, 1000, 3, abstract=False)
    se = est.std(ddof=1) / np.sqrt(est.size)
    assert abs(est.mean() - RHO) <= 4 * se
