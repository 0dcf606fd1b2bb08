import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ope_abstract.abstraction import AbstractionMap
from ope_abstract.domains import S0, S1, S2, S_ABS, build_twopath, random_reward_equal_instance
from ope_abstract.mdp import (AbstractDataset, Dataset, Policy, TabularMdp, derive_seed, generate_dataset,
                              load_mdp, project_dataset, read_dataset, sample_trajectory, save_mdp,
                              validate_mdp, write_dataset)


def test_shape_checks():
    with pytest.raises(ValueError):
        TabularMdp(np.ones((2, 1, 3)), np.zeros((2, 1)), [1, 0], 0.9)
    with pytest.raises(ValueError):
        TabularMdp(np.ones((2, 1, 2)) / 2, np.zeros((2, 2)), [1, 0], 0.9)
    with pytest.raises(ValueError):
        TabularMdp(np.ones((2, 1, 2)) / 2, np.zeros((2, 1)), [1, 0, 0], 0.9)


def test_validate_reports_bad_row_and_negative_reward():
    P = np.full((2, 1, 2), 0.5)
    P[1, 0] = [0.7, 0.7]
    mdp = TabularMdp(P, [[0.0], [-1.0]], [1.0, 0.0], 0.9)
    problems = validate_mdp(mdp)
    assert any("s=1" in p and "a=0" in p for p in problems)
    assert any("non-negativity" in p for p in problems)
    assert validate_mdp(build_twopath().mdp) == []


def test_validate_discount_and_initial():
    mdp = TabularMdp(np.ones((1, 1, 1)), [[0.0]], [0.5], 1.0)
    problems = validate_mdp(mdp)
    assert len(problems) == 2


def test_policy_rows_must_sum_to_one():
    with pytest.raises(ValueError):
        Policy(np.array([[0.5, 0.6]]))
    assert np.allclose(Policy.uniform(3, 4).probs, 0.25)


def test_twopath_structure():
    mdp, pi_e, pi_D, phi = build_twopath()
    assert mdp.transition[S0, 0, S1] == 1 and mdp.transition[S0, 1, S2] == 1
    assert np.all(mdp.transition[S_ABS, :, S_ABS] == 1)
    assert mdp.reward[S1].tolist() == [1, 1] and mdp.reward[S_ABS].tolist() == [0, 0]
    assert phi.ground_to_abstract.tolist() == [0, 1, 1, 2]
    assert np.allclose(pi_e.probs[S0], [0.01, 0.99]) and np.allclose(pi_D.probs[S0], [0.99, 0.01])


def test_single_trajectory_of_twopath_is_valid():
    mdp, _, pi_D, _ = build_twopath()
    traj = sample_trajectory(mdp, pi_D, 5, 0)
    assert traj[0].state == S0 and traj[0].is_trajectory_start
    assert traj[1].state in (S1, S2) and traj[1].reward == 1.0
    assert all(t.state == S_ABS for t in traj[2:])


def test_dataset_layout_and_determinism(twopath):
    mdp, _, pi_D, _ = twopath
    d1 = generate_dataset(mdp, pi_D, 7, 10, 3)
    d2 = generate_dataset(mdp, pi_D, 7, 10, 3)
    assert len(d1) == 70 and d1.m == 7 and d1.horizon == 10
    assert np.array_equal(d1.states, d2.states) and np.array_equal(d1.actions, d2.actions)
    assert d1.timesteps[:10].tolist() == list(range(10))
    assert np.all(d1.trajectory[:10] == 0) and np.all(d1.trajectory[10:20] == 1)
    # next state of step t is the state of step t+1 inside a trajectory
    inner = d1.timesteps < 9
    assert np.array_equal(d1.next_states[inner], d1.states[np.flatnonzero(inner) + 1])
    assert np.array_equal(d1.start_states, d1.states[d1.timesteps == 0])
    assert len(list(d1)) == 70


def test_dataset_rejects_wrong_lengths():
    z = np.zeros(5, dtype=int)
    with pytest.raises(ValueError):
        Dataset(z, z, np.zeros(5), z, z, z, np.zeros(1, dtype=int), 1, 4)
    with pytest.raises(ValueError):
        generate_dataset(build_twopath().mdp, build_twopath().pi_D, 0, 10, 0)


def test_empty_dataset_mean_reward_errors():
    with pytest.raises(ValueError):
        Dataset.empty().mean_reward


def test_projection(twopath):
    mdp, _, pi_D, phi = twopath
    d = generate_dataset(mdp, pi_D, 4, 6, 1)
    a = project_dataset(d, phi)
    assert isinstance(a, AbstractDataset) and a.source is d
    assert np.array_equal(a.states, phi.ground_to_abstract[d.states])
    assert np.array_equal(a.rewards, d.rewards) and np.array_equal(a.actions, d.actions)
    with pytest.raises(KeyError):
        project_dataset(d, AbstractionMap([0, 1, 0]))


def test_identity_projection_keeps_ids(twopath):
    mdp, _, pi_D, _ = twopath
    d = generate_dataset(mdp, pi_D, 3, 5, 2)
    a = project_dataset(d, AbstractionMap.identity(4))
    assert np.array_equal(a.states, d.states) and np.array_equal(a.next_states, d.next_states)


def test_dataset_file_round_trip(tmp_path, twopath):
    mdp, _, pi_D, _ = twopath
    d = generate_dataset(mdp, pi_D, 3, 5, 9)
    header_path = write_dataset(d, tmp_path / "data.jsonl", gamma=0.999, domain="twopath", seed=9)
    assert json.loads(header_path.read_text()) == {"m": 3, "T": 5, "gamma": 0.999, "domain": "twopath", "seed": 9}
    first = json.loads((tmp_path / "data.jsonl").read_text().splitlines()[0])
    assert set(first) == {"s", "a", "r", "sp", "t", "traj"}
    back, header = read_dataset(tmp_path / "data.jsonl")
    for col in ("states", "actions", "rewards", "next_states", "timesteps", "trajectory", "start_states"):
        assert np.array_equal(getattr(back, col), getattr(d, col))
    assert header["domain"] == "twopath"


def test_mdp_json_round_trip(tmp_path, twopath):
    save_mdp(twopath.mdp, tmp_path / "m.json")
    doc = json.loads((tmp_path / "m.json").read_text())
    assert {"n_states", "n_actions", "P", "r", "d0", "gamma"} <= set(doc)
    back = load_mdp(tmp_path / "m.json")
    assert np.array_equal(back.transition, twopath.mdp.transition)
    assert back.discount == twopath.mdp.discount and back.state_names == twopath.mdp.state_names


def test_derive_seed_is_keyed():
    assert derive_seed(0, 5, 1) == derive_seed(0, 5, 1)
    assert len({derive_seed(0, 5, i) for i in range(100)}) == 100
    assert derive_seed(0, 5, 1) != derive_seed(1, 5, 1)
    assert 0 <= derive_seed(3, 2) < 2 ** 63


@given(st.integers(0, 2 ** 32 - 1))
def test_random_datasets_follow_the_model(seed):
    rng = np.random.Generator(np.random.PCG64(seed))
    mdp, _, pi_D, _ = random_reward_equal_instance(rng, max_states=6, max_actions=3)
    d = generate_dataset(mdp, pi_D, 3, 4, seed)
    assert np.all(mdp.transition[d.states, d.actions, d.next_states] > 0)
    assert np.all(pi_D.probs[d.states, d.actions] > 0)
    assert np.array_equal(d.rewards, mdp.reward[d.states, d.actions])
    assert np.all(mdp.initial[d.start_states] > 0)
