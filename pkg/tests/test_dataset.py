import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drcorl.cmdp import TabularPolicy, random_cmdp, random_policy
from drcorl.dataset import (TransitionDataset, dumps_dataset, load_dataset, loads_dataset,
                            normalized_cost, normalized_return, rollout, save_dataset)
from drcorl.envs import PointMassEnv, TabularEnv, TabularSampler, point_mass_behavior


def point_mass_data(seed=0, episodes=3, horizon=20):
    env = PointMassEnv()
    return rollout(env, point_mass_behavior(env), episodes, horizon, seed)


def test_rollout_is_deterministic_given_seed():
    a, _ = point_mass_data(3)
    b, _ = point_mass_data(3)
    c, _ = point_mass_data(4)
    assert a.equals(b)
    assert not a.equals(c)


def test_rollout_shapes_and_episode_stats():
    ds, stats = point_mass_data(episodes=4, horizon=15)
    assert len(ds) == 60 and ds.state.shape == (60, 1)
    assert ds.done.sum() == 4
    assert [s.episodic_cost for s in stats] == [s.episodic_cost for s in ds.episode_stats()]
    lo, hi = ds.return_range()
    assert lo == min(s.episodic_return for s in stats)
    assert hi == max(s.episodic_return for s in stats)


def test_tabular_rollout_uses_integers():
    m = random_cmdp(3, 2, 0)
    ds, _ = rollout(TabularEnv(m), TabularSampler(random_policy(3, 2, 1)), 2, 10, 5)
    assert ds.discrete_states and ds.discrete_actions
    assert loads_dataset(dumps_dataset(ds)).equals(ds)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=20),
       st.integers(1, 3))
def test_csv_roundtrip_is_lossless(values, dim):
    n = len(values)
    x = np.asarray(values)
    ds = TransitionDataset(
        state=np.tile(x[:, None], (1, dim)), action=x[:, None] / 3.0, reward=x,
        next_state=np.tile(-x[:, None], (1, dim)), cost=np.abs(x),
        done=np.arange(n) == n - 1)
    assert loads_dataset(dumps_dataset(ds)).equals(ds)


def test_file_roundtrip(tmp_path):
    ds, _ = point_mass_data()
    save_dataset(ds, tmp_path / "d.csv")
    assert load_dataset(tmp_path / "d.csv").equals(ds)


def test_bad_files_rejected():
    with pytest.raises(ValueError):
        loads_dataset("a,b\n1,2\n")
    with pytest.raises(ValueError):
        loads_dataset("state,action,reward,next_state,cost,done\n")
    with pytest.raises(ValueError):
        loads_dataset("state,action,reward,next_state,cost,done\n0.1,0.2,1.0\n")


def test_mismatched_fields_rejected():
    with pytest.raises(ValueError):
        TransitionDataset(np.zeros((2, 1)), np.zeros((2, 1)), np.zeros(2), np.zeros((3, 1)),
                          np.zeros(2), np.zeros(2, bool))


def test_normalization():
    assert normalized_return(5.0, 0.0, 10.0) == 0.5
    assert normalized_cost(10.1, 10.0, 0.0, 0.1) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        normalized_return(1.0, 2.0, 2.0)
    with pytest.raises(ValueError):
        normalized_cost(1.0, 0.0, 0.0, 0.0)


def test_point_mass_dynamics():
    env = PointMassEnv()
    rng = np.random.default_rng(0)
    s = env.reset(rng)
    assert env.start_low <= s[0] <= env.start_high
    env._x = 0.45
    s, r, c = env.step([5.0])
    assert s[0] == pytest.approx(0.55) and c == 1.0
    assert r == pytest.approx(1 - 0.45 ** 2)


def test_one_state_episodes_and_action_frequencies():
    m = random_cmdp(1, 2, 0)
    ds, _ = rollout(TabularEnv(m), TabularSampler(random_policy(1, 2, 0)), 2, 5, 0)
    assert len(ds) == 10
    assert list(np.flatnonzero(ds.done)) == [4, 9]
    ds, _ = rollout(TabularEnv(m), TabularSampler(TabularPolicy.uniform(1, 2)), 1, 10_000, 1)
    assert abs(ds.action.mean() - 0.5) < 0.02


def test_normalization_examples():
    assert normalized_return(50, 0, 100) == 0.5
    assert normalized_return(0, 0, 100) == 0.0
    assert normalized_return(100, 0, 100) == 1.0
    assert normalized_cost(0.0, 10.0) == 0.0
    assert round(normalized_cost(10.0, 10.0), 4) == 0.9901
