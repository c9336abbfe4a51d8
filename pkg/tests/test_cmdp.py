import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drcorl.cmdp import (TabularCMDP, TabularPolicy, advantage, cost_upper_bound,
                         discounted_stationary_dist, dumps_cmdp, evaluate_q, evaluate_values,
                         expected_episode_sum, initial_value, iterative_evaluation, kl_divergence,
                         load_cmdp, loads_cmdp, optimal_policy, policy_divergence, random_cmdp,
                         random_policy, save_cmdp, value_iteration)


def two_state():
    # state 0: action 0 stays (r=1, c=1), action 1 moves to 1 (r=0, c=0); state 1 absorbs
    P = np.zeros((2, 2, 2))
    P[0, 0, 0] = P[0, 1, 1] = P[1, :, 1] = 1.0
    return TabularCMDP(P, [[1.0, 0.0], [0.0, 0.0]], [[1.0, 0.0], [0.0, 0.0]], 0.5, [1.0, 0.0],
                       cost_limit=1.0)


def test_closed_form_values():
    m = two_state()
    stay = TabularPolicy.deterministic([0, 0], 2)
    # V(0) = 1 / (1 - 0.5)
    assert evaluate_values(m, stay, "reward")[0] == pytest.approx(2.0)
    assert initial_value(m, TabularPolicy.uniform(2, 2), "cost") == pytest.approx(
        0.5 / (1 - 0.5 * 0.5))


def test_constrained_optimum_is_stochastic_when_binding():
    m = two_state()
    pi = optimal_policy(m, constrained=True)
    assert initial_value(m, pi, "cost") == pytest.approx(1.0, abs=1e-8)
    # V_c = p / (1 - p/2) = 1 gives p = 2/3
    assert pi.probs[0, 0] == pytest.approx(2 / 3, abs=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6), st.integers(2, 4))
def test_linear_solve_matches_iterative_evaluation(seed, S, A):
    m = random_cmdp(S, A, seed, gamma=0.8)
    pi = random_policy(S, A, seed + 1)
    for sig in ("reward", "cost"):
        np.testing.assert_allclose(evaluate_values(m, pi, sig),
                                   iterative_evaluation(m, pi, sig, sweeps=400), atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_performance_difference_identity(seed):
    m = random_cmdp(4, 3, seed, gamma=0.9)
    pi, pb = random_policy(4, 3, seed + 1), random_policy(4, 3, seed + 2)
    d = discounted_stationary_dist(m, pi)
    lhs = initial_value(m, pi) - initial_value(m, pb)
    rhs = d @ (pi.probs * advantage(m, pb)).sum(axis=1) / (1 - m.gamma)
    assert lhs == pytest.approx(rhs, abs=1e-10)


def test_unconstrained_lp_matches_value_iteration():
    m = random_cmdp(5, 3, 7, gamma=0.9)
    q = value_iteration(m, sweeps=2000)
    pi = optimal_policy(m, constrained=False)
    np.testing.assert_allclose(evaluate_values(m, pi), q.max(axis=1), atol=1e-7)


def test_episode_sum_against_matrix_powers():
    m = random_cmdp(3, 2, 4)
    pi = random_policy(3, 2, 5)
    P = np.einsum("sa,sat->st", pi.probs, m.transition)
    c = (pi.probs * m.cost).sum(axis=1)
    want = sum(m.initial_dist @ np.linalg.matrix_power(P, t) @ c for t in range(25))
    assert expected_episode_sum(m, pi, 25, "cost") == pytest.approx(want)


def test_q_consistent_with_v():
    m = random_cmdp(4, 2, 1)
    pi = random_policy(4, 2, 2)
    np.testing.assert_allclose((pi.probs * evaluate_q(m, pi)).sum(axis=1), evaluate_values(m, pi))


def test_kl_divergence():
    assert kl_divergence([0.5, 0.5], [0.5, 0.5]) == 0.0
    assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(np.log(2))
    with pytest.raises(ValueError):
        kl_divergence([0.5, 0.5], [1.0, 0.0])


def test_bound_is_tight_for_identical_policies():
    m = random_cmdp(4, 2, 3)
    pb = random_policy(4, 2, 4)
    bound, eps_dist, _ = cost_upper_bound(m, pb, pb)
    assert eps_dist == 0.0
    assert bound == pytest.approx(initial_value(m, pb, "cost"))
    assert policy_divergence(pb, pb) == 0.0


def test_validation_errors():
    m = two_state()
    with pytest.raises(ValueError):
        TabularCMDP(m.transition * 2, m.reward, m.cost, 0.5, m.initial_dist)
    with pytest.raises(ValueError):
        TabularCMDP(m.transition, -m.reward - 1, m.cost, 0.5, m.initial_dist)
    with pytest.raises(ValueError):
        TabularCMDP(m.transition, m.reward, m.cost, 1.0, m.initial_dist)
    with pytest.raises(ValueError):
        evaluate_values(m, TabularPolicy.uniform(3, 2))
    with pytest.raises(ValueError):
        m.signal("profit")


def test_infeasible_constraint_raises():
    m = random_cmdp(3, 2, 0, cost_limit=0.0)
    with pytest.raises(ValueError):
        optimal_policy(m, constrained=True)


def test_text_roundtrip(tmp_path):
    m = random_cmdp(3, 2, 9, cost_limit=2.5)
    path = tmp_path / "m.cmdp"
    save_cmdp(m, path)
    back = load_cmdp(path)
    for f in ("transition", "reward", "cost", "initial_dist"):
        np.testing.assert_array_equal(getattr(back, f), getattr(m, f))
    assert (back.gamma, back.cost_limit) == (m.gamma, m.cost_limit)
    assert dumps_cmdp(back) == dumps_cmdp(m)


def test_truncated_file_rejected():
    text = dumps_cmdp(random_cmdp(2, 2, 0))
    with pytest.raises(ValueError):
        loads_cmdp(text.rsplit("\n", 2)[0])


def chain():
    # s1 -> s2 -> s2, reward only in s2
    P = np.zeros((2, 1, 2))
    P[:, 0, 1] = 1.0
    return TabularCMDP(P, [[0.0], [1.0]], [[0.0], [0.0]], 0.5, [1.0, 0.0])


def test_hand_solved_chain():
    m = chain()
    pi = TabularPolicy.uniform(2, 1)
    np.testing.assert_allclose(evaluate_values(m, pi), [1.0, 2.0])
    np.testing.assert_allclose(evaluate_q(m, pi)[0], [1.0])
    np.testing.assert_allclose(discounted_stationary_dist(m, pi), [0.5, 0.5])


def test_trivial_value_cases():
    one = TabularCMDP(np.ones((1, 1, 1)), [[1.0]], [[0.0]], 0.9, [1.0])
    pi = TabularPolicy.uniform(1, 1)
    assert evaluate_values(one, pi)[0] == pytest.approx(10.0)
    assert evaluate_q(one, pi)[0, 0] == pytest.approx(10.0)
    np.testing.assert_allclose(discounted_stationary_dist(one, pi), [1.0])
    m = random_cmdp(3, 2, 0, gamma=0.0)
    np.testing.assert_allclose(evaluate_q(m, random_policy(3, 2, 1)), m.reward)
    zero = TabularCMDP(m.transition, np.zeros((3, 2)), m.cost, 0.9, m.initial_dist)
    assert not evaluate_values(zero, random_policy(3, 2, 1)).any()
    tiny = TabularCMDP(m.transition, m.reward, m.cost, 1e-12, m.initial_dist)
    np.testing.assert_allclose(discounted_stationary_dist(tiny, random_policy(3, 2, 1)),
                               m.initial_dist, atol=1e-9)


def test_advantage_identities():
    m = random_cmdp(4, 3, 2)
    pi = random_policy(4, 3, 3)
    np.testing.assert_allclose((pi.probs * advantage(m, pi)).sum(axis=1), 0.0, atol=1e-12)
    det = TabularPolicy.deterministic([0, 2, 1, 0], 3)
    adv = advantage(m, det)
    np.testing.assert_allclose(adv[np.arange(4), [0, 2, 1, 0]], 0.0, atol=1e-12)
    same = TabularCMDP(np.repeat(m.transition[:, :1], 2, axis=1), np.ones((4, 2)),
                       np.zeros((4, 2)), 0.9, m.initial_dist)
    np.testing.assert_allclose(advantage(same, TabularPolicy.uniform(4, 2)), 0.0, atol=1e-12)
