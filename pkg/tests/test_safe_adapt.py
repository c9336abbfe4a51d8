from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drcorl.cmdp import load_cmdp, random_cmdp
from drcorl.critics import CriticBatch, CriticConfig, CriticEnsemble
from drcorl.policy import GaussianPolicy
from drcorl.safe_adapt import (BetaSchedule, SlackBand, TrainConfig, policy_gradients,
                               safe_adaptation, select_region, train)
from drcorl.theorem import (auto_slack, npg_update, run_npg, softmax_policy,
                            tabular_theorem_harness)

DATA = Path(__file__).parent / "data"
G_R = np.array([1.0, 0.0])
G_C = np.array([-1.0, 1.0])


@pytest.mark.parametrize("est,region", [
    (0.79, "safe"), (0.8, "safe"), (0.81, "conflict"), (1.2, "conflict"), (1.2001, "unsafe"),
])
def test_region_boundaries(est, region):
    g, got = safe_adaptation(est, 1.0, 0.2, 0.2, G_R, G_C)
    assert got == region
    want = {"safe": G_R, "unsafe": G_C, "conflict": [0.25, 0.75]}[region]
    np.testing.assert_allclose(g, want, atol=1e-12)


def test_aligned_band_step_is_average():
    g, region = safe_adaptation(1.0, 1.0, 0.1, 0.1, [1.0, 1.0], [1.0, 0.0])
    assert region == "align"
    np.testing.assert_allclose(g, [1.0, 0.5])


def test_infinite_limit_is_always_safe_and_zero_slack_at_zero_limit_unsafe():
    assert select_region(1e9, np.inf, 0.0, 0.0) == "safe"
    assert select_region(1e-9, 0.0, 0.0, 0.0) == "unsafe"
    assert select_region(0.0, 0.0, 0.0, 0.0) == "safe"


def test_schedules():
    band = SlackBand(0.2, 0.4, total_steps=10)
    assert band.at(0) == (0.2, 0.4)
    assert band.at(5) == pytest.approx((0.1, 0.2))
    assert band.at(10) == (0.0, 0.0)
    assert SlackBand(0.2, 0.4, 10, decay=False).at(10) == (0.2, 0.4)
    lin = BetaSchedule("linear", 0.04, 1.0, total_steps=11)
    assert lin.at(0) == pytest.approx(0.04) and lin.at(10) == pytest.approx(1.0)
    assert lin.at(5) == pytest.approx(0.52)
    assert BetaSchedule("sqrt", 0.0 + 1e-3, 1.0, 5).at(1) == pytest.approx(1e-3 + 0.999 * 0.5)
    assert BetaSchedule("constant", 0.3, 1.0, 5).at(4) == 0.3
    with pytest.raises(ValueError):
        BetaSchedule("cosine")
    with pytest.raises(ValueError):
        SlackBand(-0.1, 0.0)


def small_setup(seed=0):
    pol = GaussianPolicy(1, 1, hidden=(4,), sigma=0.3, rng=seed)
    cr = CriticEnsemble(1, 1, CriticConfig(hidden=(4,)), rng=seed + 1)
    return pol, cr


def test_zero_critics_and_zero_score_give_zero_gradients():
    pol, _ = small_setup()
    s = np.linspace(-1, 1, 6)[:, None]
    g_r, g_c = policy_gradients(pol, None, lambda a, s: np.zeros_like(a), s, 0.5, rng=0)
    assert not g_r.any() and not g_c.any()


def test_score_only_gradients_coincide():
    pol, _ = small_setup()
    s = np.linspace(-1, 1, 6)[:, None]
    g_r, g_c = policy_gradients(pol, None, lambda a, s: -a, s, 0.5, rng=0)
    np.testing.assert_array_equal(g_r, g_c)
    assert g_r.any()


def test_critic_gradients_match_finite_differences_with_frozen_noise():
    pol, cr = small_setup(3)
    rng = np.random.default_rng(1)
    s = rng.standard_normal((5, 1))
    z = rng.standard_normal((5, 1))
    g_r, g_c = policy_gradients(pol, cr, None, s, np.inf, noise=z)
    base = pol.params.copy()

    def obj(p, which):
        pol.params[:] = p
        a = pol.mean(s) + pol.std(s) * z
        out = cr.reward_q(s, a).mean() if which == "r" else -cr.ucb_cost(s, a).mean()
        pol.params[:] = base
        return float(out)
    for which, g in (("r", g_r), ("c", g_c)):
        fd = np.array([(obj(base + h, which) - obj(base - h, which)) / 2e-6
                       for h in np.eye(base.size) * 1e-6])
        np.testing.assert_allclose(g, fd, atol=1e-7)


def test_action_bounds_mask_critic_gradient():
    pol, cr = small_setup(4)
    s = np.zeros((3, 1))
    z = np.full((3, 1), 100.0)
    g_r, _ = policy_gradients(pol, cr, None, s, np.inf, noise=z, action_bounds=(-1.0, 1.0))
    assert not g_r.any()


def tiny_data(n=64, seed=0):
    rng = np.random.default_rng(seed)
    s = rng.uniform(-1, 1, (n, 1))
    a = rng.uniform(-1, 1, (n, 1))
    return CriticBatch(s, a, -(a[:, 0] - 0.5) ** 2, s, (a[:, 0] > 0).astype(float))


def test_train_logs_every_step_and_is_reproducible():
    def run():
        pol, cr = small_setup(5)
        cfg = TrainConfig(steps=20, batch_size=16, actor_hidden=(4,), horizon=10, cost_limit=2.0)
        return train(tiny_data(), cr, lambda a, s: -a, cfg, seed=7)
    a, b = run(), run()
    assert [r["step"] for r in a.region_log] == list(range(20))
    assert {r["region"] for r in a.region_log} <= {"safe", "align", "conflict", "unsafe"}
    np.testing.assert_array_equal(a.policy.params, b.policy.params)
    assert a.region_log == b.region_log


def test_bc_only_ignores_critics():
    cfg = TrainConfig(steps=5, batch_size=8, actor_hidden=(4,), bc_only=True)
    res = train(tiny_data(), None, lambda a, s: -a, cfg, seed=0)
    assert {r["region"] for r in res.region_log} == {"bc"}


# tabular harness

def test_npg_update_single_state():
    logits = npg_update(np.zeros((1, 2)), np.array([[1.0, 0.0]]), eta=0.5, gamma=0.5)
    assert softmax_policy(logits).probs[0, 0] == pytest.approx(0.7310585786300049)
    with pytest.raises(ValueError):
        npg_update(np.zeros((1, 2)), np.array([[np.nan, 0.0]]), 0.5, 0.5)


def test_unconstrained_gap_shrinks():
    m = random_cmdp(4, 2, 0, gamma=0.9, cost_limit=1e6)
    rows = tabular_theorem_harness(m, Ts=(10, 40, 160), eta_scale=1.0)["rows"]
    gaps = [r["gap"] for r in rows]
    assert gaps[0] > gaps[1] > gaps[2] >= -1e-9
    assert all(r["n_safe"] == r["T"] for r in rows)


def test_slack_beyond_reachable_costs_matches_unconstrained_run():
    m = random_cmdp(4, 2, 1, gamma=0.9, cost_limit=0.5)
    free = random_cmdp(4, 2, 1, gamma=0.9, cost_limit=1e6)
    # every V_c lies below c_max / (1 - gamma) <= 10, so the band never triggers
    wide = run_npg(m.__class__(m.transition, m.reward, m.cost, m.gamma, m.initial_dist, 20.0),
                   30, 0.3, 0.0, 0.0)
    ref = run_npg(free, 30, 0.3, 0.0, 0.0)
    assert set(wide.regions) == {"safe"}
    np.testing.assert_array_equal(wide.final_policy.probs, ref.final_policy.probs)


def test_region_counts_partition_iterations_and_conflict_weights():
    m = load_cmdp(DATA / "constrained_4x2.cmdp")
    run = run_npg(m, 200, 3.0 / np.sqrt(200), 0.05, 0.05)
    assert sum(run.counts().values()) == 200
    for region, w in zip(run.regions, run.weights):
        expected = {"safe": 1.0, "unsafe": 0.0, "align": 0.5}.get(region)
        if expected is None:
            assert w >= 0.5
        else:
            assert w == expected


def test_reward_branch_improves_monotonically():
    m = random_cmdp(3, 2, 2, gamma=0.8, cost_limit=1e6)
    run = run_npg(m, 30, 0.5, 0.0, 0.0)
    assert np.all(np.diff(run.values_r) >= -1e-12)


def test_always_unsafe_run_is_degenerate():
    m = random_cmdp(3, 2, 3, gamma=0.8, cost_limit=0.0)
    run = run_npg(m, 5, 0.1, 0.0, 0.0)
    assert run.degenerate
    assert run.counts()["unsafe"] == 5
    assert run.weighted_policy is None and run.final_policy is not None


def test_auto_slack_formula():
    m = random_cmdp(2, 2, 0, gamma=0.5)
    M = max(m.reward_max, m.cost_max)
    want = 2 * np.sqrt(4 / (0.125 * 100)) * (4 * M ** 2 + 6 * M)
    assert auto_slack(m, 100) == pytest.approx(want)


@settings(max_examples=40, deadline=None)
@given(st.floats(-5, 5), st.floats(0, 2), st.floats(0, 2))
def test_region_choice_matches_threshold_chain(est, hp, hm):
    region = select_region(est, 1.0, hp, hm)
    if est <= 1.0 - hm:
        assert region == "safe"
    elif est <= 1.0 + hp:
        assert region == "band"
    else:
        assert region == "unsafe"


def test_large_beta_reduces_to_q_ascent():
    pol, cr = small_setup(6)
    rng = np.random.default_rng(2)
    s = rng.standard_normal((5, 1))
    z = rng.standard_normal((5, 1))
    huge, _ = policy_gradients(pol, cr, lambda a, s: -a, s, 1e12, noise=z)
    pure, _ = policy_gradients(pol, cr, None, s, np.inf, noise=z)
    np.testing.assert_allclose(huge, pure, rtol=1e-3, atol=1e-12)


def test_score_only_combine_is_identity():
    pol, _ = small_setup()
    g_r, g_c = policy_gradients(pol, None, lambda a, s: -a, np.zeros((4, 1)), 0.5, rng=1)
    g, region = safe_adaptation(1.0, 1.0, 0.1, 0.1, g_r, g_c)
    assert region == "align"
    np.testing.assert_allclose(g, g_r)


@pytest.mark.parametrize("limit,slack,expected", [(np.inf, 0.2, {"safe"}),
                                                  (0.0, 0.0, {"unsafe"})])
def test_extreme_limits_fix_the_region(limit, slack, expected):
    pol, cr = small_setup(7)
    data = tiny_data()
    data.cost[:] = 1.0
    cfg = TrainConfig(steps=10, batch_size=16, actor_hidden=(4,), cost_limit=limit,
                      h_plus=slack, h_minus=slack, horizon=10)
    if limit == 0.0:
        # a strictly positive estimate needs positive cost predictions
        for q in cr.q_cost:
            q.params[-1] = 5.0
    res = train(data, cr, lambda a, s: -a, cfg, seed=0)
    assert {r["region"] for r in res.region_log} == expected


def test_npg_leaves_policy_unchanged_for_constant_q_or_zero_step():
    logits = np.array([[0.3, -0.2, 1.0]])
    pi = softmax_policy(logits).probs
    np.testing.assert_allclose(softmax_policy(npg_update(logits, np.full((1, 3), 4.0), 0.7,
                                                         0.9)).probs, pi)
    np.testing.assert_allclose(softmax_policy(npg_update(logits, np.ones((1, 3)) * [1, 2, 3],
                                                         0.0, 0.9)).probs, pi)


def test_cost_free_cmdp_gap_ratio_matches_inverse_sqrt():
    m = random_cmdp(4, 2, 3, gamma=0.9, cost_limit=0.0)
    free = m.__class__(m.transition, m.reward, np.zeros_like(m.cost), m.gamma, m.initial_dist,
                       1.0)
    rows = tabular_theorem_harness(free, Ts=(50, 800), eta_scale=3.0)["rows"]
    assert rows[0]["n_safe"] == 50
    ratio = rows[1]["gap"] / rows[0]["gap"]
    assert rows[1]["gap"] < rows[0]["gap"]
    assert 1 / 8 <= ratio <= 1 / 2
