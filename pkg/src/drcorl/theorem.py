"""Tabular softmax natural-policy-gradient runs with region switching.

With exact critics this is the idealized version of the training loop: the
reward and cost ascent directions are the natural gradients A_r/(1-gamma)
and -A_c/(1-gamma), the region test uses the exact V_c(rho), and the
iterates are averaged into a weighted policy whose optimality gap and
constraint violation are reported as functions of the iteration count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import grad_manip
from .cmdp import TabularPolicy, advantage, initial_value, optimal_policy
from .safe_adapt import safe_adaptation


def softmax_policy(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    return TabularPolicy(p / p.sum(axis=1, keepdims=True))


def npg_update(logits, q, eta, gamma):
    """pi' ∝ pi exp(eta Q / (1 - gamma)), done in logit space."""
    q = np.asarray(q, dtype=np.float64)
    if not np.isfinite(q).all():
        raise ValueError("Q matrix must be finite")
    return logits + eta * q / (1.0 - gamma)


def auto_slack(cmdp, T, eps_dist=0.0):
    """h_plus = 2 sqrt(|S||A| / ((1-gamma)^3 T)) (eps_dist + 4 M^2 + 6 M)."""
    M = max(cmdp.reward_max, cmdp.cost_max)
    S, A, g = cmdp.n_states, cmdp.n_actions, cmdp.gamma
    return 2.0 * np.sqrt(S * A / ((1.0 - g) ** 3 * T)) * (eps_dist + 4 * M ** 2 + 6 * M)


@dataclass
class HarnessRun:
    T: int
    eta: float
    h_plus: float
    h_minus: float
    regions: list = field(default_factory=list)
    weights: list = field(default_factory=list)
    reward_coefs: list = field(default_factory=list)
    cost_coefs: list = field(default_factory=list)
    values_r: list = field(default_factory=list)
    values_c: list = field(default_factory=list)
    weighted_policy: TabularPolicy | None = None
    final_policy: TabularPolicy | None = None

    @property
    def degenerate(self):
        return self.weighted_policy is None

    def counts(self):
        return {r: self.regions.count(r) for r in ("safe", "unsafe", "align", "conflict")}


def run_npg(cmdp, T, eta, h_plus, h_minus, init_logits=None):
    """T iterations of region-switched NPG with exact critics."""
    S, A, g = cmdp.n_states, cmdp.n_actions, cmdp.gamma
    logits = np.zeros((S, A)) if init_logits is None else np.array(init_logits, dtype=np.float64)
    run = HarnessRun(T, eta, h_plus, h_minus)
    mix = np.zeros((S, A))
    total = 0.0
    for _ in range(T):
        pi = softmax_policy(logits)
        v_c = initial_value(cmdp, pi, "cost")
        run.values_r.append(initial_value(cmdp, pi, "reward"))
        run.values_c.append(v_c)
        g_r = (advantage(cmdp, pi, "reward") / (1.0 - g)).ravel()
        g_c = (-advantage(cmdp, pi, "cost") / (1.0 - g)).ravel()
        step, region = safe_adaptation(v_c, cmdp.cost_limit, h_plus, h_minus, g_r, g_c)
        if region == "safe":
            w, cr, cc = 1.0, 1.0, 0.0
        elif region == "unsafe":
            w, cr, cc = 0.0, 0.0, 1.0
        elif region == "align":
            w, cr, cc = 0.5, 0.5, 0.5
        else:
            w, cr, cc = grad_manip.conflict_weights(g_r, g_c)
        run.regions.append(region)
        run.weights.append(float(w))
        run.reward_coefs.append(float(cr))
        run.cost_coefs.append(float(cc))
        mix += w * pi.probs
        total += w
        logits = npg_update(logits, step.reshape(S, A) * (1.0 - g), eta, g)
    run.final_policy = softmax_policy(logits)
    if total > 0:
        run.weighted_policy = TabularPolicy(mix / total)
    return run


def tabular_theorem_harness(cmdp, Ts=(50, 200, 800), eta_scale=1.0, h_plus=0.05, h_minus=0.05,
                            step_rule="sqrt", slack="fixed", eps_dist=0.0, init_logits=None):
    """Run region-switched NPG for each T; report gap and violation.

    step_rule "sqrt" uses eta = eta_scale / sqrt(T), "constant" eta = eta_scale.
    slack "auto" replaces h_plus by :func:`auto_slack` and sets h_minus = 0.
    The gap is measured against the best policy satisfying the constraint.
    """
    best = optimal_policy(cmdp, constrained=True)
    v_star = initial_value(cmdp, best, "reward")
    rows = []
    for T in Ts:
        eta = eta_scale / np.sqrt(T) if step_rule == "sqrt" else eta_scale
        hp, hm = (auto_slack(cmdp, T, eps_dist), 0.0) if slack == "auto" else (h_plus, h_minus)
        run = run_npg(cmdp, T, eta, hp, hm, init_logits)
        row = {"T": T, "eta": eta, "h_plus": hp, "h_minus": hm, "degenerate": run.degenerate,
               **{f"n_{k}": v for k, v in run.counts().items()}}
        final_r = initial_value(cmdp, run.final_policy, "reward")
        final_c = initial_value(cmdp, run.final_policy, "cost")
        row["final_gap"] = v_star - final_r
        row["final_violation"] = final_c - cmdp.cost_limit
        if run.degenerate:
            row["gap"] = row["violation"] = float("nan")
        else:
            row["gap"] = v_star - initial_value(cmdp, run.weighted_policy, "reward")
            row["violation"] = initial_value(cmdp, run.weighted_policy, "cost") - cmdp.cost_limit
        conflict = [i for i, r in enumerate(run.regions) if r == "conflict"]
        row["mean_conflict_reward_coef"] = (
            float(np.mean([run.reward_coefs[i] for i in conflict])) if conflict else float("nan"))
        row["mean_conflict_cost_coef"] = (
            float(np.mean([run.cost_coefs[i] for i in conflict])) if conflict else float("nan"))
        rows.append(row)
    return {"v_star": v_star, "rows": rows}
