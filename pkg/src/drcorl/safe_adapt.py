"""Policy extraction with diffusion regularization and safety adaptation.

Each training step updates the critics, estimates the policy's episodic
cost with the UCB cost critic, and then

* ascends the KL-regularized reward objective when the estimate is at or
  below ``limit - h_minus``,
* ascends the KL-regularized cost objective when it exceeds ``limit + h_plus``,
* combines both gradients (:func:`drcorl.grad_manip.combine`) in between.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import grad_manip
from .critics import estimate_episodic_cost
from .dataset import normalized_cost, normalized_return, rollout
from .nn import Adam
from .policy import GaussianPolicy

REGIONS = ("safe", "align", "conflict", "unsafe")


@dataclass(frozen=True)
class SlackBand:
    h_plus: float = 0.2
    h_minus: float = 0.2
    total_steps: int = 1
    decay: bool = True

    def __post_init__(self):
        if self.h_plus < 0 or self.h_minus < 0:
            raise ValueError("slack values must be non-negative")

    def at(self, step):
        if not self.decay:
            return self.h_plus, self.h_minus
        frac = max(0.0, 1.0 - step / max(self.total_steps, 1))
        return self.h_plus * frac, self.h_minus * frac


@dataclass(frozen=True)
class BetaSchedule:
    """Temperature of the KL regularizer (the objective weights KL by 1/beta)."""

    kind: str = "linear"
    start: float = 0.04
    end: float = 1.0
    total_steps: int = 1

    def __post_init__(self):
        if self.kind not in ("constant", "linear", "sqrt"):
            raise ValueError(f"unknown beta schedule {self.kind!r}")
        if self.start <= 0 or self.end <= 0:
            raise ValueError("beta must stay positive")

    def at(self, step):
        frac = min(1.0, step / max(self.total_steps - 1, 1))
        if self.kind == "constant":
            return self.start
        if self.kind == "sqrt":
            frac = np.sqrt(frac)
        return self.start + (self.end - self.start) * frac


def policy_gradients(policy: GaussianPolicy, critics, score_fn, states, beta, rng=None,
                     noise=None, action_bounds=None):
    """Reparameterized ascent directions (g_r, g_c) for the two objectives.

    Per sampled action a = m(s) + sigma(s) z the action-space signal is
    grad_a Q_r + score / beta (reward) or -grad_a Q_c^UCB + score / beta
    (cost), where score = grad_a log mu(a | s) from the diffusion model.
    Pass ``critics=None`` or ``score_fn=None`` to drop either term;
    ``beta=np.inf`` also drops the regularizer. With `action_bounds` the
    critics see clip(a) and their action gradient vanishes outside the box,
    while the score is still taken at the raw action.
    """
    states = policy._states(states)
    n = states.shape[0]
    if noise is None:
        rng = np.random.default_rng(rng)
        noise = rng.standard_normal((n, policy.action_dim))
    z = np.asarray(noise, dtype=np.float64).reshape(n, policy.action_dim)
    a = policy.mean(states) + policy.std(states) * z
    inv_beta = 0.0 if np.isinf(beta) else 1.0 / beta
    reg = np.zeros_like(a)
    if score_fn is not None and inv_beta:
        reg = inv_beta * np.asarray(score_fn(a, states)).reshape(a.shape)
    if critics is not None:
        a_c, inside = a, 1.0
        if action_bounds is not None:
            a_c = np.clip(a, *action_bounds)
            inside = (a == a_c).astype(np.float64)
        up_r = inside * critics.reward_q_action_grad(states, a_c) + reg
        up_c = -inside * critics.ucb_cost_action_grad(states, a_c) + reg
    else:
        up_r = up_c = reg
    entropy_term = inv_beta * policy.logdet_grad(states) / n if score_fn is not None else 0.0
    g_r = policy.action_grad(states, z, up_r / n) + entropy_term
    if up_c is up_r:
        g_c = g_r.copy()
    else:
        g_c = policy.action_grad(states, z, up_c / n) + entropy_term
    return g_r, g_c


def select_region(cost_estimate, limit, h_plus, h_minus):
    """'safe', 'band' or 'unsafe'; boundaries resolve like the if/elif chain."""
    if cost_estimate <= limit - h_minus:
        return "safe"
    if cost_estimate <= limit + h_plus:
        return "band"
    return "unsafe"


def safe_adaptation(cost_estimate, limit, h_plus, h_minus, g_r, g_c):
    """Return (g, region) with region in ('safe', 'align', 'conflict', 'unsafe')."""
    region = select_region(cost_estimate, limit, h_plus, h_minus)
    if region == "safe":
        return np.asarray(g_r, dtype=np.float64), region
    if region == "unsafe":
        return np.asarray(g_c, dtype=np.float64), region
    region = "conflict" if grad_manip.is_conflicting(g_r, g_c) else "align"
    return grad_manip.combine(g_r, g_c), region


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 256
    actor_lr: float = 6e-4
    actor_lr_final: float = 1.0
    actor_hidden: tuple = (64, 64)
    policy_sigma: float = 0.2
    state_dependent_std: bool = False
    cost_limit: float = 10.0
    cost_eps: float = 0.1
    c_min: float = 0.0
    horizon: int = 200
    h_plus: float = 0.2
    h_minus: float = 0.2
    slack_decay: bool = True
    beta_schedule: str = "linear"
    beta_start: float = 0.04
    beta_end: float = 1.0
    score_t: int = 1
    update_critics: bool = True
    critic_updates: int = 1
    bc_only: bool = False
    eval_every: int = 500
    eval_episodes: int = 5
    deterministic_eval: bool = True
    action_low: float = -np.inf
    action_high: float = np.inf


@dataclass
class TrainResult:
    policy: GaussianPolicy
    region_log: list = field(default_factory=list)
    metrics: list = field(default_factory=list)


def evaluate_policy(env, policy, n_episodes, horizon, seed, cost_limit, return_range,
                    cost_eps=0.1, c_min=0.0, deterministic=True):
    """Roll out a Gaussian policy; returns (normalized return, normalized cost, stats)."""
    def act(state, rng):
        a = policy.act(state, rng, deterministic=deterministic)[0]
        return np.clip(a, env.action_low, env.action_high)
    _, stats = rollout(env, act, n_episodes, horizon, seed)
    ret = float(np.mean([s.episodic_return for s in stats]))
    cost = float(np.mean([s.episodic_cost for s in stats]))
    return (normalized_return(ret, *return_range),
            normalized_cost(cost, cost_limit, c_min, cost_eps), stats)


def train(data, critics, score_fn, cfg: TrainConfig, seed=0, env=None, return_range=None,
          initial_states=None, policy=None):
    """Extract a Gaussian policy.

    `data` is a feature-encoded :class:`~drcorl.critics.CriticBatch`;
    `score_fn(a, s)` the diffusion score at the smallest noise level.
    When `env` is given the policy is evaluated every ``cfg.eval_every``
    steps and at the end, filling ``metrics`` rows. The cost estimate is
    taken over `initial_states` (feature-encoded episode starts, standing
    in for rho) when given, otherwise over the mini-batch states.
    """
    rng = np.random.default_rng(seed)
    state_dim = data.state.shape[1]
    action_dim = data.action.shape[1]
    if policy is None:
        policy = GaussianPolicy(state_dim, action_dim, hidden=cfg.actor_hidden,
                                sigma=cfg.policy_sigma, state_dependent=cfg.state_dependent_std,
                                rng=rng)
    opt = Adam(policy.n_params, lr=cfg.actor_lr)
    band = SlackBand(cfg.h_plus, cfg.h_minus, cfg.steps, cfg.slack_decay)
    betas = BetaSchedule(cfg.beta_schedule, cfg.beta_start, cfg.beta_end, cfg.steps)
    result = TrainResult(policy)

    bounds = (cfg.action_low, cfg.action_high)

    def sampler(s, r):
        return np.clip(policy.sample(s, r), *bounds)

    def record(step, region, beta, hp, hm):
        if env is None:
            return
        nr, nc, _ = evaluate_policy(env, policy, cfg.eval_episodes, cfg.horizon,
                                    seed=int(rng.integers(2 ** 31)), cost_limit=cfg.cost_limit,
                                    return_range=return_range, cost_eps=cfg.cost_eps,
                                    c_min=cfg.c_min, deterministic=cfg.deterministic_eval)
        result.metrics.append({"step": step, "normalized_return": nr, "normalized_cost": nc,
                               "region": region, "beta": beta, "h_plus": hp, "h_minus": hm})

    region = "none"
    for step in range(cfg.steps):
        batch = data.take(rng.integers(0, len(data), size=cfg.batch_size))
        beta = betas.at(step)
        hp, hm = band.at(step)
        frac = step / max(cfg.steps - 1, 1)
        opt.lr = cfg.actor_lr * (1.0 - frac + cfg.actor_lr_final * frac)
        if cfg.bc_only:
            g, _ = policy_gradients(policy, None, score_fn, batch.state, beta, rng)
            region, est, norm_est, cos = "bc", float("nan"), float("nan"), float("nan")
        else:
            if cfg.update_critics:
                critics.reward_step(batch)
                for k in range(cfg.critic_updates):
                    cb = batch if k == 0 else data.take(
                        rng.integers(0, len(data), size=cfg.batch_size))
                    critics.cost_step(cb, sampler(cb.next_state, rng), sampler(cb.state, rng))
            probe = batch.state if initial_states is None else initial_states
            q_hat, est = estimate_episodic_cost(critics, probe, sampler, rng, cfg.horizon)
            norm_est = normalized_cost(est, cfg.cost_limit, cfg.c_min, cfg.cost_eps)
            g_r, g_c = policy_gradients(policy, critics, score_fn, batch.state, beta, rng,
                                        action_bounds=bounds)
            g, region = safe_adaptation(norm_est, 1.0, hp, hm, g_r, g_c)
            denom = np.linalg.norm(g_r) * np.linalg.norm(g_c)
            cos = float(g_r @ g_c / denom) if denom > 0 else 1.0
        opt.step(policy.params, -g)
        result.region_log.append({"step": step, "region": region, "estimated_cost": est,
                                  "normalized_estimate": norm_est, "cosine": cos,
                                  "beta": beta, "h_plus": hp, "h_minus": hm})
        if cfg.eval_every and (step + 1) % cfg.eval_every == 0 and step + 1 < cfg.steps:
            record(step + 1, region, beta, hp, hm)
    record(cfg.steps, region, betas.at(cfg.steps - 1), *band.at(cfg.steps))
    return result
