"""Pipeline stages shared by the command line and the acceptance suite.

Each stage is a plain function of an :class:`ExperimentConfig` and the
artifacts of earlier stages; the ``*_file`` helpers map them to paths
under ``experiment.out_dir``. Randomness is derived from the config seed
and a per-stage tag, so every stage is reproducible on its own.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cmdp import expected_episode_sum, load_cmdp
from .config import ExperimentConfig
from .critics import (CriticConfig, CriticEnsemble, encode_dataset, tabular_sampler,
                      train_cost_critic, train_reward_critic)
from .dataset import TransitionDataset, normalized_cost, normalized_return, rollout
from .diffusion import Denoiser, NoiseSchedule, reverse_sample, score, train_denoiser
from .envs import PointMassEnv, TabularEnv, TabularSampler, point_mass_behavior, tabular_behavior
from .policy import GaussianPolicy
from .safe_adapt import TrainConfig, evaluate_policy, train

STAGES = {"data": 1, "diffusion": 2, "critics": 3, "train": 4, "eval": 5}

DATASET_FILE = "dataset.csv"
DENOISER_FILE = "denoiser.json"
CRITICS_FILE = "critics.json"
POLICY_FILE = "policy.json"
METRICS_FILE = "metrics.csv"
REGIONS_FILE = "regions.csv"
EVAL_FILE = "eval.csv"
THEOREM_FILE = "theorem.csv"

METRIC_COLUMNS = ["step", "normalized_return", "normalized_cost", "region", "beta",
                  "h_plus", "h_minus"]
REGION_COLUMNS = ["step", "region", "estimated_cost", "normalized_estimate", "cosine", "beta",
                  "h_plus", "h_minus"]


class MissingArtifact(FileNotFoundError):
    pass


def stage_seed(cfg: ExperimentConfig, stage):
    return int(np.random.SeedSequence([cfg.seed, STAGES[stage]]).generate_state(1)[0])


def out_path(cfg, name):
    return Path(cfg.experiment.out_dir) / name


def require(path, hint=""):
    path = Path(path)
    if not path.is_file():
        raise MissingArtifact(f"missing checkpoint or artifact: {path}" + (f" ({hint})" if hint else ""))
    return path


# environments and behavior


def make_env(cfg):
    if cfg.is_tabular:
        return TabularEnv(load_cmdp(cfg.experiment.env))
    return PointMassEnv()


def behavior_policy(cfg, env):
    d = cfg.data
    if cfg.is_tabular:
        return TabularSampler(tabular_behavior(env.cmdp, d.behavior_epsilon, d.safe_ratio))
    return point_mass_behavior(env, epsilon=d.behavior_epsilon, noise=d.behavior_noise)


def generate_dataset(cfg):
    env = make_env(cfg)
    ds, _ = rollout(env, behavior_policy(cfg, env), cfg.data.episodes, cfg.env.horizon,
                    stage_seed(cfg, "data"))
    return ds


@dataclass(frozen=True)
class StateCodec:
    """Maps raw environment states to the features every network sees."""

    n_states: int | None = None
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    @classmethod
    def fit(cls, cfg, ds: TransitionDataset):
        if ds.discrete_states:
            return cls(n_states=int(make_env(cfg).n_states))
        if not cfg.train.normalize_states:
            return cls()
        std = ds.state.std(axis=0)
        return cls(mean=ds.state.mean(axis=0), std=np.where(std > 0, std, 1.0))

    def __call__(self, states):
        states = np.asarray(states)
        if self.n_states is not None:
            out = np.zeros((states.size, self.n_states))
            out[np.arange(states.size), states.astype(np.int64).ravel()] = 1.0
            return out
        states = np.atleast_2d(states.astype(np.float64))
        if self.mean is None:
            return states
        return (states - self.mean) / self.std


def encode(cfg, ds):
    """Feature batch, state codec and feature-encoded episode starts."""
    codec = StateCodec.fit(cfg, ds)
    n_actions = make_env(cfg).n_actions if ds.discrete_actions else None
    batch = encode_dataset(ds, codec.n_states, n_actions)
    if codec.mean is not None:
        batch.state = codec(ds.state)
        batch.next_state = codec(ds.next_state)
    starts = np.concatenate([[0], np.flatnonzero(ds.done)[:-1] + 1])
    return batch, codec, codec(ds.state[starts])


# pretraining


def build_denoiser(cfg, state_dim, action_dim):
    d = cfg.diffusion
    sched = NoiseSchedule.from_name(d.schedule, d.timesteps)
    return Denoiser(sched, state_dim, action_dim, hidden=d.hidden,
                    rng=stage_seed(cfg, "diffusion"))


def pretrain_diffusion(cfg, ds):
    if cfg.is_tabular:
        raise ValueError("diffusion pretraining needs a continuous-action environment")
    batch, _, _ = encode(cfg, ds)
    den = build_denoiser(cfg, batch.state.shape[1], batch.action.shape[1])
    d = cfg.diffusion
    train_denoiser(den, batch.state, batch.action, d.train_steps, d.batch_size, d.lr,
                   seed=stage_seed(cfg, "diffusion"))
    return den


def critic_config(cfg):
    c = cfg.critics
    return CriticConfig(gamma=c.gamma, expectile_tau=c.expectile_tau,
                        soft_update_tau=c.soft_update_tau, n_cost=c.ensemble_size,
                        ucb_k=c.ucb_k, alpha=c.alpha, lr=c.lr, batch_size=c.batch_size,
                        hidden=c.hidden)


def empirical_behavior(ds, n_states, n_actions):
    """Per-state action frequencies (uniform where a state never occurs)."""
    counts = np.zeros((n_states, n_actions))
    np.add.at(counts, (ds.state, ds.action), 1.0)
    totals = counts.sum(axis=1, keepdims=True)
    return np.where(totals > 0, counts / np.maximum(totals, 1.0), 1.0 / n_actions)


def pretrain_critics(cfg, ds, denoiser=None):
    """IQL reward critic plus cost ensemble evaluated under the behavior.

    Next actions for the cost TD target come from the diffusion model
    (continuous) or the empirical behavior (tabular).
    """
    batch, codec, _ = encode(cfg, ds)
    seed = stage_seed(cfg, "critics")
    critics = CriticEnsemble(batch.state.shape[1], batch.action.shape[1], critic_config(cfg),
                             rng=seed)
    if cfg.is_tabular:
        env = make_env(cfg)
        sampler = tabular_sampler(empirical_behavior(ds, env.n_states, env.n_actions),
                                  env.n_states, env.n_actions)
    else:
        if denoiser is None:
            raise ValueError("continuous cost critics need the diffusion model for next actions")
        bounds = (PointMassEnv.action_low, PointMassEnv.action_high)

        def sampler(states, rng):
            return np.clip(reverse_sample(denoiser, states, rng), *bounds)
    steps = cfg.critics.pretrain_steps
    train_reward_critic(critics, batch, steps, seed=seed)
    train_cost_critic(critics, batch, sampler, steps, seed=seed + 1)
    return critics


# policy extraction


def train_config(cfg):
    t = cfg.train
    return TrainConfig(
        steps=t.steps, batch_size=t.batch_size, actor_lr=t.lr, actor_lr_final=t.lr_final,
        actor_hidden=t.hidden,
        policy_sigma=t.sigma, state_dependent_std=t.state_dependent_std,
        cost_limit=cfg.env.cost_limit, cost_eps=cfg.env.cost_eps, horizon=cfg.env.horizon,
        h_plus=t.h_plus, h_minus=t.h_minus, slack_decay=t.slack_decay,
        beta_schedule=t.beta_schedule, beta_start=t.beta_start, beta_end=t.beta_end,
        score_t=cfg.diffusion.score_t, critic_updates=t.critic_updates, bc_only=t.bc_only,
        eval_every=t.eval_every, eval_episodes=t.eval_episodes,
        deterministic_eval=cfg.eval.deterministic,
        action_low=PointMassEnv.action_low, action_high=PointMassEnv.action_high)


class EncodedEnv:
    """Presents an environment in feature space (for policy evaluation)."""

    def __init__(self, env, codec):
        self.env = env
        self.codec = codec
        self.action_low = env.action_low
        self.action_high = env.action_high

    def reset(self, rng):
        return self.codec(self.env.reset(rng))[0]

    def step(self, action, rng=None):
        s, r, c = self.env.step(action, rng)
        return self.codec(s)[0], r, c


def train_policy(cfg, ds, denoiser, critics):
    if cfg.is_tabular:
        raise ValueError("policy extraction runs on the continuous point-mass environment")
    batch, codec, starts = encode(cfg, ds)
    t_score = cfg.diffusion.score_t

    def score_fn(a, s):
        return score(denoiser, a, t_score, s)
    env = EncodedEnv(make_env(cfg), codec)
    return train(batch, critics, score_fn, train_config(cfg), seed=stage_seed(cfg, "train"),
                 env=env, return_range=ds.return_range(), initial_states=starts)


# evaluation


def evaluate(cfg, ds, policy=None):
    """Normalized return and cost of `policy` (None: the behavior policy).

    For tabular environments the exact expected episodic cost is reported
    alongside the Monte-Carlo estimate.
    """
    env = make_env(cfg)
    n = cfg.eval.episodes
    seed = stage_seed(cfg, "eval")
    lo, hi = ds.return_range()
    limit, eps = cfg.env.cost_limit, cfg.env.cost_eps
    report = {"policy": "behavior" if policy is None else "trained", "episodes": n}
    if policy is None:
        _, stats = rollout(env, behavior_policy(cfg, env), n, cfg.env.horizon, seed)
    else:
        _, codec, _ = encode(cfg, ds)
        _, _, stats = evaluate_policy(EncodedEnv(env, codec), policy, n, cfg.env.horizon, seed,
                                      limit, (lo, hi), eps,
                                      deterministic=cfg.eval.deterministic)
    costs = np.array([s.episodic_cost for s in stats])
    rets = np.array([s.episodic_return for s in stats])
    report["normalized_return"] = float(normalized_return(rets.mean(), lo, hi))
    report["normalized_cost"] = float(normalized_cost(costs.mean(), limit, 0.0, eps))
    report["normalized_cost_se"] = float(costs.std(ddof=1) / np.sqrt(n) / (limit + eps)) if n > 1 else float("nan")
    if cfg.is_tabular and policy is None:
        exact = expected_episode_sum(env.cmdp, behavior_policy(cfg, env).policy,
                                     cfg.env.horizon, "cost")
        report["exact_normalized_cost"] = float(normalized_cost(exact, limit, 0.0, eps))
    return report


# files


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(path, columns, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def write_plot_sidecar(path, csv_name, x, ys, title):
    """Static description of how to plot a CSV; rendering is left to other tools."""
    Path(path).write_text(json.dumps(
        {"data": csv_name, "kind": "line", "x": x, "y": ys, "title": title}, indent=2,
        sort_keys=True) + "\n")


def load_policy(path):
    return GaussianPolicy.load(require(path, "run `train` first"))
