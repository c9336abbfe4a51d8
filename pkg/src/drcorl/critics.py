"""Reward critics (expectile / implicit Q-learning), pessimistic cost critics,
and the UCB cost estimate used to pick between reward and cost updates.

All critics consume float feature arrays: continuous states/actions as-is,
tabular ones one-hot encoded (see :func:`one_hot`). Episode boundaries in
the datasets are time-limit cuts, so targets always bootstrap.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .nn import Adam, Mlp


def expectile_loss(u, tau):
    u = np.asarray(u, dtype=np.float64)
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"expectile tau must lie in [0, 1], got {tau}")
    return np.abs(tau - (u < 0)) * u ** 2


def one_hot(indices, n):
    indices = np.asarray(indices, dtype=np.int64)
    out = np.zeros((indices.size, n))
    out[np.arange(indices.size), indices.ravel()] = 1.0
    return out


@dataclass
class CriticConfig:
    gamma: float = 0.99
    expectile_tau: float = 0.7
    soft_update_tau: float = 0.005
    n_cost: int = 4
    ucb_k: float = 2.0
    alpha: float = 0.2
    lr: float = 6e-4
    batch_size: int = 256
    hidden: tuple = (64, 64)

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.n_cost < 2:
            raise ValueError("cost ensemble needs at least 2 members")
        if not 0.0 < self.soft_update_tau <= 1.0:
            raise ValueError("soft_update_tau must lie in (0, 1]")
        if self.ucb_k < 0:
            raise ValueError("ucb_k must be >= 0")


@dataclass
class CriticBatch:
    """Feature-encoded transitions."""

    state: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_state: np.ndarray
    cost: np.ndarray

    def __len__(self):
        return len(self.reward)

    def take(self, idx):
        return CriticBatch(self.state[idx], self.action[idx], self.reward[idx],
                           self.next_state[idx], self.cost[idx])


def encode_dataset(ds, n_states=None, n_actions=None):
    """Feature-encode a TransitionDataset (one-hot for discrete fields)."""
    def enc(x, n):
        if x.ndim == 1:
            if n is None:
                raise ValueError("discrete field needs its cardinality for one-hot encoding")
            return one_hot(x, n)
        return x.astype(np.float64)
    return CriticBatch(enc(ds.state, n_states), enc(ds.action, n_actions), ds.reward.copy(),
                       enc(ds.next_state, n_states), ds.cost.copy())


class CriticEnsemble:
    def __init__(self, state_dim, action_dim, cfg=None, rng=None):
        self.cfg = cfg or CriticConfig()
        self.state_dim = state_dim
        self.action_dim = action_dim
        rng = np.random.default_rng(rng)
        sa = (state_dim + action_dim, *self.cfg.hidden, 1)
        self.q_reward = [Mlp(sa, rng=rng) for _ in range(2)]
        self.v_reward = Mlp((state_dim, *self.cfg.hidden, 1), rng=rng)
        self.q_cost = [Mlp(sa, rng=rng) for _ in range(self.cfg.n_cost)]
        self._init_training_state()

    def _init_training_state(self):
        self.q_reward_target = [q.copy() for q in self.q_reward]
        self.q_cost_target = [q.copy() for q in self.q_cost]
        lr = self.cfg.lr
        self._opt_qr = [Adam(q.n_params, lr) for q in self.q_reward]
        self._opt_v = Adam(self.v_reward.n_params, lr)
        self._opt_qc = [Adam(q.n_params, lr) for q in self.q_cost]

    def set_lr(self, lr):
        for opt in (*self._opt_qr, self._opt_v, *self._opt_qc):
            opt.lr = lr

    @staticmethod
    def _sa(s, a):
        return np.column_stack([np.atleast_2d(s), np.atleast_2d(a)])

    # evaluation

    def reward_q(self, s, a):
        x = self._sa(s, a)
        return np.minimum(self.q_reward[0](x)[:, 0], self.q_reward[1](x)[:, 0])

    def reward_v(self, s):
        return self.v_reward(np.atleast_2d(s))[:, 0]

    def cost_members(self, s, a):
        x = self._sa(s, a)
        return np.stack([q(x)[:, 0] for q in self.q_cost])

    def ucb_cost(self, s, a):
        return ucb(self.cost_members(s, a), self.cfg.ucb_k)

    def reward_q_action_grad(self, s, a):
        """d/da of min(Q_r1, Q_r2), choosing the active member per sample."""
        x = self._sa(s, a)
        q1, q2 = self.q_reward[0](x)[:, 0], self.q_reward[1](x)[:, 0]
        pick1 = (q1 <= q2)[:, None].astype(np.float64)
        g = (self.q_reward[0].grad_input(x, pick1) + self.q_reward[1].grad_input(x, 1.0 - pick1))
        return g[:, self.state_dim:]

    def ucb_cost_action_grad(self, s, a):
        """d/da of mean_i Q_ci + k * std_i Q_ci (population std)."""
        x = self._sa(s, a)
        vals = np.stack([q(x)[:, 0] for q in self.q_cost])
        E = len(self.q_cost)
        mean = vals.mean(axis=0)
        std = vals.std(axis=0)
        safe_std = np.where(std > 0, std, 1.0)
        # d std / d Q_i = (Q_i - mean) / (E std)
        coef = 1.0 / E + self.cfg.ucb_k * np.where(std > 0, (vals - mean) / (E * safe_std), 0.0)
        g = sum(q.grad_input(x, coef[i][:, None]) for i, q in enumerate(self.q_cost))
        return g[:, self.state_dim:]

    # training

    def reward_step(self, batch: CriticBatch):
        """One expectile-value step and one TD step per reward Q network."""
        cfg = self.cfg
        n = len(batch)
        x = self._sa(batch.state, batch.action)
        q_min = np.minimum(self.q_reward_target[0](x)[:, 0], self.q_reward_target[1](x)[:, 0])
        v = self.v_reward(batch.state)[:, 0]
        u = q_min - v
        weight = np.abs(cfg.expectile_tau - (u < 0))
        self._opt_v.step(self.v_reward.params,
                         self.v_reward.grad_params(batch.state, (-2.0 * weight * u / n)[:, None]))
        target = batch.reward + cfg.gamma * self.v_reward(batch.next_state)[:, 0]
        losses = []
        for q, opt in zip(self.q_reward, self._opt_qr):
            diff = q(x)[:, 0] - target
            losses.append(float(np.mean(diff ** 2)))
            opt.step(q.params, q.grad_params(x, (2.0 * diff / n)[:, None]))
        for q, qt in zip(self.q_reward, self.q_reward_target):
            qt.soft_update(q, cfg.soft_update_tau)
        return float(np.mean(expectile_loss(u, cfg.expectile_tau))), losses

    def cost_step(self, batch: CriticBatch, next_actions, policy_actions):
        """Pessimistic TD step for every ensemble member.

        Each member minimizes E[(c + gamma Q_target(s', a') - Q(s, a))^2]
        - alpha E[Q(s, a_pi)], with a' and a_pi drawn from the current policy.
        """
        cfg = self.cfg
        n = len(batch)
        x = self._sa(batch.state, batch.action)
        x_next = self._sa(batch.next_state, next_actions)
        x_pi = self._sa(batch.state, policy_actions)
        xx = np.vstack([x, x_pi])
        losses = []
        for q, qt, opt in zip(self.q_cost, self.q_cost_target, self._opt_qc):
            target = batch.cost + cfg.gamma * qt(x_next)[:, 0]
            out = q(xx)[:, 0]
            diff = out[:n] - target
            losses.append(float(np.mean(diff ** 2) - cfg.alpha * np.mean(out[n:])))
            up = np.concatenate([2.0 * diff / n, np.full(n, -cfg.alpha / n)])
            opt.step(q.params, q.grad_params(xx, up[:, None]))
        for q, qt in zip(self.q_cost, self.q_cost_target):
            qt.soft_update(q, cfg.soft_update_tau)
        return losses

    # persistence

    def to_dict(self):
        cfg = asdict(self.cfg)
        cfg["hidden"] = list(cfg["hidden"])
        return {
            "format": "drcorl-critics", "version": 1,
            "state_dim": self.state_dim, "action_dim": self.action_dim, "config": cfg,
            "q_reward": [q.to_dict() for q in self.q_reward],
            "q_reward_target": [q.to_dict() for q in self.q_reward_target],
            "v_reward": self.v_reward.to_dict(),
            "q_cost": [q.to_dict() for q in self.q_cost],
            "q_cost_target": [q.to_dict() for q in self.q_cost_target],
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("format") != "drcorl-critics":
            raise ValueError("not a critic checkpoint")
        obj = cls.__new__(cls)
        obj.cfg = CriticConfig(**data["config"])
        obj.state_dim, obj.action_dim = data["state_dim"], data["action_dim"]
        obj.q_reward = [Mlp.from_dict(d) for d in data["q_reward"]]
        obj.v_reward = Mlp.from_dict(data["v_reward"])
        obj.q_cost = [Mlp.from_dict(d) for d in data["q_cost"]]
        obj._init_training_state()
        obj.q_reward_target = [Mlp.from_dict(d) for d in data["q_reward_target"]]
        obj.q_cost_target = [Mlp.from_dict(d) for d in data["q_cost_target"]]
        return obj

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def ucb(values, k):
    """Ensemble mean plus k population standard deviations, along axis 0."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] < 2:
        raise ValueError("UCB needs at least two ensemble members")
    return values.mean(axis=0) + k * values.std(axis=0)


def _lr_at(cfg, step, n_steps, final_fraction):
    if final_fraction >= 1.0:
        return cfg.lr
    frac = step / max(n_steps - 1, 1)
    return cfg.lr * (1.0 - frac + final_fraction * frac)


def train_reward_critic(critics, data: CriticBatch, n_steps, seed=0, final_lr_fraction=1.0):
    if len(data) == 0:
        raise ValueError("cannot train critics on an empty dataset")
    rng = np.random.default_rng(seed)
    history = []
    for step in range(n_steps):
        critics.set_lr(_lr_at(critics.cfg, step, n_steps, final_lr_fraction))
        idx = rng.integers(0, len(data), size=critics.cfg.batch_size)
        history.append(critics.reward_step(data.take(idx)))
    critics.set_lr(critics.cfg.lr)
    return history


def train_cost_critic(critics, data: CriticBatch, policy, n_steps, seed=0, final_lr_fraction=1.0):
    """`policy(state_features, rng)` returns action features for a batch of states."""
    if len(data) == 0:
        raise ValueError("cannot train critics on an empty dataset")
    rng = np.random.default_rng(seed)
    history = []
    for step in range(n_steps):
        critics.set_lr(_lr_at(critics.cfg, step, n_steps, final_lr_fraction))
        idx = rng.integers(0, len(data), size=critics.cfg.batch_size)
        b = data.take(idx)
        history.append(critics.cost_step(b, policy(b.next_state, rng), policy(b.state, rng)))
    critics.set_lr(critics.cfg.lr)
    return history


def estimate_episodic_cost(critics, states, policy, rng, horizon, gamma=None):
    """UCB cost value over a batch of states and its episodic rescaling.

    Returns (q_hat, q_hat * (1 - gamma) * horizon).
    """
    states = np.atleast_2d(states)
    if states.shape[0] == 0:
        raise ValueError("empty state batch")
    gamma = critics.cfg.gamma if gamma is None else gamma
    q_hat = float(np.mean(critics.ucb_cost(states, policy(states, rng))))
    return q_hat, q_hat * (1.0 - gamma) * horizon


def tabular_sampler(policy_probs, n_states, n_actions):
    """Wrap a tabular policy as a feature-space sampler for the critics."""
    probs = np.asarray(policy_probs)

    def sample(state_features, rng):
        s = np.argmax(state_features, axis=1)
        cum = probs[s].cumsum(axis=1)
        u = rng.random((len(s), 1))
        a = np.minimum((u > cum).sum(axis=1), n_actions - 1)
        return one_hot(a, n_actions)
    return sample
