"""Discrete variance-preserving diffusion over actions, conditioned on state.

Timesteps run t = 1..T. Forward noising uses the closed form
a_t = sqrt(abar_t) a_0 + sqrt(1 - abar_t) eps; the denoiser eps_psi(a_t, t | s)
is trained to predict eps, and -eps_psi / sqrt(1 - abar_t) is read off as
the score of the noised action distribution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn import Adam, Mlp

SCHEDULES = ("constant", "sqrt", "linear")
DEFAULT_COEFFICIENTS = {
    "constant": (0.02, 0.0),  # beta_t = 0.02
    "sqrt": (0.01, 0.0),  # beta_t = 0.01 sqrt(t)
    "linear": (0.01, 0.04),  # beta_t = 0.01 t + 0.04
}


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray

    def __post_init__(self):
        b = np.array(self.betas, dtype=np.float64)
        if b.ndim != 1 or b.size < 1:
            raise ValueError("betas must be a non-empty vector")
        if (b < 0).any() or (b >= 1).any():
            raise ValueError("every beta_t must lie in [0, 1)")
        object.__setattr__(self, "betas", b)
        alphas = 1.0 - b
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bar", np.cumprod(alphas))
        object.__setattr__(self, "beta_bar", 1.0 - np.cumprod(alphas))

    @property
    def T(self):
        return self.betas.size

    @classmethod
    def from_name(cls, name, T=20, scale=None, offset=None):
        if name not in SCHEDULES:
            raise ValueError(f"unknown schedule {name!r}; choose from {SCHEDULES}")
        d_scale, d_offset = DEFAULT_COEFFICIENTS[name]
        scale = d_scale if scale is None else scale
        offset = d_offset if offset is None else offset
        t = np.arange(1, T + 1, dtype=np.float64)
        if name == "constant":
            betas = np.full(T, scale)
        elif name == "sqrt":
            betas = scale * np.sqrt(t) + offset
        else:
            betas = scale * t + offset
        return cls(np.clip(betas, 1e-8, 0.999))

    def _idx(self, t):
        t = np.asarray(t)
        if (t < 1).any() or (t > self.T).any():
            raise ValueError(f"timestep must lie in [1, {self.T}], got {t}")
        return t.astype(np.int64) - 1

    def to_dict(self):
        return {"betas": self.betas.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(data["betas"])


def noise_action(schedule, a0, t, rng):
    """Forward-noise clean actions to step t. Returns (a_t, eps)."""
    a0 = np.asarray(a0, dtype=np.float64)
    idx = schedule._idx(t)
    eps = rng.standard_normal(a0.shape)
    ab = schedule.alpha_bar[idx]
    if np.ndim(ab):
        ab = ab.reshape(-1, *([1] * (a0.ndim - 1)))
    return np.sqrt(ab) * a0 + np.sqrt(1.0 - ab) * eps, eps


class Denoiser:
    """eps_psi(a_t, t | s): an Mlp over [a_t, s, t/T, sin(pi t/T), cos(pi t/T)]."""

    def __init__(self, schedule, state_dim, action_dim, hidden=(64, 64), rng=None, net=None):
        self.schedule = schedule
        self.state_dim = state_dim
        self.action_dim = action_dim
        in_dim = action_dim + state_dim + 3
        self.net = net if net is not None else Mlp((in_dim, *hidden, action_dim), rng=rng)
        if self.net.n_inputs != in_dim or self.net.n_outputs != action_dim:
            raise ValueError("network shape does not match denoiser dimensions")

    def features(self, a_t, t, s):
        a_t = np.atleast_2d(a_t)
        n = a_t.shape[0]
        s = np.asarray(s, dtype=np.float64).reshape(-1, self.state_dim)
        if s.shape[0] == 1 and n > 1:
            s = np.repeat(s, n, axis=0)
        tau = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,)) / self.schedule.T
        return np.column_stack([a_t, s, tau, np.sin(np.pi * tau), np.cos(np.pi * tau)])

    def predict_noise(self, a_t, t, s):
        return self.net.forward(self.features(a_t, t, s))

    def save(self, path):
        Path(path).write_text(json.dumps({
            "format": "drcorl-denoiser", "version": 1,
            "state_dim": self.state_dim, "action_dim": self.action_dim,
            "schedule": self.schedule.to_dict(), "net": self.net.to_dict(),
        }))

    @classmethod
    def load(cls, path):
        data = json.loads(Path(path).read_text())
        if data.get("format") != "drcorl-denoiser":
            raise ValueError(f"{path} is not a denoiser checkpoint")
        return cls(NoiseSchedule.from_dict(data["schedule"]), data["state_dim"],
                   data["action_dim"], net=Mlp.from_dict(data["net"]))


def train_denoiser(denoiser, states, actions, n_steps, batch_size=256, lr=1e-3, seed=0,
                   weight=None, lr_decay=True):
    """Minimize E[w(t) |eps_psi(a_t, t | s) - eps|^2], t ~ Uniform{1..T}.

    Returns the per-step loss history. `weight` maps an int array of
    timesteps to per-sample weights (default all ones).
    """
    states = np.asarray(states, dtype=np.float64).reshape(len(actions), -1)
    actions = np.asarray(actions, dtype=np.float64).reshape(len(actions), -1)
    if len(actions) == 0:
        raise ValueError("cannot train a denoiser on an empty dataset")
    rng = np.random.default_rng(seed)
    opt = Adam(denoiser.net.n_params, lr=lr)
    sched = denoiser.schedule
    losses = np.empty(n_steps)
    for step in range(n_steps):
        if lr_decay:
            opt.lr = lr * (1.0 - step / n_steps) + 0.05 * lr * step / n_steps
        idx = rng.integers(0, len(actions), size=batch_size)
        t = rng.integers(1, sched.T + 1, size=batch_size)
        a_t, eps = noise_action(sched, actions[idx], t, rng)
        x = denoiser.features(a_t, t, states[idx])
        pred = denoiser.net.forward(x)
        w = np.ones(batch_size) if weight is None else np.asarray(weight(t), dtype=np.float64)
        diff = pred - eps
        losses[step] = float(np.mean(w * (diff ** 2).sum(axis=1)))
        grad = denoiser.net.grad_params(x, 2.0 * w[:, None] * diff / batch_size)
        opt.step(denoiser.net.params, grad)
    return losses


def score(denoiser, a, t, s):
    """Estimated grad_a log p_t(a | s) = -eps_psi(a, t | s) / sqrt(1 - abar_t)."""
    idx = denoiser.schedule._idx(t)
    bb = denoiser.schedule.beta_bar[idx]
    if np.any(bb <= 0.0):
        raise ValueError(f"score undefined at t={t}: no noise has been added yet")
    return -denoiser.predict_noise(a, t, s) / np.sqrt(bb)


def reverse_sample(denoiser, s, rng, n=None, clip=None):
    """Ancestral sampling from x_T ~ N(0, I) down to t = 0.

    `s` is one state (broadcast over `n` samples) or a batch of states.
    """
    sched = denoiser.schedule
    s = np.asarray(s, dtype=np.float64).reshape(-1, denoiser.state_dim)
    if n is None:
        n = s.shape[0]
    x = rng.standard_normal((n, denoiser.action_dim))
    for t in range(sched.T, 0, -1):
        k = t - 1
        eps = denoiser.predict_noise(x, t, s)
        x = (x - sched.betas[k] / np.sqrt(sched.beta_bar[k]) * eps) / np.sqrt(sched.alphas[k])
        if t > 1:
            x = x + np.sqrt(sched.betas[k]) * rng.standard_normal(x.shape)
    if clip is not None:
        x = np.clip(x, *clip)
    return x


def wasserstein1(samples, target_samples):
    """Empirical 1-D W1 between equal-size sample sets via sorted matching."""
    a = np.sort(np.ravel(samples))
    b = np.sort(np.ravel(target_samples))
    if a.size != b.size:
        raise ValueError("sample sets must have equal size")
    return float(np.mean(np.abs(a - b)))
