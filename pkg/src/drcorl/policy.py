"""Diagonal Gaussian policies and the reverse-KL gradient against a score model.

The KL to a behavior density mu is never evaluated as a value. Its
parameter gradient needs only the score grad_a log mu, which is what a
diffusion model provides:

    grad KL(pi || mu) = E_z[-score(m + sigma z) . d(m + sigma z)/dtheta]
                        - 1/2 grad log det Sigma
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .nn import Mlp

VAR_MIN = 1e-6
LOG_2PI = np.log(2.0 * np.pi)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class GaussianPolicy:
    """N(m_theta(s), diag(sigma_theta(s)^2)).

    With ``state_dependent=False`` the standard deviation is the fixed
    scalar `sigma` (the constant-variance class; sigma=1e-3 approximates a
    Dirac policy). Otherwise a second network outputs u(s) and the variance
    is softplus(u) + 1e-6. All trainable parameters share one flat vector
    ``params``: mean-network parameters first.
    """

    def __init__(self, state_dim, action_dim, hidden=(64, 64), sigma=0.2,
                 state_dependent=False, rng=None, mean_net=None, std_net=None):
        rng = np.random.default_rng(rng)
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.sigma = float(sigma)
        self.state_dependent = state_dependent
        self.mean_net = mean_net or Mlp((state_dim, *hidden, action_dim), rng=rng)
        if state_dependent:
            self.std_net = std_net or Mlp((state_dim, *hidden, action_dim), rng=rng)
        else:
            self.std_net = None
        nets = [self.mean_net] + ([self.std_net] if self.std_net else [])
        self.params = np.concatenate([n.params for n in nets])
        offset = 0
        for net in nets:
            net.params = self.params[offset:offset + net.n_params]
            net._bind_views()
            offset += net.n_params
        self.n_mean_params = self.mean_net.n_params

    @property
    def n_params(self):
        return self.params.size

    def _states(self, s):
        return np.asarray(s, dtype=np.float64).reshape(-1, self.state_dim)

    def mean(self, s):
        return self.mean_net.forward(self._states(s))

    def variance(self, s):
        s = self._states(s)
        if self.std_net is None:
            return np.full((s.shape[0], self.action_dim), max(self.sigma ** 2, VAR_MIN))
        return _softplus(self.std_net.forward(s)) + VAR_MIN

    def std(self, s):
        return np.sqrt(self.variance(s))

    def sample(self, s, rng, return_noise=False):
        s = self._states(s)
        z = rng.standard_normal((s.shape[0], self.action_dim))
        a = self.mean(s) + self.std(s) * z
        return (a, z) if return_noise else a

    def act(self, s, rng=None, deterministic=True):
        s = self._states(s)
        if deterministic or rng is None:
            return self.mean(s)
        return self.sample(s, rng)

    def log_prob(self, s, a):
        var = self.variance(s)
        a = np.asarray(a, dtype=np.float64).reshape(var.shape)
        return -0.5 * (((a - self.mean(s)) ** 2 / var) + np.log(var) + LOG_2PI).sum(axis=1)

    def entropy(self, s):
        var = self.variance(s)
        if (var <= 0).any():
            raise ValueError("non-positive variance")
        return 0.5 * np.log(var).sum(axis=1) + 0.5 * self.action_dim * (LOG_2PI + 1.0)

    def action_grad(self, s, z, upstream):
        """Parameter gradient of sum_i upstream_i . a_i with a = m(s) + sigma(s) z."""
        s = self._states(s)
        grad = np.zeros(self.n_params)
        grad[:self.n_mean_params] = self.mean_net.grad_params(s, upstream)
        if self.std_net is not None:
            u = self.std_net.forward(s)
            var = _softplus(u) + VAR_MIN
            # d sigma / d u = sigmoid(u) / (2 sigma)
            dsig = _sigmoid(u) / (2.0 * np.sqrt(var))
            grad[self.n_mean_params:] = self.std_net.grad_params(s, upstream * z * dsig)
        return grad

    def logdet_grad(self, s):
        """Parameter gradient of sum over states of 1/2 log det Sigma(s)."""
        grad = np.zeros(self.n_params)
        if self.std_net is None:
            return grad
        s = self._states(s)
        u = self.std_net.forward(s)
        var = _softplus(u) + VAR_MIN
        grad[self.n_mean_params:] = self.std_net.grad_params(s, 0.5 * _sigmoid(u) / var)
        return grad

    def copy(self):
        return GaussianPolicy(
            self.state_dim, self.action_dim, sigma=self.sigma,
            state_dependent=self.state_dependent, mean_net=self.mean_net.copy(),
            std_net=self.std_net.copy() if self.std_net else None)

    def __deepcopy__(self, memo):
        return self.copy()

    def to_dict(self):
        return {
            "format": "drcorl-gaussian-policy", "version": 1,
            "state_dim": self.state_dim, "action_dim": self.action_dim,
            "sigma": self.sigma, "state_dependent": self.state_dependent,
            "mean_net": self.mean_net.to_dict(),
            "std_net": self.std_net.to_dict() if self.std_net else None,
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("format") != "drcorl-gaussian-policy":
            raise ValueError("not a Gaussian policy checkpoint")
        return cls(
            data["state_dim"], data["action_dim"], sigma=data["sigma"],
            state_dependent=data["state_dependent"],
            mean_net=Mlp.from_dict(data["mean_net"]),
            std_net=Mlp.from_dict(data["std_net"]) if data["std_net"] else None)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def reverse_kl_grad(policy, score_fn, s, n_mc=8, rng=None, antithetic=True):
    """Monte-Carlo estimate of grad_theta KL(pi_theta(.|s) || mu(.|s)),
    averaged over the given states.

    `score_fn(a, s)` returns grad_a log mu(a | s) for batches of actions and
    matching states. With `antithetic` the noise draws come in (z, -z)
    pairs, which removes the estimator's variance when the score is linear
    in the action.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    rng = np.random.default_rng(rng)
    s = policy._states(s)
    n_states = s.shape[0]
    reps = np.repeat(s, n_mc, axis=0)
    if antithetic:
        half = rng.standard_normal((n_states, (n_mc + 1) // 2, policy.action_dim))
        z = np.concatenate([half, -half], axis=1)[:, :n_mc].reshape(-1, policy.action_dim)
    else:
        z = rng.standard_normal((reps.shape[0], policy.action_dim))
    a = policy.mean(reps) + policy.std(reps) * z
    upstream = -np.asarray(score_fn(a, reps)).reshape(a.shape) / (n_states * n_mc)
    return policy.action_grad(reps, z, upstream) - policy.logdet_grad(s) / n_states
