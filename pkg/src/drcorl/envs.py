"""Environments used to synthesize offline data and evaluate policies.

Both expose ``reset(rng) -> state`` and ``step(action, rng) -> (next_state,
reward, cost)``; episodes are cut by the caller's horizon.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cmdp import TabularCMDP, TabularPolicy, evaluate_q, optimal_policy


class TabularEnv:
    discrete = True

    def __init__(self, cmdp: TabularCMDP):
        self.cmdp = cmdp
        self._state = None

    @property
    def n_states(self):
        return self.cmdp.n_states

    @property
    def n_actions(self):
        return self.cmdp.n_actions

    def reset(self, rng):
        self._state = int(rng.choice(self.cmdp.n_states, p=self.cmdp.initial_dist))
        return self._state

    def step(self, action, rng):
        s = self._state
        nxt = int(rng.choice(self.cmdp.n_states, p=self.cmdp.transition[s, action]))
        reward = float(self.cmdp.reward[s, action])
        cost = float(self.cmdp.cost[s, action])
        self._state = nxt
        return nxt, reward, cost


@dataclass
class PointMassEnv:
    """1-D point mass: position x, velocity command a in [-1, 1].

    x' = clip(x + dt * a), reward 1 - (x' - goal)^2 (floored at 0), and
    unit cost whenever |x'| exceeds `threshold`. The goal sits outside the
    safe interval, so return and cost pull in opposite directions.
    """

    dt: float = 0.1
    goal: float = 1.0
    threshold: float = 0.5
    x_limit: float = 1.5
    start_low: float = -0.4
    start_high: float = -0.1
    discrete = False
    state_dim = 1
    action_dim = 1
    action_low = -1.0
    action_high = 1.0

    def __post_init__(self):
        self._x = 0.0

    def reset(self, rng):
        self._x = float(rng.uniform(self.start_low, self.start_high))
        return np.array([self._x])

    def step(self, action, rng=None):
        a = float(np.clip(np.asarray(action, dtype=np.float64).ravel()[0], -1.0, 1.0))
        x = float(np.clip(self._x + self.dt * a, -self.x_limit, self.x_limit))
        self._x = x
        reward = max(0.0, 1.0 - (x - self.goal) ** 2)
        cost = 1.0 if abs(x) > self.threshold else 0.0
        return np.array([x]), reward, cost

    def clip_action(self, a):
        return np.clip(a, self.action_low, self.action_high)


class SetpointPolicy:
    """Proportional controller toward a setpoint with Gaussian action noise."""

    def __init__(self, target, gain=3.0, noise=0.2, epsilon=0.0):
        self.target = target
        self.gain = gain
        self.noise = noise
        self.epsilon = epsilon

    def __call__(self, state, rng):
        if self.epsilon and rng.random() < self.epsilon:
            return np.array([rng.uniform(-1.0, 1.0)])
        a = self.gain * (self.target - float(state[0])) + self.noise * rng.standard_normal()
        return np.array([float(np.clip(a, -1.0, 1.0))])


class EpisodeMixture:
    """Picks one member policy per episode (mixing at trajectory level)."""

    def __init__(self, policies, weights):
        self.policies = list(policies)
        w = np.asarray(weights, dtype=np.float64)
        self.weights = w / w.sum()
        self._current = self.policies[0]

    def begin_episode(self, rng):
        self._current = self.policies[int(rng.choice(len(self.policies), p=self.weights))]

    def __call__(self, state, rng):
        return self._current(state, rng)


POINT_MASS_SETPOINTS = (0.0, 0.15, 0.3, 0.45, 1.0)
POINT_MASS_WEIGHTS = (0.35, 0.15, 0.1, 0.1, 0.3)


def point_mass_behavior(env: PointMassEnv, setpoints=POINT_MASS_SETPOINTS,
                        weights=POINT_MASS_WEIGHTS, epsilon=0.2, noise=0.2):
    """Mixed-quality behavior: one setpoint controller per episode.

    The default mixture is dominated by a conservative controller holding
    x = 0 and a goal seeker that ignores the cost,
    plus a few intermediate setpoints; eps-random actions give every
    controller action coverage.
    """
    policies = [SetpointPolicy(target=t, noise=noise, epsilon=epsilon)
                for t in setpoints]
    return EpisodeMixture(policies, weights)


class TabularSampler:
    def __init__(self, policy: TabularPolicy):
        self.policy = policy

    def __call__(self, state, rng):
        return self.policy.sample(state, rng)


def tabular_behavior(cmdp: TabularCMDP, epsilon=0.2, safe_ratio=0.5):
    """State-wise mixture of an eps-greedy reward-optimal policy and the
    cost-minimizing policy; stays a stationary tabular policy so it can be
    evaluated exactly."""
    S, A = cmdp.n_states, cmdp.n_actions
    greedy = optimal_policy(cmdp, constrained=False).probs
    greedy = (1.0 - epsilon) * greedy + epsilon / A
    q_c = evaluate_q(cmdp, TabularPolicy(greedy), "cost")
    safe = np.zeros((S, A))
    safe[np.arange(S), q_c.argmin(axis=1)] = 1.0
    safe = (1.0 - epsilon) * safe + epsilon / A
    return TabularPolicy(safe_ratio * safe + (1.0 - safe_ratio) * greedy)
