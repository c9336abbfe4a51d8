"""Finite constrained MDPs with exact (direct linear solve) policy evaluation.

Text file format, whitespace separated, ``#`` starts a comment::

    states actions gamma cost_limit
    P rows: states*actions lines, line (s*actions + a) holds P(. | s, a)
    reward: states lines of `actions` numbers
    cost:   states lines of `actions` numbers
    rho:    one line of `states` numbers
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

PROB_TOL = 1e-9


@dataclass(frozen=True)
class TabularCMDP:
    transition: np.ndarray  # (S, A, S)
    reward: np.ndarray  # (S, A), in [0, M]
    cost: np.ndarray  # (S, A), in [0, c_max]
    gamma: float
    initial_dist: np.ndarray  # (S,)
    cost_limit: float = 0.0

    def __post_init__(self):
        for name in ("transition", "reward", "cost", "initial_dist"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=np.float64))
        P, r, c, rho = self.transition, self.reward, self.cost, self.initial_dist
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {P.shape}")
        S, A = P.shape[:2]
        if r.shape != (S, A) or c.shape != (S, A):
            raise ValueError(f"reward/cost must have shape {(S, A)}")
        if rho.shape != (S,):
            raise ValueError(f"initial_dist must have shape {(S,)}")
        if (P < 0).any() or np.abs(P.sum(axis=2) - 1.0).max() > PROB_TOL:
            raise ValueError("each P(.|s,a) must be a probability vector")
        if (rho < 0).any() or abs(rho.sum() - 1.0) > PROB_TOL:
            raise ValueError("initial_dist must sum to 1")
        if (r < 0).any() or (c < 0).any():
            raise ValueError("rewards and costs must be non-negative")
        if not (np.isfinite(r).all() and np.isfinite(c).all()):
            raise ValueError("rewards and costs must be finite")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.cost_limit < 0:
            raise ValueError("cost_limit must be >= 0")

    @property
    def n_states(self):
        return self.transition.shape[0]

    @property
    def n_actions(self):
        return self.transition.shape[1]

    @property
    def reward_max(self):
        return float(self.reward.max())

    @property
    def cost_max(self):
        return float(self.cost.max())

    def signal(self, which):
        if which == "reward":
            return self.reward
        if which == "cost":
            return self.cost
        raise ValueError(f"signal must be 'reward' or 'cost', got {which!r}")


@dataclass(frozen=True)
class TabularPolicy:
    probs: np.ndarray = field()

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64)
        if p.ndim != 2:
            raise ValueError("policy must be an (S, A) matrix")
        if (p < 0).any() or np.abs(p.sum(axis=1) - 1.0).max() > PROB_TOL:
            raise ValueError("policy rows must be probability vectors")
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, n_states, n_actions):
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions, n_actions):
        actions = np.asarray(actions)
        p = np.zeros((len(actions), n_actions))
        p[np.arange(len(actions)), actions] = 1.0
        return cls(p)

    def sample(self, state, rng):
        return int(rng.choice(self.probs.shape[1], p=self.probs[state]))


def _check(cmdp, policy):
    if policy.probs.shape != (cmdp.n_states, cmdp.n_actions):
        raise ValueError(
            f"policy shape {policy.probs.shape} does not match CMDP {(cmdp.n_states, cmdp.n_actions)}"
        )


def policy_transition(cmdp, policy):
    """State-to-state kernel P^pi(s' | s)."""
    _check(cmdp, policy)
    return np.einsum("sa,sat->st", policy.probs, cmdp.transition)


def evaluate_values(cmdp, policy, signal="reward"):
    """V^pi solving (I - gamma P^pi) V = signal^pi."""
    P_pi = policy_transition(cmdp, policy)
    r_pi = (policy.probs * cmdp.signal(signal)).sum(axis=1)
    return np.linalg.solve(np.eye(cmdp.n_states) - cmdp.gamma * P_pi, r_pi)


def evaluate_q(cmdp, policy, signal="reward"):
    v = evaluate_values(cmdp, policy, signal)
    return cmdp.signal(signal) + cmdp.gamma * cmdp.transition @ v


def advantage(cmdp, policy, signal="reward"):
    q = evaluate_q(cmdp, policy, signal)
    v = (policy.probs * q).sum(axis=1)
    return q - v[:, None]


def initial_value(cmdp, policy, signal="reward"):
    """V^pi(rho)."""
    return float(cmdp.initial_dist @ evaluate_values(cmdp, policy, signal))


def discounted_stationary_dist(cmdp, policy):
    """d^pi_rho = (1 - gamma) rho^T (I - gamma P^pi)^-1."""
    P_pi = policy_transition(cmdp, policy)
    A = np.eye(cmdp.n_states) - cmdp.gamma * P_pi
    return (1.0 - cmdp.gamma) * np.linalg.solve(A.T, cmdp.initial_dist)


def expected_episode_sum(cmdp, policy, horizon, signal="cost"):
    """Exact expected undiscounted sum of `signal` over `horizon` steps from rho."""
    P_pi = policy_transition(cmdp, policy)
    x_pi = (policy.probs * cmdp.signal(signal)).sum(axis=1)
    d = cmdp.initial_dist.copy()
    total = 0.0
    for _ in range(horizon):
        total += d @ x_pi
        d = d @ P_pi
    return float(total)


def kl_divergence(p, q):
    """Row-wise KL(p || q) with 0 log 0 = 0; p > 0 where q = 0 is an error."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if ((p > 0) & (q == 0)).any():
        raise ValueError("KL divergence is infinite: p has mass where q has none")
    ratio = np.where(p > 0, p / np.where(q > 0, q, 1.0), 1.0)
    return (p * np.log(ratio)).sum(axis=-1)


def policy_divergence(pi, pi_b):
    """Max over states of both KL directions between two tabular policies."""
    return float(max(kl_divergence(pi.probs, pi_b.probs).max(),
                     kl_divergence(pi_b.probs, pi.probs).max()))


def cost_upper_bound(cmdp, policy, behavior):
    """Right-hand side of the behavior-relative cost bound.

    Returns (bound, eps_dist, eps_adv) where the bound on V_c^policy(rho) is
    V_c^b(rho) + (c_max + gamma eps_adv) sqrt(2 eps_dist) / (1 - gamma)^2
    and eps_adv = max_s E_{a ~ behavior}[A_c^policy(s, a)].
    """
    eps_dist = policy_divergence(policy, behavior)
    adv = advantage(cmdp, policy, "cost")
    eps_adv = float((behavior.probs * adv).sum(axis=1).max())
    g = cmdp.gamma
    bound = initial_value(cmdp, behavior, "cost") + (
        (cmdp.cost_max + g * eps_adv) * np.sqrt(2.0 * eps_dist) / (1.0 - g) ** 2
    )
    return float(bound), eps_dist, eps_adv


def value_iteration(cmdp, signal="reward", sweeps=10_000, tol=0.0):
    """Optimal Q by repeated Bellman optimality backups (iterative oracle)."""
    x = cmdp.signal(signal)
    q = np.zeros_like(x)
    for _ in range(sweeps):
        q_new = x + cmdp.gamma * cmdp.transition @ q.max(axis=1)
        done = np.abs(q_new - q).max() <= tol
        q = q_new
        if done:
            break
    return q


def iterative_evaluation(cmdp, policy, signal="reward", sweeps=10_000):
    P_pi = policy_transition(cmdp, policy)
    x_pi = (policy.probs * cmdp.signal(signal)).sum(axis=1)
    v = np.zeros(cmdp.n_states)
    for _ in range(sweeps):
        v = x_pi + cmdp.gamma * P_pi @ v
    return v


def optimal_policy(cmdp, constrained=True):
    """Best policy for V_r(rho), optionally subject to V_c(rho) <= cost_limit.

    Solved as a linear program over discounted occupancy measures; the
    result may be stochastic when the constraint binds.
    """
    S, A, g = cmdp.n_states, cmdp.n_actions, cmdp.gamma
    # flow constraints: sum_a x(s',a) - g sum_{s,a} P(s'|s,a) x(s,a) = rho(s')
    A_eq = np.zeros((S, S * A))
    for sp in range(S):
        A_eq[sp, sp * A:(sp + 1) * A] += 1.0
        A_eq[sp] -= g * cmdp.transition[:, :, sp].ravel()
    A_ub = b_ub = None
    if constrained:
        A_ub = cmdp.cost.ravel()[None, :]
        b_ub = [cmdp.cost_limit]
    res = linprog(-cmdp.reward.ravel(), A_ub=A_ub, b_ub=b_ub, A_eq=A_eq,
                  b_eq=cmdp.initial_dist, bounds=(0, None), method="highs")
    if not res.success:
        raise ValueError(f"no feasible policy: {res.message}")
    occ = res.x.reshape(S, A)
    mass = occ.sum(axis=1, keepdims=True)
    probs = np.where(mass > 1e-12, occ / np.where(mass > 1e-12, mass, 1.0), 1.0 / A)
    probs = np.clip(probs, 0.0, None)
    return TabularPolicy(probs / probs.sum(axis=1, keepdims=True))


def random_cmdp(n_states, n_actions, rng, gamma=0.9, cost_limit=1.0, sparsity=0.0):
    rng = np.random.default_rng(rng)
    P = rng.random((n_states, n_actions, n_states))
    if sparsity:
        P *= rng.random(P.shape) >= sparsity
        P[..., 0] += 1e-3
    P /= P.sum(axis=2, keepdims=True)
    return TabularCMDP(
        transition=P,
        reward=rng.random((n_states, n_actions)),
        cost=rng.random((n_states, n_actions)),
        gamma=gamma,
        initial_dist=rng.dirichlet(np.ones(n_states)),
        cost_limit=cost_limit,
    )


def random_policy(n_states, n_actions, rng, concentration=1.0):
    rng = np.random.default_rng(rng)
    return TabularPolicy(rng.dirichlet(np.full(n_actions, concentration), size=n_states))


def _fmt(x):
    return repr(float(x))


def dumps_cmdp(cmdp):
    S, A = cmdp.n_states, cmdp.n_actions
    lines = [f"{S} {A} {_fmt(cmdp.gamma)} {_fmt(cmdp.cost_limit)}", "# transition"]
    for s in range(S):
        for a in range(A):
            lines.append(" ".join(_fmt(p) for p in cmdp.transition[s, a]))
    lines.append("# reward")
    lines += [" ".join(_fmt(v) for v in row) for row in cmdp.reward]
    lines.append("# cost")
    lines += [" ".join(_fmt(v) for v in row) for row in cmdp.cost]
    lines.append("# initial distribution")
    lines.append(" ".join(_fmt(p) for p in cmdp.initial_dist))
    return "\n".join(lines) + "\n"


def loads_cmdp(text):
    tokens = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.extend(line.split())
    if len(tokens) < 4:
        raise ValueError("CMDP file is missing its header line")
    S, A = int(tokens[0]), int(tokens[1])
    gamma, limit = float(tokens[2]), float(tokens[3])
    body = np.array(tokens[4:], dtype=np.float64)
    expected = S * A * S + 2 * S * A + S
    if body.size != expected:
        raise ValueError(f"CMDP body has {body.size} numbers, expected {expected}")
    P = body[:S * A * S].reshape(S, A, S)
    off = S * A * S
    r = body[off:off + S * A].reshape(S, A)
    off += S * A
    c = body[off:off + S * A].reshape(S, A)
    rho = body[off + S * A:]
    return TabularCMDP(P, r, c, gamma, rho, limit)


def save_cmdp(cmdp, path):
    Path(path).write_text(dumps_cmdp(cmdp))


def load_cmdp(path):
    return loads_cmdp(Path(path).read_text())
