"""Offline transition datasets, rollouts and normalized episode metrics.

CSV layout: header ``state,action,reward,next_state,cost,done``; vector
fields are written as ``;``-separated components, discrete fields as plain
integers. Floats use shortest round-trip repr, so write/read is lossless.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

HEADER = ["state", "action", "reward", "next_state", "cost", "done"]


@dataclass(frozen=True)
class EpisodeStats:
    episodic_return: float
    episodic_cost: float
    length: int


@dataclass
class TransitionDataset:
    """Arrays of transitions; discrete states/actions are 1-D int arrays,
    continuous ones are 2-D float arrays of shape (N, dim)."""

    state: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_state: np.ndarray
    cost: np.ndarray
    done: np.ndarray

    def __post_init__(self):
        n = len(self.reward)
        for name in ("state", "action", "next_state", "cost", "done"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"field {name!r} has {len(getattr(self, name))} rows, expected {n}")
        if not (np.isfinite(self.reward).all() and np.isfinite(self.cost).all()):
            raise ValueError("rewards and costs must be finite")

    def __len__(self):
        return len(self.reward)

    @property
    def discrete_states(self):
        return self.state.ndim == 1

    @property
    def discrete_actions(self):
        return self.action.ndim == 1

    def episode_slices(self):
        ends = np.flatnonzero(self.done)
        starts = np.concatenate([[0], ends[:-1] + 1])
        return [slice(int(s), int(e) + 1) for s, e in zip(starts, ends)]

    def episode_stats(self):
        return [
            EpisodeStats(float(self.reward[sl].sum()), float(self.cost[sl].sum()), sl.stop - sl.start)
            for sl in self.episode_slices()
        ]

    def return_range(self):
        """(R_min, R_max) over complete episodes in the dataset."""
        returns = [ep.episodic_return for ep in self.episode_stats()]
        if not returns:
            raise ValueError("dataset contains no complete episode")
        return min(returns), max(returns)

    def sample_indices(self, rng, batch_size):
        return rng.integers(0, len(self), size=batch_size)

    def equals(self, other):
        return all(
            np.array_equal(getattr(self, f), getattr(other, f)) and
            getattr(self, f).dtype.kind == getattr(other, f).dtype.kind
            for f in HEADER
        )


def rollout(env, policy, n_episodes, horizon, seed):
    """Run `policy(state, rng)` in `env`; returns (dataset, per-episode stats).

    A policy exposing ``begin_episode(rng)`` is notified at each reset.
    """
    if n_episodes < 1:
        raise ValueError("need at least one episode")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    rng = np.random.default_rng(seed)
    rows = {k: [] for k in HEADER}
    stats = []
    for _ in range(n_episodes):
        if hasattr(policy, "begin_episode"):
            policy.begin_episode(rng)
        s = env.reset(rng)
        ret = cost_sum = 0.0
        for t in range(horizon):
            a = policy(s, rng)
            s2, r, c = env.step(a, rng)
            rows["state"].append(s)
            rows["action"].append(a)
            rows["reward"].append(r)
            rows["next_state"].append(s2)
            rows["cost"].append(c)
            rows["done"].append(t == horizon - 1)
            ret += r
            cost_sum += c
            s = s2
        stats.append(EpisodeStats(ret, cost_sum, horizon))
    return _from_rows(rows), stats


def _stack(values):
    first = values[0]
    if np.ndim(first) == 0 and isinstance(first, (int, np.integer)):
        return np.asarray(values, dtype=np.int64)
    return np.asarray(values, dtype=np.float64).reshape(len(values), -1)


def _from_rows(rows):
    return TransitionDataset(
        state=_stack(rows["state"]),
        action=_stack(rows["action"]),
        reward=np.asarray(rows["reward"], dtype=np.float64),
        next_state=_stack(rows["next_state"]),
        cost=np.asarray(rows["cost"], dtype=np.float64),
        done=np.asarray(rows["done"], dtype=bool),
    )


def episode_stats_from_rollout(env, policy, n_episodes, horizon, seed):
    return rollout(env, policy, n_episodes, horizon, seed)[1]


def normalized_return(ret, r_min, r_max):
    if not r_max > r_min:
        raise ValueError(f"need R_max > R_min, got {r_min}, {r_max}")
    return (ret - r_min) / (r_max - r_min)


def normalized_cost(cost, cost_limit, c_min=0.0, eps=0.1):
    if cost_limit + eps <= 0:
        raise ValueError("cost_limit + eps must be positive")
    return (cost - c_min) / (cost_limit + eps)


def _fmt_field(value):
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    arr = np.atleast_1d(value)
    return ";".join(repr(float(v)) for v in arr)


def _parse_field(text):
    if ";" not in text and not any(ch in text for ch in ".eEn"):
        return int(text)
    return [float(v) for v in text.split(";")]


def dumps_dataset(ds: TransitionDataset):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for i in range(len(ds)):
        w.writerow([
            _fmt_field(ds.state[i]),
            _fmt_field(ds.action[i]),
            repr(float(ds.reward[i])),
            _fmt_field(ds.next_state[i]),
            repr(float(ds.cost[i])),
            "1" if ds.done[i] else "0",
        ])
    return buf.getvalue()


def loads_dataset(text):
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != HEADER:
        raise ValueError(f"dataset header must be {','.join(HEADER)}, got {header}")
    rows = {k: [] for k in HEADER}
    for line in reader:
        if not line:
            continue
        if len(line) != len(HEADER):
            raise ValueError(f"malformed dataset row: {line}")
        rows["state"].append(_parse_field(line[0]))
        rows["action"].append(_parse_field(line[1]))
        rows["reward"].append(float(line[2]))
        rows["next_state"].append(_parse_field(line[3]))
        rows["cost"].append(float(line[4]))
        rows["done"].append(line[5] == "1")
    if not rows["reward"]:
        raise ValueError("dataset file has no transitions")
    return _from_rows(rows)


def save_dataset(ds, path):
    Path(path).write_text(dumps_dataset(ds))


def load_dataset(path):
    return loads_dataset(Path(path).read_text())
