"""Sampling oracles over a TabularMdp.

Per-(s, a) draws always come from their own keyed substream
``path + (("sa", s * A + a),)``, so results do not depend on how work is
split across threads.
"""

from __future__ import annotations

import weakref
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .mdp_core import TabularMdp
from .rand_streams import RandTree, cumulative, inverse_cdf

MAX_COUNT = 2**63 - 1

_cdf_cache: "weakref.WeakKeyDictionary[TabularMdp, np.ndarray]" = weakref.WeakKeyDictionary()


def transition_cdf(mdp: TabularMdp) -> np.ndarray:
    cdf = _cdf_cache.get(mdp)
    if cdf is None:
        cdf = cumulative(mdp.transitions)
        cdf.setflags(write=False)
        _cdf_cache[mdp] = cdf
    return cdf


def _check_pair(mdp: TabularMdp, s: int, a: int) -> None:
    if not (0 <= s < mdp.num_states and 0 <= a < mdp.num_actions):
        raise IndexError(f"state-action ({s}, {a}) out of range for {mdp.num_states}x{mdp.num_actions} MDP")


def generative_step(mdp: TabularMdp, s: int, a: int, stream: np.random.Generator) -> tuple[float, int]:
    """One generative-model call: deterministic reward and a sampled next state."""
    _check_pair(mdp, s, a)
    s_next = int(inverse_cdf(transition_cdf(mdp)[s, a], stream.random()))
    return float(mdp.rewards[s, a]), s_next


def _pairs(mdp: TabularMdp):
    return [(s, a) for s in range(mdp.num_states) for a in range(mdp.num_actions)]


def _fan_out(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def parallel_sample(mdp: TabularMdp, tree: RandTree, path: Sequence = (), workers: int = 1) -> np.ndarray:
    """One call to the parallel sampler: a next state for every (s, a).

    Returns an int array ``next_state[s, a]``.
    """
    path = tuple(path)
    n_a = mdp.num_actions

    def draw(pair):
        s, a = pair
        _, s_next = generative_step(mdp, s, a, tree.derive(*path, ("sa", s * n_a + a)))
        return s_next

    out = _fan_out(draw, _pairs(mdp), workers)
    return np.array(out, dtype=np.int64).reshape(mdp.num_states, n_a)


def pair_counts(mdp: TabularMdp, s: int, a: int, m: int, stream: np.random.Generator,
                method: str = "multinomial") -> np.ndarray:
    """Next-state counts of ``m`` generative draws from (s, a).

    ``draws`` samples each next state by inverse CDF and tallies them;
    ``multinomial`` samples the count vector directly. Both have the law of m
    i.i.d. draws; only the multinomial route is O(|S|) for huge m.
    """
    n_s = mdp.num_states
    if m >= MAX_COUNT:
        raise ValueError(f"m={m} exceeds the sampler's 64-bit count limit")
    if method == "draws":
        idx = inverse_cdf(transition_cdf(mdp)[s, a], stream.random(m))
        return np.bincount(idx, minlength=n_s).astype(np.int64)
    if method == "multinomial":
        row = mdp.transitions[s, a]
        support = np.flatnonzero(row > 0)
        counts = np.zeros(n_s, dtype=np.int64)
        if support.size == 1:
            counts[support[0]] = m
        else:
            p = row[support]
            counts[support] = stream.multinomial(m, p / p.sum())
        return counts
    raise ValueError(f"unknown sampling method {method!r}")


def next_state_counts(mdp: TabularMdp, m: int, tree: RandTree, path: Sequence = (),
                      method: str = "multinomial", workers: int = 1,
                      chunk: int | None = None) -> np.ndarray:
    """Aggregate next-state counts of ``m`` parallel-sampler calls, shape (S, A, S).

    With ``chunk`` set, the calls are drawn in blocks of that size, block j
    from substream ``("chunk", j)`` under the pair's key. The counts for
    k * chunk calls then contain those for any smaller multiple, so budgets
    that differ only in their number of blocks see nested data.
    """
    if m < 0:
        raise ValueError("m must be >= 0")
    if chunk is not None and chunk < 1:
        raise ValueError("chunk must be >= 1")
    path = tuple(path)
    n_a = mdp.num_actions

    def draw(pair):
        s, a = pair
        stream_path = path + (("sa", s * n_a + a),)
        if chunk is None:
            return pair_counts(mdp, s, a, m, tree.derive(*stream_path), method)
        total = np.zeros(mdp.num_states, dtype=np.int64)
        for j, start in enumerate(range(0, m, chunk)):
            size = min(chunk, m - start)
            total += pair_counts(mdp, s, a, size, tree.derive(*stream_path, ("chunk", j)), method)
        return total

    out = _fan_out(draw, _pairs(mdp), workers)
    return np.stack(out).reshape(mdp.num_states, n_a, mdp.num_states)


@dataclass(frozen=True)
class Trajectory:
    """H action-taking steps (s_h, a_h, r_h) and the terminal state s_H."""

    steps: tuple[tuple[int, int, float], ...]
    terminal: int

    @property
    def horizon(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class TrajectoryBatch:
    """m trajectories stored column-wise: states (m, H+1), actions (m, H)."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    @property
    def num_trajectories(self) -> int:
        return self.actions.shape[0]

    @property
    def horizon(self) -> int:
        return self.actions.shape[1]

    def visit_counts(self, num_states: int, num_actions: int) -> np.ndarray:
        """Total visits to each (s, a) over all H steps of all trajectories."""
        flat = self.states[:, :-1] * num_actions + self.actions
        return np.bincount(flat.ravel(), minlength=num_states * num_actions).reshape(num_states, num_actions)

    def transition_counts(self, num_states: int, num_actions: int) -> np.ndarray:
        """Counts of observed (s, a, s') transitions, shape (S, A, S)."""
        flat = (self.states[:, :-1] * num_actions + self.actions) * num_states + self.states[:, 1:]
        n = num_states * num_actions * num_states
        return np.bincount(flat.ravel(), minlength=n).reshape(num_states, num_actions, num_states)

    def trajectories(self) -> list[Trajectory]:
        out = []
        for i in range(self.num_trajectories):
            steps = tuple(
                (int(self.states[i, h]), int(self.actions[i, h]), float(self.rewards[i, h]))
                for h in range(self.horizon)
            )
            out.append(Trajectory(steps, int(self.states[i, -1])))
        return out

    @classmethod
    def from_trajectories(cls, trajectories: Sequence[Trajectory]) -> "TrajectoryBatch":
        if not trajectories:
            raise ValueError("need at least one trajectory")
        horizons = {t.horizon for t in trajectories}
        if len(horizons) != 1:
            raise ValueError(f"trajectories have mixed lengths {sorted(horizons)}")
        states = np.array([[s for s, _, _ in t.steps] + [t.terminal] for t in trajectories], dtype=np.int64)
        actions = np.array([[a for _, a, _ in t.steps] for t in trajectories], dtype=np.int64)
        rewards = np.array([[r for _, _, r in t.steps] for t in trajectories], dtype=np.float64)
        return cls(states, actions, rewards)


def sample_episode(mdp: TabularMdp, policy, horizon: int, stream: np.random.Generator) -> Trajectory:
    """s_0 ~ mu, then H steps of a_h = policy[s_h], s_{h+1} ~ P(.|s_h, a_h)."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    cdf = transition_cdf(mdp)
    s = int(inverse_cdf(cumulative(mdp.initial_dist), stream.random()))
    steps = []
    for _ in range(horizon):
        a = int(policy[s])
        steps.append((s, a, float(mdp.rewards[s, a])))
        s = int(inverse_cdf(cdf[s, a], stream.random()))
    return Trajectory(tuple(steps), s)


def _episode_block(mdp: TabularMdp, policy: np.ndarray, horizon: int, n: int, stream: np.random.Generator):
    cdf = transition_cdf(mdp)
    mu_cdf = cumulative(mdp.initial_dist)
    states = np.empty((n, horizon + 1), dtype=np.int64)
    actions = np.empty((n, horizon), dtype=np.int64)
    states[:, 0] = inverse_cdf(mu_cdf, stream.random(n))
    for h in range(horizon):
        s = states[:, h]
        a = policy[s]
        actions[:, h] = a
        u = stream.random(n)
        # same rule as inverse_cdf, vectorized over rows
        states[:, h + 1] = (cdf[s, a] <= u[:, None]).sum(axis=1)
    return states, actions


def sample_episodes(mdp: TabularMdp, policy, horizon: int, m: int, tree: RandTree,
                    path: Sequence = (), block_size: int = 1 << 14) -> TrajectoryBatch:
    """m episodes under ``policy``, drawn in blocks keyed ``path + (("block", b),)``."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    policy = np.asarray(policy, dtype=np.int64)
    path = tuple(path)
    blocks_s, blocks_a = [], []
    for b, start in enumerate(range(0, m, block_size)):
        n = min(block_size, m - start)
        s, a = _episode_block(mdp, policy, horizon, n, tree.derive(*path, ("block", b)))
        blocks_s.append(s)
        blocks_a.append(a)
    if blocks_s:
        states = np.concatenate(blocks_s)
        actions = np.concatenate(blocks_a)
    else:
        states = np.empty((0, horizon + 1), dtype=np.int64)
        actions = np.empty((0, horizon), dtype=np.int64)
    rewards = mdp.rewards[states[:, :-1], actions]
    return TrajectoryBatch(states, actions, rewards)
