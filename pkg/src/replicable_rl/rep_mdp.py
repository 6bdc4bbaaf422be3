"""Replicable estimation of a full transition kernel from a generative model.

Every entry P(s'|s,a) is answered by an rSTAT indicator query with tolerance
epsilon and budgets rho/(|S|^2|A|), delta/(|S|^2|A|). In ``shared`` mode the m
draws for (s, a) are reused by all |S| queries of that row; ``per_tuple``
mode draws m fresh samples for every (s, a, s') as the loop is literally
written.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mdp_core import TabularMdp, make_mdp
from .rand_streams import RandTree
from .rstat import RStatConfig, SampleSizeError, rstat_from_mean
from .sampling import pair_counts

MODES = ("shared", "per_tuple")


def query_config(num_states: int, num_actions: int, epsilon: float, rho: float, delta: float) -> RStatConfig:
    k = num_states * num_states * num_actions
    return RStatConfig(epsilon, rho / k, delta / k)


def theoretical_m_mdp(num_states: int, num_actions: int, epsilon: float, rho: float, delta: float) -> int:
    """Generative calls for every (s, a, s') tuple.

    Same bounding steps as the rPVI sample size, with the union bound over the
    K = |S|^2|A| tuples: each query needs ``2 K^2 / (eps^2 (rho - 2 delta)^2)
    * log(2K / delta)`` samples, and each of the K tuples draws its own, giving
    the |S|^6|A|^3 growth.
    """
    k = num_states * num_states * num_actions
    gap = rho - 2 * delta
    if gap <= 0:
        raise ValueError("need delta < rho/2")
    per_query = math.ceil(2.0 * k * k / (epsilon**2 * gap**2) * math.log(2.0 * k / delta))
    return k * per_query


@dataclass
class ApproxMdp:
    """Estimated kernel; ``offsets`` and ``grid_index`` record each entry's grid."""

    p_hat: np.ndarray
    r_hat: np.ndarray
    offsets: np.ndarray
    grid_index: np.ndarray
    alpha: float
    m: int
    mode: str
    gamma: float
    r_max: float
    initial_dist: np.ndarray

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.p_hat, self.r_hat):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def planning_transitions(self) -> np.ndarray:
        """Rows divided by their sum; all-zero rows become self-loops."""
        total = self.p_hat.sum(axis=2, keepdims=True)
        out = np.divide(self.p_hat, total, out=np.zeros_like(self.p_hat), where=total > 0)
        for s, a in zip(*np.nonzero(total[..., 0] <= 0)):
            out[s, a, s] = 1.0
        return out

    def to_mdp(self) -> TabularMdp:
        return make_mdp(self.r_hat, self.planning_transitions(), self.gamma, self.initial_dist, self.r_max)

    def to_dict(self) -> dict:
        data = self.to_mdp().to_dict()
        data["metadata"] = {
            "kind": "approx_mdp",
            "p_hat": self.p_hat.tolist(),
            "offsets": self.offsets.tolist(),
            "grid_index": self.grid_index.tolist(),
            "alpha": self.alpha,
            "m": self.m,
            "mode": self.mode,
        }
        return data

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")


def approximate_mdp(mdp: TabularMdp, epsilon: float, rho: float, delta: float, m: int,
                    internal: RandTree, sample: RandTree, mode: str = "shared",
                    practical: bool = False) -> ApproxMdp:
    """Replicable ApproximateMDP.

    Offsets come from internal path ``("sas", (s*A + a)*S + s')``; samples
    from ``("sa", s*A + a)`` in shared mode and ``("sas", idx)`` per tuple.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if m < 1:
        raise ValueError("m must be >= 1")
    n_s, n_a = mdp.num_states, mdp.num_actions
    cfg = query_config(n_s, n_a, epsilon, rho, delta)
    if not practical and m < cfg.required_n:
        raise SampleSizeError(f"m={m} below the per-query requirement {cfg.required_n}")

    p_hat = np.empty((n_s, n_a, n_s))
    offsets = np.empty_like(p_hat)
    grid = np.empty(p_hat.shape, dtype=np.int64)
    for s in range(n_s):
        for a in range(n_a):
            pair = s * n_a + a
            if mode == "shared":
                counts = pair_counts(mdp, s, a, m, sample.derive(("sa", pair)))
            for s_next in range(n_s):
                idx = pair * n_s + s_next
                if mode == "per_tuple":
                    counts = pair_counts(mdp, s, a, m, sample.derive(("sas", idx)))
                u = internal.derive(("sas", idx)).random()
                res = rstat_from_mean(counts[s_next] / m, m, cfg, cfg.alpha * u, practical=True)
                p_hat[s, a, s_next] = res.value
                offsets[s, a, s_next] = res.offset
                grid[s, a, s_next] = res.grid_index
    return ApproxMdp(p_hat, np.array(mdp.rewards), offsets, grid, cfg.alpha, m, mode,
                     mdp.gamma, mdp.r_max, np.array(mdp.initial_dist))


def total_samples(num_states: int, num_actions: int, m: int, mode: str = "shared") -> int:
    """Generative calls made by :func:`approximate_mdp`."""
    per_pair = m * (num_states if mode == "per_tuple" else 1)
    return num_states * num_actions * per_pair


def required_m(num_states: int, num_actions: int, epsilon: float, rho: float, delta: float) -> int:
    """Smallest m accepted outside practical mode."""
    return query_config(num_states, num_actions, epsilon, rho, delta).required_n
