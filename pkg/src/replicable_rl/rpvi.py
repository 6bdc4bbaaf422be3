"""Replicable phased value iteration and the non-replicable PVI baseline.

Each phase draws ``m`` fresh parallel-sampler calls, estimates
``E_{s'}[max_a Q_t(s', a)]`` for every (s, a), and backs up
``Q_{t+1} = r + gamma * estimate``. The replicable variant routes every
estimate through rSTAT on the value normalized to [0, 1] by
``(1 - gamma) / r_max``, with grid offsets taken from the internal tree at
path ``("iter", t), ("sa", s * A + a)``.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .mdp_core import TabularMdp, greedy_policy
from .rand_streams import RandTree
from .rstat import RStatConfig, SampleSizeError, rstat_from_mean
from .sampling import next_state_counts


@dataclass(frozen=True)
class PviParams:
    """Accuracy, replicability and failure budgets for (r)PVI.

    ``tau`` defaults to (1 - gamma) * epsilon / 2 in value units; ``tau_override``
    replaces it (e.g. epsilon / 2 when gamma factors are ignored). ``m`` defaults
    to :func:`theoretical_m`. ``rho_sq``/``delta_sq`` default to the union-bound
    split over |S||A|T queries.
    """

    epsilon: float
    rho: float
    delta: float
    gamma: float
    num_states: int
    num_actions: int
    r_max: float = 1.0
    m: int | None = None
    tau_override: float | None = None
    rho_sq_override: float | None = None
    delta_sq_override: float | None = None
    iterations_override: int | None = None
    practical: bool = False

    def __post_init__(self):
        for name in ("epsilon", "rho", "delta"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must be in (0, 1), got {v}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.m is not None and self.m < 1:
            raise ValueError("m must be >= 1")
        if self.iterations < 1:
            raise ValueError("T must be >= 1")
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must be in (0, 1), got {self.tau}")
        if not self.rho_sq > 2 * self.delta_sq:
            raise ValueError(f"need rho_sq > 2 delta_sq (rho_sq={self.rho_sq}, delta_sq={self.delta_sq})")

    @classmethod
    def for_mdp(cls, mdp: TabularMdp, epsilon: float, rho: float, delta: float, **kw) -> "PviParams":
        return cls(epsilon, rho, delta, mdp.gamma, mdp.num_states, mdp.num_actions, mdp.r_max, **kw)

    @property
    def iterations(self) -> int:
        """T = ceil(log(2 / ((1-gamma)^2 eps)) / (1-gamma))."""
        if self.iterations_override is not None:
            return self.iterations_override
        g = 1.0 - self.gamma
        return max(1, math.ceil(math.log(2.0 / (g * g * self.epsilon)) / g))

    @property
    def tau(self) -> float:
        if self.tau_override is not None:
            return self.tau_override
        return (1.0 - self.gamma) * self.epsilon / 2.0

    @property
    def num_queries(self) -> int:
        return self.num_states * self.num_actions * self.iterations

    @property
    def rho_sq(self) -> float:
        return self.rho_sq_override if self.rho_sq_override is not None else self.rho / self.num_queries

    @property
    def delta_sq(self) -> float:
        return self.delta_sq_override if self.delta_sq_override is not None else self.delta / self.num_queries

    @property
    def value_scale(self) -> float:
        """Multiplier that maps values in [0, r_max/(1-gamma)] into [0, 1]."""
        return (1.0 - self.gamma) / self.r_max

    def query_config(self) -> RStatConfig:
        return RStatConfig(self.value_scale * self.tau, self.rho_sq, self.delta_sq)

    @property
    def accuracy_bound(self) -> float:
        """||Q_T - Q*||_inf <= tau gamma/(1-gamma) + r_max gamma^T/(1-gamma)."""
        g = 1.0 - self.gamma
        return self.tau * self.gamma / g + self.r_max * self.gamma**self.iterations / g


def theoretical_m(params: PviParams, mdp: TabularMdp | None = None) -> int:
    """Parallel-sampler calls per phase sufficient for replicability and accuracy.

    ``2 (|S||A|T)^2 / (tau_q^2 (rho - 2 delta)^2) * log(2 |S||A|T / delta)``
    where ``tau_q`` is the tolerance handed to rSTAT (the normalized one), so
    the result is never below any query's Hoeffding requirement.
    """
    if mdp is not None and (mdp.num_states, mdp.num_actions) != (params.num_states, params.num_actions):
        raise ValueError("params do not match the MDP's size")
    k = params.num_queries
    tau_q = params.value_scale * params.tau
    gap = params.rho - 2 * params.delta
    return math.ceil(2.0 * k * k / (tau_q**2 * gap**2) * math.log(2.0 * k / params.delta))


def theoretical_m_gamma_free(num_states: int, num_actions: int, epsilon: float, rho: float, delta: float) -> int:
    """:func:`theoretical_m` with every (1 - gamma) factor set to 1.

    T becomes ceil(log(2 / eps)) and tau becomes eps / 2; this is the
    gamma-suppressed form that is comparable to bounds with no gamma at all.
    """
    t = max(1, math.ceil(math.log(2.0 / epsilon)))
    k = num_states * num_actions * t
    tau = epsilon / 2.0
    gap = rho - 2 * delta
    return math.ceil(2.0 * k * k / (tau**2 * gap**2) * math.log(2.0 * k / delta))


@dataclass
class RpviAudit:
    """Per-query record, arrays of shape (T, S, A)."""

    offsets: np.ndarray
    means: np.ndarray
    values: np.ndarray
    grid_index: np.ndarray
    alpha: float

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.offsets, self.means, self.values, self.grid_index):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def rows(self):
        """Yield (t, s, a, offset, empirical mean, rounded value) tuples."""
        for t, s, a in np.ndindex(*self.offsets.shape):
            yield t, s, a, float(self.offsets[t, s, a]), float(self.means[t, s, a]), float(self.values[t, s, a])


@dataclass
class PviResult:
    q: np.ndarray
    policy: np.ndarray
    m: int
    iterations: int
    practical: bool
    audit: RpviAudit | None = None
    params: PviParams | None = None
    extra: dict = field(default_factory=dict)


def _resolve_m(params: PviParams, mdp: TabularMdp) -> int:
    if params.m is not None:
        return params.m
    return theoretical_m(params, mdp)


def run_rpvi(mdp: TabularMdp, params: PviParams, internal: RandTree, sample: RandTree,
             method: str = "multinomial", workers: int = 1, chunk: int | None = None) -> PviResult:
    """Replicable phased value iteration.

    The MDP is used only as a generative model (and for its known rewards).
    Unless ``params.practical`` is set, ``m`` must meet every query's rSTAT
    sample-size requirement.
    """
    if (mdp.num_states, mdp.num_actions) != (params.num_states, params.num_actions):
        raise ValueError("params do not match the MDP's size")
    m = _resolve_m(params, mdp)
    cfg = params.query_config()
    if not params.practical and m < cfg.required_n:
        raise SampleSizeError(f"m={m} below the per-query requirement {cfg.required_n}")
    n_s, n_a, T = mdp.num_states, mdp.num_actions, params.iterations
    scale = params.value_scale
    alpha = cfg.alpha

    offsets = np.empty((T, n_s, n_a))
    means = np.empty((T, n_s, n_a))
    values = np.empty((T, n_s, n_a))
    grid = np.empty((T, n_s, n_a), dtype=np.int64)

    q = np.zeros((n_s, n_a))
    for t in range(T):
        counts = next_state_counts(mdp, m, sample, (("iter", t),), method, workers, chunk)
        phi = np.clip(scale * q.max(axis=1), 0.0, 1.0)
        mean = np.clip(counts @ phi / m, 0.0, 1.0)
        for s in range(n_s):
            for a in range(n_a):
                u = internal.derive(("iter", t), ("sa", s * n_a + a)).random()
                res = rstat_from_mean(float(mean[s, a]), m, cfg, alpha * u, practical=True)
                offsets[t, s, a] = res.offset
                means[t, s, a] = res.empirical_mean
                values[t, s, a] = res.value
                grid[t, s, a] = res.grid_index
        q = mdp.rewards + mdp.gamma * (values[t] / scale)
    audit = RpviAudit(offsets, means, values, grid, alpha)
    return PviResult(q, greedy_policy(q), m, T, params.practical or m < cfg.required_n, audit, params)


def run_pvi_baseline(mdp: TabularMdp, epsilon: float, delta: float, m: int, sample: RandTree,
                     iterations: int | None = None, method: str = "multinomial",
                     workers: int = 1, chunk: int | None = None) -> PviResult:
    """Phased value iteration with raw empirical means (not replicable).

    T follows the same convergence rule as rPVI unless ``iterations`` is given.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if not 0.0 < epsilon < 1.0 or not 0.0 < delta < 1.0:
        raise ValueError("epsilon and delta must be in (0, 1)")
    if iterations is None:
        g = 1.0 - mdp.gamma
        iterations = max(1, math.ceil(math.log(2.0 / (g * g * epsilon)) / g))
    q = np.zeros((mdp.num_states, mdp.num_actions))
    for t in range(iterations):
        counts = next_state_counts(mdp, m, sample, (("iter", t),), method, workers, chunk)
        q = mdp.rewards + mdp.gamma * (counts @ q.max(axis=1)) / m
    return PviResult(q, greedy_policy(q), m, iterations, practical=True, extra={"epsilon": epsilon, "delta": delta})


def with_m(params: PviParams, m: int, practical: bool = True) -> PviParams:
    return replace(params, m=m, practical=practical)


def warn_if_astronomical(m: int, reference: int = 13000) -> None:
    if m > 1000 * reference:
        warnings.warn(
            f"theoretical m = {m:.3e} is far above the ~{reference} samples that suffice "
            "empirically; consider --practical with an m override",
            stacklevel=2,
        )
