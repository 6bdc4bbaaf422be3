"""Replicable episodic R-max (RepRMAX) with randomized known-thresholds,
plus a classical fixed-threshold R-max baseline.

Each round collects ``m`` episodes of length ``H`` under the current policy.
Visit counts ``n(s, a)`` accumulate the per-episode average number of visits;
a pair becomes known once ``n(s, a)`` reaches a threshold ``k'`` drawn
uniformly from ``[k, k + w]`` (one draw per round, from the internal tree).
Newly known rows are estimated with one rSTAT indicator query per next state
on the next-state counts pooled over every episode collected so far.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .mdp_core import TabularMdp, greedy_policy, solve_q
from .rand_streams import RandTree, uniform
from .rstat import RStatConfig, SampleSizeError, rstat_from_mean
from .sampling import TrajectoryBatch, sample_episodes

PLAN_TOL = 1e-9


@dataclass(frozen=True)
class RMaxParams:
    """Budgets for RepRMAX.

    ``rounds`` defaults to T = ceil(H|S||A|/eps + H^2 log(1/delta)/eps^2).
    ``m`` defaults to :func:`theoretical_m`. ``k`` defaults to H and ``w`` to k.
    The rSTAT budgets default to rho/(|S|^2|A|), eps(1-gamma)^2/|S| and
    delta/(|S|^2|A|); any of them can be overridden for desk-scale runs.
    """

    epsilon: float
    rho: float
    delta: float
    horizon: int
    gamma: float
    num_states: int
    num_actions: int
    r_max: float = 1.0
    m: int | None = None
    rounds_override: int | None = None
    k: float | None = None
    w: float | None = None
    rho_sq_override: float | None = None
    tau_sq_override: float | None = None
    delta_sq_override: float | None = None
    practical: bool = False

    def __post_init__(self):
        for name in ("epsilon", "rho", "delta"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must be in (0, 1), got {v}")
        if not self.delta < self.rho / 4:
            raise ValueError(f"need delta < rho/4 (delta={self.delta}, rho={self.rho})")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.m is not None and self.m < 1:
            raise ValueError("m must be >= 1")
        if self.rounds_override is not None and self.rounds_override < 0:
            raise ValueError("rounds must be >= 0")
        if self.k_value < 0 or self.w_value < 0:
            raise ValueError("k and w must be >= 0")
        self.query_config()

    @classmethod
    def for_mdp(cls, mdp: TabularMdp, epsilon: float, rho: float, delta: float, horizon: int,
                **kw) -> "RMaxParams":
        return cls(epsilon, rho, delta, horizon, mdp.gamma, mdp.num_states, mdp.num_actions, mdp.r_max, **kw)

    @property
    def rounds(self) -> int:
        if self.rounds_override is not None:
            return self.rounds_override
        h, sa = self.horizon, self.num_states * self.num_actions
        return math.ceil(h * sa / self.epsilon + h * h * math.log(1 / self.delta) / self.epsilon**2)

    @property
    def k_value(self) -> float:
        return float(self.horizon if self.k is None else self.k)

    @property
    def w_value(self) -> float:
        return float(self.k_value if self.w is None else self.w)

    @property
    def rho_k(self) -> float:
        return self.rho / (max(self.rounds, 1) * self.num_states * self.num_actions)

    @property
    def rho_sq(self) -> float:
        if self.rho_sq_override is not None:
            return self.rho_sq_override
        return self.rho / (self.num_states**2 * self.num_actions)

    @property
    def tau_sq(self) -> float:
        if self.tau_sq_override is not None:
            return self.tau_sq_override
        return self.epsilon * (1 - self.gamma) ** 2 / self.num_states

    @property
    def delta_sq(self) -> float:
        if self.delta_sq_override is not None:
            return self.delta_sq_override
        return self.delta / (self.num_states**2 * self.num_actions)

    @property
    def t_gap(self) -> float:
        """Allowed per-round drift of the visit estimate, w rho_K / T."""
        return self.w_value * self.rho_k / max(self.rounds, 1)

    def query_config(self) -> RStatConfig:
        return RStatConfig(self.tau_sq, self.rho_sq, self.delta_sq)

    def gamma_condition_ok(self) -> bool:
        """1 - gamma > sqrt(eps) log^(1/4)(1/delta) / (H |A| log^(1/4)(1/rho))."""
        rhs = (math.sqrt(self.epsilon) * math.log(1 / self.delta) ** 0.25
               / (self.horizon * self.num_actions * math.log(1 / self.rho) ** 0.25))
        return 1 - self.gamma > rhs


def theoretical_m(params: RMaxParams) -> int:
    """Episodes per round so every visit estimate is within ``t_gap`` w.p. 1 - rho_K.

    Per-episode visit counts lie in [0, H], so Hoeffding gives
    ``H^2 log(2 / rho_K) / (2 t^2)``, i.e. order |S|^2|A|^2 T^4 log(1/rho) / rho^2.
    """
    t = params.t_gap
    return math.ceil(params.horizon**2 * math.log(2 / params.rho_k) / (2 * t * t))


@dataclass
class KnownSet:
    """Visit counters, the known set and the threshold history."""

    num_states: int
    num_actions: int
    k: float
    w: float
    counts: np.ndarray = None
    known: np.ndarray = None
    thresholds: list = field(default_factory=list)

    def __post_init__(self):
        shape = (self.num_states, self.num_actions)
        if self.counts is None:
            self.counts = np.zeros(shape)
        if self.known is None:
            self.known = np.zeros(shape, dtype=bool)

    @property
    def full(self) -> bool:
        return bool(self.known.all())

    def pairs(self) -> list[tuple[int, int]]:
        return [(int(s), int(a)) for s, a in zip(*np.nonzero(self.known))]

    def counts_digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.counts).tobytes()).hexdigest()


def draw_threshold(known_set: KnownSet, stream: np.random.Generator) -> float:
    return uniform(stream, known_set.k, known_set.k + known_set.w)


def threshold_update(known_set: KnownSet, c_hat: np.ndarray, k_prime: float) -> list[tuple[int, int]]:
    """Add ``c_hat`` to the counters of unknown pairs and mark those reaching ``k_prime``.

    Known pairs keep their counters. Returns the newly known pairs in
    row-major order.
    """
    unknown = ~known_set.known
    known_set.counts = np.where(unknown, known_set.counts + c_hat, known_set.counts)
    new = unknown & (known_set.counts >= k_prime)
    known_set.known = known_set.known | new
    known_set.thresholds.append(float(k_prime))
    return [(int(s), int(a)) for s, a in zip(*np.nonzero(new))]


def rep_update_k(trajectories: TrajectoryBatch, known_set: KnownSet, stream: np.random.Generator,
                 horizon: int | None = None) -> list[tuple[int, int]]:
    """RepUpdateK: one shared threshold k' ~ U[k, k+w] per call."""
    if trajectories.num_trajectories == 0:
        raise ValueError("need at least one trajectory")
    if horizon is not None and trajectories.horizon != horizon:
        raise ValueError(f"trajectory length {trajectories.horizon} != H={horizon}")
    k_prime = draw_threshold(known_set, stream)
    c_hat = trajectories.visit_counts(known_set.num_states, known_set.num_actions) / trajectories.num_trajectories
    return threshold_update(known_set, c_hat, k_prime)


@dataclass
class RMaxModel:
    """Optimistic model: unknown pairs self-loop with reward r_max."""

    p_hat: np.ndarray
    r_hat: np.ndarray
    known: np.ndarray

    @classmethod
    def optimistic(cls, num_states: int, num_actions: int, r_max: float) -> "RMaxModel":
        p = np.zeros((num_states, num_actions, num_states))
        for s in range(num_states):
            p[s, :, s] = 1.0
        return cls(p, np.full((num_states, num_actions), float(r_max)), np.zeros((num_states, num_actions), bool))

    def copy(self) -> "RMaxModel":
        return RMaxModel(self.p_hat.copy(), self.r_hat.copy(), self.known.copy())

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.p_hat, self.r_hat, self.known):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def planning_transitions(self) -> np.ndarray:
        """Rows clamped to [0, 1] and divided by their sum; all-zero rows self-loop."""
        p = np.clip(self.p_hat, 0.0, 1.0)
        total = p.sum(axis=2, keepdims=True)
        out = np.divide(p, total, out=np.zeros_like(p), where=total > 0)
        for s, a in zip(*np.nonzero(total[..., 0] <= 0)):
            out[s, a, s] = 1.0
        return out


def update_model(model: RMaxModel, new_known, pooled: np.ndarray, rewards: np.ndarray,
                 config: RStatConfig, internal: RandTree, round_index: int,
                 practical: bool = False) -> RMaxModel:
    """Estimate the rows of newly known pairs from pooled next-state counts.

    One rSTAT indicator query per next state, with the offset taken from the
    internal path ``("known-round", i), ("sas", (s*A + a)*S + s')``.
    """
    out = model.copy()
    n_s, n_a = model.r_hat.shape
    for s, a in new_known:
        n = int(pooled[s, a].sum())
        if n == 0:
            raise SampleSizeError(f"pair ({s}, {a}) became known with no pooled samples")
        if not practical and n < config.required_n:
            raise SampleSizeError(f"pooled sample {n} for ({s}, {a}) below {config.required_n}")
        for s_next in range(n_s):
            idx = (s * n_a + a) * n_s + s_next
            u = internal.derive(("known-round", round_index), ("sas", idx)).random()
            res = rstat_from_mean(pooled[s, a, s_next] / n, n, config, config.alpha * u, practical=True)
            out.p_hat[s, a, s_next] = res.value
        out.r_hat[s, a] = rewards[s, a]
        out.known[s, a] = True
    return out


def plan(model: RMaxModel, gamma: float, tol: float = PLAN_TOL) -> np.ndarray:
    """Greedy policy of exact value iteration on the (renormalized) model."""
    q = solve_q(model.r_hat, model.planning_transitions(), gamma, tol)
    return greedy_policy(q)


def _policy_hash(policy: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(policy, dtype=np.int64).tobytes()).hexdigest()


@dataclass
class RMaxResult:
    policy: np.ndarray
    model: RMaxModel
    known_set: KnownSet
    audit: list[dict]
    rounds_run: int
    params: object = None

    def known_sequence(self) -> list[list[list[int]]]:
        return [row["newly_known"] for row in self.audit]

    def audit_jsonl(self) -> str:
        return "".join(json.dumps(row, sort_keys=True) + "\n" for row in self.audit)


def run_reprmax(mdp: TabularMdp, params: RMaxParams, internal: RandTree, sample: RandTree) -> RMaxResult:
    """Replicable episodic R-max.

    Runs min(T, rounds until every pair is known). The true MDP is used to
    roll out episodes and to read the known reward of a newly known pair.
    """
    if (mdp.num_states, mdp.num_actions) != (params.num_states, params.num_actions):
        raise ValueError("params do not match the MDP's size")
    if not params.practical and not params.gamma_condition_ok():
        warnings.warn("gamma is outside the range the convergence guarantee assumes", stacklevel=2)
    m = params.m if params.m is not None else theoretical_m(params)
    n_s, n_a, H = mdp.num_states, mdp.num_actions, params.horizon
    config = params.query_config()

    policy = internal.derive(("init-policy", 0)).integers(n_a, size=n_s).astype(np.int64)
    model = RMaxModel.optimistic(n_s, n_a, params.r_max)
    known = KnownSet(n_s, n_a, params.k_value, params.w_value)
    pooled = np.zeros((n_s, n_a, n_s), dtype=np.int64)
    audit = []
    i = 0
    while i < params.rounds and not known.full:
        i += 1
        batch = sample_episodes(mdp, policy, H, m, sample, (("round", i),))
        pooled += batch.transition_counts(n_s, n_a)
        new = rep_update_k(batch, known, internal.derive(("k-prime", i)), H)
        model = update_model(model, new, pooled, mdp.rewards, config, internal, i, params.practical)
        policy = plan(model, mdp.gamma)
        audit.append({
            "round": i,
            "k_prime": known.thresholds[-1],
            "newly_known": [list(p) for p in new],
            "n_counts_digest": known.counts_digest(),
            "model_hash": model.content_hash(),
            "policy_hash": _policy_hash(policy),
        })
    return RMaxResult(policy, model, known, audit, i, params)


def run_rmax_baseline(mdp: TabularMdp, epsilon: float, delta: float, horizon: int, m: int,
                      threshold: float, sample: RandTree, rounds: int | None = None) -> RMaxResult:
    """Classical R-max: fixed threshold on the same visit counters, raw
    empirical transition rows, all-zeros initial policy."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if not threshold > 0:
        raise ValueError("threshold must be > 0")
    if not 0.0 < epsilon < 1.0 or not 0.0 < delta < 1.0:
        raise ValueError("epsilon and delta must be in (0, 1)")
    n_s, n_a = mdp.num_states, mdp.num_actions
    if rounds is None:
        rounds = math.ceil(horizon * n_s * n_a / epsilon + horizon**2 * math.log(1 / delta) / epsilon**2)
    policy = np.zeros(n_s, dtype=np.int64)
    model = RMaxModel.optimistic(n_s, n_a, mdp.r_max)
    known = KnownSet(n_s, n_a, threshold, 0.0)
    pooled = np.zeros((n_s, n_a, n_s), dtype=np.int64)
    audit = []
    i = 0
    while i < rounds and not known.full:
        i += 1
        batch = sample_episodes(mdp, policy, horizon, m, sample, (("round", i),))
        pooled += batch.transition_counts(n_s, n_a)
        c_hat = batch.visit_counts(n_s, n_a) / m
        new = threshold_update(known, c_hat, threshold)
        model = model.copy()
        for s, a in new:
            model.p_hat[s, a] = pooled[s, a] / pooled[s, a].sum()
            model.r_hat[s, a] = mdp.rewards[s, a]
            model.known[s, a] = True
        policy = plan(model, mdp.gamma)
        audit.append({
            "round": i,
            "k_prime": float(threshold),
            "newly_known": [list(p) for p in new],
            "n_counts_digest": known.counts_digest(),
            "model_hash": model.content_hash(),
            "policy_hash": _policy_hash(policy),
        })
    return RMaxResult(policy, model, known, audit, i)
