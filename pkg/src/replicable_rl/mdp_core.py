"""Finite MDPs, validation, and exact dynamic-programming oracles.

Everything here is deterministic; these routines are the ground truth the
sampling-based algorithms are checked against.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ROW_SUM_TOL = 1e-12


class MdpValidationError(ValueError):
    """Raised when an MDP violates one or more structural invariants."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid MDP:\n  " + "\n  ".join(self.problems))


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """A finite discounted MDP with deterministic rewards.

    ``rewards`` has shape (S, A), ``transitions`` has shape (S, A, S) with
    ``transitions[s, a, s']`` = P(s' | s, a). Arrays are copied and made
    read-only on construction.
    """

    rewards: np.ndarray
    transitions: np.ndarray
    gamma: float
    initial_dist: np.ndarray
    r_max: float

    def __post_init__(self):
        for name in ("rewards", "transitions", "initial_dist"):
            arr = np.array(getattr(self, name), dtype=np.float64, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "r_max", float(self.r_max))

    @property
    def num_states(self) -> int:
        return self.rewards.shape[0]

    @property
    def num_actions(self) -> int:
        return self.rewards.shape[1]

    def with_transitions(self, transitions: np.ndarray) -> "TabularMdp":
        return TabularMdp(self.rewards, transitions, self.gamma, self.initial_dist, self.r_max)

    def to_dict(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "gamma": self.gamma,
            "r_max": self.r_max,
            "rewards": self.rewards.tolist(),
            "transitions": self.transitions.tolist(),
            "initial_dist": self.initial_dist.tolist(),
        }

    def content_hash(self) -> str:
        """SHA-256 over the canonical JSON form (exact float reprs)."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class ValidationReport:
    problems: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems

    def __bool__(self) -> bool:
        return self.ok


def validate(mdp: TabularMdp) -> ValidationReport:
    """Check every TabularMdp invariant and list each violation with indices."""
    problems: list[str] = []
    r, p, mu = mdp.rewards, mdp.transitions, mdp.initial_dist
    if r.ndim != 2 or r.shape[0] < 1 or r.shape[1] < 1:
        return ValidationReport([f"rewards must be a non-empty (S, A) matrix, got shape {r.shape}"])
    n_s, n_a = r.shape
    if p.shape != (n_s, n_a, n_s):
        problems.append(f"transitions shape {p.shape} != ({n_s}, {n_a}, {n_s})")
    if mu.shape != (n_s,):
        problems.append(f"initial_dist shape {mu.shape} != ({n_s},)")
    if not (0.0 <= mdp.gamma < 1.0):
        problems.append(f"gamma out of range: {mdp.gamma} not in [0, 1)")
    if not mdp.r_max > 0:
        problems.append(f"r_max must be > 0, got {mdp.r_max}")

    if not np.all(np.isfinite(r)):
        problems.append("rewards contain non-finite entries")
    else:
        for s, a in zip(*np.nonzero((r < 0) | (r > mdp.r_max))):
            problems.append(f"reward ({s},{a}) = {r[s, a]} outside [0, r_max={mdp.r_max}]")

    if p.shape == (n_s, n_a, n_s):
        for s, a, s2 in zip(*np.nonzero(~(p >= 0))):
            problems.append(f"transition ({s},{a},{s2}) = {p[s, a, s2]} is negative or NaN")
        sums = p.sum(axis=2)
        for s, a in zip(*np.nonzero(~(np.abs(sums - 1.0) <= ROW_SUM_TOL))):
            problems.append(f"transition row ({s},{a}) sums to {float(sums[s, a])!r}, not 1")

    if mu.shape == (n_s,):
        for s in np.nonzero(~(mu >= 0))[0]:
            problems.append(f"initial_dist[{s}] = {mu[s]} is negative or NaN")
        if not abs(mu.sum() - 1.0) <= ROW_SUM_TOL:
            problems.append(f"initial_dist sums to {float(mu.sum())!r}, not 1")
    return ValidationReport(problems)


def make_mdp(rewards, transitions, gamma, initial_dist=None, r_max=None, renormalize=False) -> TabularMdp:
    """Build and validate an MDP.

    ``initial_dist`` defaults to uniform and ``r_max`` to the largest reward
    (or 1.0 if all rewards are zero). Rows are only renormalized when
    ``renormalize`` is set explicitly.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    transitions = np.asarray(transitions, dtype=np.float64)
    if initial_dist is None:
        initial_dist = np.full(rewards.shape[0], 1.0 / rewards.shape[0])
    if r_max is None:
        r_max = float(rewards.max()) if rewards.size and rewards.max() > 0 else 1.0
    if renormalize:
        transitions = transitions / transitions.sum(axis=2, keepdims=True)
        initial_dist = np.asarray(initial_dist, dtype=np.float64)
        initial_dist = initial_dist / initial_dist.sum()
    mdp = TabularMdp(rewards, transitions, gamma, initial_dist, r_max)
    report = validate(mdp)
    if not report.ok:
        raise MdpValidationError(report.problems)
    return mdp


def mdp_from_dict(data: dict, renormalize: bool = False) -> TabularMdp:
    required = ("num_states", "num_actions", "gamma", "r_max", "rewards", "transitions", "initial_dist")
    missing = [k for k in required if k not in data]
    if missing:
        raise MdpValidationError([f"missing field: {k}" for k in missing])
    mdp = make_mdp(
        data["rewards"], data["transitions"], data["gamma"],
        data["initial_dist"], data["r_max"], renormalize=renormalize,
    )
    if (mdp.num_states, mdp.num_actions) != (data["num_states"], data["num_actions"]):
        raise MdpValidationError([
            f"declared size ({data['num_states']}, {data['num_actions']}) "
            f"!= array size ({mdp.num_states}, {mdp.num_actions})"
        ])
    return mdp


def load_mdp(path: str | Path) -> TabularMdp:
    with open(path) as fh:
        return mdp_from_dict(json.load(fh))


def save_mdp(mdp: TabularMdp, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(mdp.to_dict(), fh, indent=1)
        fh.write("\n")


# --- exact dynamic programming -------------------------------------------------


def bellman_backup(q: np.ndarray, rewards: np.ndarray, transitions: np.ndarray, gamma: float) -> np.ndarray:
    """One application of the Bellman optimality operator to a Q table."""
    return rewards + gamma * (transitions @ q.max(axis=1))


def solve_q(rewards, transitions, gamma, tol, max_iter=1_000_000, history=None) -> np.ndarray:
    """Value iteration on raw arrays.

    Stops once ||Q_{t+1} - Q_t||_inf <= tol (1-gamma)/gamma, which guarantees
    ||Q - TQ||_inf <= tol for the returned iterate. If ``history`` is a list,
    every iterate is appended to it.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    q = np.zeros_like(rewards, dtype=np.float64)
    if history is not None:
        history.append(q)
    if gamma == 0:
        q = np.array(rewards, dtype=np.float64)
        if history is not None:
            history.append(q)
        return q
    stop = tol * (1.0 - gamma) / gamma
    for _ in range(max_iter):
        q_next = bellman_backup(q, rewards, transitions, gamma)
        if history is not None:
            history.append(q_next)
        diff = np.max(np.abs(q_next - q))
        q = q_next
        if diff <= stop:
            return q
    raise RuntimeError("value iteration did not converge")


def exact_value_iteration(mdp: TabularMdp, tol: float, history: list | None = None) -> np.ndarray:
    return solve_q(mdp.rewards, mdp.transitions, mdp.gamma, tol, history=history)


def greedy_policy(q: np.ndarray) -> np.ndarray:
    """argmax over actions; ties go to the lowest action index."""
    return np.argmax(np.asarray(q), axis=1).astype(np.int64)


def policy_matrices(mdp: TabularMdp, policy) -> tuple[np.ndarray, np.ndarray]:
    policy = np.asarray(policy, dtype=np.int64)
    idx = np.arange(mdp.num_states)
    return mdp.rewards[idx, policy], mdp.transitions[idx, policy]


def policy_values(mdp: TabularMdp, policy, tol: float = 1e-12) -> np.ndarray:
    """V_pi by a direct linear solve; ``tol`` is accepted for API symmetry.

    The solve is exact up to floating-point round-off, far below any tolerance
    callers use.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    r_pi, p_pi = policy_matrices(mdp, policy)
    a = np.eye(mdp.num_states) - mdp.gamma * p_pi
    return np.linalg.solve(a, r_pi)


def stochastic_policy_values(mdp: TabularMdp, pi: np.ndarray) -> np.ndarray:
    """V_pi for a stochastic policy given as an (S, A) matrix of action probabilities."""
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != mdp.rewards.shape or np.any(pi < 0) or np.any(np.abs(pi.sum(axis=1) - 1) > ROW_SUM_TOL):
        raise ValueError("pi must be an (S, A) matrix of nonnegative rows summing to 1")
    r_pi = (pi * mdp.rewards).sum(axis=1)
    p_pi = np.einsum("sa,sat->st", pi, mdp.transitions)
    return np.linalg.solve(np.eye(mdp.num_states) - mdp.gamma * p_pi, r_pi)


def policy_return(mdp: TabularMdp, policy, tol: float = 1e-12) -> float:
    """J(pi) = E_{s ~ mu}[V_pi(s)]."""
    return float(mdp.initial_dist @ policy_values(mdp, policy, tol))


def optimal_return(mdp: TabularMdp, tol: float = 1e-10) -> float:
    return policy_return(mdp, greedy_policy(exact_value_iteration(mdp, tol)))


def suboptimality(mdp: TabularMdp, policy, tol: float = 1e-10) -> float:
    """J(pi*) - J(pi); a policy is eps-optimal iff this is <= eps."""
    return optimal_return(mdp, tol) - policy_return(mdp, policy)


def simulation_gap_bound(mdp1: TabularMdp, mdp2: TabularMdp) -> float:
    """R_max / (2 (1-gamma)^2) * max_{s,a} ||P1(s,a) - P2(s,a)||_1.

    Bounds |J_1(pi) - J_2(pi)| for every policy when the MDPs differ only in
    their transition kernels.
    """
    if mdp1.transitions.shape != mdp2.transitions.shape:
        raise ValueError(f"shape mismatch: {mdp1.transitions.shape} vs {mdp2.transitions.shape}")
    if (
        mdp1.gamma != mdp2.gamma
        or mdp1.r_max != mdp2.r_max
        or not np.allclose(mdp1.rewards, mdp2.rewards, rtol=0.0, atol=1e-12)
        or not np.allclose(mdp1.initial_dist, mdp2.initial_dist, rtol=0.0, atol=1e-12)
    ):
        raise ValueError("MDPs must differ only in their transitions")
    l1 = np.abs(mdp1.transitions - mdp2.transitions).sum(axis=2).max()
    return mdp1.r_max / (2.0 * (1.0 - mdp1.gamma) ** 2) * float(l1)


def occupancy(mdp: TabularMdp, policy, horizon: int) -> np.ndarray:
    """Expected visit counts c[s, a] over steps 0..horizon-1 (forward DP)."""
    policy = np.asarray(policy, dtype=np.int64)
    _, p_pi = policy_matrices(mdp, policy)
    d = mdp.initial_dist.copy()
    c = np.zeros((mdp.num_states, mdp.num_actions))
    for _ in range(horizon):
        c[np.arange(mdp.num_states), policy] += d
        d = d @ p_pi
    return c
