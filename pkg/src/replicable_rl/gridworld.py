"""Slippery two-goal gridworld compiled to a TabularMdp.

Actions are up, down, left, right. An action moves in its intended direction
with probability ``1 - slip`` and to either perpendicular direction with
probability ``slip / 2`` each; moves into walls or blocked cells stay put.

Goal cells pay their reward on every action and then move to a shared
zero-reward absorbing sink, so rewards stay a deterministic function of
(s, a) and each goal pays exactly once.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mdp_core import MdpValidationError, TabularMdp, validate

UP, DOWN, LEFT, RIGHT = range(4)
ACTION_NAMES = ("up", "down", "left", "right")
_MOVES = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}
_PERPENDICULAR = {UP: (LEFT, RIGHT), DOWN: (RIGHT, LEFT), LEFT: (DOWN, UP), RIGHT: (UP, DOWN)}
_MIRROR_ACTION = {UP: UP, DOWN: DOWN, LEFT: RIGHT, RIGHT: LEFT}
_ARROWS = {UP: "^", DOWN: "v", LEFT: "<", RIGHT: ">"}

Cell = tuple[int, int]

GRID_VERSION = 1


@dataclass(frozen=True)
class GridSpec:
    """Grid layout; cells are (row, col) with row 0 at the top."""

    width: int
    height: int
    goals: tuple[tuple[Cell, float], ...]
    blocked: tuple[Cell, ...] = ()
    slip: float = 0.3
    start: tuple[tuple[Cell, float], ...] = ()
    gamma: float = 0.95

    def __post_init__(self):
        object.__setattr__(self, "goals", tuple((tuple(c), float(r)) for c, r in self.goals))
        object.__setattr__(self, "blocked", tuple(tuple(c) for c in self.blocked))
        object.__setattr__(self, "start", tuple((tuple(c), float(p)) for c, p in self.start))

    def problems(self) -> list[str]:
        out = []
        if self.width < 1 or self.height < 1:
            out.append(f"grid must be at least 1x1, got {self.width}x{self.height}")
        if not 0.0 <= self.slip < 1.0:
            out.append(f"slip must be in [0, 1), got {self.slip}")
        if not 0.0 <= self.gamma < 1.0:
            out.append(f"gamma must be in [0, 1), got {self.gamma}")
        blocked = set(self.blocked)
        for kind, cells in (("goal", [c for c, _ in self.goals]), ("start", [c for c, _ in self.start]),
                            ("blocked", list(self.blocked))):
            for c in cells:
                if not self.in_bounds(c):
                    out.append(f"{kind} cell {c} out of bounds")
                elif kind != "blocked" and c in blocked:
                    out.append(f"{kind} cell {c} is blocked")
        for c, r in self.goals:
            if r < 0:
                out.append(f"goal {c} has negative reward {r}")
        if self.start:
            probs = [p for _, p in self.start]
            if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-12:
                out.append("start distribution must be nonnegative and sum to 1")
        return out

    def in_bounds(self, cell: Cell) -> bool:
        r, c = cell
        return 0 <= r < self.height and 0 <= c < self.width

    def to_dict(self) -> dict:
        return {
            "version": GRID_VERSION,
            "width": self.width,
            "height": self.height,
            "goals": [[list(c), r] for c, r in self.goals],
            "blocked": [list(c) for c in self.blocked],
            "slip": self.slip,
            "start": [[list(c), p] for c, p in self.start],
            "gamma": self.gamma,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        return cls(
            width=int(data["width"]),
            height=int(data["height"]),
            goals=tuple((tuple(c), float(r)) for c, r in data.get("goals", [])),
            blocked=tuple(tuple(c) for c in data.get("blocked", [])),
            slip=float(data.get("slip", 0.3)),
            start=tuple((tuple(c), float(p)) for c, p in data.get("start", [])),
            gamma=float(data.get("gamma", 0.95)),
        )


def default_paper_grid() -> GridSpec:
    """5x3 open grid, goals worth 1.0 at both ends of the middle row, start
    in the centre cell, slip 0.3, gamma 0.95 (layout version 1).

    The two goals are mirror images about the start, so the optimal Q table is
    left/right symmetric and sample noise alone decides which goal a learned
    policy heads for.
    """
    return GridSpec(
        width=5,
        height=3,
        goals=(((1, 0), 1.0), ((1, 4), 1.0)),
        blocked=(),
        slip=0.3,
        start=(((1, 2), 1.0),),
        gamma=0.95,
    )


@dataclass(frozen=True)
class GridLayout:
    """Mapping between grid cells and MDP state indices."""

    cells: tuple[Cell, ...]
    sink: int | None

    @property
    def index(self) -> dict[Cell, int]:
        return {c: i for i, c in enumerate(self.cells)}

    def state(self, cell: Cell) -> int:
        return self.index[tuple(cell)]


def layout(spec: GridSpec) -> GridLayout:
    blocked = set(spec.blocked)
    cells = tuple((r, c) for r in range(spec.height) for c in range(spec.width) if (r, c) not in blocked)
    sink = len(cells) if spec.goals else None
    return GridLayout(cells, sink)


def _step(spec: GridSpec, blocked: set, cell: Cell, action: int) -> Cell:
    dr, dc = _MOVES[action]
    nxt = (cell[0] + dr, cell[1] + dc)
    if not spec.in_bounds(nxt) or nxt in blocked:
        return cell
    return nxt


def compile_grid(spec: GridSpec) -> tuple[TabularMdp, GridLayout]:
    """Build the MDP and its cell/state layout; raises on an invalid spec."""
    problems = spec.problems()
    if problems:
        raise MdpValidationError(problems)
    lay = layout(spec)
    idx = lay.index
    n_s = len(lay.cells) + (1 if lay.sink is not None else 0)
    blocked = set(spec.blocked)
    goal_reward = dict(spec.goals)

    half = spec.slip / 2.0
    intended = 1.0 - half - half
    rewards = np.zeros((n_s, 4))
    transitions = np.zeros((n_s, 4, n_s))
    for cell in lay.cells:
        s = idx[cell]
        if cell in goal_reward:
            rewards[s, :] = goal_reward[cell]
            transitions[s, :, lay.sink] = 1.0
            continue
        for a in range(4):
            left, right = _PERPENDICULAR[a]
            for direction, mass in ((a, intended), (left, half), (right, half)):
                if mass > 0:
                    transitions[s, a, idx[_step(spec, blocked, cell, direction)]] += mass
    if lay.sink is not None:
        transitions[lay.sink, :, lay.sink] = 1.0

    mu = np.zeros(n_s)
    if spec.start:
        for cell, p in spec.start:
            mu[idx[cell]] += p
    else:
        open_cells = [idx[c] for c in lay.cells if c not in goal_reward]
        mu[open_cells] = 1.0 / len(open_cells) if open_cells else 0.0
        if not open_cells:
            mu[0] = 1.0
    r_max = max([r for _, r in spec.goals if r > 0], default=1.0)
    mdp = TabularMdp(rewards, transitions, spec.gamma, mu, r_max)
    report = validate(mdp)
    if not report.ok:
        raise MdpValidationError(report.problems)
    return mdp, lay


def compile(spec: GridSpec) -> TabularMdp:  # noqa: A001 - mirrors the operation name
    return compile_grid(spec)[0]


def mirror(spec: GridSpec) -> GridSpec:
    """Left-right mirror image of a grid."""
    flip = lambda c: (c[0], spec.width - 1 - c[1])  # noqa: E731
    return GridSpec(
        spec.width, spec.height,
        goals=tuple((flip(c), r) for c, r in spec.goals),
        blocked=tuple(flip(c) for c in spec.blocked),
        slip=spec.slip,
        start=tuple((flip(c), p) for c, p in spec.start),
        gamma=spec.gamma,
    )


def mirror_action(a: int) -> int:
    return _MIRROR_ACTION[a]


def goal_reach_probabilities(spec: GridSpec, policy, max_steps: int = 20_000, tol: float = 1e-13) -> dict[Cell, float]:
    """Probability that following ``policy`` from the start distribution ever
    enters each goal cell (undiscounted)."""
    mdp, lay = compile_grid(spec)
    policy = np.asarray(policy, dtype=np.int64)
    p_pi = mdp.transitions[np.arange(mdp.num_states), policy]
    goal_states = [lay.state(c) for c, _ in spec.goals]
    hit = np.zeros(len(goal_states))
    d = mdp.initial_dist.copy()
    for _ in range(max_steps):
        hit += d[goal_states]
        d[goal_states] = 0.0
        if lay.sink is not None:
            d[lay.sink] = 0.0
        if d.sum() < tol:
            break
        d = d @ p_pi
    return {c: float(h) for (c, _), h in zip(spec.goals, hit)}


def render_grid(spec: GridSpec) -> str:
    goals = {c for c, _ in spec.goals}
    starts = {c for c, p in spec.start if p > 0}
    blocked = set(spec.blocked)
    lines = []
    for r in range(spec.height):
        row = []
        for c in range(spec.width):
            cell = (r, c)
            row.append("#" if cell in blocked else "G" if cell in goals else "S" if cell in starts else ".")
        lines.append(" ".join(row))
    return "\n".join(lines)


def render_policy(spec: GridSpec, policy) -> str:
    """One arrow per open cell; goals print as G and blocked cells as #."""
    lay = layout(spec)
    idx = lay.index
    goals = {c for c, _ in spec.goals}
    blocked = set(spec.blocked)
    lines = []
    for r in range(spec.height):
        row = []
        for c in range(spec.width):
            cell = (r, c)
            if cell in blocked:
                row.append("#")
            elif cell in goals:
                row.append("G")
            else:
                row.append(_ARROWS[int(policy[idx[cell]])])
        lines.append(" ".join(row))
    return "\n".join(lines)


def load_gridspec(path: str | Path) -> GridSpec:
    with open(path) as fh:
        return GridSpec.from_dict(json.load(fh))


def save_gridspec(spec: GridSpec, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(spec.to_dict(), fh, indent=1)
        fh.write("\n")
