import json
from pathlib import Path

import numpy as np
import pytest

from replicable_rl.gridworld import compile_grid, default_paper_grid
from replicable_rl.mdp_core import make_mdp

FIXTURES = Path(__file__).parent / "fixtures"

# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def two_state(gamma=0.5):
    """Q* = [[7/9, 46/27], [4/3, 13/18]] at gamma = 0.5 (solved by hand)."""
    rewards = np.array([[0.0, 1.0], [0.5, 0.0]])
    transitions = np.array([
        [[0.6, 0.4], [0.2, 0.8]],
        [[0.9, 0.1], [0.3, 0.7]],
    ])
    return make_mdp(rewards, transitions, gamma)


def rmax_two_state():
    rewards = np.array([[0.0, 0.2], [1.0, 0.5]])
    transitions = np.array([
        [[0.3, 0.7], [0.9, 0.1]],
        [[0.4, 0.6], [0.8, 0.2]],
    ])
    return make_mdp(rewards, transitions, 0.9)


# Desk-scale RepRMAX settings: the theoretical m and T are astronomically large
# even at |S| = |A| = 2, so the rSTAT tolerance and the round cap are pinned.
RMAX_FIXTURE = dict(epsilon=0.1, rho=0.2, delta=0.04, horizon=4, m=20000,
                    tau_sq_override=0.1, rounds_override=200, practical=True)


@pytest.fixture
def small_mdp():
    return two_state()


@pytest.fixture(scope="session")
def grid():
    spec = default_paper_grid()
    mdp, layout = compile_grid(spec)
    return spec, mdp, layout


@pytest.fixture(scope="session")
def grid_qstar():
    with open(FIXTURES / "gridworld_qstar.json") as fh:
        return json.load(fh)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {cid}: {detail}")
