"""Replicable tabular reinforcement learning.

rSTAT queries, replicable phased value iteration, replicable episodic R-max,
replicable kernel estimation, their non-replicable baselines, exact oracles,
and a paired-run harness for measuring replicability.
"""

from .mdp_core import (
    MdpValidationError,
    TabularMdp,
    exact_value_iteration,
    greedy_policy,
    make_mdp,
    policy_return,
    policy_values,
    simulation_gap_bound,
    suboptimality,
    validate,
)
from .rand_streams import RandTree, internal_tree, sample_tree
from .rstat import RStatConfig, RStatResult, SampleSizeError, rstat
from .rpvi import PviParams, run_pvi_baseline, run_rpvi
from .reprmax import RMaxParams, run_reprmax, run_rmax_baseline
from .rep_mdp import approximate_mdp, theoretical_m_mdp
from .gridworld import GridSpec, default_paper_grid
from .replication_lab import PairedRunSpec, ReplicationReport, run_cohort, sweep

__version__ = "0.1.0"

__all__ = [
    "GridSpec",
    "MdpValidationError",
    "PairedRunSpec",
    "PviParams",
    "RMaxParams",
    "RStatConfig",
    "RStatResult",
    "RandTree",
    "ReplicationReport",
    "SampleSizeError",
    "TabularMdp",
    "approximate_mdp",
    "default_paper_grid",
    "exact_value_iteration",
    "greedy_policy",
    "internal_tree",
    "make_mdp",
    "policy_return",
    "policy_values",
    "rstat",
    "run_cohort",
    "run_pvi_baseline",
    "run_reprmax",
    "run_rmax_baseline",
    "run_rpvi",
    "sample_tree",
    "simulation_gap_bound",
    "suboptimality",
    "sweep",
    "theoretical_m_mdp",
    "validate",
]
