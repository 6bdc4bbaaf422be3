import json

import numpy as np
import pytest

from conftest import two_state
from replicable_rl.mdp_core import (
    exact_value_iteration,
    greedy_policy,
    make_mdp,
    simulation_gap_bound,
    suboptimality,
)
from replicable_rl.rand_streams import internal_tree, sample_tree
from replicable_rl.rep_mdp import (
    ApproxMdp,
    approximate_mdp,
    query_config,
    required_m,
    theoretical_m_mdp,
    total_samples,
)
from replicable_rl.rstat import SampleSizeError


def one_action():
    return make_mdp([[0.0], [1.0]], [[[0.3, 0.7]], [[0.6, 0.4]]], 0.5)


class TestBudgets:
    def test_query_split(self):
        cfg = query_config(2, 1, 0.1, 0.2, 0.01)
        assert (cfg.tau, cfg.rho, cfg.delta) == (0.1, 0.05, 0.0025)

    def test_required_m(self):
        assert required_m(2, 1, 0.1, 0.2, 0.01) == query_config(2, 1, 0.1, 0.2, 0.01).required_n

    def test_frozen_theoretical(self):
        assert theoretical_m_mdp(2, 2, 0.1, 0.2, 0.01) == 23317368

    def test_grows_like_s6(self):
        a = theoretical_m_mdp(10, 2, 0.1, 0.2, 0.01)
        b = theoretical_m_mdp(20, 2, 0.1, 0.2, 0.01)
        # S^6 from the K^3 prefactor, times a slowly growing log term
        assert 64 < b / a < 64 * 1.2

    def test_gap_must_be_positive(self):
        with pytest.raises(ValueError):
            theoretical_m_mdp(2, 2, 0.1, 0.2, 0.1)

    def test_total_samples(self):
        assert total_samples(3, 2, 10) == 60
        assert total_samples(3, 2, 10, "per_tuple") == 180


class TestApproximate:
    def test_deterministic_rows_round_near_one_hot(self):
        mdp = make_mdp([[0.0], [0.0]], [[[0.0, 1.0]], [[1.0, 0.0]]], 0.5)
        am = approximate_mdp(mdp, 0.1, 0.2, 0.01, 100, internal_tree(0), sample_tree(0), practical=True)
        assert np.all(np.abs(am.p_hat - mdp.transitions) <= am.alpha / 2)
        assert np.argmax(am.planning_transitions()[0, 0]) == 1

    def test_entries_on_offset_grid(self):
        am = approximate_mdp(two_state(), 0.1, 0.2, 0.01, 500, internal_tree(1), sample_tree(2), practical=True)
        inner = (am.p_hat > 0) & (am.p_hat < 1)
        k = (am.p_hat[inner] - am.offsets[inner]) / am.alpha
        np.testing.assert_allclose(k, np.round(k), atol=1e-9)

    @pytest.mark.parametrize("mode", ["shared", "per_tuple"])
    def test_modes_run(self, mode):
        am = approximate_mdp(two_state(), 0.1, 0.2, 0.01, 2000, internal_tree(1), sample_tree(2),
                             mode=mode, practical=True)
        assert am.mode == mode and am.p_hat.shape == (2, 2, 2)

    def test_bad_arguments(self):
        with pytest.raises(ValueError, match="mode"):
            approximate_mdp(two_state(), 0.1, 0.2, 0.01, 10, internal_tree(0), sample_tree(0), mode="x")
        with pytest.raises(ValueError):
            approximate_mdp(two_state(), 0.1, 0.2, 0.01, 0, internal_tree(0), sample_tree(0))
        with pytest.raises(SampleSizeError):
            approximate_mdp(two_state(), 0.1, 0.2, 0.01, 10, internal_tree(0), sample_tree(0))

    def test_paired_runs_at_theoretical_size(self):
        mdp = one_action()
        m = required_m(2, 1, 0.1, 0.2, 0.01)
        hashes = {approximate_mdp(mdp, 0.1, 0.2, 0.01, m, internal_tree(0), sample_tree(s)).content_hash()
                  for s in range(1, 6)}
        assert len(hashes) == 1

    def test_suboptimality_within_simulation_bound(self):
        mdp = two_state()
        m = required_m(2, 2, 0.1, 0.2, 0.01)
        am = approximate_mdp(mdp, 0.1, 0.2, 0.01, m, internal_tree(3), sample_tree(4))
        est = am.to_mdp()
        pol = greedy_policy(exact_value_iteration(est, 1e-12))
        assert suboptimality(mdp, pol) <= 2 * simulation_gap_bound(mdp, est) + 1e-12

    def test_save_round_trip(self, tmp_path):
        am = approximate_mdp(two_state(), 0.1, 0.2, 0.01, 500, internal_tree(0), sample_tree(0), practical=True)
        path = tmp_path / "am.json"
        am.save(path)
        data = json.loads(path.read_text())
        assert data["metadata"]["kind"] == "approx_mdp"
        np.testing.assert_array_equal(np.array(data["metadata"]["p_hat"]), am.p_hat)

    def test_zero_row_self_loops(self):
        am = ApproxMdp(np.zeros((2, 1, 2)), np.zeros((2, 1)), np.zeros((2, 1, 2)), np.zeros((2, 1, 2), int),
                       0.1, 1, "shared", 0.5, 1.0, np.array([1.0, 0.0]))
        np.testing.assert_array_equal(am.planning_transitions()[:, 0], np.eye(2))
