import numpy as np
import pytest

from conftest import RMAX_FIXTURE, rmax_two_state
from replicable_rl.mdp_core import exact_value_iteration, greedy_policy, suboptimality
from replicable_rl.rand_streams import internal_tree, sample_tree
from replicable_rl.reprmax import (
    KnownSet,
    RMaxModel,
    RMaxParams,
    plan,
    rep_update_k,
    run_reprmax,
    run_rmax_baseline,
    theoretical_m,
    threshold_update,
    update_model,
)
from replicable_rl.rstat import RStatConfig, SampleSizeError
from replicable_rl.sampling import TrajectoryBatch


@pytest.fixture
def mdp():
    return rmax_two_state()


def batch(states, actions):
    states = np.array(states)
    actions = np.array(actions)
    return TrajectoryBatch(states, actions, np.zeros(actions.shape))


class TestParams:
    def test_defaults(self, mdp):
        p = RMaxParams.for_mdp(mdp, 0.1, 0.2, 0.04, 4)
        assert p.k_value == 4.0 and p.w_value == 4.0
        assert p.rounds == 5311
        assert p.rho_sq == 0.2 / 8
        assert p.tau_sq == pytest.approx(0.1 * 0.01 / 2)
        assert p.t_gap == pytest.approx(4 * (0.2 / (5311 * 4)) / 5311)

    def test_theoretical_m_is_huge(self, mdp):
        p = RMaxParams.for_mdp(mdp, 0.1, 0.2, 0.04, 4)
        assert theoretical_m(p) > 10**14

    def test_delta_below_quarter_rho(self, mdp):
        with pytest.raises(ValueError, match="rho/4"):
            RMaxParams.for_mdp(mdp, 0.1, 0.2, 0.05, 4)

    @pytest.mark.parametrize("kw", [dict(horizon=0), dict(m=0), dict(rounds_override=-1), dict(k=-1.0)])
    def test_rejects(self, mdp, kw):
        args = dict(epsilon=0.1, rho=0.2, delta=0.01, horizon=4) | kw
        with pytest.raises(ValueError):
            RMaxParams.for_mdp(mdp, **args)

    def test_gamma_condition(self, mdp):
        # 1 - gamma = 0.1 against a right-hand side of about 0.047
        assert RMaxParams.for_mdp(mdp, 0.1, 0.2, 0.04, 4).gamma_condition_ok() is True
        assert RMaxParams(0.1, 0.2, 0.04, 4, 0.99, 2, 2).gamma_condition_ok() is False


class TestKnownSet:
    def test_rep_update_k_example(self):
        ks = KnownSet(2, 2, k=1.0, w=0.0)
        # per-episode visits: (0,0) twice, (0,1) once, (1,0) once in each of 2 episodes
        b = batch([[0, 0, 1, 0], [0, 0, 1, 0]], [[0, 1, 0], [0, 1, 0]])
        new = rep_update_k(b, ks, internal_tree(0).derive(), horizon=3)
        assert new == [(0, 0), (0, 1), (1, 0)]
        np.testing.assert_array_equal(ks.counts, [[1.0, 1.0], [1.0, 0.0]])
        assert ks.thresholds == [1.0]

    def test_known_counters_frozen(self):
        ks = KnownSet(1, 2, k=1.0, w=1.0)
        threshold_update(ks, np.array([[1.5, 0.2]]), 1.2)
        threshold_update(ks, np.array([[9.0, 0.2]]), 1.2)
        np.testing.assert_allclose(ks.counts, [[1.5, 0.4]])
        assert ks.pairs() == [(0, 0)]

    def test_threshold_in_window(self):
        ks = KnownSet(1, 1, k=3.0, w=2.0)
        b = batch([[0, 0]], [[0]])
        g = internal_tree(1).derive()
        for _ in range(50):
            rep_update_k(b, ks, g)
        assert all(3.0 <= t < 5.0 for t in ks.thresholds)

    def test_length_checked(self):
        with pytest.raises(ValueError, match="H=4"):
            rep_update_k(batch([[0, 0]], [[0]]), KnownSet(1, 1, 1.0, 1.0), internal_tree(0).derive(), horizon=4)
        with pytest.raises(ValueError, match="at least one"):
            rep_update_k(batch(np.zeros((0, 2), int), np.zeros((0, 1), int)), KnownSet(1, 1, 1.0, 1.0),
                         internal_tree(0).derive())


class TestModel:
    def test_optimistic(self):
        m = RMaxModel.optimistic(2, 3, 1.0)
        assert np.all(m.r_hat == 1.0)
        np.testing.assert_array_equal(m.p_hat[1, 2], [0.0, 1.0])

    def test_all_unknown_plans_action_zero(self):
        np.testing.assert_array_equal(plan(RMaxModel.optimistic(3, 2, 1.0), 0.9), [0, 0, 0])

    def test_true_model_plans_oracle_policy(self, mdp):
        m = RMaxModel(mdp.transitions.copy(), mdp.rewards.copy(), np.ones((2, 2), bool))
        np.testing.assert_array_equal(plan(m, mdp.gamma), greedy_policy(exact_value_iteration(mdp, 1e-12)))

    def test_deterministic_row_within_half_alpha(self, mdp):
        cfg = RStatConfig(0.1, 0.05, 0.01)
        pooled = np.zeros((2, 2, 2), dtype=np.int64)
        pooled[1, 0] = [500, 0]
        out = update_model(RMaxModel.optimistic(2, 2, 1.0), [(1, 0)], pooled, mdp.rewards, cfg,
                           internal_tree(0), 1, practical=True)
        assert np.all(np.abs(out.p_hat[1, 0] - [1.0, 0.0]) <= cfg.alpha / 2)
        assert out.r_hat[1, 0] == 1.0 and out.known[1, 0]
        # untouched pair stays optimistic
        assert out.r_hat[0, 0] == 1.0 and not out.known[0, 0]

    def test_update_requires_samples(self, mdp):
        cfg = RStatConfig(0.1, 0.05, 0.01)
        pooled = np.zeros((2, 2, 2), dtype=np.int64)
        with pytest.raises(SampleSizeError, match="no pooled samples"):
            update_model(RMaxModel.optimistic(2, 2, 1.0), [(0, 0)], pooled, mdp.rewards, cfg,
                         internal_tree(0), 1, practical=True)
        pooled[0, 0] = [3, 2]
        with pytest.raises(SampleSizeError, match="below"):
            update_model(RMaxModel.optimistic(2, 2, 1.0), [(0, 0)], pooled, mdp.rewards, cfg,
                         internal_tree(0), 1)

    def test_zero_rows_self_loop(self):
        m = RMaxModel(np.zeros((2, 1, 2)), np.zeros((2, 1)), np.ones((2, 1), bool))
        np.testing.assert_array_equal(m.planning_transitions()[:, 0], np.eye(2))


class TestRun:
    def test_fixture_learns_everything_and_is_optimal(self, mdp):
        p = RMaxParams.for_mdp(mdp, **RMAX_FIXTURE)
        res = run_reprmax(mdp, p, internal_tree(0), sample_tree(1))
        assert res.known_set.full
        assert res.rounds_run < p.rounds
        assert suboptimality(mdp, res.policy) <= p.epsilon
        assert len(res.audit) == res.rounds_run
        assert res.audit_jsonl().count("\n") == res.rounds_run

    def test_paired_runs_agree(self, mdp):
        p = RMaxParams.for_mdp(mdp, **RMAX_FIXTURE)
        a = run_reprmax(mdp, p, internal_tree(0), sample_tree(1))
        b = run_reprmax(mdp, p, internal_tree(0), sample_tree(2))
        assert a.known_sequence() == b.known_sequence()
        assert a.model.content_hash() == b.model.content_hash()

    def test_zero_rounds(self, mdp):
        p = RMaxParams.for_mdp(mdp, **(RMAX_FIXTURE | dict(rounds_override=0)))
        res = run_reprmax(mdp, p, internal_tree(0), sample_tree(1))
        assert res.rounds_run == 0 and res.audit == []
        np.testing.assert_array_equal(res.policy, internal_tree(0).derive(("init-policy", 0)).integers(2, size=2))

    def test_known_set_grows_monotonically(self, mdp):
        p = RMaxParams.for_mdp(mdp, **(RMAX_FIXTURE | dict(m=50, k=2.0, w=2.0)))
        res = run_reprmax(mdp, p, internal_tree(3), sample_tree(4))
        seen = set()
        for row in res.audit:
            new = {tuple(x) for x in row["newly_known"]}
            assert not (new & seen)
            seen |= new
        assert seen == set(res.known_set.pairs())

    def test_size_mismatch(self, mdp, grid):
        p = RMaxParams.for_mdp(mdp, **RMAX_FIXTURE)
        with pytest.raises(ValueError, match="size"):
            run_reprmax(grid[1], p, internal_tree(0), sample_tree(0))


class TestBaseline:
    def test_single_episode_threshold_one(self, mdp):
        res = run_rmax_baseline(mdp, 0.1, 0.04, 4, 1, 1.0, sample_tree(0), rounds=50)
        assert res.audit[0]["k_prime"] == 1.0
        for s, a in res.known_set.pairs():
            row = res.model.p_hat[s, a]
            assert row.sum() == pytest.approx(1.0)

    def test_rejects(self, mdp):
        with pytest.raises(ValueError, match="threshold"):
            run_rmax_baseline(mdp, 0.1, 0.04, 4, 10, 0.0, sample_tree(0))
        with pytest.raises(ValueError):
            run_rmax_baseline(mdp, 0.1, 0.04, 4, 0, 1.0, sample_tree(0))

    def test_rows_are_raw_frequencies(self, mdp):
        res = run_rmax_baseline(mdp, 0.1, 0.04, 4, 2000, 4.0, sample_tree(5))
        assert res.known_set.full
        # raw means are not on any grid, so they differ across seeds
        other = run_rmax_baseline(mdp, 0.1, 0.04, 4, 2000, 4.0, sample_tree(6))
        assert res.model.content_hash() != other.model.content_hash()
        np.testing.assert_allclose(res.model.p_hat, mdp.transitions, atol=0.05)
