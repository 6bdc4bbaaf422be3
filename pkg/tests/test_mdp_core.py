import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import two_state
from replicable_rl.mdp_core import (
    MdpValidationError,
    TabularMdp,
    bellman_backup,
    exact_value_iteration,
    greedy_policy,
    load_mdp,
    make_mdp,
    mdp_from_dict,
    occupancy,
    optimal_return,
    policy_return,
    policy_values,
    save_mdp,
    simulation_gap_bound,
    solve_q,
    stochastic_policy_values,
    suboptimality,
    validate,
)


def random_mdp(rng, n_s, n_a, gamma):
    p = rng.dirichlet(np.ones(n_s), size=(n_s, n_a))
    return make_mdp(rng.random((n_s, n_a)), p, gamma, r_max=1.0, renormalize=True)


class TestValidate:
    def test_good_mdp_is_ok(self, small_mdp):
        assert validate(small_mdp).ok

    def test_reports_bad_row_with_index(self):
        mdp = TabularMdp(np.zeros((2, 1)), np.array([[[0.5, 0.4]], [[0.0, 1.0]]]), 0.9, np.array([1.0, 0.0]), 1.0)
        problems = validate(mdp).problems
        assert len(problems) == 1
        assert problems[0].startswith("transition row (0,0) sums to 0.9")

    def test_gamma_one_rejected(self):
        mdp = TabularMdp(np.zeros((1, 1)), np.ones((1, 1, 1)), 1.0, np.ones(1), 1.0)
        assert any("gamma out of range" in p for p in validate(mdp).problems)

    def test_reward_above_rmax(self):
        with pytest.raises(MdpValidationError) as err:
            make_mdp([[2.0]], [[[1.0]]], 0.5, r_max=1.0)
        assert "outside [0, r_max=1.0]" in err.value.problems[0]

    def test_negative_transition_and_bad_initial(self):
        mdp = TabularMdp(np.zeros((2, 1)), np.array([[[1.5, -0.5]], [[0.0, 1.0]]]), 0.5, np.array([0.7, 0.7]), 1.0)
        problems = validate(mdp).problems
        assert any("(0,0,1)" in p and "negative" in p for p in problems)
        assert any(p.startswith("initial_dist sums to") for p in problems)

    def test_renormalize_is_opt_in(self):
        p = [[[0.5, 0.4]]] * 2
        with pytest.raises(MdpValidationError):
            make_mdp(np.zeros((2, 1)), p, 0.5)
        mdp = make_mdp(np.zeros((2, 1)), p, 0.5, renormalize=True)
        assert validate(mdp).ok

    def test_missing_fields(self):
        with pytest.raises(MdpValidationError) as err:
            mdp_from_dict({"gamma": 0.5})
        assert "missing field: rewards" in err.value.problems

    def test_arrays_are_read_only(self, small_mdp):
        with pytest.raises(ValueError):
            small_mdp.rewards[0, 0] = 5.0


class TestSerialization:
    def test_round_trip(self, small_mdp, tmp_path):
        path = tmp_path / "m.json"
        save_mdp(small_mdp, path)
        back = load_mdp(path)
        assert back.content_hash() == small_mdp.content_hash()

    def test_hash_changes_with_content(self, small_mdp):
        other = two_state(gamma=0.6)
        assert other.content_hash() != small_mdp.content_hash()


class TestValueIteration:
    def test_two_state_closed_form(self, small_mdp):
        q = exact_value_iteration(small_mdp, 1e-12)
        expected = np.array([[7 / 9, 46 / 27], [4 / 3, 13 / 18]])
        np.testing.assert_allclose(q, expected, atol=1e-11)
        assert greedy_policy(q).tolist() == [1, 0]

    def test_single_state_geometric_sum(self):
        mdp = make_mdp([[1.0]], [[[1.0]]], 0.75)
        assert exact_value_iteration(mdp, 1e-12)[0, 0] == pytest.approx(4.0, abs=1e-11)

    def test_gamma_zero_is_reward(self):
        mdp = make_mdp([[0.2, 0.9]], [[[1.0], [1.0]]], 0.0)
        assert exact_value_iteration(mdp, 1e-9).tolist() == [[0.2, 0.9]]

    def test_history_records_iterates(self, small_mdp):
        hist = []
        exact_value_iteration(small_mdp, 1e-6, history=hist)
        assert np.all(hist[0] == 0)
        assert len(hist) > 2

    def test_gridworld_fixture(self, grid, grid_qstar):
        _, mdp, _ = grid
        q = exact_value_iteration(mdp, 1e-12)
        np.testing.assert_allclose(q, np.array(grid_qstar["q_star"]), atol=1e-11)
        assert greedy_policy(q).tolist() == grid_qstar["policy"]

    def test_gridworld_fixture_is_self_consistent(self, grid, grid_qstar):
        _, mdp, _ = grid
        q = np.array(grid_qstar["q_star"])
        v = policy_values(mdp, grid_qstar["policy"])
        np.testing.assert_allclose(v, q.max(axis=1), atol=1e-11)

    def test_tie_break_lowest_index(self):
        assert greedy_policy(np.array([[1.0, 1.0, 0.5], [0.0, 2.0, 2.0]])).tolist() == [0, 1]

    def test_bad_tol(self, small_mdp):
        with pytest.raises(ValueError):
            solve_q(small_mdp.rewards, small_mdp.transitions, 0.5, 0.0)


class TestPolicyEvaluation:
    def test_matches_value_iteration_at_optimum(self, small_mdp):
        v = policy_values(small_mdp, [1, 0])
        np.testing.assert_allclose(v, [46 / 27, 4 / 3], atol=1e-12)

    def test_returns_and_suboptimality(self, small_mdp):
        assert optimal_return(small_mdp) == pytest.approx(0.5 * (46 / 27 + 4 / 3), abs=1e-10)
        assert suboptimality(small_mdp, [1, 0]) == pytest.approx(0.0, abs=1e-10)
        assert suboptimality(small_mdp, [0, 1]) > 0.3

    def test_stochastic_reduces_to_deterministic(self, small_mdp):
        pi = np.array([[0.0, 1.0], [1.0, 0.0]])
        np.testing.assert_allclose(stochastic_policy_values(small_mdp, pi), policy_values(small_mdp, [1, 0]))

    def test_stochastic_rejects_bad_rows(self, small_mdp):
        with pytest.raises(ValueError):
            stochastic_policy_values(small_mdp, np.full((2, 2), 0.6))

    def test_random_policy_matches_monte_carlo(self, grid):
        """Uniform random actions on the grid, 10^6 rollouts, within 3 standard errors."""
        _, mdp, _ = grid
        n_s, n_a = mdp.num_states, mdp.num_actions
        exact = float(mdp.initial_dist @ stochastic_policy_values(mdp, np.full((n_s, n_a), 1 / n_a)))
        rng = np.random.default_rng(12345)
        n, horizon = 10**6, 300
        cdf = np.cumsum(mdp.transitions, axis=2)
        s = rng.choice(n_s, size=n, p=mdp.initial_dist)
        ret = np.zeros(n)
        disc = 1.0
        for _ in range(horizon):
            a = rng.integers(n_a, size=n)
            ret += disc * mdp.rewards[s, a]
            u = rng.random(n)
            s = np.minimum((cdf[s, a] <= u[:, None]).sum(axis=1), n_s - 1)
            disc *= mdp.gamma
        se = ret.std(ddof=1) / np.sqrt(n)
        assert abs(ret.mean() - exact) <= 3 * se + disc


class TestSimulationBound:
    def test_zero_for_identical(self, small_mdp):
        assert simulation_gap_bound(small_mdp, small_mdp) == 0.0

    def test_value(self, small_mdp):
        p = np.array(small_mdp.transitions)
        p[0, 0] = [0.5, 0.5]
        other = small_mdp.with_transitions(p)
        # L1 distance 0.2, R_max = 1, gamma = 0.5
        assert simulation_gap_bound(small_mdp, other) == pytest.approx(1 / (2 * 0.25) * 0.2)

    def test_rejects_reward_change(self, small_mdp):
        other = make_mdp(np.zeros((2, 2)), small_mdp.transitions, 0.5, r_max=1.0)
        with pytest.raises(ValueError, match="differ only"):
            simulation_gap_bound(small_mdp, other)

    def test_rejects_shape_mismatch(self, small_mdp):
        other = make_mdp([[0.0]], [[[1.0]]], 0.5, r_max=1.0)
        with pytest.raises(ValueError, match="shape mismatch"):
            simulation_gap_bound(small_mdp, other)


class TestOccupancy:
    def test_counts_sum_to_horizon(self, small_mdp):
        c = occupancy(small_mdp, [1, 0], 7)
        assert c.sum() == pytest.approx(7.0)
        assert c[0, 0] == 0.0 and c[1, 1] == 0.0

    def test_first_step_is_initial_dist(self, small_mdp):
        np.testing.assert_allclose(occupancy(small_mdp, [0, 1], 1), [[0.5, 0.0], [0.0, 0.5]])


@settings(max_examples=40, deadline=None)
@given(
    n_s=st.integers(1, 5),
    n_a=st.integers(1, 4),
    gamma=st.floats(0.0, 0.95),
    seed=st.integers(0, 2**32 - 1),
)
def test_value_iteration_is_a_fixed_point(n_s, n_a, gamma, seed):
    mdp = random_mdp(np.random.default_rng(seed), n_s, n_a, gamma)
    q = exact_value_iteration(mdp, 1e-9)
    residual = np.max(np.abs(bellman_backup(q, mdp.rewards, mdp.transitions, mdp.gamma) - q))
    assert residual <= 1e-9 + 1e-12
    # greedy policy dominates every deterministic policy we try
    j_star = policy_return(mdp, greedy_policy(q))
    rng = np.random.default_rng(seed + 1)
    for _ in range(5):
        assert policy_return(mdp, rng.integers(n_a, size=n_s)) <= j_star + 2e-9 / (1 - gamma + 1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), eta=st.floats(0.0, 1.0))
def test_simulation_bound_holds(seed, eta):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, 3, 2, 0.8)
    mixed = (1 - eta) * mdp.transitions + eta * rng.dirichlet(np.ones(3), size=(3, 2))
    other = mdp.with_transitions(mixed / mixed.sum(axis=2, keepdims=True))
    bound = simulation_gap_bound(mdp, other)
    for policy in np.ndindex(2, 2, 2):
        assert abs(policy_return(mdp, policy) - policy_return(other, policy)) <= bound + 1e-12
