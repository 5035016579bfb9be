import itertools

import numpy as np
import pytest

from dynamic_policy import (TWO_STATE_UP_PROBABILITY, CellGrid, Mdp, ParameterBox,
                            PiecewisePolicy, PolicySearchConfig, build_mdp, evaluate_policy,
                            search_policy, target_mdp, truncation_horizon, two_state_mdp)
from optimizer import OptimizerConfig

GAMMA = 0.9


def _constant_policy(mdp, grid, actions):
    intercepts = np.asarray(actions, dtype=float).reshape(grid.K, mdp.q)
    return PiecewisePolicy(grid, intercepts, np.zeros((grid.K, mdp.q, mdp.d)),
                           mdp.action_low, mdp.action_high)


def _exact_value(actions, gamma=GAMMA, start=0):
    """(I - γP)V = r 的解"""
    transition = np.zeros((2, 2))
    for state, action in enumerate(actions):
        up = TWO_STATE_UP_PROBABILITY[state, action]
        transition[state] = [1 - up, up]
    values = np.linalg.solve(np.eye(2) - gamma * transition, np.array([0.0, 1.0]))
    return values[start]


def _optimal_value(gamma=GAMMA):
    values = np.zeros(2)
    for _ in range(2000):
        q = np.array([[float(s == 1) + gamma * ((1 - TWO_STATE_UP_PROBABILITY[s, a]) * values[0]
                                                 + TWO_STATE_UP_PROBABILITY[s, a] * values[1])
                       for a in (0, 1)] for s in (0, 1)])
        values = q.max(axis=1)
    return values[0]


def _one_state_mdp(gamma, horizon=None):
    return Mdp(0.0, 1.0, 0.0, 1.0,
               reward=lambda s: np.ones(s.shape[0]),
               transition=lambda s, a, noise: s,
               initial_state=lambda rng, r: np.full((r, 1), 0.5),
               gamma=gamma, horizon=horizon)


def test_truncation_horizon():
    horizon = truncation_horizon(GAMMA)
    assert horizon == 132
    assert GAMMA ** horizon < 1e-6 <= GAMMA ** (horizon - 1)
    assert truncation_horizon(0.0) == 1


def test_mdp_rejects_bad_discount():
    with pytest.raises(ValueError):
        _one_state_mdp(1.0)


def test_geometric_series_value():
    mdp = _one_state_mdp(0.9, horizon=400)
    grid = CellGrid.over(mdp, [1])
    value, se = evaluate_policy(mdp, _constant_policy(mdp, grid, [0.5]), rollouts=8)
    assert value == pytest.approx(10.0, abs=1e-2)
    assert se == 0.0


def test_zero_discount_is_immediate_reward():
    mdp = target_mdp(gamma=0.0, target=0.3, start=0.8)
    grid = CellGrid.over(mdp, [1])
    value, _ = evaluate_policy(mdp, _constant_policy(mdp, grid, [0.1]), rollouts=4)
    assert value == pytest.approx(-0.25)


def test_two_state_value_matches_linear_solve():
    mdp = two_state_mdp(GAMMA)
    grid = CellGrid.over(mdp, [2])
    for actions in itertools.product((0, 1), repeat=2):
        policy = _constant_policy(mdp, grid, [0.9 if a else 0.1 for a in actions])
        value, se = evaluate_policy(mdp, policy, rollouts=4000, seed=1)
        assert abs(value - _exact_value(actions)) <= 3 * se + mdp.truncation_bound(1.0)


def test_common_random_numbers_are_deterministic():
    mdp = two_state_mdp(GAMMA)
    grid = CellGrid.over(mdp, [2])
    policy = _constant_policy(mdp, grid, [0.8, 0.2])
    assert evaluate_policy(mdp, policy, 100, seed=3) == evaluate_policy(mdp, policy, 100, seed=3)


def test_actions_are_clipped():
    mdp = target_mdp()
    grid = CellGrid.over(mdp, [2])
    policy = PiecewisePolicy(grid, np.array([[5.0], [-5.0]]), np.ones((2, 1, 1)),
                             mdp.action_low, mdp.action_high)
    actions = policy.act(np.array([[0.1], [0.9]]))
    np.testing.assert_array_equal(actions, [[1.0], [0.0]])


def test_grid_cells_cover_state_box():
    grid = CellGrid(np.zeros(2), np.ones(2), (2, 3))
    assert grid.K == 6
    states = np.array([[0.0, 0.0], [0.99, 0.99], [1.0, 1.0], [0.6, 0.4]])
    assert grid.locate(states).tolist() == [0, 5, 5, 4]
    boxes = grid.boxes()
    assert len(boxes) == 6
    np.testing.assert_allclose(boxes[5][0], [0.5, 2 / 3])
    with pytest.raises(ValueError):
        CellGrid(np.zeros(2), np.ones(2), (2,))


def test_parameter_vector_layout():
    mdp = target_mdp()
    grid = CellGrid.over(mdp, [2])
    policy = PiecewisePolicy.from_vector(grid, np.array([0.1, 0.2, 0.3, 0.4]), mdp)
    np.testing.assert_array_equal(policy.intercepts, [[0.1], [0.2]])
    np.testing.assert_array_equal(policy.slopes, [[[0.3]], [[0.4]]])
    with pytest.raises(ValueError):
        PiecewisePolicy.from_vector(grid, np.zeros(3), mdp)


def test_static_action_search_on_tracking_mdp():
    mdp = target_mdp(GAMMA, target=0.3)
    grid = CellGrid.over(mdp, [1])
    result = search_policy(mdp, grid, ParameterBox(0.0, 1.0), OptimizerConfig(m=500, seed=0),
                           rollouts=1)
    assert abs(result.policy.act(np.array([[0.8]]))[0, 0] - 0.3) < 0.05
    assert result.optimization.best_weights.size == 2


def test_fixed_slopes_are_not_searched():
    mdp = two_state_mdp(GAMMA)
    grid = CellGrid.over(mdp, [2])
    result = search_policy(mdp, grid, ParameterBox(0.0, 1.0), OptimizerConfig(m=300, seed=1),
                           rollouts=64)
    assert result.optimization.best_weights.size == 3
    np.testing.assert_array_equal(result.policy.slopes, 0.0)
    assert result.to_dict()['policy']['divisions'] == [2]


def test_learned_two_state_policy_is_near_optimal():
    mdp = two_state_mdp(GAMMA)
    grid = CellGrid.over(mdp, [2])
    result = search_policy(mdp, grid, ParameterBox(0.0, 1.0), OptimizerConfig(m=500, seed=2),
                           rollouts=256, seed=5)
    actions = tuple(int(a >= 0.5) for a in result.policy.intercepts[:, 0])
    assert _exact_value(actions) >= 0.95 * _optimal_value()


@pytest.mark.slow
def test_two_state_search_across_seeds():
    mdp = two_state_mdp(GAMMA)
    grid = CellGrid.over(mdp, [2])
    optimal = _optimal_value()
    hits = 0
    for seed in range(10):
        result = search_policy(mdp, grid, ParameterBox(0.0, 1.0),
                               OptimizerConfig(m=2000, seed=seed), rollouts=256, seed=seed)
        actions = tuple(int(a >= 0.5) for a in result.policy.intercepts[:, 0])
        hits += _exact_value(actions) >= 0.95 * optimal
    assert hits >= 9


def test_config_builds_registered_mdps():
    config = PolicySearchConfig(mdp="target", gamma=0.5, target=0.4)
    mdp = build_mdp(config)
    assert mdp.gamma == 0.5
    box = config.parameter_box(mdp)
    assert (box.intercept_low, box.intercept_high) == (0.0, 1.0)
    with pytest.raises(ValueError):
        PolicySearchConfig(mdp="cartpole")
