import numpy as np
import pytest

from dna_rl.models.configs import EnvConfig
from dna_rl.models.envs import (
    CartPole,
    GridWorld,
    cartpole_dynamics,
    cartpole_step,
    gridworld_optimal_return,
    gridworld_step,
    gridworld_value_iteration,
    make_env,
)


def test_cartpole_upright_rest_is_a_fixed_point():
    np.testing.assert_array_equal(cartpole_dynamics(np.zeros(4), 0.0), np.zeros(4))


def test_cartpole_push_direction():
    nxt, reward, terminal = cartpole_step(np.zeros(4), 1)
    assert nxt[1] > 0.0
    assert reward == 1.0
    assert not terminal
    nxt, _, _ = cartpole_step(np.zeros(4), 0)
    assert nxt[1] < 0.0


def test_cartpole_terminates_out_of_bounds():
    _, _, terminal = cartpole_step(np.array([2.4, 1.0, 0.0, 0.0]), 1)
    assert terminal
    _, _, terminal = cartpole_step(np.array([0.0, 0.0, 0.3, 0.0]), 1)
    assert terminal


def test_cartpole_reset_is_small(rng):
    state = CartPole().reset(rng)
    assert state.shape == (4,)
    assert np.all(np.abs(state) <= 0.05)


def test_cartpole_constant_push_falls_quickly(rng):
    env = CartPole()
    state = env.reset(rng)
    for step in range(1, 200):
        state, _, terminal = env.step(state, 1)
        if terminal:
            break
    assert step < 100


@pytest.mark.parametrize("action, expected", [(0, (1, 1)), (1, (3, 1)), (2, (2, 0)), (3, (2, 2))])
def test_gridworld_moves(action, expected):
    nxt, reward, terminal = gridworld_step(np.array([2, 1]), action, 5)
    assert tuple(nxt) == expected
    assert reward == 0.0 and not terminal


def test_gridworld_wall_bump_stays():
    nxt, _, _ = gridworld_step(np.array([0, 0]), 0, 5)
    assert tuple(nxt) == (0, 0)


def test_gridworld_goal():
    nxt, reward, terminal = gridworld_step(np.array([3, 4]), 1, 5)
    assert tuple(nxt) == (4, 4)
    assert reward == 1.0 and terminal


@pytest.mark.parametrize("action", [-1, 4])
def test_invalid_actions(action):
    with pytest.raises(ValueError):
        gridworld_step(np.array([0, 0]), action, 5)
    with pytest.raises(ValueError):
        cartpole_step(np.zeros(4), action if action < 0 else 2)


def test_gridworld_observation_is_one_hot():
    env = GridWorld(3)
    obs = env.observe(np.array([1, 2]))
    assert obs.shape == (9,)
    assert obs.sum() == 1.0 and obs[5] == 1.0


def test_gridworld_size_validated():
    with pytest.raises(ValueError):
        GridWorld(1)


@pytest.mark.parametrize("size, gamma", [(2, 0.9), (5, 0.99), (7, 0.999)])
def test_optimal_start_value(size, gamma):
    distance = 2 * (size - 1)
    assert gridworld_optimal_return(size, gamma) == pytest.approx(gamma ** (distance - 1), rel=1e-10)


def test_value_iteration_goal_is_absorbing():
    values = gridworld_value_iteration(4, 0.9)
    assert values[3, 3] == 0.0
    assert values[3, 2] == pytest.approx(1.0)
    assert values[2, 2] == pytest.approx(0.9)


def test_make_env():
    assert isinstance(make_env(EnvConfig(name="cartpole")), CartPole)
    grid = make_env(EnvConfig(name="gridworld", grid_size=6))
    assert grid.obs_dim == 36
