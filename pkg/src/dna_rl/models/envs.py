"""Desk-scale control environments

Both environments keep their state in small numpy arrays so the vectorized
wrapper can copy, checkpoint and restore them.
"""
import logging
import math

import numpy as np

log = logging.getLogger(__name__)


class EnvFaultError(RuntimeError):
    """Raised when an environment fails; carries the env index"""

    def __init__(self, env_index, message):
        self.env_index = env_index
        super().__init__(f"env {env_index}: {message}")


def _check_action(action, action_count):
    if not 0 <= int(action) < action_count:
        raise ValueError(f"action must be in [0, {action_count}). Got {action}")
    return int(action)


# Cart-pole: the classic pole balancing task with Euler integration

CARTPOLE_GRAVITY = 9.8
CARTPOLE_MASS_CART = 1.0
CARTPOLE_MASS_POLE = 0.1
CARTPOLE_HALF_LENGTH = 0.5
CARTPOLE_FORCE = 10.0
CARTPOLE_TAU = 0.02
CARTPOLE_X_LIMIT = 2.4
CARTPOLE_THETA_LIMIT = 12 * 2 * math.pi / 360


def cartpole_dynamics(state, force):
    """Advance (x, x_dot, theta, theta_dot) one Euler step under ``force``"""
    x, x_dot, theta, theta_dot = (float(v) for v in state)
    total_mass = CARTPOLE_MASS_CART + CARTPOLE_MASS_POLE
    pole_mass_length = CARTPOLE_MASS_POLE * CARTPOLE_HALF_LENGTH
    cos_t = math.cos(theta)
    sin_t = math.sin(theta)
    temp = (force + pole_mass_length * theta_dot**2 * sin_t) / total_mass
    theta_acc = (CARTPOLE_GRAVITY * sin_t - cos_t * temp) / (
        CARTPOLE_HALF_LENGTH * (4.0 / 3.0 - CARTPOLE_MASS_POLE * cos_t**2 / total_mass)
    )
    x_acc = temp - pole_mass_length * theta_acc * cos_t / total_mass
    return np.array(
        [
            x + CARTPOLE_TAU * x_dot,
            x_dot + CARTPOLE_TAU * x_acc,
            theta + CARTPOLE_TAU * theta_dot,
            theta_dot + CARTPOLE_TAU * theta_acc,
        ],
        dtype=np.float64,
    )


def cartpole_step(state, action):
    """Push left (0) or right (1) for one step

    Returns:
        (next_state, reward, terminal): reward is +1 per step; terminal when
        the cart or pole leaves its bounds. Timeouts are the wrapper's job.

    Raises:
        ValueError: action out of range
    """
    action = _check_action(action, CartPole.action_count)
    force = CARTPOLE_FORCE if action == 1 else -CARTPOLE_FORCE
    nxt = cartpole_dynamics(state, force)
    terminal = bool(abs(nxt[0]) > CARTPOLE_X_LIMIT or abs(nxt[2]) > CARTPOLE_THETA_LIMIT)
    return nxt, 1.0, terminal


class CartPole:
    """Cart-pole with a 4-dim observation and two actions"""

    name = "cartpole"
    action_count = 2
    obs_dim = 4
    default_timeout = 500
    max_return = 500.0

    def reset(self, rng):
        return rng.uniform(-0.05, 0.05, size=4)

    def step(self, state, action):
        return cartpole_step(state, action)

    def observe(self, state):
        return np.asarray(state, dtype=np.float64)


# Gridworld: N x N grid, start top-left, goal bottom-right

GRID_MOVES = np.array([[-1, 0], [1, 0], [0, -1], [0, 1]])  # up, down, left, right


def gridworld_step(state, action, size):
    """Move on the grid; bumping a wall stays put

    Args:
        state (np.ndarray): (row, col)
        action (int): 0 up, 1 down, 2 left, 3 right
        size (int): grid side length N

    Returns:
        (next_state, reward, terminal): reward 1 and terminal on reaching the
        goal (N-1, N-1), reward 0 otherwise

    Raises:
        ValueError: action out of range
    """
    action = _check_action(action, GridWorld.action_count)
    nxt = np.clip(np.asarray(state, dtype=np.int64) + GRID_MOVES[action], 0, size - 1)
    if nxt[0] == size - 1 and nxt[1] == size - 1:
        return nxt, 1.0, True
    return nxt, 0.0, False


class GridWorld:
    """Gridworld with a one-hot position observation"""

    name = "gridworld"
    action_count = 4
    default_timeout = 200

    def __init__(self, size=5):
        if size < 2:
            raise ValueError(f"size must be >= 2. Got {size}")
        self.size = size
        self.obs_dim = size * size

    @property
    def start(self):
        return np.array([0, 0], dtype=np.int64)

    @property
    def goal(self):
        return np.array([self.size - 1, self.size - 1], dtype=np.int64)

    @property
    def max_return(self):
        return 1.0

    def reset(self, rng):
        return self.start

    def step(self, state, action):
        return gridworld_step(state, action, self.size)

    def observe(self, state):
        obs = np.zeros(self.obs_dim, dtype=np.float64)
        obs[int(state[0]) * self.size + int(state[1])] = 1.0
        return obs


def gridworld_value_iteration(size, gamma, tol=1e-12, max_iters=10_000):
    """Optimal state values V*(row, col) by value iteration

    The goal is absorbing with value 0; entering it pays 1.
    """
    values = np.zeros((size, size), dtype=np.float64)
    for _ in range(max_iters):
        new = np.zeros_like(values)
        for r in range(size):
            for c in range(size):
                if r == size - 1 and c == size - 1:
                    continue
                best = -np.inf
                for a in range(GridWorld.action_count):
                    nxt, reward, terminal = gridworld_step((r, c), a, size)
                    tail = 0.0 if terminal else gamma * values[nxt[0], nxt[1]]
                    best = max(best, reward + tail)
                new[r, c] = best
        if np.max(np.abs(new - values)) < tol:
            return new
        values = new
    log.warning("Value iteration did not converge within %s sweeps", max_iters)
    return values


def gridworld_optimal_return(size, gamma):
    """V* of the start state, gamma^(d-1) for the shortest distance d"""
    return float(gridworld_value_iteration(size, gamma)[0, 0])


def make_env(env_config):
    """Build an environment from an EnvConfig"""
    if env_config.name == "cartpole":
        return CartPole()
    if env_config.name == "gridworld":
        return GridWorld(env_config.grid_size)
    raise ValueError(f"Unknown env {env_config.name}")
