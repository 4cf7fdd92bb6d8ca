"""Return estimation over truncated on-policy trajectories

All math is done in float64. A trajectory covers steps 0..T-1; the value of
the state reached after the last step is ``bootstrap_value``. A terminal flag
at step t means the episode ended on that step, so the successor value is
treated as 0 and the backward recursion restarts.
"""
import logging
from dataclasses import dataclass

import numpy as np

from .configs import ReturnConfig

log = logging.getLogger(__name__)

ADV_STD_FLOOR = 1e-8


@dataclass(frozen=True)
class Trajectory:
    """One environment's slice of a rollout

    Args:
        rewards (np.ndarray): r_t, shape (T,)
        values (np.ndarray): V(s_t) from the value network, shape (T,)
        terminals (np.ndarray): True where the episode ended at step t
        bootstrap_value (float): V of the state after the last step
    """

    rewards: np.ndarray
    values: np.ndarray
    terminals: np.ndarray
    bootstrap_value: float

    def __post_init__(self):
        rewards = np.asarray(self.rewards, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        terminals = np.asarray(self.terminals, dtype=bool)
        if rewards.ndim != 1 or rewards.size == 0:
            raise ValueError(f"rewards must be a non-empty 1d sequence. Got shape {rewards.shape}")
        if values.shape != rewards.shape or terminals.shape != rewards.shape:
            raise ValueError(
                "rewards, values and terminals must have the same length. Got "
                f"{rewards.shape}, {values.shape}, {terminals.shape}"
            )
        bootstrap = float(self.bootstrap_value)
        if not (np.all(np.isfinite(rewards)) and np.all(np.isfinite(values)) and np.isfinite(bootstrap)):
            raise ValueError("Trajectory entries must be finite")
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "terminals", terminals)
        object.__setattr__(self, "bootstrap_value", bootstrap)

    def __len__(self):
        return self.rewards.shape[0]

    def next_values(self):
        """V(s_{t+1}) for every t, zeroed where the episode ended"""
        nxt = np.append(self.values[1:], self.bootstrap_value)
        return np.where(self.terminals, 0.0, nxt)


def nstep_return(traj, t, k, cfg):
    """Discounted k-step return from step t, bootstrapped from V(s_{t+k})

    A terminal inside the window cuts the reward sum and drops the bootstrap.

    Args:
        traj (Trajectory): trajectory to evaluate
        t (int): start index
        k (int): number of reward steps, t + k <= T
        cfg (ReturnConfig): provides gamma

    Raises:
        IndexError: t or k out of range
    """
    n = len(traj)
    if k < 1 or t < 0 or t + k > n:
        raise IndexError(f"need 0 <= t and 1 <= k with t + k <= {n}. Got t={t}, k={k}")
    gamma = cfg.gamma
    total = 0.0
    discount = 1.0
    for i in range(k):
        total += discount * traj.rewards[t + i]
        discount *= gamma
        if traj.terminals[t + i]:
            return total
    tail = traj.bootstrap_value if t + k == n else traj.values[t + k]
    return total + discount * tail


def _td_lambda(rewards, values, terminals, bootstrap, gamma, lam):
    """Backward recursion along the last axis; works for (T,) and (A, T)"""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    not_done = 1.0 - np.asarray(terminals, dtype=np.float64)
    bootstrap = np.asarray(bootstrap, dtype=np.float64)

    n = rewards.shape[-1]
    returns = np.empty_like(rewards)
    next_return = bootstrap
    next_value = bootstrap
    for t in range(n - 1, -1, -1):
        mix = (1.0 - lam) * next_value + lam * next_return
        next_return = rewards[..., t] + gamma * not_done[..., t] * mix
        returns[..., t] = next_return
        next_value = values[..., t]
    return returns


def td_lambda_returns(traj, cfg):
    """TD(lambda) return for every step of ``traj``

    G_t = r_t + gamma * [(1 - lam) V(s_{t+1}) + lam G_{t+1}], G_T = bootstrap.
    Weight beyond the horizon falls on the longest available estimate.
    """
    return _td_lambda(
        traj.rewards, traj.values, traj.terminals, traj.bootstrap_value, cfg.gamma, cfg.lam
    )


def td_lambda_returns_batch(rewards, values, terminals, bootstrap_values, cfg):
    """Same as ``td_lambda_returns`` for (A, T) arrays with bootstrap shape (A,)"""
    return _td_lambda(rewards, values, terminals, bootstrap_values, cfg.gamma, cfg.lam)


def compute_value_targets(traj, lambda_v, gamma):
    """V_targ(s_t) = TD^(gamma, lambda_v)(s_t)"""
    return td_lambda_returns(traj, ReturnConfig(gamma=gamma, lam=lambda_v))


def compute_advantages(traj, lambda_pi, gamma):
    """A_t = TD^(gamma, lambda_pi)(s_t) - V(s_t)"""
    return td_lambda_returns(traj, ReturnConfig(gamma=gamma, lam=lambda_pi)) - traj.values


def compute_advantages_batch(rewards, values, terminals, bootstrap_values, cfg):
    returns = td_lambda_returns_batch(rewards, values, terminals, bootstrap_values, cfg)
    return returns - np.asarray(values, dtype=np.float64)


def normalize_advantages(adv):
    """Zero mean, unit (population) std; std floored at 1e-8

    Raises:
        ValueError: empty input
    """
    adv = np.asarray(adv, dtype=np.float64)
    if adv.size == 0:
        raise ValueError("Cannot normalize an empty advantage array")
    centered = adv - adv.mean()
    std = max(float(adv.std()), ADV_STD_FLOOR)
    return centered / std
