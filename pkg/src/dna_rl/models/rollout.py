"""On-policy rollout collection"""
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class RolloutBatch:
    """A agents x T steps of on-policy experience

    ``rewards`` are the wrapper's normalized (and penalized) rewards;
    ``raw_rewards`` are what the environment paid. ``values`` come from the
    value network at collection time and are not refreshed afterwards.
    """

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    raw_rewards: np.ndarray
    terminals: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    bootstrap_values: np.ndarray
    episodes: list = field(default_factory=list)

    def __post_init__(self):
        shape = self.actions.shape
        if len(shape) != 2:
            raise ValueError(f"actions must be (A, T). Got {shape}")
        for name in ("rewards", "raw_rewards", "terminals", "log_probs", "values"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.obs.shape[:2] != shape:
            raise ValueError(f"obs leading dims {self.obs.shape[:2]} do not match {shape}")
        if self.bootstrap_values.shape != (shape[0],):
            raise ValueError(f"bootstrap_values must be ({shape[0]},). Got {self.bootstrap_values.shape}")
        if not np.all(np.isfinite(self.log_probs)):
            raise ValueError("behaviour log-probs must be finite")

    @property
    def agents(self):
        return self.actions.shape[0]

    @property
    def horizon(self):
        return self.actions.shape[1]

    def __len__(self):
        return self.actions.size

    def flat(self, name):
        """``name`` reshaped to (A * T, ...), agent-major"""
        arr = getattr(self, name)
        return arr.reshape((len(self),) + arr.shape[2:])


def collect_rollout(vec_env, policy_fn, value_fn, horizon, rng, greedy=False):
    """Run the policy for ``horizon`` steps in every env of ``vec_env``

    Args:
        vec_env (VecEnv): stepped in place
        policy_fn (callable): (obs, rng, greedy) -> (actions, log_probs)
        value_fn (callable): obs -> (n,) value-network estimates
        horizon (int): steps per env (T)
        rng (np.random.Generator): action sampling stream
        greedy (bool): take argmax actions (log-probs are still recorded)

    Returns:
        RolloutBatch

    Raises:
        EnvFaultError: an environment failed; carries the env index
    """
    n, d = vec_env.n_envs, vec_env.obs_dim
    obs = np.zeros((n, horizon, d), dtype=np.float64)
    actions = np.zeros((n, horizon), dtype=np.int64)
    rewards = np.zeros((n, horizon), dtype=np.float64)
    raw_rewards = np.zeros((n, horizon), dtype=np.float64)
    terminals = np.zeros((n, horizon), dtype=bool)
    log_probs = np.zeros((n, horizon), dtype=np.float64)
    values = np.zeros((n, horizon), dtype=np.float64)
    episodes = []

    for t in range(horizon):
        current = vec_env.obs
        obs[:, t] = current
        acts, logp = policy_fn(current, rng, greedy)
        values[:, t] = value_fn(current)
        result = vec_env.step(acts)
        # Sampled actions, not the sticky ones the env may have executed
        actions[:, t] = acts
        log_probs[:, t] = logp
        rewards[:, t] = result.rewards
        raw_rewards[:, t] = result.raw_rewards
        terminals[:, t] = result.terminals
        episodes.extend(result.episodes)

    bootstrap = np.asarray(value_fn(vec_env.obs), dtype=np.float64).reshape(n)
    log.debug("Collected %s x %s rollout, %s episodes finished", n, horizon, len(episodes))
    return RolloutBatch(
        obs=obs,
        actions=actions,
        rewards=rewards,
        raw_rewards=raw_rewards,
        terminals=terminals,
        log_probs=log_probs,
        values=values,
        bootstrap_values=bootstrap,
        episodes=episodes,
    )
