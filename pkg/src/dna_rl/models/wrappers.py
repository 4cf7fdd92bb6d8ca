"""Vectorized environment with the normalization / feature wrapper stack

Per step, for every env: sticky action -> env dynamics -> timeout ->
repeat counting -> reward normalization -> repeat penalty -> reset on
terminal -> time / previous-action features -> observation normalization.
Observation statistics are shared by every consumer of the VecEnv, so the
policy and value networks see identical inputs for the same raw state.
"""
import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

from .envs import EnvFaultError, make_env

log = logging.getLogger(__name__)

STD_FLOOR = 1e-8
NO_ACTION = -1


class RunningMeanStd:
    """Streaming per-dimension mean / population variance (Welford, batched)"""

    def __init__(self, shape=()):
        self.count = 0
        self.mean = np.zeros(shape, dtype=np.float64)
        self.m2 = np.zeros(shape, dtype=np.float64)

    @property
    def var(self):
        if self.count == 0:
            return np.ones_like(self.mean)
        return self.m2 / self.count

    @property
    def std(self):
        return np.sqrt(self.var)

    def update(self, batch):
        """Fold a (n, *shape) batch into the statistics"""
        batch = np.asarray(batch, dtype=np.float64).reshape((-1,) + self.mean.shape)
        n = batch.shape[0]
        if n == 0:
            return
        b_mean = batch.mean(axis=0)
        b_m2 = ((batch - b_mean) ** 2).sum(axis=0)
        total = self.count + n
        delta = b_mean - self.mean
        self.mean = self.mean + delta * (n / total)
        self.m2 = self.m2 + b_m2 + delta * delta * (self.count * n / total)
        self.count = total

    def state_dict(self):
        return {"count": self.count, "mean": self.mean.copy(), "m2": self.m2.copy()}

    def load_state_dict(self, state):
        self.count = int(state["count"])
        self.mean = np.asarray(state["mean"], dtype=np.float64).reshape(self.mean.shape)
        self.m2 = np.asarray(state["m2"], dtype=np.float64).reshape(self.m2.shape)


class ObsNormalizer:
    """s' = clip((s - mean) / std, -clip, clip) with running statistics

    Args:
        dim (int): observation size
        clip (float): symmetric clip bound (3)
        enabled (bool): if False observations pass through untouched
    """

    def __init__(self, dim, clip=3.0, enabled=True):
        self.rms = RunningMeanStd((dim,))
        self.clip = clip
        self.enabled = enabled

    @property
    def count(self):
        return self.rms.count

    def normalize(self, s):
        s = np.asarray(s, dtype=np.float64)
        if not self.enabled:
            return s
        std = np.maximum(self.rms.std, STD_FLOOR)
        return np.clip((s - self.rms.mean) / std, -self.clip, self.clip)

    def update(self, s):
        if self.enabled:
            self.rms.update(s)

    def state_dict(self):
        return self.rms.state_dict()

    def load_state_dict(self, state):
        self.rms.load_state_dict(state)


def normalize_obs(normalizer, s):
    return normalizer.normalize(s)


def update_obs_stats(normalizer, s):
    normalizer.update(s)


class RewardNormalizer:
    """Scale rewards so discounted returns have unit variance

    A per-env discounted return R <- gamma * R + r is tracked and its running
    variance is the scale. Until two returns have been seen the scale is 1.

    Args:
        n_envs (int): number of parallel envs
        gamma (float): discount used by the return accumulator
        clip (float): symmetric clip bound on the output (5)
        enabled (bool): if False rewards pass through (still clipped)
    """

    def __init__(self, n_envs, gamma, clip=5.0, enabled=True):
        self.gamma = gamma
        self.clip = clip
        self.enabled = enabled
        self.returns = np.zeros(n_envs, dtype=np.float64)
        self.rms = RunningMeanStd(())

    def scale(self):
        if not self.enabled or self.rms.count < 2:
            return 1.0
        return max(float(self.rms.std), STD_FLOOR)

    def normalize(self, rewards, terminals=None, mask=None):
        """Normalize one reward per env; ``mask`` selects the envs that stepped"""
        rewards = np.asarray(rewards, dtype=np.float64)
        mask = np.ones(rewards.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        if self.enabled:
            self.returns[mask] = self.gamma * self.returns[mask] + rewards[mask]
            self.rms.update(self.returns[mask])
        out = np.clip(rewards / self.scale(), -self.clip, self.clip)
        if terminals is not None:
            self.returns[np.asarray(terminals, dtype=bool) & mask] = 0.0
        return out

    def state_dict(self):
        state = self.rms.state_dict()
        state["returns"] = self.returns.copy()
        return state

    def load_state_dict(self, state):
        self.rms.load_state_dict(state)
        self.returns = np.asarray(state["returns"], dtype=np.float64).copy()


def normalize_reward(normalizer, r, terminals=None):
    """Scalar or per-env convenience wrapper around ``RewardNormalizer.normalize``"""
    scalar = np.ndim(r) == 0
    out = normalizer.normalize(np.atleast_1d(r), None if terminals is None else np.atleast_1d(terminals))
    return float(out[0]) if scalar else out


def sticky_action(intended, last_action, p_repeat, rng):
    """Execute ``last_action`` with probability ``p_repeat``, else ``intended``"""
    if last_action is None or last_action == NO_ACTION:
        return intended
    if rng.random() < p_repeat:
        return last_action
    return intended


def apply_repeat_penalty(normalized_reward, repeat_count, threshold=100, penalty=0.25):
    """Subtract ``penalty`` once the same action has run more than ``threshold`` times"""
    if repeat_count > threshold:
        return normalized_reward - penalty
    return normalized_reward


def augment_observation(
    raw_obs,
    steps_elapsed,
    t_max,
    prev_action,
    action_count,
    time_feature=True,
    action_feature=True,
):
    """Append the elapsed-time fraction and a one-hot of the previous action"""
    parts = [np.asarray(raw_obs, dtype=np.float64).reshape(-1)]
    if time_feature:
        parts.append(np.array([steps_elapsed / t_max], dtype=np.float64))
    if action_feature:
        one_hot = np.zeros(action_count, dtype=np.float64)
        if prev_action is not None and prev_action != NO_ACTION:
            one_hot[int(prev_action)] = 1.0
        parts.append(one_hot)
    return np.concatenate(parts)


class EpisodeTracker:
    """Raw (un-normalized) episode returns and lengths per env

    Keeps the last ``window`` completed episodes for scoring.
    """

    def __init__(self, n_envs, window=100):
        self.returns = np.zeros(n_envs, dtype=np.float64)
        self.lengths = np.zeros(n_envs, dtype=np.int64)
        self.recent = deque(maxlen=window)
        self.completed = 0

    def add(self, raw_rewards, terminals, mask=None):
        """Accumulate one step; returns [(env, return, length)] that finished"""
        mask = np.ones(len(self.returns), dtype=bool) if mask is None else mask
        self.returns[mask] += np.asarray(raw_rewards, dtype=np.float64)[mask]
        self.lengths[mask] += 1
        finished = []
        for i in np.flatnonzero(np.asarray(terminals, dtype=bool) & mask):
            finished.append((int(i), float(self.returns[i]), int(self.lengths[i])))
            self.recent.append(float(self.returns[i]))
            self.completed += 1
            self.returns[i] = 0.0
            self.lengths[i] = 0
        return finished

    def clear_recent(self):
        self.recent.clear()
        self.completed = 0

    def mean_recent(self):
        if not self.recent:
            return None
        return float(np.mean(self.recent))

    def state_dict(self):
        return {
            "returns": self.returns.tolist(),
            "lengths": self.lengths.tolist(),
            "recent": list(self.recent),
            "completed": self.completed,
        }

    def load_state_dict(self, state):
        self.returns = np.asarray(state["returns"], dtype=np.float64)
        self.lengths = np.asarray(state["lengths"], dtype=np.int64)
        self.recent = deque(state["recent"], maxlen=self.recent.maxlen)
        self.completed = int(state["completed"])


@dataclass
class StepResult:
    obs: np.ndarray
    rewards: np.ndarray
    raw_rewards: np.ndarray
    terminals: np.ndarray
    executed_actions: np.ndarray
    episodes: list


class VecEnv:
    """A fixed set of environments stepped in sequential, deterministic order

    Args:
        env_config (EnvConfig): environment and wrapper settings
        n_envs (int): number of parallel envs (A)
        gamma (float): discount for the reward normalizer
        seed (int or np.random.SeedSequence): per-env streams are spawned from it
        obs_normalizer (ObsNormalizer, optional): share existing statistics
        update_stats (bool): if False normalizer statistics are frozen
    """

    def __init__(self, env_config, n_envs, gamma, seed=0, obs_normalizer=None, update_stats=True):
        self.config = env_config
        self.env = make_env(env_config)
        self.n_envs = n_envs
        self.t_max = env_config.resolved_timeout()
        self.action_count = self.env.action_count
        self.obs_dim = (
            self.env.obs_dim
            + (1 if env_config.time_feature else 0)
            + (self.action_count if env_config.action_feature else 0)
        )
        seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        self.rngs = [np.random.default_rng(s) for s in seq.spawn(n_envs)]
        self.obs_normalizer = obs_normalizer or ObsNormalizer(
            self.obs_dim, clip=env_config.obs_clip, enabled=env_config.normalize_obs
        )
        self.reward_normalizer = RewardNormalizer(
            n_envs, gamma, clip=env_config.reward_clip, enabled=env_config.normalize_reward
        )
        self.update_stats = update_stats
        self.tracker = EpisodeTracker(n_envs)
        self.states = [None] * n_envs
        self.steps_elapsed = np.zeros(n_envs, dtype=np.int64)
        self.last_action = np.full(n_envs, NO_ACTION, dtype=np.int64)
        self.repeat_count = np.zeros(n_envs, dtype=np.int64)
        self.total_steps = 0
        self._raw_obs = np.zeros((n_envs, self.obs_dim), dtype=np.float64)
        self.obs = None
        self.reset_all()

    def _features(self, i):
        return augment_observation(
            self.env.observe(self.states[i]),
            self.steps_elapsed[i],
            self.t_max,
            self.last_action[i],
            self.action_count,
            time_feature=self.config.time_feature,
            action_feature=self.config.action_feature,
        )

    def _reset_env(self, i):
        self.states[i] = self.env.reset(self.rngs[i])
        self.steps_elapsed[i] = 0
        self.last_action[i] = NO_ACTION
        self.repeat_count[i] = 0

    def reset_all(self):
        for i in range(self.n_envs):
            self._reset_env(i)
            self._raw_obs[i] = self._features(i)
        self._refresh_obs(np.ones(self.n_envs, dtype=bool))
        return self.obs

    def _refresh_obs(self, mask):
        if self.update_stats:
            self.obs_normalizer.update(self._raw_obs[mask])
        self.obs = self.obs_normalizer.normalize(self._raw_obs)

    def step(self, actions, mask=None):
        """Step every env (or those in ``mask``) with the intended ``actions``

        Raises:
            EnvFaultError: an environment raised; carries its index
        """
        actions = np.asarray(actions, dtype=np.int64).reshape(self.n_envs)
        mask = np.ones(self.n_envs, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        raw_rewards = np.zeros(self.n_envs, dtype=np.float64)
        terminals = np.zeros(self.n_envs, dtype=bool)
        executed = np.full(self.n_envs, NO_ACTION, dtype=np.int64)

        for i in np.flatnonzero(mask):
            action = sticky_action(
                int(actions[i]), int(self.last_action[i]), self.config.sticky_prob, self.rngs[i]
            )
            try:
                state, reward, terminal = self.env.step(self.states[i], action)
            except Exception as e:
                log.exception(e)
                raise EnvFaultError(i, str(e)) from e
            self.states[i] = state
            self.steps_elapsed[i] += 1
            if self.steps_elapsed[i] >= self.t_max:
                terminal = True
            if action == self.last_action[i]:
                self.repeat_count[i] += 1
            else:
                self.repeat_count[i] = 1
            self.last_action[i] = action
            executed[i] = action
            raw_rewards[i] = reward
            terminals[i] = terminal

        episodes = self.tracker.add(raw_rewards, terminals, mask)
        if self.update_stats:
            rewards = self.reward_normalizer.normalize(raw_rewards, terminals, mask)
        else:
            rewards = np.clip(
                raw_rewards / self.reward_normalizer.scale(),
                -self.reward_normalizer.clip,
                self.reward_normalizer.clip,
            )
        for i in np.flatnonzero(mask):
            rewards[i] = apply_repeat_penalty(
                rewards[i],
                self.repeat_count[i],
                self.config.repeat_threshold,
                self.config.repeat_penalty,
            )
        rewards = np.clip(rewards, -self.reward_normalizer.clip, self.reward_normalizer.clip)
        rewards[~mask] = 0.0

        for i in np.flatnonzero(mask):
            if terminals[i]:
                self._reset_env(i)
            self._raw_obs[i] = self._features(i)
        self._refresh_obs(mask)
        self.total_steps += int(mask.sum())
        return StepResult(self.obs, rewards, raw_rewards, terminals, executed, episodes)

    def state_dict(self):
        return {
            "states": [np.asarray(s).tolist() for s in self.states],
            "steps_elapsed": self.steps_elapsed.tolist(),
            "last_action": self.last_action.tolist(),
            "repeat_count": self.repeat_count.tolist(),
            "total_steps": self.total_steps,
            "rngs": [r.bit_generator.state for r in self.rngs],
            "tracker": self.tracker.state_dict(),
            "raw_obs": self._raw_obs.tolist(),
        }

    def load_state_dict(self, state):
        dtype = np.int64 if self.env.name == "gridworld" else np.float64
        self.states = [np.asarray(s, dtype=dtype) for s in state["states"]]
        self.steps_elapsed = np.asarray(state["steps_elapsed"], dtype=np.int64)
        self.last_action = np.asarray(state["last_action"], dtype=np.int64)
        self.repeat_count = np.asarray(state["repeat_count"], dtype=np.int64)
        self.total_steps = int(state["total_steps"])
        for rng, rng_state in zip(self.rngs, state["rngs"]):
            rng.bit_generator.state = rng_state
        self.tracker.load_state_dict(state["tracker"])
        self._raw_obs = np.asarray(state["raw_obs"], dtype=np.float64)
        self.obs = self.obs_normalizer.normalize(self._raw_obs)


def warmup_desync(vec_env, rng, max_steps=None):
    """Run each env for t ~ U(1, max_steps) uniformly random actions

    Seeds both normalizers and spreads the envs over different points of
    their episodes. Completed warmup episodes are dropped from the score
    window.

    Returns:
        np.ndarray: number of warmup steps taken by each env
    """
    if max_steps is None:
        max_steps = vec_env.config.resolved_warmup_max_steps()
    counts = rng.integers(1, max_steps + 1, size=vec_env.n_envs)
    for k in range(int(counts.max())):
        active = counts > k
        actions = rng.integers(0, vec_env.action_count, size=vec_env.n_envs)
        vec_env.step(actions, mask=active)
    vec_env.tracker.clear_recent()
    log.info(
        "Warmup: %s envs, %s steps (min %s, max %s)",
        vec_env.n_envs,
        int(counts.sum()),
        int(counts.min()),
        int(counts.max()),
    )
    return counts
