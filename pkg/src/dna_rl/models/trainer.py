"""Three-phase dual network training loop

Each outer iteration: collect an A x T rollout, compute value targets and
advantages with separate lambdas, then run the policy phase, the value
phase, a pi_old snapshot and the distillation phase. In ppo_joint mode a
single network is trained with the combined loss and there is no value or
distillation phase.
"""
import copy
import logging
import os

import numpy as np

from . import nn_core, objectives
from .agents import make_agent
from .checkpoint import load_checkpoint, save_checkpoint
from .configs import DnaConfig, EnvConfig
from .noise_scale import ProbeSet
from .objectives import POLICY_HEAD, VALUE_HEAD
from .returns import compute_advantages_batch, normalize_advantages, td_lambda_returns_batch
from .rollout import collect_rollout
from .wrappers import VecEnv, warmup_desync
from ..utils.config_manager import config as app_config
from ..utils.metrics import NullWriter

log = logging.getLogger(__name__)

RNG_STREAMS = ("env", "init", "sampling", "minibatch", "probe", "warmup", "eval")


class TrainingDivergedError(RuntimeError):
    """Raised on a non-finite loss or parameter; ``path`` is the diagnostic checkpoint"""

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(message if path is None else f"{message} (diagnostic checkpoint: {path})")


def spawn_streams(seed):
    """One independent SeedSequence per source of randomness"""
    children = np.random.SeedSequence(seed).spawn(len(RNG_STREAMS))
    return dict(zip(RNG_STREAMS, children))


class PhaseBatch:
    """Flattened rollout plus the targets every phase reads

    Args:
        batch (RolloutBatch): collected experience
        config (DnaConfig): provides gamma and both lambdas
    """

    def __init__(self, batch, config):
        self.obs = batch.flat("obs")
        self.actions = batch.flat("actions")
        self.old_log_probs = batch.flat("log_probs")
        self.values = batch.flat("values")
        value_targets = td_lambda_returns_batch(
            batch.rewards, batch.values, batch.terminals, batch.bootstrap_values, config.value_returns()
        )
        raw_adv = compute_advantages_batch(
            batch.rewards, batch.values, batch.terminals, batch.bootstrap_values, config.policy_returns()
        )
        self.value_targets = value_targets.reshape(-1)
        self.raw_advantages = raw_adv.reshape(-1)
        # Normalized once per batch, before the policy phase
        self.advantages = normalize_advantages(self.raw_advantages)

    def __len__(self):
        return self.actions.shape[0]


class TrainerState:
    """Everything a run mutates

    Attributes:
        agent (DualAgent or JointAgent): networks and their ParameterBlocks
        vec_env (VecEnv): environments plus the shared normalizers
        probes (ProbeSet or None): one noise probe per phase
        pi_old (np.ndarray or None): read-only policy snapshot for distillation
        iteration (int): completed outer iterations
        interactions (int): environment steps counted against the budget
    """

    def __init__(self, config, env_config, out_dir=None, sink=None, warmup=True):
        self.config = config
        self.env_config = env_config
        self.out_dir = out_dir
        self.sink = sink or NullWriter()
        streams = spawn_streams(config.seed)
        self.rngs = {
            name: np.random.default_rng(streams[name])
            for name in ("sampling", "minibatch", "probe", "eval")
        }
        self.vec_env = VecEnv(env_config, config.agents, config.gamma, seed=streams["env"])
        if warmup and env_config.warmup:
            warmup_desync(self.vec_env, np.random.default_rng(streams["warmup"]))
        self.agent = make_agent(
            config, self.vec_env.obs_dim, self.vec_env.action_count, np.random.default_rng(streams["init"])
        )
        self.probes = self._make_probes()
        self.pi_old = None
        self.pi_old_refreshes = 0
        self.iteration = 0
        self.interactions = 0

    def _make_probes(self):
        cfg = self.config
        if not cfg.probe_enabled:
            return None
        b_big = min(cfg.probe_b_big, cfg.batch_size)
        if b_big <= cfg.probe_b_small:
            log.warning(
                "Rollout of %s samples is too small for noise probes (b_small=%s); probes disabled",
                cfg.batch_size,
                cfg.probe_b_small,
            )
            return None
        if b_big < cfg.probe_b_big:
            log.info("probe_b_big clamped from %s to A*T=%s", cfg.probe_b_big, b_big)
        phases = ("policy", "value", "distil") if cfg.mode == "dna_dual" else ("policy", "value")
        return ProbeSet(cfg.probe_b_small, b_big, cfg.probe_ema_decay, phases)

    def recent_mean_return(self):
        """Mean raw return over the last 100 completed training episodes"""
        return self.vec_env.tracker.mean_recent()

    def anneal_fraction(self):
        if not self.config.lr_anneal:
            return 1.0
        return 1.0 - self.iteration / max(self.config.outer_iterations, 1)

    def state_sections(self):
        """Checkpoint sections in a fixed order"""
        sections = {
            "meta": {
                "iteration": self.iteration,
                "interactions": self.interactions,
                "pi_old_refreshes": self.pi_old_refreshes,
                "mode": self.config.mode,
                "config": self.config.to_dict(),
                "env_config": self.env_config.to_dict(),
                "config_hash": self.config.content_hash(),
                "steps": {name: block.step_count for name, block in self.agent.blocks().items()},
            },
        }
        for name, block in self.agent.blocks().items():
            if name != "distil":
                sections[f"{name}.params"] = block.params
            sections[f"{name}.adam_m"] = block.adam_m
            sections[f"{name}.adam_v"] = block.adam_v
        if self.pi_old is not None:
            sections["pi_old"] = np.array(self.pi_old)
        obs_norm = self.vec_env.obs_normalizer.state_dict()
        rew_norm = self.vec_env.reward_normalizer.state_dict()
        sections["obs_norm.mean"] = obs_norm["mean"]
        sections["obs_norm.m2"] = obs_norm["m2"]
        sections["reward_norm.returns"] = rew_norm["returns"]
        sections["normalizers"] = {
            "obs_count": obs_norm["count"],
            "reward_count": rew_norm["count"],
            "reward_mean": float(rew_norm["mean"]),
            "reward_m2": float(rew_norm["m2"]),
        }
        sections["env"] = self.vec_env.state_dict()
        sections["rng"] = {name: rng.bit_generator.state for name, rng in self.rngs.items()}
        if self.probes is not None:
            sections["probes"] = self.probes.state_dict()
        return sections

    def load_sections(self, sections):
        meta = sections["meta"]
        if meta["config_hash"] != self.config.content_hash():
            log.warning("Resuming with a config that differs from the checkpoint's")
        self.iteration = int(meta["iteration"])
        self.interactions = int(meta["interactions"])
        self.pi_old_refreshes = int(meta["pi_old_refreshes"])
        for name, block in self.agent.blocks().items():
            if name != "distil":
                block.params[:] = sections[f"{name}.params"]
            block.adam_m[:] = sections[f"{name}.adam_m"]
            block.adam_v[:] = sections[f"{name}.adam_v"]
            block.step_count = int(meta["steps"][name])
        if "pi_old" in sections:
            snap = np.array(sections["pi_old"], dtype=np.float64)
            snap.flags.writeable = False
            self.pi_old = snap
        norms = sections["normalizers"]
        self.vec_env.obs_normalizer.load_state_dict(
            {"count": norms["obs_count"], "mean": sections["obs_norm.mean"], "m2": sections["obs_norm.m2"]}
        )
        self.vec_env.reward_normalizer.load_state_dict(
            {
                "count": norms["reward_count"],
                "mean": norms["reward_mean"],
                "m2": norms["reward_m2"],
                "returns": sections["reward_norm.returns"],
            }
        )
        self.vec_env.load_state_dict(sections["env"])
        for name, rng in self.rngs.items():
            rng.bit_generator.state = sections["rng"][name]
        if self.probes is not None and "probes" in sections:
            self.probes.load_state_dict(sections["probes"])


def minibatch_iterator(n, mb_size, rng):
    """Yield shuffled index arrays of size ``mb_size`` covering ``range(n)``

    ``mb_size`` larger than ``n`` is clamped to ``n``. When ``mb_size`` does
    not divide ``n`` the last partial mini-batch is dropped.
    """
    if n < 1:
        raise ValueError(f"Cannot iterate over an empty batch. Got n={n}")
    mb_size = min(int(mb_size), n)
    perm = rng.permutation(n)
    for k in range(n // mb_size):
        yield perm[k * mb_size : (k + 1) * mb_size]


def _diverged(state, message):
    path = None
    if state.out_dir:
        path = os.path.join(state.out_dir, "diverged.ckpt")
        try:
            save_checkpoint(path, state.state_sections())
        except OSError as e:
            log.error("Could not write diagnostic checkpoint: %s", e)
            path = None
    log.error("Training diverged at iteration %s: %s", state.iteration, message)
    raise TrainingDivergedError(message, path)


def _apply(state, block, grads, lr, phase):
    if not np.all(np.isfinite(grads)):
        _diverged(state, f"non-finite gradient in {phase} phase")
    block.grads[:] = nn_core.clip_global_grad_norm(grads, state.config.grad_clip)
    cfg = state.config
    nn_core.adam_step(block, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)


def _run_epochs(state, phase, epochs, n, mb_size, step):
    """Run ``epochs`` passes of ``step(idx) -> LossResult`` and average stats"""
    totals = {}
    count = 0
    for epoch in range(epochs):
        for idx in minibatch_iterator(n, mb_size, state.rngs["minibatch"]):
            result = step(idx)
            if not np.isfinite(result.loss):
                _diverged(state, f"non-finite {phase} loss")
            log.debug("%s epoch %s: loss %.6g", phase, epoch, result.loss)
            totals["loss"] = totals.get("loss", 0.0) + result.loss
            for key, value in result.stats.items():
                totals[key] = totals.get(key, 0.0) + value
            count += 1
    if count == 0:
        return {}
    return {key: value / count for key, value in totals.items()}


def _emit_phase(state, phase, stats):
    if stats:
        state.sink.write(
            "phase", iteration=state.iteration, interactions=state.interactions, phase=phase, **stats
        )


def _probe(state, phase, grad_fn, n):
    if state.probes is None or phase not in state.probes:
        return None
    row = state.probes.measure(phase, grad_fn, n, state.rngs["probe"])
    phase_name = row.pop("phase")
    state.sink.write(
        "noise", iteration=state.iteration, interactions=state.interactions, phase=phase_name, **row
    )
    return row


# Loss / gradient closures, one per phase


def _policy_grad(agent, pb, clip_cfg, idx):
    spec, params = agent.policy_spec, agent.policy.params
    outputs, cache = nn_core.forward_with_cache(spec, params, pb.obs[idx])
    result = objectives.clip_surrogate_loss(
        outputs[POLICY_HEAD], pb.actions[idx], pb.old_log_probs[idx], pb.advantages[idx], clip_cfg
    )
    return result, nn_core.backward(spec, params, pb.obs[idx], result.head_grads, cache)


def _joint_grad(agent, pb, clip_cfg, value_coef, idx):
    spec, params = agent.policy_spec, agent.policy.params
    outputs, cache = nn_core.forward_with_cache(spec, params, pb.obs[idx])
    result = objectives.joint_ppo_loss(
        outputs[POLICY_HEAD],
        outputs[VALUE_HEAD][:, 0],
        pb.actions[idx],
        pb.old_log_probs[idx],
        pb.advantages[idx],
        pb.value_targets[idx],
        clip_cfg,
        value_coef=value_coef,
    )
    return result, nn_core.backward(spec, params, pb.obs[idx], result.head_grads, cache)


def _value_grad(agent, pb, idx):
    spec, params = agent.value_spec, agent.value.params
    outputs, cache = nn_core.forward_with_cache(spec, params, pb.obs[idx])
    result = objectives.value_mse_loss(outputs[VALUE_HEAD][:, 0], pb.value_targets[idx])
    head_grads = {VALUE_HEAD: result.head_grads[VALUE_HEAD]}
    return result, nn_core.backward(spec, params, pb.obs[idx], head_grads, cache)


def _distil_grad(agent, pb, v_targets, old_logits, distil_cfg, idx):
    spec, params = agent.policy_spec, agent.policy.params
    outputs, cache = nn_core.forward_with_cache(spec, params, pb.obs[idx])
    result = objectives.distillation_loss(
        outputs[VALUE_HEAD][:, 0], v_targets[idx], outputs[POLICY_HEAD], old_logits[idx], distil_cfg
    )
    return result, nn_core.backward(spec, params, pb.obs[idx], result.head_grads, cache)


def policy_phase(state, pb, config):
    """E_pi epochs of mini-batched clipped-surrogate ascent on the policy network

    In ppo_joint mode the combined loss is used and both heads of the shared
    network are trained.

    Returns:
        dict: mean loss and diagnostics over all mini-batches
    """
    agent = state.agent
    frac = state.anneal_fraction()
    clip_cfg = config.clip_config().replace(entropy_coef=config.entropy_coef * frac)
    lr = config.lr * frac
    if config.mode == "ppo_joint":

        def grad_of(idx):
            return _joint_grad(agent, pb, clip_cfg, config.value_coef, idx)

    else:

        def grad_of(idx):
            return _policy_grad(agent, pb, clip_cfg, idx)

    if config.e_pi > 0:
        _probe(state, "policy", lambda idx: grad_of(idx)[1], len(pb))
        if config.mode == "ppo_joint":
            _probe(state, "value", lambda idx: _value_grad(agent, pb, idx)[1], len(pb))

    def step(idx):
        result, grads = grad_of(idx)
        _apply(state, agent.policy, grads, lr, "policy")
        return result

    stats = _run_epochs(state, "policy", config.e_pi, len(pb), config.mb_policy, step)
    _emit_phase(state, "policy", stats)
    return stats


def value_phase(state, pb, config):
    """E_V epochs of value-MSE descent on the value network only"""
    if config.mode == "ppo_joint":
        return {}
    agent = state.agent
    lr = config.lr * state.anneal_fraction()
    if config.e_v > 0:
        _probe(state, "value", lambda idx: _value_grad(agent, pb, idx)[1], len(pb))

    def step(idx):
        result, grads = _value_grad(agent, pb, idx)
        _apply(state, agent.value, grads, lr, "value")
        return result

    stats = _run_epochs(state, "value", config.e_v, len(pb), config.mb_value, step)
    _emit_phase(state, "value", stats)
    return stats


def distill_phase(state, pb, config):
    """Snapshot pi_old, then E_D epochs of distillation on the policy network

    V_V targets come from the value network, which this phase never updates;
    they are recomputed at the start of every epoch.
    """
    if config.mode == "ppo_joint":
        return {}
    agent = state.agent
    state.pi_old = nn_core.snapshot_params(agent.policy)
    state.pi_old_refreshes += 1
    distil_cfg = config.distil_config()
    lr = config.lr * state.anneal_fraction()
    old_logits = agent.logits(pb.obs, params=state.pi_old)

    totals = {}
    count = 0
    for epoch in range(config.e_d):
        v_targets = agent.values(pb.obs)
        if epoch == 0:
            _probe(
                state,
                "distil",
                lambda idx: _distil_grad(agent, pb, v_targets, old_logits, distil_cfg, idx)[1],
                len(pb),
            )

        def step(idx):
            result, grads = _distil_grad(agent, pb, v_targets, old_logits, distil_cfg, idx)
            _apply(state, agent.distil, grads, lr, "distil")
            return result

        epoch_stats = _run_epochs(state, "distil", 1, len(pb), config.mb_distil, step)
        for key, value in epoch_stats.items():
            totals[key] = totals.get(key, 0.0) + value
        count += 1

    stats = {key: value / count for key, value in totals.items()} if count else {}
    if stats:
        stats["kl_to_old"] = float(
            np.mean(nn_core.kl_categorical(old_logits, agent.logits(pb.obs)))
        )
    _emit_phase(state, "distil", stats)
    return stats


def run_iteration(state):
    """One collect / policy / value / distil cycle"""
    config = state.config
    agent = state.agent
    batch = collect_rollout(
        state.vec_env, agent.act, agent.values, config.horizon, state.rngs["sampling"]
    )
    state.interactions += len(batch)
    for env_index, ret, length in batch.episodes:
        state.sink.write(
            "episode",
            iteration=state.iteration,
            interactions=state.interactions,
            env=env_index,
            episode_return=ret,
            length=length,
        )

    pb = PhaseBatch(batch, config)
    summary = {"policy": policy_phase(state, pb, config)}
    summary["value"] = value_phase(state, pb, config)
    summary["distil"] = distill_phase(state, pb, config)

    mean_return = state.recent_mean_return()
    state.sink.write(
        "iteration",
        iteration=state.iteration,
        interactions=state.interactions,
        episodes=len(batch.episodes),
        mean_return=mean_return,
    )
    log.info(
        "iter %s  interactions %s  mean return %s  policy %.4g  value %.4g  distil %.4g",
        state.iteration,
        state.interactions,
        "n/a" if mean_return is None else f"{mean_return:.3f}",
        summary["policy"].get("loss", float("nan")),
        summary["value"].get("loss", float("nan")),
        summary["distil"].get("loss", float("nan")),
    )
    state.iteration += 1
    return summary


def checkpoint_path(out_dir, iteration):
    return os.path.join(out_dir, f"iter_{iteration:06d}.ckpt")


def write_checkpoint(state, path):
    save_checkpoint(path, state.state_sections())
    state.sink.write(
        "checkpoint",
        iteration=state.iteration,
        interactions=state.interactions,
        path=os.path.basename(path),
    )
    return path


def restore_state(path, config, env_config, out_dir=None, sink=None):
    """Rebuild a TrainerState from a checkpoint written by ``write_checkpoint``"""
    sections = load_checkpoint(path)
    state = TrainerState(config, env_config, out_dir=out_dir, sink=sink, warmup=False)
    state.load_sections(sections)
    log.info("Resumed from %s at iteration %s", path, state.iteration)
    return state


def load_trained_state(path):
    """TrainerState from a checkpoint, using the configs stored inside it

    Raises:
        FileNotFoundError: ``path`` does not exist
        CheckpointError: the file is not a valid checkpoint
    """
    meta = load_checkpoint(path)["meta"]
    config = DnaConfig(**meta["config"])
    env_config = EnvConfig(**meta["env_config"])
    return restore_state(path, config, env_config)


def train(config, env_config, out_dir=None, sink=None, resume=None):
    """Run outer iterations until ``config.total_interactions`` is reached

    Args:
        config (DnaConfig): hyperparameters
        env_config (EnvConfig): environment and wrapper settings
        out_dir (str, optional): checkpoints go here when given
        sink (MetricsWriter, optional): metric event sink
        resume (str, optional): checkpoint to continue from

    Returns:
        TrainerState: state after the final iteration

    Raises:
        TrainingDivergedError: a loss, gradient or parameter became non-finite
    """
    if resume:
        state = restore_state(resume, config, env_config, out_dir=out_dir, sink=sink)
    else:
        state = TrainerState(config, env_config, out_dir=out_dir, sink=sink)
    total = config.outer_iterations
    log.info(
        "Training %s on %s: %s iterations of %s x %s",
        config.mode,
        env_config.name,
        total,
        config.agents,
        config.horizon,
    )
    every = config.checkpoint_every or app_config.get_checkpoint_every()
    while state.iteration < total:
        run_iteration(state)
        if out_dir and every and state.iteration % every == 0 and state.iteration < total:
            write_checkpoint(state, checkpoint_path(out_dir, state.iteration))
    if out_dir:
        write_checkpoint(state, os.path.join(out_dir, app_config.get_final_checkpoint_name()))
    state.sink.flush()
    log.info("Finished after %s interactions", state.interactions)
    return state


def evaluate(state, n_episodes=100, greedy=True, gamma=None, env_config=None, seed=0):
    """Mean return of the current policy over ``n_episodes`` fresh episodes

    Observation statistics are copied from training and frozen.

    Args:
        state (TrainerState): trained state
        n_episodes (int): completed episodes to average
        greedy (bool): argmax actions; otherwise sample
        gamma (float, optional): report discounted returns instead of raw sums
        env_config (EnvConfig, optional): defaults to the training env
        seed (int): evaluation stream seed

    Returns:
        float: mean episode return
    """
    if n_episodes < 1:
        raise ValueError(f"n_episodes must be >= 1. Got {n_episodes}")
    env_config = env_config or state.env_config
    vec_env = VecEnv(
        env_config,
        1,
        state.config.gamma,
        seed=seed,
        obs_normalizer=copy.deepcopy(state.vec_env.obs_normalizer),
        update_stats=False,
    )
    rng = np.random.default_rng(seed)
    returns = []
    running = 0.0
    discount = 1.0
    while len(returns) < n_episodes:
        actions, _ = state.agent.act(vec_env.obs, rng, greedy)
        result = vec_env.step(actions)
        reward = float(result.raw_rewards[0])
        if gamma is None:
            running += reward
        else:
            running += discount * reward
            discount *= gamma
        if result.terminals[0]:
            returns.append(running)
            running = 0.0
            discount = 1.0
    mean = float(np.mean(returns))
    state.sink.write("evaluation", iteration=state.iteration, episodes=n_episodes, mean_return=mean)
    return mean
