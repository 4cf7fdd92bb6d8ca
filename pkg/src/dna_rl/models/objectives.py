"""Phase losses, written as minimization objectives with mean reduction

Each loss returns a ``LossResult`` whose ``head_grads`` maps network head
names to d(loss)/d(head output), ready to be passed to ``nn_core.backward``.
Only heads of the network being optimised appear there.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn_core

log = logging.getLogger(__name__)

POLICY_HEAD = "logits"
VALUE_HEAD = "value"


@dataclass
class LossResult:
    loss: float
    head_grads: dict
    stats: dict = field(default_factory=dict)


def _as_f64(name, value):
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _entropy_grad(logits):
    """d entropy / d logits, row-wise: -p * (log p + S)"""
    logp = nn_core.log_softmax(logits)
    p = np.exp(logp)
    ent = -(p * logp).sum(axis=-1, keepdims=True)
    return -p * (logp + ent), ent[..., 0]


def clip_surrogate_loss(logits, actions, old_log_probs, advantages, cfg):
    """Negated PPO clipped surrogate plus entropy bonus

    loss = -mean(min(rho A, clip(rho, 1-eps, 1+eps) A)) - c_eb * mean(S)

    The entropy bonus sits outside the min, so its gradient is never gated
    by the clip.

    Args:
        logits (np.ndarray): (n, n_actions) from the current policy
        actions (np.ndarray): (n,) actions taken
        old_log_probs (np.ndarray): (n,) behaviour log-probabilities
        advantages (np.ndarray): (n,) normalized advantages
        cfg (ClipConfig): epsilon and entropy_coef

    Raises:
        ValueError: non-finite or mismatched inputs
    """
    logits = _as_f64("logits", logits)
    old_log_probs = _as_f64("old_log_probs", old_log_probs)
    advantages = _as_f64("advantages", advantages)
    actions = np.asarray(actions, dtype=np.int64)
    n = logits.shape[0]
    if not (actions.shape == old_log_probs.shape == advantages.shape == (n,)):
        raise ValueError(
            "actions, old_log_probs and advantages must all have shape "
            f"({n},). Got {actions.shape}, {old_log_probs.shape}, {advantages.shape}"
        )

    logp_all = nn_core.log_softmax(logits)
    new_log_probs = np.take_along_axis(logp_all, actions[:, None], axis=1)[:, 0]
    ratio = np.exp(new_log_probs - old_log_probs)
    eps = cfg.epsilon
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantages
    surrogate = np.minimum(unclipped, clipped)
    ent_grad, ent = _entropy_grad(logits)

    loss = -surrogate.mean() - cfg.entropy_coef * ent.mean()

    # Gradient flows through the surrogate only where the min picks rho * A
    takes_unclipped = unclipped <= clipped
    d_logp = np.where(takes_unclipped, unclipped, 0.0)
    one_hot = np.zeros_like(logits)
    one_hot[np.arange(n), actions] = 1.0
    d_logits = -(d_logp[:, None] * (one_hot - np.exp(logp_all))) / n
    d_logits -= cfg.entropy_coef * ent_grad / n

    outside = (ratio < 1.0 - eps) | (ratio > 1.0 + eps)
    stats = {
        "surrogate": float(surrogate.mean()),
        "entropy": float(ent.mean()),
        "clip_frac": float(outside.mean()),
        "approx_kl": float((old_log_probs - new_log_probs).mean()),
    }
    return LossResult(float(loss), {POLICY_HEAD: d_logits}, stats)


def value_mse_loss(predicted, targets):
    """mean((V - V_targ)^2); gradient 2 (V - V_targ) / n"""
    predicted = _as_f64("predicted", predicted).reshape(-1)
    targets = _as_f64("targets", targets).reshape(-1)
    if predicted.shape != targets.shape:
        raise ValueError(f"Shapes differ: {predicted.shape} vs {targets.shape}")
    n = predicted.shape[0]
    diff = predicted - targets
    loss = float(np.mean(diff * diff))
    return LossResult(loss, {VALUE_HEAD: (2.0 * diff / n)[:, None]}, {"value_mse": loss})


def distillation_loss(v_pi, v_targets, new_logits, old_logits, cfg):
    """mean((V_pi - V_V)^2) + beta * mean(KL(pi_old || pi))

    ``v_targets`` (the value network's V_V) and ``old_logits`` are constants,
    so the result only carries gradients for the policy network's heads.

    Args:
        v_pi (np.ndarray): (n,) policy network value head
        v_targets (np.ndarray): (n,) value network outputs
        new_logits (np.ndarray): (n, n_actions) current policy
        old_logits (np.ndarray): (n, n_actions) snapshot policy
        cfg (DistilConfig): beta
    """
    v_pi = _as_f64("v_pi", v_pi).reshape(-1)
    v_targets = _as_f64("v_targets", v_targets).reshape(-1)
    new_logits = _as_f64("new_logits", new_logits)
    old_logits = _as_f64("old_logits", old_logits)
    n = v_pi.shape[0]
    if v_targets.shape != (n,) or new_logits.shape[0] != n or new_logits.shape != old_logits.shape:
        raise ValueError("distillation inputs must share the batch dimension")

    diff = v_pi - v_targets
    mse = float(np.mean(diff * diff))
    kl = nn_core.kl_categorical(old_logits, new_logits)
    kl_mean = float(np.mean(kl))
    loss = mse + cfg.beta * kl_mean

    d_logits = cfg.beta * (nn_core.softmax(new_logits) - nn_core.softmax(old_logits)) / n
    head_grads = {VALUE_HEAD: (2.0 * diff / n)[:, None], POLICY_HEAD: d_logits}
    return LossResult(loss, head_grads, {"distil_mse": mse, "distil_kl": kl_mean})


def joint_ppo_loss(logits, values, actions, old_log_probs, advantages, value_targets, cfg, value_coef=0.5):
    """L_CLIP + value_coef * value MSE on a single two-head network"""
    policy = clip_surrogate_loss(logits, actions, old_log_probs, advantages, cfg)
    value = value_mse_loss(values, value_targets)
    head_grads = {
        POLICY_HEAD: policy.head_grads[POLICY_HEAD],
        VALUE_HEAD: value_coef * value.head_grads[VALUE_HEAD],
    }
    stats = dict(policy.stats)
    stats.update(value.stats)
    return LossResult(policy.loss + value_coef * value.loss, head_grads, stats)
