"""Network bundles for the two training modes

``DualAgent`` (dna_dual) owns a policy network with a logits head and an
auxiliary value head, plus a separate value network. ``JointAgent``
(ppo_joint) owns one network with both heads.
"""
import logging

import numpy as np

from . import nn_core
from .objectives import POLICY_HEAD, VALUE_HEAD

log = logging.getLogger(__name__)

LOGITS_GAIN = 0.01
VALUE_GAIN = 1.0


def _policy_spec(config, obs_dim, action_count):
    return nn_core.NetSpec(
        input_dim=obs_dim,
        hidden_widths=config.hidden_widths,
        heads=((POLICY_HEAD, action_count), (VALUE_HEAD, 1)),
        activation=config.activation,
        init_scheme=config.init_scheme,
        head_gains=((POLICY_HEAD, LOGITS_GAIN), (VALUE_HEAD, VALUE_GAIN)),
    )


class _Agent:
    """Shared acting code; subclasses set ``policy_spec`` and ``policy``"""

    policy_spec = None
    policy = None

    def logits(self, obs, params=None):
        params = self.policy.params if params is None else params
        return nn_core.forward(self.policy_spec, params, obs)[POLICY_HEAD]

    def act(self, obs, rng, greedy=False):
        """Return (actions, log_probs) for a batch of observations"""
        logits = self.logits(obs)
        if greedy:
            actions = np.atleast_1d(nn_core.greedy_action(logits))
            return actions, nn_core.action_log_prob(logits, actions)
        return nn_core.sample_action(logits, rng)

    def values(self, obs):
        raise NotImplementedError

    def blocks(self):
        """{name: ParameterBlock} in checkpoint order"""
        raise NotImplementedError


class DualAgent(_Agent):
    """Policy network (logits + V_pi) and value network (V_V)

    The distillation optimizer shares the policy parameters but keeps its
    own Adam moments.
    """

    mode = "dna_dual"

    def __init__(self, config, obs_dim, action_count, rng):
        self.policy_spec = _policy_spec(config, obs_dim, action_count)
        self.value_spec = nn_core.NetSpec(
            input_dim=obs_dim,
            hidden_widths=config.hidden_widths,
            heads=((VALUE_HEAD, 1),),
            activation=config.activation,
            init_scheme=config.init_scheme,
            head_gains=((VALUE_HEAD, VALUE_GAIN),),
        )
        self.policy = nn_core.ParameterBlock(nn_core.init_params(self.policy_spec, rng))
        self.value = nn_core.ParameterBlock(nn_core.init_params(self.value_spec, rng))
        self.distil = nn_core.ParameterBlock.sharing(self.policy)
        log.debug(
            "DualAgent: policy %s params, value %s params",
            len(self.policy),
            len(self.value),
        )

    def values(self, obs):
        return nn_core.forward(self.value_spec, self.value.params, obs)[VALUE_HEAD][:, 0]

    def blocks(self):
        return {"policy": self.policy, "value": self.value, "distil": self.distil}


class JointAgent(_Agent):
    """One shared-trunk network for PPO baselines"""

    mode = "ppo_joint"

    def __init__(self, config, obs_dim, action_count, rng):
        self.policy_spec = _policy_spec(config, obs_dim, action_count)
        self.value_spec = self.policy_spec
        self.policy = nn_core.ParameterBlock(nn_core.init_params(self.policy_spec, rng))
        log.debug("JointAgent: %s params", len(self.policy))

    @property
    def value(self):
        return self.policy

    def values(self, obs):
        return nn_core.forward(self.policy_spec, self.policy.params, obs)[VALUE_HEAD][:, 0]

    def blocks(self):
        return {"policy": self.policy}


def make_agent(config, obs_dim, action_count, rng):
    if config.mode == "dna_dual":
        return DualAgent(config, obs_dim, action_count, rng)
    return JointAgent(config, obs_dim, action_count, rng)
