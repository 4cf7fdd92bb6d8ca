"""Config classes for every component, declared with Param fields

Defaults follow the hyperparameters selected by the dual network study
(E_pi=2, E_V=1, E_D=2, lambda_pi=0.8, lambda_V=0.95). The coarse-search values
and the PPO baselines are available through ``DnaConfig.preset``.
"""
import logging
import math

from . import params
from .base_config import BaseConfig
from .params import ConfigError

log = logging.getLogger(__name__)

MODES = ["dna_dual", "ppo_joint"]
ENV_NAMES = ["gridworld", "cartpole"]

# Episode timeouts (desk-scale analog of the 108K frame limit)
DEFAULT_TIMEOUTS = {"cartpole": 500, "gridworld": 200}
WARMUP_MAX_STEPS = 1000


class ReturnConfig(BaseConfig):
    """(gamma, lambda) pair selecting a TD(lambda) estimator"""

    gamma = params.FloatParam(default=0.999, min_val=0.0, max_val=1.0, max_inclusive=False)
    lam = params.FloatParam(default=0.95, min_val=0.0, max_val=1.0)


class ClipConfig(BaseConfig):
    epsilon = params.FloatParam(default=0.2, min_val=0.0, min_inclusive=False)
    entropy_coef = params.FloatParam(default=0.001, min_val=0.0)


class DistilConfig(BaseConfig):
    beta = params.FloatParam(default=1.0, min_val=0.0)


class EnvConfig(BaseConfig):
    """Environment selection and the observation/reward wrapper stack"""

    section = "env"

    name = params.ChoiceParam(options=ENV_NAMES, default="gridworld")
    grid_size = params.IntParam(default=5, min_val=2)
    timeout = params.IntParam(
        default=0, min_val=0, help_text="Episode timeout; 0 uses the env's own default"
    )
    sticky_prob = params.FloatParam(default=0.0, min_val=0.0, max_val=1.0)
    repeat_threshold = params.IntParam(default=100, min_val=0)
    repeat_penalty = params.FloatParam(default=0.25, min_val=0.0)
    normalize_obs = params.BoolParam(default=True)
    normalize_reward = params.BoolParam(default=True)
    obs_clip = params.FloatParam(default=3.0, min_val=0.0, min_inclusive=False)
    reward_clip = params.FloatParam(default=5.0, min_val=0.0, min_inclusive=False)
    time_feature = params.BoolParam(default=True)
    action_feature = params.BoolParam(default=True)
    warmup = params.BoolParam(default=True)
    warmup_max_steps = params.IntParam(
        default=0, min_val=0, help_text="Upper bound of U(1, n); 0 means min(1000, 2 * timeout)"
    )

    def resolved_timeout(self):
        return self.timeout or DEFAULT_TIMEOUTS[self.name]

    def resolved_warmup_max_steps(self):
        if self.warmup_max_steps:
            return self.warmup_max_steps
        return min(WARMUP_MAX_STEPS, 2 * self.resolved_timeout())


class DnaConfig(BaseConfig):
    """All trainer hyperparameters"""

    section = "dna"

    gamma = params.FloatParam(default=0.999, min_val=0.0, max_val=1.0, max_inclusive=False)
    lambda_pi = params.FloatParam(default=0.8, min_val=0.0, max_val=1.0)
    lambda_v = params.FloatParam(default=0.95, min_val=0.0, max_val=1.0)
    epsilon = params.FloatParam(default=0.2, min_val=0.0, min_inclusive=False)
    entropy_coef = params.FloatParam(default=0.001, min_val=0.0)
    lr = params.FloatParam(default=2.5e-4, min_val=0.0, min_inclusive=False)
    horizon = params.IntParam(default=128, min_val=1, help_text="Rollout horizon T (N)")
    agents = params.IntParam(default=128, min_val=1, help_text="Parallel agents A")
    e_pi = params.IntParam(default=2, min_val=0)
    e_v = params.IntParam(default=1, min_val=0)
    e_d = params.IntParam(default=2, min_val=0)
    beta = params.FloatParam(default=1.0, min_val=0.0)
    mb_policy = params.IntParam(default=2048, min_val=1)
    mb_value = params.IntParam(default=512, min_val=1)
    mb_distil = params.IntParam(default=512, min_val=1)
    grad_clip = params.FloatParam(default=5.0, min_val=0.0, min_inclusive=False)
    total_interactions = params.IntParam(default=1_000_000, min_val=0)
    seed = params.IntParam(default=0, min_val=0)
    mode = params.ChoiceParam(options=MODES, default="dna_dual")
    value_coef = params.FloatParam(
        default=0.5, min_val=0.0, help_text="Value loss weight in ppo_joint mode"
    )
    lr_anneal = params.BoolParam(
        default=False, help_text="Linearly anneal lr and entropy bonus from 1 to 0"
    )
    hidden_widths = params.IntTupleParam(default=(64, 64), min_val=1)
    activation = params.ChoiceParam(options=["relu", "tanh"], default="tanh")
    init_scheme = params.ChoiceParam(options=["orthogonal", "uniform"], default="orthogonal")
    adam_beta1 = params.FloatParam(default=0.9, min_val=0.0, max_val=1.0, max_inclusive=False)
    adam_beta2 = params.FloatParam(default=0.999, min_val=0.0, max_val=1.0, max_inclusive=False)
    adam_eps = params.FloatParam(default=1e-8, min_val=0.0, min_inclusive=False)
    probe_enabled = params.BoolParam(default=True)
    probe_b_small = params.IntParam(default=16, min_val=1)
    probe_b_big = params.IntParam(
        default=16384, min_val=2, help_text="Clamped to A*T when the rollout is smaller"
    )
    probe_ema_decay = params.FloatParam(
        default=0.99, min_val=0.0, max_val=1.0, min_inclusive=False, max_inclusive=False
    )
    eval_episodes = params.IntParam(default=100, min_val=1)
    checkpoint_every = params.IntParam(default=0, min_val=0, help_text="0 disables checkpoints")

    def check(self):
        batch = self.batch_size
        for name in ("mb_policy", "mb_value", "mb_distil"):
            size = getattr(self, name)
            if size <= batch and batch % size:
                log.warning(
                    "%s=%s does not divide A*T=%s; last partial mini-batch is dropped",
                    name,
                    size,
                    batch,
                )
        if self.probe_enabled and self.probe_b_small >= self.probe_b_big:
            raise ConfigError("probe_b_small", "must be smaller than probe_b_big")

    @property
    def batch_size(self):
        return self.agents * self.horizon

    @property
    def outer_iterations(self):
        """Number of collect/update iterations needed to reach the budget"""
        return math.ceil(self.total_interactions / self.batch_size)

    def policy_returns(self):
        return ReturnConfig(gamma=self.gamma, lam=self.lambda_pi)

    def value_returns(self):
        return ReturnConfig(gamma=self.gamma, lam=self.lambda_v)

    def clip_config(self):
        return ClipConfig(epsilon=self.epsilon, entropy_coef=self.entropy_coef)

    def distil_config(self):
        return DistilConfig(beta=self.beta)

    @classmethod
    def preset(cls, name, **overrides):
        """Return a config for a named preset

        Args:
            name (str): one of ``PRESETS``
            **overrides: field values applied on top of the preset
        """
        try:
            values = dict(PRESETS[name])
        except KeyError:
            raise ConfigError("preset", f"must be one of {sorted(PRESETS)}. Got {name!r}") from None
        values.update(overrides)
        return cls(**values)


PRESETS = {
    "paper": {},
    # Coarse search values before the epoch / lambda fine tuning
    "table4": {"e_v": 2, "lambda_pi": 0.95},
    "ppo_basic": {
        "mode": "ppo_joint",
        "e_pi": 1,
        "e_d": 0,
        "mb_policy": 512,
        "lambda_pi": 0.95,
        "lambda_v": 0.95,
    },
    "ppo_original": {
        "mode": "ppo_joint",
        "agents": 8,
        "epsilon": 0.1,
        "gamma": 0.99,
        "e_pi": 3,
        "e_d": 0,
        "mb_policy": 256,
        "lambda_pi": 0.95,
        "lambda_v": 0.95,
        "lr_anneal": True,
    },
    "desk": {
        "agents": 8,
        "horizon": 128,
        "mb_policy": 256,
        "mb_value": 64,
        "mb_distil": 64,
        "lr": 1e-3,
        "gamma": 0.99,
        "probe_b_big": 1024,
    },
}


class InterferenceSpec(BaseConfig):
    """Two independent regression tasks learned by a joint or dual model

    F1 = sin(freq x) + N(0, sigma1^2), F2 = cos(freq x) + N(0, sigma2^2)
    """

    section = "interference"

    sigma1_grid = params.FloatTupleParam(
        default=(0.1, 0.316, 1.0, 3.16, 10.0, 31.6, 100.0), min_val=0.0, min_inclusive=False
    )
    sigma2 = params.FloatParam(default=1.0, min_val=0.0, min_inclusive=False)
    domain_low = params.FloatParam(default=-math.pi)
    domain_high = params.FloatParam(default=math.pi)
    freq = params.FloatParam(default=5.0)
    joint_hidden = params.IntTupleParam(default=(1024, 2048), min_val=1)
    dual_hidden = params.IntTupleParam(default=(1024, 1024), min_val=1)
    seeds = params.IntParam(default=20, min_val=1)
    base_seed = params.IntParam(default=0, min_val=0)
    train_steps = params.IntParam(default=2000, min_val=0)
    batch_size = params.IntParam(default=64, min_val=1)
    dataset_size = params.IntParam(default=0, min_val=0, help_text="0 streams fresh samples")
    eval_grid_size = params.IntParam(default=1000, min_val=1)
    lr = params.FloatParam(default=1e-3, min_val=0.0, min_inclusive=False)
    grad_clip = params.FloatParam(default=0.0, min_val=0.0, help_text="0 disables clipping")

    def check(self):
        if self.domain_high <= self.domain_low:
            raise ConfigError("domain_high", "must be greater than domain_low")

    @classmethod
    def desk(cls, **overrides):
        """Reduced widths used for desktop-CPU runs"""
        values = {"joint_hidden": (256, 512), "dual_hidden": (256, 256)}
        values.update(overrides)
        return cls(**values)


class SweepConfig(BaseConfig):
    """Grids for the lambda and epoch sweeps"""

    section = "sweep"

    lambda_pi_grid = params.FloatTupleParam(
        default=(0.6, 0.8, 0.9, 0.95, 0.975), min_val=0.0, max_val=1.0
    )
    lambda_v_grid = params.FloatTupleParam(
        default=(0.6, 0.8, 0.9, 0.95, 0.975), min_val=0.0, max_val=1.0
    )
    lambda_layout = params.ChoiceParam(
        options=["axis", "grid"],
        default="axis",
        help_text="axis: vary one lambda holding the other at its default; grid: full product",
    )
    comparison_cells = params.BoolParam(default=True)
    e_pi_grid = params.IntTupleParam(default=(1, 2, 3, 4), min_val=0)
    e_v_grid = params.IntTupleParam(default=(1, 2, 3, 4), min_val=0)
    e_d_grid = params.IntTupleParam(default=(0, 1, 2, 3), min_val=0)
    hold_epochs = params.IntParam(default=2, min_val=0)
    seeds = params.IntParam(default=3, min_val=1)
