import os
import sys

import numpy as np
import pytest

SRC = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "src")
if SRC not in sys.path:
    sys.path.insert(0, SRC)

from dna_rl.models.configs import DnaConfig, EnvConfig  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_config():
    """A few seconds of training: 4 agents x 16 steps, two iterations"""
    return DnaConfig.preset(
        "desk",
        agents=4,
        horizon=16,
        mb_policy=32,
        mb_value=16,
        mb_distil=16,
        hidden_widths=(16, 16),
        total_interactions=128,
        probe_b_small=4,
        probe_b_big=64,
        seed=7,
    )


@pytest.fixture
def grid_env():
    return EnvConfig(name="gridworld", grid_size=4, warmup_max_steps=20)


@pytest.fixture
def cartpole_env():
    return EnvConfig(name="cartpole", warmup_max_steps=20)
