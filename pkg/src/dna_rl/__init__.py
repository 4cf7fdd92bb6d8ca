"""Dual network actor-critic training with decoupled return estimation

Heavy submodules are imported on first attribute access so that
``python -m dna_rl --deterministic`` can pin BLAS threads before numpy loads.
"""
import importlib

__version__ = "0.1.0"

_EXPORTS = {
    "DnaConfig": "models.configs",
    "EnvConfig": "models.configs",
    "InterferenceSpec": "models.configs",
    "SweepConfig": "models.configs",
    "ConfigError": "models.params",
    "train": "models.trainer",
    "evaluate": "models.trainer",
    "cli": "launcher",
}


def __getattr__(name):
    if name in _EXPORTS:
        module = importlib.import_module(f".{_EXPORTS[name]}", __name__)
        return getattr(module, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
