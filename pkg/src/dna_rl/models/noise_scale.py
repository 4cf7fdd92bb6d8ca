"""Simple gradient noise scale, B = tr(Sigma) / |G|^2

Two gradient estimates are taken from the same data, one over a large batch
of size b_big and one over a b_small subset of it. From their squared norms
we get unbiased estimates of |G|^2 and tr(Sigma), smooth both with an EMA,
and read B (and sigma = sqrt(B)) off the ratio of the smoothed values. The
ratio itself is not unbiased.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)

PHASES = ("policy", "value", "distil")


class InsufficientDataError(ValueError):
    """Raised when a probe is asked for more samples than the batch holds"""


@dataclass(frozen=True)
class NoiseReading:
    """One probe read-out; b_simple and sigma are None while undefined"""

    b_simple: Optional[float]
    sigma: Optional[float]


@dataclass
class NoiseScaleProbe:
    """Paired-batch gradient statistics with EMA state

    Args:
        b_small (int): small batch size (16)
        b_big (int): large batch size (16384, or the whole rollout at desk scale)
        ema_decay (float): weight on the previous EMA value, in (0, 1)
    """

    b_small: int = 16
    b_big: int = 16384
    ema_decay: float = 0.99
    ema_g2: float = 0.0
    ema_s: float = 0.0
    initialized: bool = False
    updates: int = 0

    def __post_init__(self):
        if not 0 < self.b_small < self.b_big:
            raise ValueError(f"Need 0 < b_small < b_big. Got {self.b_small}, {self.b_big}")
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError(f"ema_decay must be in (0, 1). Got {self.ema_decay}")
        if self.b_big < 10 * self.b_small:
            log.warning(
                "b_big=%s is less than 10 * b_small=%s; noise estimates will be imprecise",
                self.b_big,
                self.b_small,
            )

    def read(self):
        if not self.initialized or self.ema_g2 <= 0.0:
            return NoiseReading(None, None)
        b = self.ema_s / self.ema_g2
        return NoiseReading(b, float(np.sqrt(max(b, 0.0))))

    def state_dict(self):
        return {
            "b_small": self.b_small,
            "b_big": self.b_big,
            "ema_decay": self.ema_decay,
            "ema_g2": self.ema_g2,
            "ema_s": self.ema_s,
            "initialized": self.initialized,
            "updates": self.updates,
        }

    def load_state_dict(self, state):
        for key, value in state.items():
            setattr(self, key, value)


def paired_gradient_probe(grad_fn, n_samples, b_small, b_big, rng):
    """Gradient over b_big samples and over a b_small subset of those samples

    Args:
        grad_fn (callable): indices -> flat mean gradient over those samples
        n_samples (int): size of the data available (rollout size)
        b_small (int): small batch size
        b_big (int): large batch size
        rng (np.random.Generator): chooses the samples

    Returns:
        (g_small, g_big)

    Raises:
        InsufficientDataError: n_samples < b_big
    """
    if n_samples < b_big:
        raise InsufficientDataError(f"Probe needs {b_big} samples, batch has {n_samples}")
    if b_small > b_big:
        raise ValueError(f"b_small must not exceed b_big. Got {b_small} > {b_big}")
    if n_samples == b_big:
        big_idx = np.arange(n_samples)
    else:
        big_idx = np.sort(rng.choice(n_samples, size=b_big, replace=False))
    small_idx = np.sort(rng.choice(big_idx, size=b_small, replace=False))
    g_big = np.asarray(grad_fn(big_idx), dtype=np.float64)
    g_small = g_big.copy() if b_small == b_big else np.asarray(grad_fn(small_idx), dtype=np.float64)
    return g_small, g_big


def estimate_g2_s(g_small, g_big, b_small, b_big):
    """Unbiased |G|^2 and tr(Sigma) estimates from a paired probe

    g2_hat = (b_big |g_big|^2 - b_small |g_small|^2) / (b_big - b_small)
    s_hat = (|g_small|^2 - |g_big|^2) / (1 / b_small - 1 / b_big)

    g2_hat can be negative on a single draw.

    Raises:
        ZeroDivisionError: b_small == b_big
    """
    if b_small == b_big:
        raise ZeroDivisionError("b_small and b_big must differ")
    small_sq = float(np.dot(g_small, g_small))
    big_sq = float(np.dot(g_big, g_big))
    g2_hat = (b_big * big_sq - b_small * small_sq) / (b_big - b_small)
    s_hat = (small_sq - big_sq) / (1.0 / b_small - 1.0 / b_big)
    return g2_hat, s_hat


def update_and_read(probe, g2_hat, s_hat):
    """EMA-update the probe with one (g2_hat, s_hat) pair and read B, sigma

    The first update seeds both averages directly.
    """
    if not probe.initialized:
        probe.ema_g2 = float(g2_hat)
        probe.ema_s = float(s_hat)
        probe.initialized = True
    else:
        d = probe.ema_decay
        probe.ema_g2 = d * probe.ema_g2 + (1.0 - d) * float(g2_hat)
        probe.ema_s = d * probe.ema_s + (1.0 - d) * float(s_hat)
    probe.updates += 1
    return probe.read()


class ProbeSet:
    """One probe per training phase"""

    def __init__(self, b_small=16, b_big=16384, ema_decay=0.99, phases=PHASES):
        self.probes = {
            phase: NoiseScaleProbe(b_small=b_small, b_big=b_big, ema_decay=ema_decay)
            for phase in phases
        }

    def __getitem__(self, phase):
        return self.probes[phase]

    def __contains__(self, phase):
        return phase in self.probes

    def measure(self, phase, grad_fn, n_samples, rng):
        """Run a paired probe on ``grad_fn`` and fold it into ``phase``'s EMA

        Returns:
            dict: row for the metrics stream
        """
        probe = self.probes[phase]
        g_small, g_big = paired_gradient_probe(grad_fn, n_samples, probe.b_small, probe.b_big, rng)
        g2_hat, s_hat = estimate_g2_s(g_small, g_big, probe.b_small, probe.b_big)
        reading = update_and_read(probe, g2_hat, s_hat)
        log.debug("noise %s: g2=%.4g s=%.4g B=%s", phase, g2_hat, s_hat, reading.b_simple)
        return {
            "phase": phase,
            "g2_hat": g2_hat,
            "s_hat": s_hat,
            "ema_g2": probe.ema_g2,
            "ema_s": probe.ema_s,
            "b_simple": reading.b_simple,
            "sigma": reading.sigma,
        }

    def sigmas(self):
        return {phase: probe.read().sigma for phase, probe in self.probes.items()}

    def state_dict(self):
        return {phase: probe.state_dict() for phase, probe in self.probes.items()}

    def load_state_dict(self, state):
        for phase, probe_state in state.items():
            self.probes[phase].load_state_dict(probe_state)
