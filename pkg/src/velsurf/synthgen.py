"""Deterministic synthetic velocimetry generator.

Produces datasets with the same geometry as the real measurement campaign
(five coupon thicknesses from 0.25 in to 0.5 in on a 2 ns time step, 1656
samples per record) plus a known noiseless ground truth, so end-to-end
behavior can be checked against an oracle.  The waveform is a smooth
rise-to-plateau with decaying ringing:

    v(t, w) = peak(w) * S((t - t0(w)) / rise(w))
                      * (1 + ring_amp * sin(2 pi t / ring_period) * exp(-decay(w) * t))

where S is a C-infinity unit step that is exactly 0 for arguments <= 0 and
exactly 1 for arguments >= 1, and peak/t0/rise/decay vary affinely with
thickness.  The shape resembles shocked free-surface records; it does not
claim physical fidelity.  Noise is multiplicative Gaussian (instrument
accuracy is quoted in percent terms), applied per sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data_model import ExperimentSeries, RawDataset
from .errors import DataError

PAPER_THICKNESSES_IN = (0.25, 0.3125, 0.375, 0.4375, 0.5)


@dataclass(frozen=True)
class SynthConfig:
    """Generator knobs; every law is (intercept, slope) against thickness."""

    thicknesses_in: tuple[float, ...] = PAPER_THICKNESSES_IN
    n_steps: int = 1656
    dt_ns: float = 2.0
    peak_mps: tuple[float, float] = (2400.0, -1600.0)
    onset_ns: tuple[float, float] = (150.0, 900.0)
    rise_ns: tuple[float, float] = (20.0, 40.0)
    decay_per_ns: tuple[float, float] = (0.004, 0.0)
    ring_amplitude: float = 0.02
    ring_period_ns: float = 60.0
    noise_rel: float = 0.04
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "thicknesses_in", tuple(self.thicknesses_in))
        if not self.thicknesses_in:
            raise DataError("need at least one thickness")
        if self.n_steps < 2 or self.dt_ns <= 0:
            raise DataError("n_steps must be >= 2 and dt positive")
        if not 0.0 <= self.noise_rel < 1.0:
            raise DataError(f"noise_rel must be in [0, 1), got {self.noise_rel}")
        if self.ring_period_ns <= 0:
            raise DataError("ring_period_ns must be positive")
        for name in ("peak_mps", "onset_ns", "rise_ns", "decay_per_ns"):
            a, b = getattr(self, name)
            for w in self.thicknesses_in:
                if name != "decay_per_ns" and a + b * w <= 0:
                    raise DataError(f"{name} law is non-positive at thickness {w}")
                if name == "decay_per_ns" and a + b * w < 0:
                    raise DataError(f"{name} law is negative at thickness {w}")

    def law(self, name: str, w: float) -> float:
        a, b = getattr(self, name)
        return a + b * w


def smooth_step(u) -> np.ndarray:
    """C-infinity step: exactly 0 for u <= 0, exactly 1 for u >= 1."""
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        rising = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
        falling = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1.0 - u, 1.0)), 0.0)
    return rising / (rising + falling)


def profile_value(t_ns, w_in, cfg: SynthConfig) -> np.ndarray:
    """Noiseless ground-truth velocity at any (time, thickness); vectorized."""
    t = np.asarray(t_ns, dtype=float)
    w = np.asarray(w_in, dtype=float)
    peak = cfg.peak_mps[0] + cfg.peak_mps[1] * w
    onset = cfg.onset_ns[0] + cfg.onset_ns[1] * w
    rise = cfg.rise_ns[0] + cfg.rise_ns[1] * w
    decay = cfg.decay_per_ns[0] + cfg.decay_per_ns[1] * w
    envelope = smooth_step((t - onset) / rise)
    ring = 1.0 + cfg.ring_amplitude * np.sin(2.0 * math.pi * t / cfg.ring_period_ns) \
        * np.exp(-decay * t)
    return peak * envelope * ring


def generate_profile(w_in: float, cfg: SynthConfig, noiseless: bool = False) -> ExperimentSeries:
    """One experiment record at thickness ``w_in``.

    Noise is seeded by (cfg.seed, thickness position) so a series depends
    only on the seed and its own thickness, not on generation order.
    """
    times = np.arange(cfg.n_steps, dtype=float) * cfg.dt_ns
    v = profile_value(times, w_in, cfg)
    if not noiseless and cfg.noise_rel > 0.0:
        try:
            idx = cfg.thicknesses_in.index(w_in)
        except ValueError:
            idx = len(cfg.thicknesses_in)
        rng = np.random.default_rng([cfg.seed, idx])
        v = v * (1.0 + cfg.noise_rel * rng.standard_normal(cfg.n_steps))
    return ExperimentSeries(
        id=f"synth-{w_in:.4f}in",
        thickness_in=float(w_in),
        dt_ns=cfg.dt_ns,
        velocities=v,
    )


def generate_dataset(cfg: SynthConfig) -> tuple[RawDataset, Callable]:
    """All configured thicknesses plus the noiseless ground-truth evaluator.

    The evaluator accepts any (t_ns, w_in) inside or between the generated
    records, not just grid values.
    """
    dataset = RawDataset(experiments=tuple(
        generate_profile(w, cfg) for w in cfg.thicknesses_in
    ))

    def ground_truth(t_ns, w_in):
        return profile_value(t_ns, w_in, cfg)

    return dataset, ground_truth
