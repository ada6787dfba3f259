"""Shared fixtures: small deterministic datasets and one trained model."""

from __future__ import annotations

import numpy as np
import pytest

import velsurf as vs


def small_synth_config(seed: int = 0, n_steps: int = 256) -> vs.SynthConfig:
    """Reduced geometry that keeps solver runtimes in the milliseconds."""
    return vs.SynthConfig(
        n_steps=n_steps,
        onset_ns=(30.0, 60.0),
        rise_ns=(24.0, 16.0),
        peak_mps=(2200.0, -800.0),
        ring_period_ns=40.0,
        decay_per_ns=(0.01, 0.0),
        ring_amplitude=0.015,
        seed=seed,
    )


@pytest.fixture(scope="session")
def small_cfg() -> vs.SynthConfig:
    return small_synth_config()


@pytest.fixture(scope="session")
def small_raw(small_cfg):
    raw, truth = vs.generate_dataset(small_cfg)
    return raw, truth


@pytest.fixture(scope="session")
def small_scaled(small_raw):
    raw, _ = small_raw
    scaled, scaler = vs.preprocess_dataset(raw, half_width=3)
    return scaled


@pytest.fixture(scope="session")
def small_model(small_scaled):
    hp = vs.HyperParams(gamma=0.1, C=1.0, epsilon=0.005)
    return vs.train(small_scaled, hp)


def random_instance(seed: int, n_max: int = 30):
    """One random epsilon-SVR instance in the acceptance criterion's ranges."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, n_max + 1))
    x = rng.uniform(-2.0, 2.0, size=(n, 2))
    y = 0.4 * np.sin(x[:, 0]) + 0.3 * x[:, 1] + rng.normal(0.0, 0.05, n)
    gamma = float(rng.uniform(0.05, 1.0))
    c = float(rng.uniform(0.1, 2.0))
    eps = float(rng.uniform(0.001, 0.1))
    return x, y, vs.RbfKernel(gamma=gamma), c, eps
