"""Shared fixtures: deterministic speech-like signals and noise clips."""
import numpy as np
import pytest

from lavoce.dsp import Waveform


def speech_like(seconds: float = 1.0, rate: int = 16000, seed: int = 0) -> Waveform:
    """Harmonic stack with a wandering f0, amplitude envelope, noise floor.

    Broadband enough to populate every third-octave band and keep mel
    cells above the log floor, which pure tones do not.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(int(seconds * rate)) / rate
    f0 = 120.0 + 40.0 * np.sin(2 * np.pi * 1.7 * t + seed)
    phase = 2 * np.pi * np.cumsum(f0) / rate
    x = sum(np.sin(h * phase) / h for h in range(1, 9))
    x *= 0.4 + 0.6 * np.abs(np.sin(2 * np.pi * 2.3 * t + seed))
    x += 0.01 * rng.standard_normal(t.size)
    return Waveform(x / np.max(np.abs(x)), rate)


def noise_clip(n: int, rate: int = 16000, seed: int = 0) -> Waveform:
    rng = np.random.default_rng(1000 + seed)
    return Waveform(rng.standard_normal(n), rate)


@pytest.fixture
def speech():
    return speech_like(1.0)
