"""Adversarial, spectral, and feature-matching losses (least-squares GAN).

Reductions: every L1/L2 term is a mean over elements; sub-discriminators
and layers contribute through plain sums.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dsp import AudioParams, Waveform, log_mel
from ..errors import ShapeMismatch
from .vocoder import DiscOutput

__all__ = ["LossWeights", "generator_loss", "discriminator_loss", "GeneratorLoss"]


@dataclass(frozen=True)
class LossWeights:
    """Term weights: adversarial, spectral, feature matching."""

    adv: float = 1.0
    spec: float = 45.0
    fm: float = 2.0

    def __post_init__(self):
        if min(self.adv, self.spec, self.fm) < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass(frozen=True)
class GeneratorLoss:
    total: float
    adv: float
    spec: float
    fm: float


def _check_ensembles(real: list, fake: list) -> None:
    if len(real) != len(fake):
        raise ShapeMismatch(
            f"{len(real)} real vs {len(fake)} fake sub-discriminator outputs"
        )


def generator_loss(
    w_clean: Waveform,
    gen_out: Waveform,
    disc_real: list,
    disc_fake: list,
    weights: LossWeights | None = None,
    params: AudioParams | None = None,
) -> GeneratorLoss:
    """Weighted generator objective.

    adv: sum over sub-discriminators of mean((score_fake - 1)^2).
    spec: mean absolute difference between the log-mels of the clean and
    generated waveforms.
    fm: sum over sub-discriminators and layers of the mean absolute
    feature difference (the L1 norm divided by the feature element count).
    """
    weights = weights or LossWeights()
    params = params or AudioParams()
    _check_ensembles(disc_real, disc_fake)

    adv = 0.0
    for out in disc_fake:
        score = np.asarray(out.score if isinstance(out, DiscOutput) else out)
        adv += float(np.mean((score - 1.0) ** 2))

    mel_clean = log_mel(w_clean, params).frames
    mel_fake = log_mel(gen_out, params).frames
    if mel_clean.shape != mel_fake.shape:
        raise ShapeMismatch(
            f"log-mel shapes differ: clean {mel_clean.shape} vs "
            f"generated {mel_fake.shape}"
        )
    spec = float(np.mean(np.abs(mel_clean - mel_fake)))

    fm = 0.0
    for real_out, fake_out in zip(disc_real, disc_fake):
        if len(real_out.features) != len(fake_out.features):
            raise ShapeMismatch(
                f"feature list lengths differ: {len(real_out.features)} vs "
                f"{len(fake_out.features)}"
            )
        for fr, ff in zip(real_out.features, fake_out.features):
            if fr.shape != ff.shape:
                raise ShapeMismatch(
                    f"feature shapes differ: {fr.shape} vs {ff.shape}"
                )
            fm += float(np.mean(np.abs(fr - ff)))

    total = weights.adv * adv + weights.spec * spec + weights.fm * fm
    return GeneratorLoss(total, adv, spec, fm)


def discriminator_loss(disc_real: list, disc_fake: list) -> float:
    """Sum over sub-discriminators of mean((real - 1)^2) + mean(fake^2)."""
    _check_ensembles(disc_real, disc_fake)
    total = 0.0
    for real_out, fake_out in zip(disc_real, disc_fake):
        real = np.asarray(
            real_out.score if isinstance(real_out, DiscOutput) else real_out
        )
        fake = np.asarray(
            fake_out.score if isinstance(fake_out, DiscOutput) else fake_out
        )
        total += float(np.mean((real - 1.0) ** 2)) + float(np.mean(fake * fake))
    return total
