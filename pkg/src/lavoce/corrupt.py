"""Noisy-mixture construction at exact SNR/SIR targets.

Implements the power-ratio definition SNR = P_signal / P_noise (and the
analogous SIR for interfering speech), the three fixed evaluation noise
conditions, and the training-time random recipe sampler. Multiple noise
(or interferer) sources are summed first and the aggregate is scaled to
the target ratio, so the realized ratio is exact regardless of source
count.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .dsp import Waveform, peak_normalize
from .errors import (
    EmptySignal,
    LengthMismatch,
    RateMismatch,
    SilentSignal,
    UnknownCondition,
)

__all__ = [
    "MixRecipe",
    "MixResult",
    "ManifestEntry",
    "signal_power",
    "gain_for_ratio",
    "mix",
    "sample_training_recipe",
    "preset_condition",
    "NOISE_CONDITIONS",
    "parse_manifest",
]


@dataclass(frozen=True)
class MixRecipe:
    """Target ratios and source counts for one corruption draw."""

    snr_db: float
    sir_db: float
    n_noises: int
    n_interferers: int
    seed: int = 0

    def __post_init__(self):
        if self.n_noises < 0 or self.n_interferers < 0:
            raise ValueError("source counts must be >= 0")
        if self.n_noises + self.n_interferers < 1:
            raise ValueError("need at least one corruption source")


# id -> (n_noises, snr_db, n_interferers, sir_db), least to most noisy
NOISE_CONDITIONS: dict[int, tuple[int, float, int, float]] = {
    1: (1, 0.0, 1, 0.0),
    2: (3, -5.0, 2, -5.0),
    3: (5, -10.0, 3, -10.0),
}


def preset_condition(condition_id: int, seed: int = 0) -> MixRecipe:
    """Fixed recipe for evaluation noise condition 1, 2, or 3."""
    try:
        n_noises, snr_db, n_interferers, sir_db = NOISE_CONDITIONS[condition_id]
    except KeyError:
        raise UnknownCondition(f"no noise condition {condition_id!r}") from None
    return MixRecipe(snr_db, sir_db, n_noises, n_interferers, seed)


def sample_training_recipe(rng_seed: int) -> MixRecipe:
    """Draw a training recipe: ratios ~ U[-15, 5] dB, counts in {1..5} x {1..3}."""
    rng = np.random.default_rng(rng_seed)
    snr_db = rng.uniform(-15.0, 5.0)
    sir_db = rng.uniform(-15.0, 5.0)
    n_noises = int(rng.integers(1, 6))
    n_interferers = int(rng.integers(1, 4))
    return MixRecipe(snr_db, sir_db, n_noises, n_interferers, seed=rng_seed)


def signal_power(w: Waveform) -> float:
    """Mean squared sample value over the whole clip."""
    if len(w) == 0:
        raise EmptySignal("power of an empty signal is undefined")
    return float(np.mean(w.samples * w.samples))


def gain_for_ratio(p_signal: float, p_noise: float, ratio_db: float) -> float:
    """Gain to apply to the noise so that p_signal / p(g*noise) hits ratio_db."""
    if p_signal <= 0.0 or p_noise <= 0.0:
        raise SilentSignal("power ratio needs strictly positive powers")
    return float(np.sqrt(p_signal / (p_noise * 10.0 ** (ratio_db / 10.0))))


@dataclass(frozen=True)
class MixResult:
    """A corrupted utterance plus everything needed to audit it.

    noisy and clean are peak-normalized; noise_sum/interferer_sum are the
    scaled aggregates actually added, so clean + noise_sum + interferer_sum
    reproduces the pre-normalization mixture exactly.
    """

    noisy: Waveform
    clean: Waveform
    noise_sum: Waveform | None
    interferer_sum: Waveform | None
    noise_gain: float
    interferer_gain: float
    snr_measured: float | None
    sir_measured: float | None
    recipe: MixRecipe


def _fit_length(source: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Loop (with random offset) or randomly crop a source to n samples."""
    if source.size == 0:
        raise EmptySignal("corruption source is empty")
    if source.size >= n:
        start = int(rng.integers(0, source.size - n + 1))
        return source[start : start + n]
    offset = int(rng.integers(0, source.size))
    reps = int(np.ceil((n + offset) / source.size))
    return np.tile(source, reps)[offset : offset + n]


def _aggregate(
    sources: list[Waveform], n: int, rate: int, rng: np.random.Generator
) -> np.ndarray:
    total = np.zeros(n)
    for src in sources:
        if src.sample_rate != rate:
            raise RateMismatch(f"source rate {src.sample_rate} != clean rate {rate}")
        total += _fit_length(peak_normalize(src).samples, n, rng)
    return total


def _ratio_db(p_signal: float, p_noise: float) -> float:
    return 10.0 * np.log10(p_signal / p_noise)


def mix(
    clean: Waveform,
    noises: list[Waveform],
    interferers: list[Waveform],
    recipe: MixRecipe,
) -> MixResult:
    """Corrupt a clean clip at the recipe's exact SNR/SIR.

    Every source is peak-normalized and length-fitted to the clean clip,
    the noise sources are summed and the aggregate scaled to snr_db (the
    interferers likewise to sir_db), and the mixture and clean output are
    both peak-normalized. The realized pre-normalization ratios match the
    targets to float precision.
    """
    if len(noises) != recipe.n_noises or len(interferers) != recipe.n_interferers:
        raise LengthMismatch(
            f"recipe wants {recipe.n_noises} noises and {recipe.n_interferers} "
            f"interferers, got {len(noises)} and {len(interferers)}"
        )
    rng = np.random.default_rng(recipe.seed)
    clean_norm = peak_normalize(clean)
    p_clean = signal_power(clean_norm)
    n = len(clean_norm)
    mixture = clean_norm.samples.copy()

    noise_sum = None
    noise_gain = 0.0
    snr_measured = None
    if noises:
        agg = _aggregate(noises, n, clean.sample_rate, rng)
        noise_gain = gain_for_ratio(p_clean, float(np.mean(agg * agg)), recipe.snr_db)
        scaled = agg * noise_gain
        noise_sum = Waveform(scaled, clean.sample_rate)
        snr_measured = _ratio_db(p_clean, signal_power(noise_sum))
        mixture += scaled

    interferer_sum = None
    interferer_gain = 0.0
    sir_measured = None
    if interferers:
        agg = _aggregate(interferers, n, clean.sample_rate, rng)
        interferer_gain = gain_for_ratio(
            p_clean, float(np.mean(agg * agg)), recipe.sir_db
        )
        scaled = agg * interferer_gain
        interferer_sum = Waveform(scaled, clean.sample_rate)
        sir_measured = _ratio_db(p_clean, signal_power(interferer_sum))
        mixture += scaled

    return MixResult(
        noisy=peak_normalize(Waveform(mixture, clean.sample_rate)),
        clean=clean_norm,
        noise_sum=noise_sum,
        interferer_sum=interferer_sum,
        noise_gain=noise_gain,
        interferer_gain=interferer_gain,
        snr_measured=snr_measured,
        sir_measured=sir_measured,
        recipe=recipe,
    )


# --- batch manifests ---------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    """One line of a mixing manifest."""

    clean_path: str
    noise_paths: tuple[str, ...]
    interferer_paths: tuple[str, ...]
    snr_db: float
    sir_db: float
    seed: int
    line_no: int

    def recipe(self) -> MixRecipe:
        return MixRecipe(
            self.snr_db,
            self.sir_db,
            len(self.noise_paths),
            len(self.interferer_paths),
            self.seed,
        )


def parse_manifest(path) -> list[ManifestEntry]:
    """Parse a mixing manifest.

    Line format (comma-separated, '#' starts a comment):
        clean.wav,noise1.wav;noise2.wav,intf1.wav,snr_db,sir_db,seed
    The noise and interferer fields hold semicolon-separated path lists;
    either list (not both) may be empty.
    """
    entries = []
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 6:
            raise ValueError(
                f"{path}:{line_no}: expected 6 comma-separated fields, got {len(parts)}"
            )
        clean_path, noise_field, intf_field, snr_s, sir_s, seed_s = parts
        noise_paths = tuple(p for p in noise_field.split(";") if p)
        interferer_paths = tuple(p for p in intf_field.split(";") if p)
        if not noise_paths and not interferer_paths:
            raise ValueError(f"{path}:{line_no}: no corruption sources listed")
        try:
            entry = ManifestEntry(
                clean_path,
                noise_paths,
                interferer_paths,
                float(snr_s),
                float(sir_s),
                int(seed_s),
                line_no,
            )
        except ValueError as exc:
            raise ValueError(f"{path}:{line_no}: {exc}") from None
        entries.append(entry)
    return entries


def apply_condition(entry: ManifestEntry, condition_id: int) -> ManifestEntry:
    """Rewrite a manifest entry to a preset condition's counts and ratios."""
    n_noises, snr_db, n_interferers, sir_db = NOISE_CONDITIONS.get(
        condition_id, (None, None, None, None)
    )
    if n_noises is None:
        raise UnknownCondition(f"no noise condition {condition_id!r}")
    if len(entry.noise_paths) < n_noises or len(entry.interferer_paths) < n_interferers:
        raise LengthMismatch(
            f"line {entry.line_no}: condition {condition_id} needs {n_noises} "
            f"noises and {n_interferers} interferers"
        )
    return replace(
        entry,
        noise_paths=entry.noise_paths[:n_noises],
        interferer_paths=entry.interferer_paths[:n_interferers],
        snr_db=snr_db,
        sir_db=sir_db,
    )
