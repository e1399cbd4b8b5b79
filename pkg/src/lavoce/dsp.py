"""Deterministic signal-processing kernels.

STFT/iSTFT with centered frames and lossless overlap-add reconstruction,
log-mel analysis with a Slaney-style filterbank, magnitude-spectrogram
inversion (Griffin-Lim and noisy-phase), peak normalization and resampling.

All kernels are pure functions; verification paths run in float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import resample_poly

from .errors import (
    EmptySignal,
    MinFrames,
    NonFiniteSample,
    ShapeMismatch,
    SilentSignal,
)

__all__ = [
    "AudioParams",
    "Waveform",
    "ComplexSpectrogram",
    "MelSpectrogram",
    "stft",
    "istft",
    "log_mel",
    "mel_filterbank",
    "mel_to_linear",
    "griffin_lim",
    "noisy_phase_invert",
    "magnitude_with_noisy_phase",
    "peak_normalize",
    "resample",
]


# --- domain types ----------------------------------------------------------

@dataclass(frozen=True)
class AudioParams:
    """STFT/mel analysis configuration.

    The defaults are the canonical configuration used throughout:
    1024-point FFT with a 1024-sample Hann window, hop 256, 80 mel bands
    spanning 0-8000 Hz at 16 kHz, natural-log mel with a 1e-5 clamp floor.
    """

    fft_size: int = 1024
    win_size: int = 1024
    hop: int = 256
    n_mels: int = 80
    f_min: float = 0.0
    f_max: float = 8000.0
    log_floor: float = 1e-5
    sample_rate: int = 16000

    def __post_init__(self):
        if not (0 < self.win_size <= self.fft_size):
            raise ValueError("need 0 < win_size <= fft_size")
        if not (0 < self.hop <= self.win_size):
            raise ValueError("need 0 < hop <= win_size")
        if self.win_size % self.hop != 0 or self.win_size // self.hop < 2:
            # Periodic-Hann COLA needs >= 2 hops per window, an integer count.
            raise ValueError("win_size must be an integer multiple (>= 2) of hop")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if not (0 <= self.f_min < self.f_max <= self.sample_rate / 2):
            raise ValueError("need 0 <= f_min < f_max <= sample_rate/2")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def frame_rate(self) -> float:
        """Analysis frames per second (one frame per hop)."""
        return self.sample_rate / self.hop

    def window(self) -> np.ndarray:
        """Periodic Hann window of win_size samples (satisfies COLA)."""
        n = np.arange(self.win_size)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.win_size)


@dataclass(frozen=True)
class Waveform:
    """Mono sample sequence with its sample rate.

    Samples are nominally in [-1, 1]; only finiteness is enforced.
    """

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ShapeMismatch(f"waveform must be 1-D, got shape {samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if samples.size and not np.isfinite(samples).all():
            raise NonFiniteSample("waveform contains NaN or Inf")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class ComplexSpectrogram:
    """Complex STFT frames, shape (T, fft_size//2 + 1)."""

    frames: np.ndarray
    params: AudioParams = field(default_factory=AudioParams)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.complex128)
        if frames.ndim != 2 or frames.shape[1] != self.params.n_bins:
            raise ShapeMismatch(
                f"expected (T, {self.params.n_bins}) frames, got {frames.shape}"
            )
        if frames.shape[0] < 1:
            raise ShapeMismatch("spectrogram needs at least one frame")
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def magnitude(self) -> np.ndarray:
        return np.abs(self.frames)

    def phase(self) -> np.ndarray:
        return np.angle(self.frames)


@dataclass(frozen=True)
class MelSpectrogram:
    """Log-mel magnitude frames, shape (T, n_mels), floored at log(log_floor)."""

    frames: np.ndarray
    params: AudioParams = field(default_factory=AudioParams)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[1] != self.params.n_mels:
            raise ShapeMismatch(
                f"expected (T, {self.params.n_mels}) frames, got {frames.shape}"
            )
        if frames.shape[0] < 1:
            raise ShapeMismatch("mel spectrogram needs at least one frame")
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


# --- framing helpers ---------------------------------------------------------

def _reflect_pad(x: np.ndarray, pad: int) -> np.ndarray:
    """Reflection-pad a 1-D array, cycling the reflection when pad >= len(x)."""
    if pad == 0:
        return x
    n = x.size
    if n == 1:
        return np.full(n + 2 * pad, x[0])
    # Index arithmetic for repeated reflection without the edge sample doubled:
    # positions ...-2,-1,0,1,... map onto a period-(2n-2) triangle wave.
    idx = np.arange(-pad, n + pad)
    period = 2 * n - 2
    idx = np.abs(np.mod(idx, period))
    idx = np.where(idx >= n, period - idx, idx)
    return x[idx]


def _frame(x: np.ndarray, win_size: int, hop: int) -> np.ndarray:
    """View x as overlapping frames of win_size every hop samples."""
    n_frames = 1 + (x.size - win_size) // hop
    stride = x.strides[0]
    return np.lib.stride_tricks.as_strided(
        x, shape=(n_frames, win_size), strides=(hop * stride, stride)
    )


# --- STFT / iSTFT ------------------------------------------------------------

def stft(w: Waveform, p: AudioParams | None = None) -> ComplexSpectrogram:
    """Short-time Fourier transform with centered frames.

    The signal is reflection-padded by win_size//2 on each side so frame t
    is centered on sample t*hop; the frame count is 1 + len(w)//hop.
    """
    p = p or AudioParams()
    x = w.samples
    if x.size == 0:
        raise EmptySignal("cannot compute STFT of an empty signal")
    pad = p.win_size // 2
    padded = _reflect_pad(x, pad)
    n_frames = 1 + x.size // p.hop
    frames = _frame(padded, p.win_size, p.hop)[:n_frames] * p.window()
    spec = np.fft.rfft(frames, n=p.fft_size, axis=1)
    return ComplexSpectrogram(spec, p)


def istft(s: ComplexSpectrogram) -> Waveform:
    """Inverse STFT by overlap-add with squared-window normalization.

    Returns (T-1)*hop samples, the exact span reconstructible from T
    centered frames after removing the reflection padding.
    """
    p = s.params
    t = s.n_frames
    if t < 2:
        raise MinFrames("istft needs at least 2 frames")
    win = p.window()
    frames = np.fft.irfft(s.frames, n=p.fft_size, axis=1)[:, : p.win_size] * win
    total = (t - 1) * p.hop + p.win_size
    num = np.zeros(total)
    den = np.zeros(total)
    win_sq = win * win
    for i in range(t):
        start = i * p.hop
        num[start : start + p.win_size] += frames[i]
        den[start : start + p.win_size] += win_sq
    pad = p.win_size // 2
    out_len = (t - 1) * p.hop
    num = num[pad : pad + out_len]
    den = den[pad : pad + out_len]
    den = np.where(den > 1e-10, den, 1.0)
    return Waveform(num / den, p.sample_rate)


# --- mel analysis --------------------------------------------------------------

def _hz_to_mel(f: np.ndarray) -> np.ndarray:
    """Slaney-style mel scale: linear below 1 kHz, log above."""
    f = np.asarray(f, dtype=np.float64)
    f_sp = 200.0 / 3.0
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    lin = f / f_sp
    with np.errstate(divide="ignore"):
        log = min_log_mel + np.log(np.maximum(f, 1e-12) / min_log_hz) / logstep
    return np.where(f >= min_log_hz, log, lin)


def _mel_to_hz(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    f_sp = 200.0 / 3.0
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    lin = m * f_sp
    log = min_log_hz * np.exp(logstep * (m - min_log_mel))
    return np.where(m >= min_log_mel, log, lin)


def mel_filterbank(p: AudioParams | None = None) -> np.ndarray:
    """Triangular mel filterbank, shape (n_mels, n_bins).

    Slaney-style mel spacing with Slaney area normalization (each filter
    scaled by 2 / bandwidth in Hz), matching the convention used by
    HiFi-GAN-family vocoders.
    """
    p = p or AudioParams()
    fft_freqs = np.linspace(0.0, p.sample_rate / 2.0, p.n_bins)
    mel_edges = np.linspace(_hz_to_mel(p.f_min), _hz_to_mel(p.f_max), p.n_mels + 2)
    hz = _mel_to_hz(mel_edges)
    lower, center, upper = hz[:-2, None], hz[1:-1, None], hz[2:, None]
    up = (fft_freqs[None, :] - lower) / (center - lower)
    down = (upper - fft_freqs[None, :]) / (upper - center)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb *= 2.0 / (upper - lower)
    return fb


def log_mel(w: Waveform, p: AudioParams | None = None) -> MelSpectrogram:
    """Natural-log mel spectrogram of a waveform, shape (T, n_mels).

    |STFT| is projected through the mel filterbank, clamped at log_floor,
    then log-compressed, so silence maps to log(log_floor) exactly.
    """
    p = p or AudioParams()
    spec = stft(w, p)
    return mel_from_magnitude(spec.magnitude(), p)


def mel_from_magnitude(mag: np.ndarray, p: AudioParams | None = None) -> MelSpectrogram:
    """Project linear STFT magnitudes (T, n_bins) to a log-mel spectrogram."""
    p = p or AudioParams()
    mag = np.asarray(mag, dtype=np.float64)
    if mag.ndim != 2 or mag.shape[1] != p.n_bins:
        raise ShapeMismatch(f"expected (T, {p.n_bins}) magnitudes, got {mag.shape}")
    mel = mag @ mel_filterbank(p).T
    return MelSpectrogram(np.log(np.maximum(mel, p.log_floor)), p)


def mel_to_linear(mel: MelSpectrogram) -> np.ndarray:
    """Approximate linear magnitudes (T, n_bins) from a log-mel spectrogram.

    Exponentiates and applies the Moore-Penrose pseudo-inverse of the mel
    filterbank, clamping negative magnitudes to zero.
    """
    fb = mel_filterbank(mel.params)
    lin = np.exp(mel.frames) @ np.linalg.pinv(fb).T
    return np.maximum(lin, 0.0)


# --- spectrogram inversion -------------------------------------------------------

def griffin_lim(
    mel: MelSpectrogram,
    iters: int = 32,
    return_convergence: bool = False,
) -> Waveform | tuple[Waveform, np.ndarray]:
    """Invert a log-mel spectrogram by Griffin-Lim phase reconstruction.

    Zero-phase initialization, no momentum. The optional convergence
    trajectory holds the spectral-convergence distance
    ||(|STFT(x_k)| - M)||_F / ||M||_F after each iteration.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    p = mel.params
    target = mel_to_linear(mel)
    spec = ComplexSpectrogram(target.astype(np.complex128), p)
    target_norm = np.linalg.norm(target)
    distances = np.empty(iters)
    for k in range(iters):
        x = istft(spec)
        estimate = stft(x, p).frames
        distances[k] = np.linalg.norm(np.abs(estimate) - target) / max(
            target_norm, 1e-300
        )
        phase = np.angle(estimate)
        spec = ComplexSpectrogram(target * np.exp(1j * phase), p)
    out = peak_normalize(istft(spec))
    if return_convergence:
        return out, distances
    return out


def magnitude_with_noisy_phase(
    mag: np.ndarray, noisy: Waveform, p: AudioParams | None = None
) -> Waveform:
    """iSTFT of the given linear magnitudes paired with the noisy phase.

    Frame counts may differ by at most one (both are truncated to the
    shorter); larger mismatches violate the alignment contract.
    """
    p = p or AudioParams()
    noisy_spec = stft(noisy, p)
    mag = np.asarray(mag, dtype=np.float64)
    if mag.ndim != 2 or mag.shape[1] != p.n_bins:
        raise ShapeMismatch(f"expected (T, {p.n_bins}) magnitudes, got {mag.shape}")
    t_pred, t_noisy = mag.shape[0], noisy_spec.n_frames
    if abs(t_pred - t_noisy) > 1:
        raise ShapeMismatch(
            f"frame counts differ by {abs(t_pred - t_noisy)} (> 1): "
            f"{t_pred} predicted vs {t_noisy} noisy"
        )
    t = min(t_pred, t_noisy)
    phase = noisy_spec.phase()[:t]
    spec = ComplexSpectrogram(mag[:t] * np.exp(1j * phase), p)
    return istft(spec)


def noisy_phase_invert(pred_mel: MelSpectrogram, noisy: Waveform) -> Waveform:
    """Invert a predicted log-mel spectrogram using the noisy input's phase."""
    if pred_mel.params.sample_rate != noisy.sample_rate:
        raise ShapeMismatch("mel params and noisy waveform disagree on sample rate")
    return magnitude_with_noisy_phase(mel_to_linear(pred_mel), noisy, pred_mel.params)


# --- normalization / resampling ---------------------------------------------------

def peak_normalize(w: Waveform) -> Waveform:
    """Scale so the largest absolute sample is exactly 1."""
    if len(w) == 0:
        raise EmptySignal("cannot normalize an empty signal")
    peak = np.abs(w.samples).max()
    if peak == 0.0:
        raise SilentSignal("cannot peak-normalize an all-zero signal")
    return Waveform(w.samples / peak, w.sample_rate)


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Polyphase resampling to target_rate; output length round(n*target/source)."""
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == w.sample_rate:
        return Waveform(w.samples.copy(), w.sample_rate)
    if len(w) == 0:
        return Waveform(np.zeros(0), target_rate)
    g = np.gcd(int(target_rate), int(w.sample_rate))
    up, down = target_rate // g, w.sample_rate // g
    y = resample_poly(w.samples, up, down)
    out_len = int(round(len(w) * target_rate / w.sample_rate))
    if y.size < out_len:
        y = np.concatenate([y, np.zeros(out_len - y.size)])
    return Waveform(y[:out_len], target_rate)
