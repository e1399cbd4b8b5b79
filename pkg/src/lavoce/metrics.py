"""Objective quality and intelligibility metrics plus improvement reporting.

Implemented from scratch: frame-aligned mel-cepstral distance (MCD),
STOI and ESTOI, and spectrogram MSE. PESQ-WB and ViSQOL are standardized
algorithms and are reached only through the external command adapter.
The improvement convention is metric(enhanced, ref) - metric(noisy, ref),
reported with an orientation flag (lower-better for MCD and Spec. MSE).
"""
from __future__ import annotations

import csv
import io
import json
import re
import shlex
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.fft import dct

from .audio_io import write_wav
from .dsp import AudioParams, Waveform, log_mel, resample, stft
from .errors import (
    EmptySignal,
    ExternalUnavailable,
    LengthMismatch,
    ParseFailure,
    RateMismatch,
    TooShort,
)

__all__ = [
    "mcd",
    "stoi",
    "estoi",
    "spec_mse",
    "improvement",
    "MetricSpec",
    "METRICS",
    "CANONICAL_ORDER",
    "external_metric_adapter",
    "MetricValue",
    "UtteranceReport",
    "EvalReport",
    "evaluate_utterance",
]

EPS = np.finfo(np.float64).eps

# intelligibility front-end constants (cited originals)
_STOI_RATE = 10_000
_STOI_FRAME = 256
_STOI_HOP = 128
_STOI_FFT = 512
_STOI_BANDS = 15
_STOI_MIN_FREQ = 150.0
_STOI_SEG = 30          # 384 ms at the 128-sample hop
_STOI_CLIP_DB = -15.0
_STOI_DYN_RANGE = 40.0

_MCD_COEFFS = 13        # cepstral coefficients 1..13, c0 excluded
_MCD_SCALE = 10.0 / np.log(10.0)


def _check_rates(ref: Waveform, deg: Waveform) -> None:
    if ref.sample_rate != deg.sample_rate:
        raise RateMismatch(
            f"ref at {ref.sample_rate} Hz, degraded at {deg.sample_rate} Hz"
        )


def _truncate_pair(ref: Waveform, deg: Waveform) -> tuple[np.ndarray, np.ndarray]:
    n = min(len(ref), len(deg))
    if n == 0:
        raise EmptySignal("cannot compare empty signals")
    return ref.samples[:n], deg.samples[:n]


# --- mel-cepstral distance ----------------------------------------------------

def mcd(ref: Waveform, deg: Waveform, params: AudioParams | None = None) -> float:
    """Frame-aligned mean cepstral distance, in dB.

    Cepstra are the DCT-II of natural-log mel frames; coefficients 1..13
    enter the distance (c0 carries overall gain and is excluded), each
    frame scored as (10/ln 10) * sqrt(2 * sum of squared differences).
    """
    params = params or AudioParams()
    _check_rates(ref, deg)
    if abs(len(ref) - len(deg)) > params.hop:
        raise LengthMismatch(
            f"length difference {abs(len(ref) - len(deg))} exceeds one hop "
            f"({params.hop} samples)"
        )
    r, d = _truncate_pair(ref, deg)
    mel_r = log_mel(Waveform(r, ref.sample_rate), params).frames
    mel_d = log_mel(Waveform(d, deg.sample_rate), params).frames
    c_r = dct(mel_r, type=2, axis=1)[:, 1 : _MCD_COEFFS + 1]
    c_d = dct(mel_d, type=2, axis=1)[:, 1 : _MCD_COEFFS + 1]
    diff = c_r - c_d
    per_frame = _MCD_SCALE * np.sqrt(2.0 * np.sum(diff * diff, axis=1))
    return float(np.mean(per_frame))


# --- STOI / ESTOI -------------------------------------------------------------

def _interior_hann(n: int) -> np.ndarray:
    return np.hanning(n + 2)[1:-1]


def _frame_rows(x: np.ndarray, framelen: int, hop: int) -> np.ndarray:
    starts = range(0, len(x) - framelen, hop)
    return np.array([x[i : i + framelen] for i in starts])


def _remove_silent_frames(
    x: np.ndarray, y: np.ndarray, dyn_range: float, framelen: int, hop: int
) -> tuple[np.ndarray, np.ndarray]:
    """Drop frames more than dyn_range dB below the loudest ref frame.

    The mask comes from the reference alone and is applied to both signals,
    which are then rebuilt by overlap-add of the windowed kept frames.
    """
    w = _interior_hann(framelen)
    x_frames = _frame_rows(x, framelen, hop)
    if x_frames.size == 0:
        raise TooShort("signal shorter than one analysis frame")
    x_frames = x_frames * w
    y_frames = _frame_rows(y, framelen, hop) * w
    energies = 20.0 * np.log10(np.linalg.norm(x_frames, axis=1) + EPS)
    mask = energies > energies.max() - dyn_range
    x_frames, y_frames = x_frames[mask], y_frames[mask]
    n_kept = x_frames.shape[0]
    n_out = (n_kept - 1) * hop + framelen
    x_sil = np.zeros(n_out)
    y_sil = np.zeros(n_out)
    for i in range(n_kept):
        x_sil[i * hop : i * hop + framelen] += x_frames[i]
        y_sil[i * hop : i * hop + framelen] += y_frames[i]
    return x_sil, y_sil


def _stft_magnitude(x: np.ndarray) -> np.ndarray:
    frames = _frame_rows(x, _STOI_FRAME, _STOI_HOP)
    if frames.size == 0:
        raise TooShort("fewer than one spectral frame after silence removal")
    return np.abs(np.fft.rfft(frames * _interior_hann(_STOI_FRAME), _STOI_FFT))


def _third_octave_matrix() -> np.ndarray:
    """Boolean band matrix (15 x 257): one-third-octave bands from 150 Hz,
    edges snapped to the nearest FFT bin."""
    f = np.linspace(0, _STOI_RATE, _STOI_FFT + 1)[: _STOI_FFT // 2 + 1]
    k = np.arange(_STOI_BANDS, dtype=np.float64)
    low = _STOI_MIN_FREQ * 2.0 ** ((2 * k - 1) / 6)
    high = _STOI_MIN_FREQ * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((_STOI_BANDS, f.size))
    for i in range(_STOI_BANDS):
        lo_bin = int(np.argmin(np.square(f - low[i])))
        hi_bin = int(np.argmin(np.square(f - high[i])))
        obm[i, lo_bin:hi_bin] = 1.0
    return obm


_OBM = _third_octave_matrix()


def _band_segments(ref: Waveform, deg: Waveform) -> tuple[np.ndarray, np.ndarray]:
    """Shared STOI/ESTOI front-end.

    Returns (J, 15, 30) stacks of one-third-octave band envelopes for the
    reference and the degraded signal, one 30-frame segment per step.
    """
    _check_rates(ref, deg)
    r, d = _truncate_pair(ref, deg)
    rate = ref.sample_rate
    r10 = resample(Waveform(r, rate), _STOI_RATE).samples
    d10 = resample(Waveform(d, rate), _STOI_RATE).samples
    r10, d10 = _remove_silent_frames(
        r10, d10, _STOI_DYN_RANGE, _STOI_FRAME, _STOI_HOP
    )
    spec_r = _stft_magnitude(r10).T
    spec_d = _stft_magnitude(d10).T
    x_bands = np.sqrt(_OBM @ (spec_r * spec_r))
    y_bands = np.sqrt(_OBM @ (spec_d * spec_d))
    n_frames = x_bands.shape[1]
    if n_frames < _STOI_SEG:
        raise TooShort(
            f"need {_STOI_SEG} active frames (384 ms of speech), got {n_frames}"
        )
    x_seg = np.stack(
        [x_bands[:, m - _STOI_SEG : m] for m in range(_STOI_SEG, n_frames + 1)]
    )
    y_seg = np.stack(
        [y_bands[:, m - _STOI_SEG : m] for m in range(_STOI_SEG, n_frames + 1)]
    )
    return x_seg, y_seg


def stoi(ref: Waveform, deg: Waveform) -> float:
    """Short-time objective intelligibility of deg against ref."""
    x, y = _band_segments(ref, deg)
    scale = np.linalg.norm(x, axis=2, keepdims=True) / (
        np.linalg.norm(y, axis=2, keepdims=True) + EPS
    )
    y_scaled = y * scale
    clip = 10.0 ** (-_STOI_CLIP_DB / 20.0)
    y_prime = np.minimum(y_scaled, x * (1.0 + clip))
    x = x - x.mean(axis=2, keepdims=True)
    y_prime = y_prime - y_prime.mean(axis=2, keepdims=True)
    x = x / (np.linalg.norm(x, axis=2, keepdims=True) + EPS)
    y_prime = y_prime / (np.linalg.norm(y_prime, axis=2, keepdims=True) + EPS)
    return float(np.sum(x * y_prime) / (x.shape[0] * _STOI_BANDS))


def _row_col_normalize(seg: np.ndarray) -> np.ndarray:
    # rows: each band's 30-frame trajectory; columns: each frame's band vector
    seg = seg - seg.mean(axis=2, keepdims=True)
    seg = seg / (np.linalg.norm(seg, axis=2, keepdims=True) + EPS)
    seg = seg - seg.mean(axis=1, keepdims=True)
    return seg / (np.linalg.norm(seg, axis=1, keepdims=True) + EPS)


def estoi(ref: Waveform, deg: Waveform) -> float:
    """Extended STOI: row- and column-normalized segment correlations."""
    x, y = _band_segments(ref, deg)
    x_n = _row_col_normalize(x)
    y_n = _row_col_normalize(y)
    return float(np.sum(x_n * y_n / _STOI_SEG) / x_n.shape[0])


# --- spectrogram distance -----------------------------------------------------

def spec_mse(ref: Waveform, deg: Waveform, params: AudioParams | None = None) -> float:
    """Mean squared error between STFT magnitudes, over all (frame, bin)."""
    params = params or AudioParams()
    _check_rates(ref, deg)
    r, d = _truncate_pair(ref, deg)
    mag_r = stft(Waveform(r, ref.sample_rate), params).magnitude()
    mag_d = stft(Waveform(d, deg.sample_rate), params).magnitude()
    t = min(mag_r.shape[0], mag_d.shape[0])
    diff = mag_r[:t] - mag_d[:t]
    return float(np.mean(diff * diff))


# --- improvement convention and the metric registry ----------------------------

@dataclass(frozen=True)
class MetricSpec:
    fn: object                 # callable (ref, deg) -> float
    higher_better: bool
    display: str


METRICS: dict[str, MetricSpec] = {
    "mcd": MetricSpec(mcd, False, "MCD"),
    "stoi": MetricSpec(stoi, True, "STOI"),
    "estoi": MetricSpec(estoi, True, "ESTOI"),
    "spec_mse": MetricSpec(spec_mse, False, "Spec.MSE"),
}

# report column order; adapters slot in after MCD
CANONICAL_ORDER = ["mcd", "pesq_wb", "visqol", "stoi", "estoi", "spec_mse"]


def improvement(metric, ref: Waveform, noisy: Waveform, enhanced: Waveform) -> float:
    """metric(enhanced vs ref) - metric(noisy vs ref).

    Positive improvement is better for higher-better metrics and worse for
    lower-better ones; the orientation flag travels with the report.
    """
    fn = METRICS[metric].fn if isinstance(metric, str) else metric
    return fn(ref, enhanced) - fn(ref, noisy)


# --- external metric adapters ---------------------------------------------------

_FLOAT_RE = re.compile(r"[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?")


def external_metric_adapter(name: str, command_template: str):
    """Wrap an external scorer as a (ref, deg) -> float metric.

    The template is split shell-style and each token formatted with {ref}
    and {deg} WAV paths. The last float in the command's stdout is the
    score. Raises ExternalUnavailable when the executable is missing and
    ParseFailure (with captured stderr) when no score can be read.
    """

    def metric_fn(ref: Waveform, deg: Waveform) -> float:
        argv_template = shlex.split(command_template)
        if not argv_template:
            raise ExternalUnavailable(f"{name}: empty command template")
        exe = argv_template[0]
        if shutil.which(exe) is None and not Path(exe).exists():
            raise ExternalUnavailable(f"{name}: executable {exe!r} not found")
        with tempfile.TemporaryDirectory(prefix=f"lavoce-{name}-") as tmp:
            ref_path = str(Path(tmp) / "ref.wav")
            deg_path = str(Path(tmp) / "deg.wav")
            write_wav(ref_path, ref)
            write_wav(deg_path, deg)
            argv = [tok.format(ref=ref_path, deg=deg_path) for tok in argv_template]
            try:
                proc = subprocess.run(argv, capture_output=True, text=True)
            except FileNotFoundError:
                raise ExternalUnavailable(
                    f"{name}: executable {exe!r} not found"
                ) from None
            if proc.returncode != 0:
                raise ParseFailure(
                    f"{name}: exit {proc.returncode}; stderr: {proc.stderr.strip()}"
                )
            floats = _FLOAT_RE.findall(proc.stdout)
            if not floats:
                raise ParseFailure(
                    f"{name}: no numeric score in output {proc.stdout!r}; "
                    f"stderr: {proc.stderr.strip()}"
                )
            return float(floats[-1])

    metric_fn.__name__ = name
    return metric_fn


# --- reports --------------------------------------------------------------------

@dataclass(frozen=True)
class MetricValue:
    raw_enhanced: float
    raw_noisy: float
    higher_better: bool

    @property
    def improvement(self) -> float:
        return self.raw_enhanced - self.raw_noisy


@dataclass
class UtteranceReport:
    utt: str
    values: dict[str, MetricValue] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)


def evaluate_utterance(
    utt: str,
    ref: Waveform,
    noisy: Waveform,
    enhanced: Waveform,
    metric_fns: dict[str, MetricSpec],
) -> UtteranceReport:
    """Score one utterance on every metric, itemizing per-metric failures."""
    report = UtteranceReport(utt)
    for metric_id, spec in metric_fns.items():
        try:
            raw_e = float(spec.fn(ref, enhanced))
            raw_n = float(spec.fn(ref, noisy))
        except Exception as exc:
            report.errors[metric_id] = f"{type(exc).__name__}: {exc}"
            continue
        report.values[metric_id] = MetricValue(raw_e, raw_n, spec.higher_better)
    return report


def _ordered(metric_ids) -> list[str]:
    ids = list(metric_ids)
    known = [m for m in CANONICAL_ORDER if m in ids]
    return known + [m for m in ids if m not in known]


@dataclass
class EvalReport:
    utterances: list[UtteranceReport]
    metric_specs: dict[str, MetricSpec]

    def metric_order(self) -> list[str]:
        return _ordered(self.metric_specs.keys())

    def aggregate(self) -> dict[str, float]:
        """Mean improvement per metric over utterances that produced one."""
        out = {}
        for metric_id in self.metric_order():
            imps = [
                u.values[metric_id].improvement
                for u in self.utterances
                if metric_id in u.values
            ]
            if imps:
                out[metric_id] = float(np.mean(imps))
        return out

    def to_json(self) -> str:
        body = {
            "utterances": {
                u.utt: {
                    "metrics": {
                        m: {
                            "enhanced": v.raw_enhanced,
                            "noisy": v.raw_noisy,
                            "improvement": v.improvement,
                            "higher_better": v.higher_better,
                        }
                        for m, v in u.values.items()
                    },
                    "errors": u.errors,
                }
                for u in self.utterances
            },
            "aggregate_improvement": self.aggregate(),
        }
        return json.dumps(body, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        order = self.metric_order()
        buf = io.StringIO()
        writer = csv.writer(buf)
        header = ["utt"]
        for m in order:
            display = self.metric_specs[m].display
            header += [display, display + "i"]
        writer.writerow(header)
        for u in self.utterances:
            row = [u.utt]
            for m in order:
                if m in u.values:
                    v = u.values[m]
                    row += [f"{v.raw_enhanced:.6f}", f"{v.improvement:.6f}"]
                else:
                    row += ["", ""]
            writer.writerow(row)
        return buf.getvalue()

    def to_table(self, system: str = "enhanced") -> str:
        """One aggregate row per system, columns the metric improvements."""
        order = self.metric_order()
        agg = self.aggregate()
        headers = ["System"] + [
            self.metric_specs[m].display
            + "i "
            + ("↑" if self.metric_specs[m].higher_better else "↓")
            for m in order
        ]
        row = [system] + [
            f"{agg[m]:+.3f}" if m in agg else "n/a" for m in order
        ]
        widths = [max(len(h), len(c)) for h, c in zip(headers, row)]
        lines = [
            "  ".join(h.ljust(w) for h, w in zip(headers, widths)),
            "  ".join("-" * w for w in widths),
            "  ".join(c.ljust(w) for c, w in zip(row, widths)),
        ]
        n_failed = sum(1 for u in self.utterances if u.errors)
        if n_failed:
            lines.append(f"({n_failed} utterance(s) had metric failures)")
        return "\n".join(lines)
