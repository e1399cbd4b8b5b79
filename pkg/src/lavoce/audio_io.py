"""WAV and MELF file ingest/emit.

WAV support covers mono PCM 16-bit and 32-bit float at any rate; reads
are resampled to 16 kHz by default. MELF is the toolkit's mel-spectrogram
container: magic ``MELF``, u32 frame count, u32 band count, then
row-major little-endian f32 values.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .dsp import AudioParams, MelSpectrogram, Waveform, resample
from .errors import BadHeader, BadMagic, ShapeMismatch

__all__ = ["read_wav", "write_wav", "read_melf", "write_melf"]

_MELF_MAGIC = b"MELF"


def read_wav(path, target_rate: int | None = 16000) -> Waveform:
    """Load a mono WAV file, resampling to target_rate unless it is None."""
    try:
        rate, data = wavfile.read(str(path))
    except ValueError as exc:
        raise BadHeader(f"{path}: {exc}") from exc
    if data.ndim != 1:
        raise BadHeader(f"{path}: expected mono audio, got {data.ndim} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise BadHeader(f"{path}: unsupported sample format {data.dtype}")
    w = Waveform(samples, int(rate))
    if target_rate is not None and rate != target_rate:
        w = resample(w, target_rate)
    return w


def write_wav(path, w: Waveform, fmt: str = "pcm16") -> None:
    """Write a waveform as mono PCM 16-bit ("pcm16") or 32-bit float ("float32")."""
    if fmt == "pcm16":
        clipped = np.clip(w.samples, -1.0, 1.0)
        data = (clipped * 32767.0).round().astype(np.int16)
    elif fmt == "float32":
        data = w.samples.astype(np.float32)
    else:
        raise ValueError(f"unknown wav format {fmt!r}")
    wavfile.write(str(path), w.sample_rate, data)


def write_melf(path, mel: MelSpectrogram) -> None:
    """Serialize a mel spectrogram to the MELF container."""
    frames = mel.frames.astype("<f4")
    header = _MELF_MAGIC + struct.pack("<II", frames.shape[0], frames.shape[1])
    Path(path).write_bytes(header + frames.tobytes(order="C"))


def read_melf(path, params: AudioParams | None = None) -> MelSpectrogram:
    """Load a MELF file; band count must match params.n_mels."""
    params = params or AudioParams()
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise BadMagic(f"{path}: truncated MELF header")
    if raw[:4] != _MELF_MAGIC:
        raise BadMagic(f"{path}: bad magic {raw[:4]!r}")
    n_frames, n_bands = struct.unpack("<II", raw[4:12])
    expected = 12 + 4 * n_frames * n_bands
    if len(raw) != expected:
        raise BadHeader(f"{path}: expected {expected} bytes, found {len(raw)}")
    if n_bands != params.n_mels:
        raise ShapeMismatch(f"{path}: {n_bands} bands vs {params.n_mels} expected")
    data = np.frombuffer(raw[12:], dtype="<f4").reshape(n_frames, n_bands)
    return MelSpectrogram(data.astype(np.float64), params)
