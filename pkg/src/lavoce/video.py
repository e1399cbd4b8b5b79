"""Mouth-ROI clip handling: VROI serialization, PGM ingest, augmentation,
and the video-to-audio frame alignment map.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import BadHeader, BadMagic, WrongSpatialSize

__all__ = [
    "VideoClip",
    "AugmentSpec",
    "ROI_SIZE",
    "save_vroi",
    "load_roi",
    "load_pgm_dir",
    "hflip",
    "augment",
    "align_indices",
]

ROI_SIZE = 96
VROI_MAGIC = b"VROI"


@dataclass(frozen=True)
class VideoClip:
    """A grayscale mouth-ROI clip: (T, 96, 96) intensities in [0, 1]."""

    frames: np.ndarray
    fps: float

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 3:
            raise WrongSpatialSize(f"expected (T, H, W) frames, got {frames.shape}")
        if frames.shape[1:] != (ROI_SIZE, ROI_SIZE):
            raise WrongSpatialSize(
                f"expected {ROI_SIZE}x{ROI_SIZE} frames, got "
                f"{frames.shape[1]}x{frames.shape[2]}"
            )
        if frames.shape[0] < 1:
            raise BadHeader("clip needs at least one frame")
        if self.fps <= 0:
            raise BadHeader(f"fps must be positive, got {self.fps}")
        if frames.min() < 0.0 or frames.max() > 1.0:
            raise BadHeader("intensities must lie in [0, 1]")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.fps


# --- serialization -----------------------------------------------------------

def save_vroi(path, clip: VideoClip) -> None:
    """Write a clip: magic, u32 frames, u16 width, u16 height, u16 fps*100,
    then frame-major u8 intensities."""
    t = len(clip)
    header = VROI_MAGIC + struct.pack(
        "<IHHH", t, ROI_SIZE, ROI_SIZE, int(round(clip.fps * 100))
    )
    body = np.round(clip.frames * 255.0).astype(np.uint8).tobytes()
    Path(path).write_bytes(header + body)


def load_roi(path) -> VideoClip:
    """Load a VROI clip; intensities come back scaled to [0, 1]."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != VROI_MAGIC:
        raise BadMagic(f"{path}: not a VROI file")
    if len(raw) < 14:
        raise BadHeader(f"{path}: truncated header")
    t, width, height, fps_centi = struct.unpack("<IHHH", raw[4:14])
    if t < 1 or fps_centi == 0:
        raise BadHeader(f"{path}: bad frame count or fps")
    if (width, height) != (ROI_SIZE, ROI_SIZE):
        raise WrongSpatialSize(
            f"{path}: expected {ROI_SIZE}x{ROI_SIZE}, got {width}x{height}"
        )
    expected = t * width * height
    body = raw[14:]
    if len(body) != expected:
        raise BadHeader(f"{path}: expected {expected} pixels, got {len(body)}")
    frames = np.frombuffer(body, dtype=np.uint8).reshape(t, height, width)
    return VideoClip(frames / 255.0, fps_centi / 100.0)


def _read_pgm(path) -> np.ndarray:
    """Parse a binary (P5) 8-bit PGM frame."""
    raw = Path(path).read_bytes()
    if raw[:2] != b"P5":
        raise BadMagic(f"{path}: not a binary PGM")
    # header tokens may be separated by whitespace and '#' comments
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise BadHeader(f"{path}: truncated PGM header")
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if not 0 < maxval < 256:
        raise BadHeader(f"{path}: need 8-bit PGM, maxval {maxval}")
    data = raw[pos : pos + width * height]
    if len(data) != width * height:
        raise BadHeader(f"{path}: expected {width * height} pixels, got {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width) / maxval


def load_pgm_dir(directory, fps: float = 25.0) -> VideoClip:
    """Ingest a directory of PGM frames, sorted lexicographically by name."""
    paths = sorted(Path(directory).glob("*.pgm"))
    if not paths:
        raise BadHeader(f"{directory}: no .pgm frames found")
    frames = np.stack([_read_pgm(p) for p in paths])
    if frames.shape[1:] != (ROI_SIZE, ROI_SIZE):
        raise WrongSpatialSize(
            f"{directory}: frames are {frames.shape[1]}x{frames.shape[2]}, "
            f"expected {ROI_SIZE}x{ROI_SIZE}"
        )
    return VideoClip(frames, fps)


# --- augmentation ------------------------------------------------------------

@dataclass(frozen=True)
class AugmentSpec:
    """Which training-time augmentations to apply and their bounds."""

    crop: bool = True
    crop_size: int = 88
    hflip: bool = True
    erase: bool = True
    erase_min_area: float = 0.02
    erase_max_area: float = 0.33
    time_mask: bool = True
    time_mask_max: int = 10

    def __post_init__(self):
        if not 1 <= self.crop_size <= ROI_SIZE:
            raise ValueError(f"crop_size must be in [1, {ROI_SIZE}]")
        if not 0.0 < self.erase_min_area <= self.erase_max_area < 1.0:
            raise ValueError("erase area bounds must satisfy 0 < min <= max < 1")
        if self.time_mask_max < 0:
            raise ValueError("time_mask_max must be >= 0")


def hflip(clip: VideoClip) -> VideoClip:
    """Mirror every frame left-right. Applying twice is the identity."""
    return VideoClip(clip.frames[:, :, ::-1].copy(), clip.fps)


def _random_crop_resize(frames: np.ndarray, size: int, rng) -> np.ndarray:
    top = int(rng.integers(0, ROI_SIZE - size + 1))
    left = int(rng.integers(0, ROI_SIZE - size + 1))
    cropped = frames[:, top : top + size, left : left + size]
    if size == ROI_SIZE:
        return cropped
    out = ndimage.zoom(cropped, (1.0, ROI_SIZE / size, ROI_SIZE / size), order=1)
    # bilinear interp of in-range values stays in range up to roundoff
    return np.clip(out, 0.0, 1.0)


def _random_erase(frames: np.ndarray, lo: float, hi: float, rng) -> np.ndarray:
    area = ROI_SIZE * ROI_SIZE
    target = rng.uniform(lo, hi) * area
    aspect = rng.uniform(0.3, 1.0 / 0.3)
    h = int(np.clip(round(np.sqrt(target * aspect)), 1, ROI_SIZE))
    w = int(np.clip(round(np.sqrt(target / aspect)), 1, ROI_SIZE))
    # shrink whichever side overshoots so the fraction stays inside [lo, hi]
    while h * w > hi * area:
        if h >= w and h > 1:
            h -= 1
        elif w > 1:
            w -= 1
        else:
            break
    while h * w < lo * area:
        if h <= w and h < ROI_SIZE:
            h += 1
        elif w < ROI_SIZE:
            w += 1
        else:
            break
    top = int(rng.integers(0, ROI_SIZE - h + 1))
    left = int(rng.integers(0, ROI_SIZE - w + 1))
    out = frames.copy()
    out[:, top : top + h, left : left + w] = rng.uniform(
        0.0, 1.0, size=(frames.shape[0], h, w)
    )
    return out


def _time_mask(frames: np.ndarray, max_len: int, rng) -> np.ndarray:
    t = frames.shape[0]
    length = int(rng.integers(0, min(max_len, t) + 1))
    if length == 0:
        return frames
    start = int(rng.integers(0, t - length + 1))
    out = frames.copy()
    out[start : start + length] = frames.mean(axis=0)
    return out


def augment(clip: VideoClip, spec: AugmentSpec, seed: int) -> VideoClip:
    """Apply the training augmentations in a fixed order, seeded.

    Crop-and-resize, horizontal flip (p = 0.5), random erasing with uniform
    noise, and time masking with the clip mean frame. Shape and value range
    are preserved; identical seeds give bit-identical output.
    """
    rng = np.random.default_rng(seed)
    frames = clip.frames
    if spec.crop:
        frames = _random_crop_resize(frames, spec.crop_size, rng)
    if spec.hflip and rng.uniform() < 0.5:
        frames = frames[:, :, ::-1]
    if spec.erase:
        frames = _random_erase(frames, spec.erase_min_area, spec.erase_max_area, rng)
    if spec.time_mask:
        frames = _time_mask(frames, spec.time_mask_max, rng)
    return VideoClip(np.ascontiguousarray(frames), clip.fps)


# --- temporal alignment ------------------------------------------------------

def align_indices(
    t_audio_frames: int,
    t_video_frames: int,
    audio_fps: float = 62.5,
    video_fps: float = 25.0,
) -> np.ndarray:
    """Nearest-neighbor map from audio frame index to video frame index.

    Audio frame j maps to round(j * video_fps / audio_fps), half up,
    clamped to the last video frame.
    """
    if t_audio_frames < 1 or t_video_frames < 1:
        raise ValueError("frame counts must be >= 1")
    if audio_fps <= 0 or video_fps <= 0:
        raise ValueError("frame rates must be positive")
    j = np.arange(t_audio_frames)
    nearest = np.floor(j * (video_fps / audio_fps) + 0.5).astype(np.int64)
    return np.minimum(nearest, t_video_frames - 1)
