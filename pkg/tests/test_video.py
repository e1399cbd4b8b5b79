"""Mouth-ROI ingest, augmentation, and frame-alignment tests."""
import numpy as np
import pytest

from lavoce.errors import BadHeader, BadMagic, WrongSpatialSize
from lavoce.video import (
    ROI_SIZE,
    AugmentSpec,
    VideoClip,
    align_indices,
    augment,
    hflip,
    load_pgm_dir,
    load_roi,
    save_vroi,
)


def _clip(t=12, seed=0, fps=25.0):
    rng = np.random.default_rng(seed)
    return VideoClip(rng.uniform(0.0, 1.0, (t, ROI_SIZE, ROI_SIZE)), fps=fps)


# --- containers ---------------------------------------------------------


def test_clip_enforces_spatial_size():
    with pytest.raises(WrongSpatialSize):
        VideoClip(np.zeros((4, 64, 64)), fps=25.0)


def test_clip_duration():
    clip = _clip(t=75)
    assert len(clip) == 75
    assert clip.duration == pytest.approx(3.0)


def test_vroi_round_trip(tmp_path):
    clip = _clip()
    path = tmp_path / "t.vroi"
    save_vroi(path, clip)
    back = load_roi(path)
    assert back.fps == clip.fps
    stored = np.round(clip.frames * 255.0) / 255.0
    assert np.array_equal(back.frames, stored)


def test_vroi_bad_magic(tmp_path):
    path = tmp_path / "t.vroi"
    path.write_bytes(b"JUNKxxxxxxxx")
    with pytest.raises(BadMagic):
        load_roi(path)


def test_vroi_truncated_payload(tmp_path):
    clip = _clip()
    path = tmp_path / "t.vroi"
    save_vroi(path, clip)
    data = path.read_bytes()
    path.write_bytes(data[:-100])
    with pytest.raises(BadHeader):
        load_roi(path)


def test_vroi_rejects_other_sizes(tmp_path):
    import struct

    path = tmp_path / "t.vroi"
    payload = bytes(2 * 64 * 64)
    path.write_bytes(b"VROI" + struct.pack("<IHHH", 2, 64, 64, 2500) + payload)
    with pytest.raises(WrongSpatialSize):
        load_roi(path)


def test_pgm_dir_ingest(tmp_path):
    rng = np.random.default_rng(1)
    frames = rng.integers(0, 256, size=(3, ROI_SIZE, ROI_SIZE), dtype=np.uint8)
    for i, frame in enumerate(frames):
        header = f"P5\n# frame {i}\n{ROI_SIZE} {ROI_SIZE}\n255\n".encode()
        (tmp_path / f"f{i:03d}.pgm").write_bytes(header + frame.tobytes())
    clip = load_pgm_dir(tmp_path, fps=30.0)
    assert clip.fps == 30.0
    assert np.array_equal(clip.frames, frames.astype(np.float64) / 255.0)


# --- augmentation ------------------------------------------------------------


def test_hflip_is_involution():
    clip = _clip()
    assert np.array_equal(hflip(hflip(clip)).frames, clip.frames)


def test_augment_preserves_shape_and_range():
    clip = _clip(t=20)
    for seed in range(10):
        out = augment(clip, AugmentSpec(), seed=seed)
        assert out.frames.shape == clip.frames.shape
        assert out.fps == clip.fps
        assert np.all(out.frames >= 0.0) and np.all(out.frames <= 1.0)


def test_augment_deterministic():
    clip = _clip(t=16)
    a = augment(clip, AugmentSpec(), seed=3)
    b = augment(clip, AugmentSpec(), seed=3)
    assert np.array_equal(a.frames, b.frames)
    c = augment(clip, AugmentSpec(), seed=4)
    assert not np.array_equal(a.frames, c.frames)


def test_erase_area_fraction_in_bounds():
    """The erased rectangle covers 2-33% of the frame across many draws."""
    clip = VideoClip(np.ones((2, ROI_SIZE, ROI_SIZE)), fps=25.0)
    spec = AugmentSpec(crop=False, hflip=False, erase=True, time_mask=False)
    area = ROI_SIZE * ROI_SIZE
    for seed in range(300):
        out = augment(clip, spec, seed=seed)
        changed = np.any(out.frames != 1.0, axis=0)
        frac = changed.sum() / area
        # noise fill can coincide with 1.0 on isolated pixels, never shrink
        # the rectangle below its lower bound by more than rounding slack
        assert 0.015 <= frac <= 0.33 + 1e-9, f"seed {seed}: fraction {frac:.4f}"


def test_erase_rectangle_is_contiguous():
    clip = VideoClip(np.zeros((1, ROI_SIZE, ROI_SIZE)), fps=25.0)
    spec = AugmentSpec(crop=False, hflip=False, erase=True, time_mask=False)
    out = augment(clip, spec, seed=1)
    rows = np.any(out.frames[0] != 0.0, axis=1)
    cols = np.any(out.frames[0] != 0.0, axis=0)
    # a single axis-aligned rectangle touches one contiguous row/col band
    assert np.all(np.diff(np.flatnonzero(rows)) == 1)
    assert np.all(np.diff(np.flatnonzero(cols)) == 1)


def test_time_mask_replaces_with_mean_frame():
    rng = np.random.default_rng(5)
    frames = rng.uniform(0.0, 1.0, (30, ROI_SIZE, ROI_SIZE))
    clip = VideoClip(frames, fps=25.0)
    spec = AugmentSpec(crop=False, hflip=False, erase=False, time_mask=True)
    mean_frame = frames.mean(axis=0)
    for seed in range(40):
        out = augment(clip, spec, seed=seed)
        masked = [
            t
            for t in range(30)
            if not np.array_equal(out.frames[t], frames[t])
        ]
        assert len(masked) <= 10
        if masked:
            assert masked == list(range(masked[0], masked[-1] + 1))
            for t in masked:
                assert np.allclose(out.frames[t], mean_frame)


def test_augment_spec_validation():
    with pytest.raises(ValueError):
        AugmentSpec(erase_min_area=0.5, erase_max_area=0.4)
    with pytest.raises(ValueError):
        AugmentSpec(crop_size=0)
    with pytest.raises(ValueError):
        AugmentSpec(time_mask_max=-1)


# --- alignment -------------------------------------------------------------------


def test_align_indices_downsampling_example():
    assert align_indices(5, 3).tolist() == [0, 0, 1, 1, 2]


def test_align_indices_identity_when_rates_match():
    idx = align_indices(10, 10, audio_fps=25.0, video_fps=25.0)
    assert idx.tolist() == list(range(10))


def test_align_indices_clamps_to_last_frame():
    idx = align_indices(100, 10)
    assert idx.max() == 9
    assert np.all(np.diff(idx) >= 0)


def test_align_indices_round_half_up():
    # audio frame 5 maps to 5*0.4 = 2.0 exactly; frame 6 to 2.4 -> 2
    idx = align_indices(8, 4)
    assert idx.tolist() == [0, 0, 1, 1, 2, 2, 2, 3]


def test_align_indices_validation():
    with pytest.raises(ValueError):
        align_indices(0, 5)
    with pytest.raises(ValueError):
        align_indices(5, 0)
    with pytest.raises(ValueError):
        align_indices(5, 5, audio_fps=0.0)
