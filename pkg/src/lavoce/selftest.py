"""Built-in verification suites behind `lavoce selftest`.

Each suite is a zero-argument callable that raises on failure (AssertionError
or any library error). The CLI runs them in isolation so one failing suite
never hides the verdicts of the others.
"""
from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np

from .corrupt import MixRecipe, mix, preset_condition
from .dsp import (
    AudioParams,
    Waveform,
    griffin_lim,
    istft,
    log_mel,
    mel_to_linear,
    stft,
)
from .audio_io import read_melf, write_melf
from .errors import BadMagic, ShapeManifestMismatch
from .metrics import estoi, improvement, mcd, spec_mse, stoi
from .neural import (
    DiscOutput,
    EnhancerConfig,
    VocoderConfig,
    discriminate,
    discriminator_loss,
    discriminator_manifest,
    count_params,
    enhancer_forward,
    enhancer_loss,
    enhancer_manifest,
    finite_diff_gradcheck,
    generator_loss,
    generator_manifest,
    init_weights,
    load_weights,
    save_weights,
    validate_manifest,
)
from .video import VideoClip, align_indices, load_roi, save_vroi

__all__ = ["SUITES", "run_suites"]


def _speech_like(seconds: float = 1.0, rate: int = 16000, seed: int = 0) -> Waveform:
    """Harmonic sweep with an amplitude envelope and a small noise floor."""
    rng = np.random.default_rng(seed)
    t = np.arange(int(seconds * rate)) / rate
    f0 = 120.0 + 40.0 * np.sin(2 * np.pi * 1.7 * t)
    phase = 2 * np.pi * np.cumsum(f0) / rate
    x = sum(np.sin(h * phase) / h for h in range(1, 9))
    x *= 0.4 + 0.6 * np.abs(np.sin(2 * np.pi * 2.3 * t))
    x += 0.01 * rng.standard_normal(t.size)
    return Waveform(x / np.max(np.abs(x)), rate)


def suite_dsp_roundtrip() -> None:
    rng = np.random.default_rng(0)
    for n in (1000, 4096, 16000):
        x = Waveform(rng.uniform(-1.0, 1.0, n), 16000)
        y = istft(stft(x))
        m = min(len(y.samples), n)
        err = np.max(np.abs(y.samples[:m] - x.samples[:m]))
        assert err < 1e-6, f"round-trip error {err:.2e} at length {n}"
    mel = log_mel(_speech_like(0.5))
    _, conv = griffin_lim(mel, iters=8, return_convergence=True)
    assert np.all(np.diff(conv) <= 1e-12), "Griffin-Lim convergence increased"


def suite_dsp_mel() -> None:
    w = _speech_like(0.5)
    mel = log_mel(w)
    assert mel.frames.shape == (1 + len(w.samples) // 256, 80)
    assert np.all(mel_to_linear(mel) >= 0.0), "negative linear magnitude"
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "t.mel"
        write_melf(path, mel)
        back = read_melf(path, mel.params)
    stored = mel.frames.astype("<f4").astype(np.float64)
    assert np.array_equal(back.frames, stored), "MELF round trip not bit-exact"


def suite_corruptor() -> None:
    clean = _speech_like(1.0)
    rng = np.random.default_rng(1)
    noises = [Waveform(rng.standard_normal(n), 16000) for n in (9000, 20000, 16000, 7000, 16000)]
    intfs = [_speech_like(1.0, seed=s) for s in (2, 3, 4)]
    for cond in (1, 2, 3):
        recipe = preset_condition(cond, seed=cond)
        res = mix(clean, noises[: recipe.n_noises], intfs[: recipe.n_interferers], recipe)
        assert abs(res.snr_measured - recipe.snr_db) < 0.01, f"SNR off in condition {cond}"
        assert abs(res.sir_measured - recipe.sir_db) < 0.01, f"SIR off in condition {cond}"
    recipe = MixRecipe(-3.0, 2.0, 2, 1, seed=9)
    a = mix(clean, noises[:2], intfs[:1], recipe)
    b = mix(clean, noises[:2], intfs[:1], recipe)
    assert np.array_equal(a.noisy.samples, b.noisy.samples), "mix not deterministic"


def suite_video() -> None:
    rng = np.random.default_rng(2)
    clip = VideoClip(rng.uniform(0.0, 1.0, (12, 96, 96)), fps=25.0)
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "t.vroi"
        save_vroi(path, clip)
        back = load_roi(path)
    stored = np.round(clip.frames * 255.0) / 255.0
    assert np.array_equal(back.frames, stored), "VROI round trip not bit-exact"
    assert back.fps == 25.0
    idx = align_indices(5, 3)
    assert idx.tolist() == [0, 0, 1, 1, 2], f"alignment {idx.tolist()}"


def suite_metrics() -> None:
    x = _speech_like(1.0)
    noisy = Waveform(
        (x.samples + 0.3 * np.random.default_rng(5).standard_normal(x.samples.size)),
        x.sample_rate,
    )
    assert mcd(x, x) == 0.0
    assert spec_mse(x, x) == 0.0
    assert stoi(x, x) > 0.999
    assert estoi(x, x) > 0.999
    half = Waveform(0.5 * x.samples, x.sample_rate)
    assert abs(mcd(x, half)) < 1e-9, "MCD not gain-invariant"
    assert improvement(stoi, x, noisy, noisy) == 0.0


def suite_weights(extra_path=None) -> None:
    manifest = {"a.weight": (4, 3), "a.bias": (4,)}
    bundle = init_weights(manifest, seed=0)
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "t.lvwt"
        save_weights(path, bundle)
        back, _ = load_weights(path)
        for name in manifest:
            assert np.array_equal(back[name], bundle[name]), f"{name} changed"
        raw = bytearray(path.read_bytes())
        raw[0] ^= 0xFF
        path.write_bytes(bytes(raw))
        try:
            load_weights(path)
        except BadMagic:
            pass
        else:
            raise AssertionError("corrupt magic accepted")
    try:
        validate_manifest(bundle, {"a.weight": (4, 3), "a.bias": (4,), "b.weight": (2, 2)})
    except ShapeManifestMismatch as exc:
        assert "b.weight" in str(exc)
    else:
        raise AssertionError("missing tensor not reported")
    if extra_path is not None:
        load_weights(extra_path)


def suite_neural_counts() -> None:
    n = count_params(generator_manifest(VocoderConfig()))
    assert n == 13_926_017, f"vocoder parameter count {n}"
    assert abs(n / 13.92e6 - 1.0) < 0.01
    vcfg = VocoderConfig(
        initial_channels=16,
        mpd_channels=(2, 4, 8, 8, 8),
        msd_channels=(16, 16, 16, 16, 16, 16, 16),
    )
    weights = init_weights(discriminator_manifest(vcfg), seed=0)
    w = Waveform(np.random.default_rng(3).uniform(-1, 1, 2048), 16000)
    outs = discriminate(w, weights, vcfg)
    assert len(outs) == 8, f"{len(outs)} sub-discriminators"


def suite_neural_losses() -> None:
    w = _speech_like(0.3)
    feat = np.ones((2, 5))
    zeros = [DiscOutput(np.zeros((1, 10)), (feat,)) for _ in range(8)]
    ones = [DiscOutput(np.ones((1, 10)), (feat,)) for _ in range(8)]
    gl = generator_loss(w, w, zeros, zeros)
    assert gl.total == 8.0, f"zero-stub generator loss {gl.total}"
    assert discriminator_loss(ones, zeros) == 0.0
    assert discriminator_loss(zeros, ones) == 16.0


def suite_neural_gradcheck() -> None:
    cfg = EnhancerConfig(
        n_layers=1,
        attn_dim=8,
        ff_dim=12,
        n_heads=2,
        n_mels=4,
        audio_feat_dim=4,
        visual_feat_dim=0,
        rel_pos_clip=4,
    )
    weights = init_weights(enhancer_manifest(cfg), seed=0)
    params = AudioParams(fft_size=64, win_size=64, hop=16, n_mels=4, f_max=8000.0)
    rng = np.random.default_rng(4)
    from .dsp import MelSpectrogram

    noisy = MelSpectrogram(rng.standard_normal((6, 4)), params)
    target = MelSpectrogram(rng.standard_normal((6, 4)), params)

    def loss_fn(bundle):
        pred = enhancer_forward(noisy, None, bundle, cfg)
        return enhancer_loss(pred, target)

    err = finite_diff_gradcheck(loss_fn, weights, n_probes=6, seed=1)
    assert err < 1e-4, f"gradcheck relative error {err:.2e}"


SUITES = [
    ("dsp-roundtrip", suite_dsp_roundtrip),
    ("dsp-mel", suite_dsp_mel),
    ("corruptor", suite_corruptor),
    ("video", suite_video),
    ("metrics", suite_metrics),
    ("weights", suite_weights),
    ("neural-counts", suite_neural_counts),
    ("neural-losses", suite_neural_losses),
    ("neural-gradcheck", suite_neural_gradcheck),
]


def run_suites(name_filter: str = "", weights_path=None) -> list[tuple[str, str]]:
    """Run matching suites; returns (name, verdict) pairs, verdict "" on pass."""
    results = []
    for name, fn in SUITES:
        if name_filter and name_filter not in name:
            continue
        try:
            if fn is suite_weights:
                fn(weights_path)
            else:
                fn()
        except Exception as exc:  # isolate suites from each other
            results.append((name, f"{type(exc).__name__}: {exc}"))
        else:
            results.append((name, ""))
    return results
