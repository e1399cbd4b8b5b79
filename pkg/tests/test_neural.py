"""Model-level tests: enhancer, vocoder, discriminators, losses,
finite-difference gradient checking, and the micro training demo."""
import numpy as np
import pytest

from lavoce.dsp import AudioParams, MelSpectrogram, Waveform
from lavoce.errors import NonFiniteActivation, NonFiniteLoss, ShapeMismatch, TooShort
from lavoce.neural import (
    DiscOutput,
    EnhancerConfig,
    GeneratorLoss,
    LossWeights,
    TensorBundle,
    VocoderConfig,
    central_difference,
    count_params,
    discriminate,
    discriminator_loss,
    discriminator_manifest,
    enhancer_forward,
    enhancer_loss,
    enhancer_manifest,
    finite_diff_gradcheck,
    generator_loss,
    generator_manifest,
    init_weights,
    micro_config,
    micro_train_demo,
    mpd_forward,
    msd_forward,
    relative_error,
    visual_encode,
    vocoder_forward,
)
from lavoce.video import VideoClip

TOY_ENHANCER = EnhancerConfig(
    n_layers=2, attn_dim=32, ff_dim=64, n_heads=4, n_mels=20,
    audio_feat_dim=16, visual_feat_dim=16, rel_pos_clip=8,
    visual_channels=(4, 4, 8, 12, 16),
)
TOY_AUDIO = AudioParams(n_mels=20)
TOY_DISC = VocoderConfig(
    initial_channels=16, mpd_channels=(2, 4, 8, 8, 8),
    msd_channels=(16, 16, 16, 16, 16, 16, 16),
)


def _mel(t, params=TOY_AUDIO, seed=0):
    rng = np.random.default_rng(seed)
    return MelSpectrogram(rng.normal(size=(t, params.n_mels)), params)


def _clip(t, fps=25.0, seed=0):
    rng = np.random.default_rng(seed)
    return VideoClip(rng.uniform(0.0, 1.0, size=(t, 96, 96)), fps)


# --- enhancer -------------------------------------------------------------------

def test_enhancer_param_counts():
    assert count_params(enhancer_manifest(EnhancerConfig())) == 96_948_640
    assert count_params(enhancer_manifest(TOY_ENHANCER)) == 37_024
    assert count_params(enhancer_manifest(micro_config())) == 410


def test_enhancer_config_validation():
    with pytest.raises(ValueError):
        EnhancerConfig(attn_dim=30, n_heads=4)
    with pytest.raises(ValueError):
        EnhancerConfig(visual_feat_dim=16, visual_channels=(4, 4, 8, 12, 32))
    with pytest.raises(ValueError):
        EnhancerConfig(visual_feat_dim=16, visual_channels=(4, 8, 16))
    with pytest.raises(ValueError):
        EnhancerConfig(n_layers=0)
    with pytest.raises(ValueError):
        EnhancerConfig(rel_pos_clip=0)
    # turning the video branch off lifts the channel constraints
    assert EnhancerConfig(visual_feat_dim=0).fused_dim == 256


def test_enhancer_config_round_trip():
    cfg = TOY_ENHANCER
    assert EnhancerConfig.from_dict(cfg.to_dict()) == cfg


def test_visual_encode_shape():
    weights = init_weights(enhancer_manifest(TOY_ENHANCER), seed=0)
    feat = visual_encode(_clip(6), weights, TOY_ENHANCER)
    assert feat.shape == (6, 16)
    assert np.all(np.isfinite(feat))


def test_visual_encode_zero_clip_is_zero():
    """Fresh weights have zero biases and shifts, so a black clip must map
    to exactly zero features."""
    weights = init_weights(enhancer_manifest(TOY_ENHANCER), seed=1)
    clip = VideoClip(np.zeros((3, 96, 96)), 25.0)
    feat = visual_encode(clip, weights, TOY_ENHANCER)
    assert np.all(feat == 0.0)


@pytest.mark.parametrize("t_audio,t_video", [(4, 2), (10, 4), (7, 7), (25, 10), (3, 1)])
def test_enhancer_forward_shapes(t_audio, t_video):
    weights = init_weights(enhancer_manifest(TOY_ENHANCER), seed=2)
    out = enhancer_forward(_mel(t_audio), _clip(t_video), weights, TOY_ENHANCER)
    assert out.frames.shape == (t_audio, TOY_ENHANCER.n_mels)
    assert out.params == TOY_AUDIO


def test_enhancer_forward_audio_only():
    cfg = EnhancerConfig(n_layers=1, attn_dim=16, ff_dim=24, n_heads=2,
                         n_mels=6, audio_feat_dim=8, visual_feat_dim=0)
    weights = init_weights(enhancer_manifest(cfg), seed=3)
    out = enhancer_forward(_mel(9, AudioParams(n_mels=6)), None, weights, cfg)
    assert out.frames.shape == (9, 6)


def test_enhancer_requires_clip():
    weights = init_weights(enhancer_manifest(TOY_ENHANCER), seed=4)
    with pytest.raises(ShapeMismatch, match="video"):
        enhancer_forward(_mel(5), None, weights, TOY_ENHANCER)


def test_enhancer_band_mismatch():
    weights = init_weights(enhancer_manifest(TOY_ENHANCER), seed=5)
    with pytest.raises(ShapeMismatch, match="bands"):
        enhancer_forward(_mel(5, AudioParams(n_mels=80)), _clip(2), weights,
                         TOY_ENHANCER)


def test_enhancer_attention_maps():
    weights = init_weights(enhancer_manifest(TOY_ENHANCER), seed=6)
    out, maps = enhancer_forward(_mel(8), _clip(3), weights, TOY_ENHANCER,
                                 return_attention=True)
    assert len(maps) == TOY_ENHANCER.n_layers
    for m in maps:
        assert m.shape == (TOY_ENHANCER.n_heads, 8, 8)
        assert np.allclose(m.sum(axis=-1), 1.0)


def test_enhancer_return_hidden():
    weights = init_weights(enhancer_manifest(TOY_ENHANCER), seed=7)
    out, hidden = enhancer_forward(_mel(5), _clip(2), weights, TOY_ENHANCER,
                                   return_hidden=True)
    assert hidden.shape == (5, TOY_ENHANCER.attn_dim)
    # the prediction is an affine map of the hidden states
    manual = hidden @ weights["enhancer.decoder.weight"].T
    manual += weights["enhancer.decoder.bias"]
    np.testing.assert_allclose(out.frames, manual)


def test_enhancer_nonfinite_guard():
    weights = init_weights(enhancer_manifest(TOY_ENHANCER), seed=8)
    bad = weights.replaced(
        "enhancer.decoder.weight",
        np.full(weights["enhancer.decoder.weight"].shape, np.inf),
    )
    with np.errstate(invalid="ignore"):
        with pytest.raises(NonFiniteActivation):
            enhancer_forward(_mel(4), _clip(2), bad, TOY_ENHANCER)


def test_enhancer_loss_value():
    params = AudioParams(n_mels=2)
    a = MelSpectrogram(np.array([[0.0, 1.0], [2.0, 3.0]]), params)
    b = MelSpectrogram(np.array([[1.0, 1.0], [2.0, 7.0]]), params)
    assert enhancer_loss(a, a) == 0.0
    assert enhancer_loss(a, b) == pytest.approx((1.0 + 0.0 + 0.0 + 4.0) / 4)
    with pytest.raises(ShapeMismatch):
        enhancer_loss(a, _mel(3, params))


# --- vocoder --------------------------------------------------------------------

def test_vocoder_param_count():
    assert count_params(generator_manifest(VocoderConfig())) == 13_926_017


def test_vocoder_config_validation():
    with pytest.raises(ValueError):
        VocoderConfig(upsample_rates=(8, 8, 2))
    with pytest.raises(ValueError):
        VocoderConfig(upsample_kernels=(16, 16, 4))
    with pytest.raises(ValueError):
        VocoderConfig(upsample_kernels=(16, 16, 4, 3))  # odd k - u
    with pytest.raises(ValueError):
        VocoderConfig(initial_channels=24)
    cfg = VocoderConfig()
    assert cfg.total_upsampling == 256
    assert cfg.n_discriminators == 8
    assert cfg.stage_channels() == [256, 128, 64, 32]
    assert VocoderConfig.from_dict(cfg.to_dict()) == cfg


def test_vocoder_output_contract():
    cfg = VocoderConfig(initial_channels=32, n_mels=8)
    weights = init_weights(generator_manifest(cfg), seed=9)
    mel = _mel(5, AudioParams(n_mels=8))
    wave = vocoder_forward(mel, weights, cfg)
    assert len(wave) == 5 * 256
    assert wave.sample_rate == 16000
    assert np.max(np.abs(wave.samples)) <= 1.0


def test_vocoder_zero_weights_silent():
    cfg = VocoderConfig(initial_channels=16, n_mels=4)
    zeros = TensorBundle(
        {k: np.zeros(v) for k, v in generator_manifest(cfg).items()}
    )
    wave = vocoder_forward(_mel(3, AudioParams(n_mels=4)), zeros, cfg)
    assert np.all(wave.samples == 0.0)


def _disc_weights(seed=10):
    return init_weights(discriminator_manifest(TOY_DISC), seed=seed)


def _wave(n, seed=11):
    rng = np.random.default_rng(seed)
    return Waveform(rng.uniform(-0.9, 0.9, size=n), 16000)


def test_mpd_structure():
    outs = mpd_forward(_wave(2048), _disc_weights(), TOY_DISC)
    assert len(outs) == 5
    for out in outs:
        assert len(out.features) == len(TOY_DISC.mpd_channels) + 1
        assert all(f.ndim == 3 for f in out.features)
        assert out.score.ndim == 3 and out.score.shape[0] == 1
        assert np.all(np.isfinite(out.score))


def test_mpd_ragged_length():
    # 2049 is coprime with every period, forcing the reflect pad branch
    outs = mpd_forward(_wave(2049), _disc_weights(), TOY_DISC)
    assert len(outs) == 5


def test_mpd_too_short():
    with pytest.raises(TooShort):
        mpd_forward(_wave(8), _disc_weights(), TOY_DISC)


def test_msd_structure():
    outs = msd_forward(_wave(2048), _disc_weights(), TOY_DISC)
    assert len(outs) == 3
    lengths = []
    for out in outs:
        assert len(out.features) == len(TOY_DISC.msd_channels) + 1
        assert all(f.ndim == 2 for f in out.features)
        assert out.score.ndim == 2 and out.score.shape[0] == 1
        lengths.append(out.features[0].shape[1])
    # each scale sees an exactly halved waveform
    assert lengths == [2048, 1024, 512]


def test_msd_too_short():
    with pytest.raises(TooShort):
        msd_forward(_wave(8), _disc_weights(), TOY_DISC)


def test_discriminate_order():
    outs = discriminate(_wave(2048), _disc_weights(), TOY_DISC)
    assert len(outs) == 8
    assert [o.score.ndim for o in outs] == [3] * 5 + [2] * 3


# --- losses ---------------------------------------------------------------------

def _stub_ensemble(score_value, n=8):
    feat = np.ones((2, 6))
    return [
        DiscOutput(np.full((1, 10), float(score_value)), (feat,))
        for _ in range(n)
    ]


def test_generator_loss_perfect_generator():
    w = _wave(4096, seed=12)
    real = _stub_ensemble(1.0)
    out = generator_loss(w, w, real, real)
    assert isinstance(out, GeneratorLoss)
    assert out.total == 0.0
    assert (out.adv, out.spec, out.fm) == (0.0, 0.0, 0.0)


def test_generator_loss_zero_scores():
    w = _wave(4096, seed=13)
    out = generator_loss(w, w, _stub_ensemble(0.0), _stub_ensemble(0.0))
    assert out.adv == 8.0
    assert out.total == 8.0


def test_generator_loss_weighting_identity():
    w = _wave(4096, seed=14)
    other = Waveform(w.samples * 0.5 + 0.01, 16000)
    real = _stub_ensemble(1.0)
    fake = [DiscOutput(np.full((1, 10), 0.5), (np.zeros((2, 6)),))
            for _ in range(8)]
    lw = LossWeights(adv=3.0, spec=7.0, fm=11.0)
    out = generator_loss(w, other, real, fake, weights=lw)
    assert out.adv == pytest.approx(8 * 0.25)
    assert out.fm == pytest.approx(8 * 1.0)  # mean |1 - 0| per layer
    assert out.spec > 0.0
    assert out.total == pytest.approx(3 * out.adv + 7 * out.spec + 11 * out.fm)


def test_generator_loss_ensemble_mismatch():
    w = _wave(4096, seed=15)
    with pytest.raises(ShapeMismatch):
        generator_loss(w, w, _stub_ensemble(1.0, n=7), _stub_ensemble(1.0, n=8))
    bad_fake = _stub_ensemble(1.0)
    bad_fake[3] = DiscOutput(np.ones((1, 10)), (np.ones((3, 5)),))
    with pytest.raises(ShapeMismatch):
        generator_loss(w, w, _stub_ensemble(1.0), bad_fake)


def test_discriminator_loss_identities():
    ones = _stub_ensemble(1.0)
    zeros = _stub_ensemble(0.0)
    assert discriminator_loss(ones, zeros) == 0.0
    assert discriminator_loss(zeros, ones) == 16.0
    # raw arrays are accepted too
    assert discriminator_loss([np.ones(5)] * 8, [np.zeros(5)] * 8) == 0.0


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(adv=-1.0)


# --- gradient checking ----------------------------------------------------------

def test_relative_error_cases():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1.0, 1.0) == 0.0
    assert relative_error(1.0, 2.0) == 0.5
    assert relative_error(-1.0, 1.0) == 2.0
    # tiny magnitudes are scaled by the floor, not by themselves
    assert relative_error(0.0, 1e-20) == pytest.approx(1e-10)


def test_central_difference_quadratic_is_exact():
    bundle = TensorBundle({"w": np.array([1.0, -2.0, 3.0])})

    def loss(b):
        return float(np.sum(b["w"] ** 2))

    for i, expect in enumerate([2.0, -4.0, 6.0]):
        fd = central_difference(loss, bundle, "w", i, 1e-4)
        assert relative_error(fd, expect) < 1e-9


def test_gradcheck_against_analytic_least_squares():
    rng = np.random.default_rng(16)
    x = rng.normal(size=4)
    y = rng.normal(size=3)
    bundle = TensorBundle({"w": rng.normal(size=(3, 4))})

    def loss(b):
        r = b["w"] @ x - y
        return float(np.mean(r * r))

    def analytic(name, index):
        assert name == "w"
        i, j = divmod(index, 4)
        r = bundle["w"] @ x - y
        return (2.0 / 3.0) * r[i] * x[j]

    worst = finite_diff_gradcheck(loss, bundle, n_probes=12, analytic=analytic)
    assert worst < 1e-8


def test_gradcheck_secant_fallback():
    bundle = TensorBundle({"w": np.random.default_rng(17).normal(size=5)})

    def loss(b):
        return float(np.sum(np.sin(b["w"])))

    assert finite_diff_gradcheck(loss, bundle, n_probes=5) < 1e-6


def test_gradcheck_rejects_nonfinite_loss():
    bundle = TensorBundle({"w": np.ones(2)})
    with pytest.raises(NonFiniteLoss):
        finite_diff_gradcheck(lambda b: np.inf, bundle, n_probes=1)


def test_gradcheck_requires_parameters():
    with pytest.raises(ValueError):
        finite_diff_gradcheck(lambda b: 0.0, TensorBundle({}), n_probes=1)


def test_gradcheck_tensor_name_filter():
    bundle = TensorBundle({"a": np.ones(3), "b": np.ones(3)})
    seen = []

    def analytic(name, index):
        seen.append(name)
        return 1.0

    def loss(b):
        return float(np.sum(b["a"]) + np.sum(b["b"]))

    finite_diff_gradcheck(loss, bundle, n_probes=3, analytic=analytic,
                          tensor_names=["b"])
    assert seen == ["b", "b", "b"]


def test_gradcheck_default_step_sits_in_the_stable_basin():
    """Sweep the finite-difference step on the real enhancer loss: the
    default 1e-4 must beat both a coarse and a cancellation-prone step."""
    cfg = micro_config()
    params = AudioParams(n_mels=cfg.n_mels)
    rng = np.random.default_rng(18)
    noisy = MelSpectrogram(rng.normal(size=(6, cfg.n_mels)), params)
    clean = MelSpectrogram(rng.normal(size=(6, cfg.n_mels)), params)
    bundle = init_weights(enhancer_manifest(cfg), seed=19)

    def loss(b):
        return enhancer_loss(enhancer_forward(noisy, None, b, cfg), clean)

    name, index = "enhancer.embed.weight", 3
    fd = {h: central_difference(loss, bundle, name, index, h)
          for h in (1e-2, 1e-4, 1e-6, 5e-7, 1e-10)}
    truth = (4.0 * fd[5e-7] - fd[1e-6]) / 3.0  # Richardson extrapolation
    err = {h: relative_error(fd[h], truth) for h in (1e-2, 1e-4, 1e-10)}
    assert err[1e-4] <= err[1e-2]
    assert err[1e-4] <= err[1e-10]
    assert err[1e-4] < 1e-6


# --- micro training demo --------------------------------------------------------

def test_micro_config_is_tiny():
    assert count_params(enhancer_manifest(micro_config())) == 410


def test_micro_train_descends_and_is_deterministic():
    a = micro_train_demo(seed=0, steps=30)
    b = micro_train_demo(seed=0, steps=30)
    assert a.shape == (31,)
    np.testing.assert_array_equal(a, b)
    assert a[-1] < 0.6 * a[0]
    assert np.all(np.isfinite(a))


def test_micro_train_zero_lr_is_flat():
    losses = micro_train_demo(seed=1, steps=3, lr=0.0)
    assert np.all(losses == losses[0])
