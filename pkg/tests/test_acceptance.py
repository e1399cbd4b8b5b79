"""Acceptance gate: ten checks that pin the package's headline contracts,
each with a hard runtime budget and a printed pass/fail line.

Every check prints one line (bypassing capture) of the form
    [PASS] criterion N (elapsed/budget): description
so a plain `pytest -v tests/test_acceptance.py` doubles as a checklist.
"""
import json
import time
from contextlib import contextmanager

import numpy as np
import pytest
from conftest import noise_clip, speech_like

from lavoce.audio_io import read_wav, write_wav
from lavoce.cli import main
from lavoce.corrupt import MixRecipe, mix, preset_condition
from lavoce.dsp import (
    AudioParams,
    MelSpectrogram,
    Waveform,
    griffin_lim,
    istft,
    log_mel,
    stft,
)
from lavoce.metrics import estoi, mcd, spec_mse, stoi
from lavoce.neural import (
    DiscOutput,
    EnhancerConfig,
    LossWeights,
    TensorBundle,
    VocoderConfig,
    central_difference,
    count_params,
    discriminate,
    discriminator_manifest,
    discriminator_loss,
    enhancer_forward,
    enhancer_loss,
    enhancer_manifest,
    finite_diff_gradcheck,
    generator_loss,
    generator_manifest,
    init_weights,
    micro_train_demo,
    mpd_forward,
    msd_forward,
)
from lavoce.video import VideoClip


@contextmanager
def criterion(capsys, number, budget_s, label):
    start = time.perf_counter()
    failure = None
    try:
        yield
    except BaseException as exc:  # report, then re-raise
        failure = exc
    elapsed = time.perf_counter() - start
    ok = failure is None and elapsed <= budget_s
    with capsys.disabled():
        print(f"[{'PASS' if ok else 'FAIL'}] criterion {number} "
              f"({elapsed:.1f}s/{budget_s:.0f}s): {label}")
    if failure is not None:
        raise failure
    assert elapsed <= budget_s, (
        f"criterion {number} took {elapsed:.1f}s, budget {budget_s}s"
    )


def test_01_vocoder_parameter_count(capsys):
    with criterion(capsys, 1, 1.0, "full-scale vocoder holds ~13.92M parameters"):
        n = count_params(generator_manifest(VocoderConfig()))
        assert n == 13_926_017
        assert abs(n - 13_920_000) / 13_920_000 < 0.01


TOY_DISC = VocoderConfig(
    initial_channels=16, mpd_channels=(2, 4, 8, 8, 8),
    msd_channels=(16, 16, 16, 16, 16, 16, 16),
)


def test_02_discriminator_ensemble(capsys):
    with criterion(capsys, 2, 1.0, "ensemble is 5 period + 3 scale = 8 members"):
        weights = init_weights(discriminator_manifest(TOY_DISC), seed=0)
        wave = Waveform(np.random.default_rng(0).uniform(-0.9, 0.9, 2048), 16000)
        assert len(mpd_forward(wave, weights, TOY_DISC)) == 5
        assert len(msd_forward(wave, weights, TOY_DISC)) == 3
        outs = discriminate(wave, weights, TOY_DISC)
        assert len(outs) == 8
        assert [o.score.ndim for o in outs] == [3] * 5 + [2] * 3
        assert TOY_DISC.n_discriminators == 8


def _stubs(value, n=8):
    feat = np.ones((2, 6))
    return [DiscOutput(np.full((1, 10), float(value)), (feat,)) for _ in range(n)]


def test_03_loss_identities(capsys):
    with criterion(capsys, 3, 1.0, "GAN loss identities hold exactly"):
        w = Waveform(np.random.default_rng(1).uniform(-0.9, 0.9, 4096), 16000)
        # a perfect discriminator scores real 1 and fake 0: loss 0
        assert discriminator_loss(_stubs(1.0), _stubs(0.0)) == 0.0
        # zero-output stubs leave only the adversarial term: 8 * (0-1)^2
        assert generator_loss(w, w, _stubs(0.0), _stubs(0.0)).total == 8.0
        # a generator at the optimum (fake scored 1, matched feats) has loss 0
        assert generator_loss(w, w, _stubs(1.0), _stubs(1.0)).total == 0.0
        # an inverted discriminator pays 2 per member: 8 * ((0-1)^2 + 1^2)
        assert discriminator_loss(_stubs(0.0), _stubs(1.0)) == 16.0


def test_04_mixing_exactness(capsys):
    with criterion(capsys, 4, 30.0,
                   "100 mixes per preset condition land within 0.01 dB"):
        n = 8000
        for cond in (1, 2, 3):
            template = preset_condition(cond)
            for trial in range(100):
                seed = cond * 1000 + trial
                rng = np.random.default_rng(seed)
                clean = Waveform(rng.uniform(-1, 1, n), 16000)
                noises = [Waveform(rng.standard_normal(n), 16000)
                          for _ in range(template.n_noises)]
                intfs = [Waveform(rng.standard_normal(n), 16000)
                         for _ in range(template.n_interferers)]
                recipe = MixRecipe(template.snr_db, template.sir_db,
                                   template.n_noises, template.n_interferers,
                                   seed=seed)
                res = mix(clean, noises, intfs, recipe)
                assert abs(res.snr_measured - template.snr_db) <= 0.01
                if template.n_interferers:
                    assert abs(res.sir_measured - template.sir_db) <= 0.01


def test_05_inversion_round_trips(capsys):
    with criterion(capsys, 5, 60.0,
                   "100 iSTFT round trips < 1e-6; Griffin-Lim never regresses"):
        rng = np.random.default_rng(2)
        params = AudioParams()
        for _ in range(100):
            n = int(rng.integers(2048, 20001))
            w = Waveform(rng.uniform(-1, 1, n), params.sample_rate)
            back = istft(stft(w, params))
            keep = len(back)
            assert np.max(np.abs(back.samples - w.samples[:keep])) < 1e-6
        for seed in range(10):
            w = speech_like(0.5, seed=seed)
            mel = log_mel(w, params)
            _, curve = griffin_lim(mel, iters=8, return_convergence=True)
            assert np.all(np.diff(curve) <= 1e-12)


def test_06_metric_identities_and_monotonicity(capsys):
    with criterion(capsys, 6, 300.0,
                   "metric identities, gain invariance, SNR monotonicity"):
        clean = speech_like(1.0, seed=0)
        assert mcd(clean, clean) == 0.0
        assert spec_mse(clean, clean) == 0.0
        assert stoi(clean, clean) > 0.999
        assert estoi(clean, clean) > 0.999
        half = Waveform(clean.samples * 0.5, clean.sample_rate)
        assert abs(mcd(clean, half)) < 1e-9

        snrs = [5.0, 0.0, -5.0, -10.0, -15.0]
        stoi_means, estoi_means = [], []
        for snr in snrs:
            s_vals, e_vals = [], []
            for trial in range(50):
                ref = speech_like(1.0, seed=trial)
                noise = noise_clip(16000, seed=trial)
                res = mix(ref, [noise], [], MixRecipe(snr, 0.0, 1, 0, seed=trial))
                # score against the mix's own rescaled clean component
                s_vals.append(stoi(res.clean, res.noisy))
                e_vals.append(estoi(res.clean, res.noisy))
            stoi_means.append(np.mean(s_vals))
            estoi_means.append(np.mean(e_vals))
        assert np.all(np.diff(stoi_means) < 0), stoi_means
        assert np.all(np.diff(estoi_means) < 0), estoi_means


TOY_AV = EnhancerConfig(
    n_layers=2, attn_dim=32, ff_dim=64, n_heads=4, n_mels=20,
    audio_feat_dim=16, visual_feat_dim=16, rel_pos_clip=8,
    visual_channels=(4, 4, 8, 12, 16),
)


def test_07_shape_contracts(capsys):
    with criterion(capsys, 7, 10.0,
                   "enhancer output matches input frames for 20 random shapes"):
        weights = init_weights(enhancer_manifest(TOY_AV), seed=0)
        params = AudioParams(n_mels=TOY_AV.n_mels)
        rng = np.random.default_rng(3)
        for _ in range(20):
            t_audio = int(rng.integers(2, 40))
            t_video = int(rng.integers(1, 16))
            mel = MelSpectrogram(rng.normal(size=(t_audio, 20)), params)
            clip = VideoClip(rng.uniform(0, 1, (t_video, 96, 96)), 25.0)
            out = enhancer_forward(mel, clip, weights, TOY_AV)
            assert out.frames.shape == (t_audio, 20)


def _rescaled_disc_weights(cfg, seed):
    """Fresh conv kernels are tiny (std 0.01); rescale them to unit fan-in
    gain so discriminator scores are O(0.1) and the loss surface is far
    from the feature-matching |.| kinks at the probe point."""
    base = init_weights(discriminator_manifest(cfg), seed)
    arrays = {}
    for name, arr in base.arrays.items():
        if arr.ndim >= 3:
            fan = int(np.prod(arr.shape[1:]))
            arrays[name] = arr / 0.01 / np.sqrt(fan)
        else:
            arrays[name] = arr
    return TensorBundle(arrays)


def test_08_gradcheck(capsys):
    with criterion(capsys, 8, 120.0,
                   "finite differences agree with hand gradients < 1e-4"):
        # -- enhancer objective through the decoder ----------------------
        cfg = EnhancerConfig(n_layers=1, attn_dim=8, ff_dim=12, n_heads=2,
                             n_mels=4, audio_feat_dim=4, visual_feat_dim=0,
                             rel_pos_clip=4)
        params = AudioParams(n_mels=4)
        rng = np.random.default_rng(4)
        noisy = MelSpectrogram(rng.normal(size=(6, 4)), params)
        clean = MelSpectrogram(rng.normal(size=(6, 4)), params)
        bundle = init_weights(enhancer_manifest(cfg), seed=5)

        def enh_loss(b):
            return enhancer_loss(enhancer_forward(noisy, None, b, cfg), clean)

        pred, hidden = enhancer_forward(noisy, None, bundle, cfg,
                                        return_hidden=True)
        sign = np.sign(pred.frames - clean.frames)
        n_cells = clean.frames.size

        def enh_analytic(name, idx):
            if name == "enhancer.decoder.weight":
                o, i = np.unravel_index(idx, bundle[name].shape)
                return float(np.sum(sign[:, o] * hidden[:, i]) / n_cells)
            if name == "enhancer.decoder.bias":
                return float(np.sum(sign[:, idx]) / n_cells)
            return None

        err = finite_diff_gradcheck(
            enh_loss, bundle, n_probes=8, seed=6, analytic=enh_analytic,
            tensor_names=["enhancer.decoder.weight", "enhancer.decoder.bias"],
        )
        assert err < 1e-4, f"enhancer decoder gradcheck {err:.3e}"
        # secant consistency across the remaining tensors
        assert finite_diff_gradcheck(enh_loss, bundle, n_probes=6, seed=7) < 1e-4

        # -- generator objective through the discriminators --------------
        vcfg = VocoderConfig(initial_channels=32, mpd_channels=(4, 8, 16, 32, 32),
                             msd_channels=(16, 16, 32, 64, 128, 128, 128))
        dweights = _rescaled_disc_weights(vcfg, seed=11)
        grng = np.random.default_rng(3)
        w_clean = Waveform(grng.uniform(-1, 1, 4096), 16000)
        gen_out = Waveform(
            np.tanh(w_clean.samples + 0.1 * grng.standard_normal(4096)), 16000
        )
        lw = LossWeights()

        def gen_loss(b):
            return generator_loss(w_clean, gen_out,
                                  discriminate(w_clean, b, vcfg),
                                  discriminate(gen_out, b, vcfg), lw).total

        outs_r = discriminate(w_clean, dweights, vcfg)
        outs_f = discriminate(gen_out, dweights, vcfg)

        # last scale-discriminator conv: 1-D, kernel 3, pad 1
        a_r = np.pad(outs_r[5].features[-2], ((0, 0), (1, 1)))
        a_f = np.pad(outs_f[5].features[-2], ((0, 0), (1, 1)))
        s_r, s_f = outs_r[5].score, outs_f[5].score
        n_s = s_f.size
        sgn = np.sign(s_r - s_f)

        # last period-discriminator conv: 2-D, kernel (3, 1), pad (1, 0)
        ar2 = np.pad(outs_r[0].features[-2], ((0, 0), (1, 1), (0, 0)))
        af2 = np.pad(outs_f[0].features[-2], ((0, 0), (1, 1), (0, 0)))
        sr2, sf2 = outs_r[0].score, outs_f[0].score
        n2 = sf2.size
        sgn2 = np.sign(sr2 - sf2)
        h2 = sf2.shape[1]

        def disc_analytic(name, idx):
            if name == "msd.s0.conv_post.weight":
                _, c, k = np.unravel_index(idx, dweights[name].shape)
                d_adv = 2.0 / n_s * np.sum((s_f[0] - 1.0) * a_f[c, k:k + n_s])
                d_fm = 1.0 / n_s * np.sum(
                    sgn[0] * (a_r[c, k:k + n_s] - a_f[c, k:k + n_s]))
                return float(lw.adv * d_adv + lw.fm * d_fm)
            if name == "msd.s0.conv_post.bias":
                return float(lw.adv * 2.0 / n_s * np.sum(s_f - 1.0))
            if name == "mpd.p2.conv_post.weight":
                _, c, kh, _ = np.unravel_index(idx, dweights[name].shape)
                d_adv = 2.0 / n2 * np.sum((sf2[0] - 1.0) * af2[c, kh:kh + h2, :])
                d_fm = 1.0 / n2 * np.sum(
                    sgn2[0] * (ar2[c, kh:kh + h2, :] - af2[c, kh:kh + h2, :]))
                return float(lw.adv * d_adv + lw.fm * d_fm)
            if name == "mpd.p2.conv_post.bias":
                return float(lw.adv * 2.0 / n2 * np.sum(sf2 - 1.0))
            return None

        err = finite_diff_gradcheck(
            gen_loss, dweights, n_probes=10, seed=5, analytic=disc_analytic,
            tensor_names=["msd.s0.conv_post.weight", "msd.s0.conv_post.bias",
                          "mpd.p2.conv_post.weight", "mpd.p2.conv_post.bias"],
        )
        assert err < 1e-4, f"generator-objective gradcheck {err:.3e}"


def test_09_micro_training_descends(capsys):
    with criterion(capsys, 9, 300.0,
                   "micro demo reaches <= 70% of initial loss in 200 steps"):
        losses = micro_train_demo(seed=0, steps=200)
        assert losses.shape == (201,)
        assert np.all(np.isfinite(losses))
        assert losses[-1] <= 0.70 * losses[0], (
            f"loss only reached {losses[-1] / losses[0]:.1%} of start"
        )


ENH_TOY = {
    "n_layers": 1, "attn_dim": 16, "ff_dim": 24, "n_heads": 2,
    "n_mels": 20, "audio_feat_dim": 8, "visual_feat_dim": 0,
    "rel_pos_clip": 8,
}


def test_10_cli_end_to_end(tmp_path, capsys):
    with criterion(capsys, 10, 120.0,
                   "mix -> enhance (all inversions) -> eval via the CLI"):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({
            "audio": {"n_mels": 20},
            "enhancer": ENH_TOY,
            "vocoder": {"initial_channels": 16, "n_mels": 20},
        }))
        cfg = str(cfg_path)

        # corpus: 2 clean utterances, 3 noises, 2 interferers each
        lines = []
        for i in range(2):
            clean = tmp_path / f"clean{i}.wav"
            write_wav(clean, speech_like(1.0, seed=i))
            noises = []
            for j in range(3):
                p = tmp_path / f"noise{i}{j}.wav"
                write_wav(p, noise_clip(16000, seed=10 * i + j))
                noises.append(str(p))
            intfs = []
            for j in range(2):
                p = tmp_path / f"intf{i}{j}.wav"
                write_wav(p, speech_like(1.0, seed=50 + 10 * i + j))
                intfs.append(str(p))
            lines.append(f"{clean},{';'.join(noises)},{';'.join(intfs)},0,0,{i}")
        manifest = tmp_path / "manifest.txt"
        manifest.write_text("\n".join(lines) + "\n")

        mix_dir = tmp_path / "mixed"
        assert main(["mix", "--manifest", str(manifest), "--condition", "2",
                     "--out-dir", str(mix_dir)]) == 0
        mix_log = json.loads((mix_dir / "mix_log.json").read_text())
        assert all(e["snr_db"] == -5.0 and e["n_noises"] == 3
                   for e in mix_log["entries"])

        enh_w = tmp_path / "enh.lvwt"
        voc_w = tmp_path / "voc.lvwt"
        assert main(["init-weights", "--model", "enhancer", "--seed", "1",
                     "--out", str(enh_w), "--config", cfg]) == 0
        assert main(["init-weights", "--model", "vocoder", "--seed", "2",
                     "--out", str(voc_w), "--config", cfg]) == 0

        noisy_wav = mix_dir / "noisy" / "0001_clean0.wav"
        enh_dir = tmp_path / "enhanced"
        for invert in ("griffin-lim", "noisy-phase", "vocoder"):
            argv = ["enhance", "--audio", str(noisy_wav),
                    "--weights", str(enh_w), "--out", "wav",
                    "--invert", invert, "--gl-iters", "4",
                    "--out-dir", str(enh_dir), "--config", cfg]
            if invert == "vocoder":
                argv += ["--vocoder-weights", str(voc_w)]
            assert main(argv) == 0
        produced = sorted(p.name for p in enh_dir.glob("*.wav"))
        assert produced == ["0001_clean0_griffin_lim.wav",
                            "0001_clean0_noisy_phase.wav",
                            "0001_clean0_vocoder.wav"]
        for p in enh_dir.glob("*.wav"):
            assert np.all(np.isfinite(read_wav(p).samples))

        # control: scoring the noisy mix against itself improves nothing
        jpath = tmp_path / "report.json"
        assert main(["eval", "--ref", str(mix_dir / "clean"),
                     "--deg", str(mix_dir / "noisy"),
                     "--noisy", str(mix_dir / "noisy"),
                     "--metrics", "mcd,spec_mse",
                     "--json", str(jpath)]) == 0
        agg = json.loads(jpath.read_text())["aggregate_improvement"]
        assert agg["mcd"] == 0.0
        assert agg["spec_mse"] == 0.0
