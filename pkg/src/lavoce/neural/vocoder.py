"""Mel-to-waveform generator and the discriminator ensembles.

The generator upsamples mel frames 256x through four transposed-conv
stages, each followed by three parallel dilated residual blocks whose
outputs are averaged, then a final conv and tanh. The ensemble is five
period discriminators (2, 3, 5, 7, 11) plus three scale discriminators
(raw, 2x, and 4x average-pooled waveforms): eight sub-discriminators.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dsp import MelSpectrogram, Waveform
from ..errors import TooShort
from .layers import avg_pool1d, conv1d, conv2d, conv_transpose1d, leaky_relu
from .tensors import TensorBundle

__all__ = [
    "VocoderConfig",
    "DiscOutput",
    "generator_manifest",
    "mpd_manifest",
    "msd_manifest",
    "discriminator_manifest",
    "vocoder_forward",
    "mpd_forward",
    "msd_forward",
    "discriminate",
]

LRELU_SLOPE = 0.1


@dataclass(frozen=True)
class VocoderConfig:
    """Generator and discriminator hyperparameters.

    The upsample rates must multiply to the 256-sample hop so that output
    length is exactly 256x the mel frame count. Channel widths may shrink
    for toy builds; the structural fields are fixed by the architecture.
    """

    upsample_rates: tuple = (8, 8, 2, 2)
    upsample_kernels: tuple = (16, 16, 4, 4)
    initial_channels: int = 512
    resblock_kernels: tuple = (3, 7, 11)
    resblock_dilations: tuple = ((1, 3, 5), (1, 3, 5), (1, 3, 5))
    n_mels: int = 80
    mpd_periods: tuple = (2, 3, 5, 7, 11)
    mpd_channels: tuple = (32, 128, 512, 1024, 1024)
    msd_scales: int = 3
    msd_channels: tuple = (128, 128, 256, 512, 1024, 1024, 1024)

    def __post_init__(self):
        if len(self.upsample_rates) != len(self.upsample_kernels):
            raise ValueError("need one kernel per upsample rate")
        if int(np.prod(self.upsample_rates)) != 256:
            raise ValueError(
                f"upsample rates {self.upsample_rates} must multiply to the "
                f"256-sample hop"
            )
        for u, k in zip(self.upsample_rates, self.upsample_kernels):
            if k < u or (k - u) % 2:
                raise ValueError(f"kernel {k} incompatible with rate {u}")
        if len(self.resblock_dilations) != len(self.resblock_kernels):
            raise ValueError("need one dilation tuple per resblock kernel")
        if self.initial_channels % (1 << len(self.upsample_rates)):
            raise ValueError(
                f"initial_channels {self.initial_channels} must be divisible "
                f"by 2^{len(self.upsample_rates)} (halved per stage)"
            )
        if self.msd_scales < 1:
            raise ValueError("need at least one scale discriminator")

    @property
    def total_upsampling(self) -> int:
        return int(np.prod(self.upsample_rates))

    @property
    def n_discriminators(self) -> int:
        return len(self.mpd_periods) + self.msd_scales

    def stage_channels(self) -> list:
        return [self.initial_channels >> (i + 1)
                for i in range(len(self.upsample_rates))]

    def to_dict(self) -> dict:
        return {
            "upsample_rates": list(self.upsample_rates),
            "upsample_kernels": list(self.upsample_kernels),
            "initial_channels": self.initial_channels,
            "resblock_kernels": list(self.resblock_kernels),
            "resblock_dilations": [list(d) for d in self.resblock_dilations],
            "n_mels": self.n_mels,
            "mpd_periods": list(self.mpd_periods),
            "mpd_channels": list(self.mpd_channels),
            "msd_scales": self.msd_scales,
            "msd_channels": list(self.msd_channels),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VocoderConfig":
        d = dict(d)
        for key in ("upsample_rates", "upsample_kernels", "resblock_kernels",
                    "mpd_periods", "mpd_channels", "msd_channels"):
            if key in d:
                d[key] = tuple(d[key])
        if "resblock_dilations" in d:
            d["resblock_dilations"] = tuple(tuple(x) for x in d["resblock_dilations"])
        return cls(**d)


def _get_padding(kernel: int, dilation: int = 1) -> int:
    return (kernel * dilation - dilation) // 2


# --- manifests ----------------------------------------------------------------

def generator_manifest(cfg: VocoderConfig) -> dict:
    m = {
        "gen.conv_pre.weight": (cfg.initial_channels, cfg.n_mels, 7),
        "gen.conv_pre.bias": (cfg.initial_channels,),
    }
    ch = cfg.initial_channels
    stage_chs = cfg.stage_channels()
    for i, (u, k) in enumerate(zip(cfg.upsample_rates, cfg.upsample_kernels)):
        m[f"gen.ups.{i}.weight"] = (ch, stage_chs[i], k)
        m[f"gen.ups.{i}.bias"] = (stage_chs[i],)
        ch = stage_chs[i]
        for j, (rk, dils) in enumerate(
            zip(cfg.resblock_kernels, cfg.resblock_dilations)
        ):
            p = f"gen.resblocks.{i * len(cfg.resblock_kernels) + j}"
            for c, _ in enumerate(dils):
                m[f"{p}.convs1.{c}.weight"] = (ch, ch, rk)
                m[f"{p}.convs1.{c}.bias"] = (ch,)
                m[f"{p}.convs2.{c}.weight"] = (ch, ch, rk)
                m[f"{p}.convs2.{c}.bias"] = (ch,)
    m["gen.conv_post.weight"] = (1, stage_chs[-1], 7)
    m["gen.conv_post.bias"] = (1,)
    return m


def mpd_manifest(cfg: VocoderConfig) -> dict:
    m = {}
    for period in cfg.mpd_periods:
        prefix = f"mpd.p{period}"
        in_ch = 1
        for i, out_ch in enumerate(cfg.mpd_channels[:-1]):
            m[f"{prefix}.convs.{i}.weight"] = (out_ch, in_ch, 5, 1)
            m[f"{prefix}.convs.{i}.bias"] = (out_ch,)
            in_ch = out_ch
        i = len(cfg.mpd_channels) - 1
        m[f"{prefix}.convs.{i}.weight"] = (cfg.mpd_channels[-1], in_ch, 5, 1)
        m[f"{prefix}.convs.{i}.bias"] = (cfg.mpd_channels[-1],)
        m[f"{prefix}.conv_post.weight"] = (1, cfg.mpd_channels[-1], 3, 1)
        m[f"{prefix}.conv_post.bias"] = (1,)
    return m


# (kernel, stride, groups) per scale-discriminator conv, original recipe
_MSD_LAYOUT = [
    (15, 1, 1),
    (41, 2, 4),
    (41, 2, 16),
    (41, 4, 16),
    (41, 4, 16),
    (41, 1, 16),
    (5, 1, 1),
]


def msd_manifest(cfg: VocoderConfig) -> dict:
    m = {}
    for scale in range(cfg.msd_scales):
        prefix = f"msd.s{scale}"
        in_ch = 1
        for i, ((k, _, groups), out_ch) in enumerate(
            zip(_MSD_LAYOUT, cfg.msd_channels)
        ):
            if in_ch % groups or out_ch % groups:
                raise ValueError(f"msd channels {cfg.msd_channels} break groups")
            m[f"{prefix}.convs.{i}.weight"] = (out_ch, in_ch // groups, k)
            m[f"{prefix}.convs.{i}.bias"] = (out_ch,)
            in_ch = out_ch
        m[f"{prefix}.conv_post.weight"] = (1, cfg.msd_channels[-1], 3)
        m[f"{prefix}.conv_post.bias"] = (1,)
    return m


def discriminator_manifest(cfg: VocoderConfig) -> dict:
    m = mpd_manifest(cfg)
    m.update(msd_manifest(cfg))
    return m


# --- generator ----------------------------------------------------------------

def _resblock(x: np.ndarray, w: TensorBundle, prefix: str,
              kernel: int, dilations) -> np.ndarray:
    for c, d in enumerate(dilations):
        xt = leaky_relu(x, LRELU_SLOPE)
        xt = conv1d(xt, w[f"{prefix}.convs1.{c}.weight"],
                    w[f"{prefix}.convs1.{c}.bias"],
                    padding=_get_padding(kernel, d), dilation=d)
        xt = leaky_relu(xt, LRELU_SLOPE)
        xt = conv1d(xt, w[f"{prefix}.convs2.{c}.weight"],
                    w[f"{prefix}.convs2.{c}.bias"],
                    padding=_get_padding(kernel, 1), dilation=1)
        x = x + xt
    return x


def vocoder_forward(mel: MelSpectrogram, weights: TensorBundle,
                    cfg: VocoderConfig | None = None) -> Waveform:
    """Synthesize a waveform from mel frames; output length is exactly
    total_upsampling (256) samples per frame, bounded by the final tanh."""
    cfg = cfg or VocoderConfig(n_mels=mel.params.n_mels)
    x = mel.frames.T  # (n_mels, T)
    x = conv1d(x, weights["gen.conv_pre.weight"], weights["gen.conv_pre.bias"],
               padding=3)
    n_kernels = len(cfg.resblock_kernels)
    for i, (u, k) in enumerate(zip(cfg.upsample_rates, cfg.upsample_kernels)):
        x = leaky_relu(x, LRELU_SLOPE)
        x = conv_transpose1d(x, weights[f"gen.ups.{i}.weight"],
                             weights[f"gen.ups.{i}.bias"],
                             stride=u, padding=(k - u) // 2)
        acc = None
        for j, (rk, dils) in enumerate(
            zip(cfg.resblock_kernels, cfg.resblock_dilations)
        ):
            y = _resblock(x, weights, f"gen.resblocks.{i * n_kernels + j}", rk, dils)
            acc = y if acc is None else acc + y
        x = acc / n_kernels
    x = leaky_relu(x, LRELU_SLOPE)
    x = conv1d(x, weights["gen.conv_post.weight"], weights["gen.conv_post.bias"],
               padding=3)
    return Waveform(np.tanh(x[0]), mel.params.sample_rate)


# --- discriminators -----------------------------------------------------------

@dataclass(frozen=True)
class DiscOutput:
    """One sub-discriminator's final map plus its per-layer features."""

    score: np.ndarray
    features: tuple

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))


def _period_disc(x: np.ndarray, w: TensorBundle, prefix: str, period: int,
                 n_convs: int) -> DiscOutput:
    length = x.shape[1]
    pad = (period - length % period) % period
    if pad:
        x = np.concatenate([x, x[:, length - pad - 1 : length - 1][:, ::-1]], axis=1)
    grid = x.reshape(1, -1, period)  # (1, L/p, p)
    feats = []
    h = grid
    for i in range(n_convs):
        stride = (3, 1) if i < n_convs - 1 else (1, 1)
        h = conv2d(h, w[f"{prefix}.convs.{i}.weight"], w[f"{prefix}.convs.{i}.bias"],
                   stride=stride, padding=(2, 0))
        h = leaky_relu(h, LRELU_SLOPE)
        feats.append(h)
    h = conv2d(h, w[f"{prefix}.conv_post.weight"], w[f"{prefix}.conv_post.bias"],
               padding=(1, 0))
    feats.append(h)
    return DiscOutput(h, feats)


def mpd_forward(wave: Waveform, weights: TensorBundle,
                cfg: VocoderConfig | None = None) -> list:
    """Run every period discriminator; reflect-pads the waveform to a
    multiple of each period before the 2-D reshape."""
    cfg = cfg or VocoderConfig()
    if len(wave) < max(cfg.mpd_periods):
        raise TooShort(
            f"waveform of {len(wave)} samples < max period {max(cfg.mpd_periods)}"
        )
    x = wave.samples[None]
    n_convs = len(cfg.mpd_channels)
    return [
        _period_disc(x, weights, f"mpd.p{p}", p, n_convs) for p in cfg.mpd_periods
    ]


def _scale_disc(x: np.ndarray, w: TensorBundle, prefix: str) -> DiscOutput:
    feats = []
    h = x
    for i, (k, stride, groups) in enumerate(_MSD_LAYOUT):
        h = conv1d(h, w[f"{prefix}.convs.{i}.weight"], w[f"{prefix}.convs.{i}.bias"],
                   stride=stride, padding=k // 2, groups=groups)
        h = leaky_relu(h, LRELU_SLOPE)
        feats.append(h)
    h = conv1d(h, w[f"{prefix}.conv_post.weight"], w[f"{prefix}.conv_post.bias"],
               padding=1)
    feats.append(h)
    return DiscOutput(h, feats)


def msd_forward(wave: Waveform, weights: TensorBundle,
                cfg: VocoderConfig | None = None) -> list:
    """Run the scale discriminators on the raw waveform and its 2x and 4x
    average-pooled versions (each pooling halves the length exactly)."""
    cfg = cfg or VocoderConfig()
    if len(wave) < 16:
        raise TooShort(f"waveform of {len(wave)} samples is too short to score")
    outs = []
    x = wave.samples[None]
    for scale in range(cfg.msd_scales):
        if scale:
            x = avg_pool1d(x, kernel=4, stride=2, padding=1)
        outs.append(_scale_disc(x, weights, f"msd.s{scale}"))
    return outs


def discriminate(wave: Waveform, weights: TensorBundle,
                 cfg: VocoderConfig | None = None) -> list:
    """Full eight-member ensemble, periods first then scales."""
    cfg = cfg or VocoderConfig()
    return mpd_forward(wave, weights, cfg) + msd_forward(wave, weights, cfg)
