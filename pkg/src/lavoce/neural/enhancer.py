"""Audio-visual enhancer: mel frames in, cleaned mel frames out.

A linear layer lifts each noisy mel frame, a 3-D-stem ResNet-18 encodes the
mouth ROI per video frame, the video features are nearest-neighbor
upsampled to the audio frame rate, and the concatenation passes through a
pre-norm transformer encoder with relative position bias. A final linear
layer maps back to mel bands.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dsp import MelSpectrogram
from ..errors import NonFiniteActivation, ShapeMismatch
from ..video import VideoClip, align_indices
from .layers import (
    attention_with_relpos,
    batch_norm,
    conv2d,
    conv3d,
    gelu,
    layer_norm,
    linear,
    max_pool2d,
    relu,
)
from .tensors import TensorBundle

__all__ = [
    "EnhancerConfig",
    "enhancer_manifest",
    "visual_encode",
    "enhancer_forward",
    "enhancer_loss",
]


@dataclass(frozen=True)
class EnhancerConfig:
    """Enhancer dimensions. Defaults are full scale; every field may be
    shrunk for toy builds. visual_feat_dim = 0 drops the video branch."""

    n_layers: int = 12
    attn_dim: int = 768
    ff_dim: int = 3072
    n_heads: int = 12
    n_mels: int = 80
    audio_feat_dim: int = 256
    visual_feat_dim: int = 512
    rel_pos_clip: int = 128
    # stem channels, then the four residual stage widths
    visual_channels: tuple = (64, 64, 128, 256, 512)

    def __post_init__(self):
        if min(self.n_layers, self.attn_dim, self.ff_dim, self.n_heads,
               self.n_mels, self.audio_feat_dim) < 1:
            raise ValueError("all enhancer dimensions must be >= 1")
        if self.attn_dim % self.n_heads:
            raise ValueError(
                f"attn_dim {self.attn_dim} not divisible by {self.n_heads} heads"
            )
        if self.rel_pos_clip < 1:
            raise ValueError("rel_pos_clip must be >= 1")
        if self.visual_feat_dim < 0:
            raise ValueError("visual_feat_dim must be >= 0")
        if self.visual_feat_dim:
            if len(self.visual_channels) != 5:
                raise ValueError("visual_channels needs stem + 4 stage widths")
            if self.visual_channels[-1] != self.visual_feat_dim:
                raise ValueError(
                    f"visual_feat_dim {self.visual_feat_dim} != last trunk "
                    f"width {self.visual_channels[-1]}"
                )

    @property
    def fused_dim(self) -> int:
        return self.audio_feat_dim + self.visual_feat_dim

    def to_dict(self) -> dict:
        return {
            "n_layers": self.n_layers,
            "attn_dim": self.attn_dim,
            "ff_dim": self.ff_dim,
            "n_heads": self.n_heads,
            "n_mels": self.n_mels,
            "audio_feat_dim": self.audio_feat_dim,
            "visual_feat_dim": self.visual_feat_dim,
            "rel_pos_clip": self.rel_pos_clip,
            "visual_channels": list(self.visual_channels),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnhancerConfig":
        d = dict(d)
        if "visual_channels" in d:
            d["visual_channels"] = tuple(d["visual_channels"])
        return cls(**d)


def _bn_entries(prefix: str, ch: int) -> dict:
    return {
        f"{prefix}.gamma": (ch,),
        f"{prefix}.beta": (ch,),
        f"{prefix}.mean": (ch,),
        f"{prefix}.var": (ch,),
    }


def _visual_manifest(cfg: EnhancerConfig) -> dict:
    stem, *stages = cfg.visual_channels
    m = {"visual.stem.conv.weight": (stem, 1, 5, 7, 7)}
    m.update(_bn_entries("visual.stem.bn", stem))
    in_ch = stem
    for s, out_ch in enumerate(stages, start=1):
        for blk in range(2):
            p = f"visual.layer{s}.{blk}"
            first_in = in_ch if blk == 0 else out_ch
            m[f"{p}.conv1.weight"] = (out_ch, first_in, 3, 3)
            m.update(_bn_entries(f"{p}.bn1", out_ch))
            m[f"{p}.conv2.weight"] = (out_ch, out_ch, 3, 3)
            m.update(_bn_entries(f"{p}.bn2", out_ch))
            if blk == 0 and (first_in != out_ch or s > 1):
                m[f"{p}.down.conv.weight"] = (out_ch, first_in, 1, 1)
                m.update(_bn_entries(f"{p}.down.bn", out_ch))
        in_ch = out_ch
    return m


def enhancer_manifest(cfg: EnhancerConfig) -> dict:
    """name -> shape for every tensor the enhancer forward pass reads."""
    d = cfg.attn_dim
    m = {
        "enhancer.audio_proj.weight": (cfg.audio_feat_dim, cfg.n_mels),
        "enhancer.audio_proj.bias": (cfg.audio_feat_dim,),
        "enhancer.embed.weight": (d, cfg.fused_dim),
        "enhancer.embed.bias": (d,),
    }
    for i in range(cfg.n_layers):
        p = f"enhancer.blocks.{i}"
        m[f"{p}.ln1.gamma"] = (d,)
        m[f"{p}.ln1.beta"] = (d,)
        m[f"{p}.attn.qkv.weight"] = (3 * d, d)
        m[f"{p}.attn.qkv.bias"] = (3 * d,)
        m[f"{p}.attn.out.weight"] = (d, d)
        m[f"{p}.attn.out.bias"] = (d,)
        m[f"{p}.attn.relpos"] = (cfg.n_heads, 2 * cfg.rel_pos_clip + 1)
        m[f"{p}.ln2.gamma"] = (d,)
        m[f"{p}.ln2.beta"] = (d,)
        m[f"{p}.ff.w1.weight"] = (cfg.ff_dim, d)
        m[f"{p}.ff.w1.bias"] = (cfg.ff_dim,)
        m[f"{p}.ff.w2.weight"] = (d, cfg.ff_dim)
        m[f"{p}.ff.w2.bias"] = (d,)
    m["enhancer.ln_out.gamma"] = (d,)
    m["enhancer.ln_out.beta"] = (d,)
    m["enhancer.decoder.weight"] = (cfg.n_mels, d)
    m["enhancer.decoder.bias"] = (cfg.n_mels,)
    if cfg.visual_feat_dim:
        m.update(_visual_manifest(cfg))
    return m


# --- visual trunk -------------------------------------------------------------

def _bn(x, w: TensorBundle, prefix: str):
    return batch_norm(
        x, w[f"{prefix}.gamma"], w[f"{prefix}.beta"],
        w[f"{prefix}.mean"], w[f"{prefix}.var"],
    )


def _basic_block(x: np.ndarray, w: TensorBundle, prefix: str, stride: int):
    y = conv2d(x, w[f"{prefix}.conv1.weight"], stride=(stride, stride), padding=(1, 1))
    y = relu(_bn(y, w, f"{prefix}.bn1"))
    y = conv2d(y, w[f"{prefix}.conv2.weight"], padding=(1, 1))
    y = _bn(y, w, f"{prefix}.bn2")
    if f"{prefix}.down.conv.weight" in w:
        skip = conv2d(x, w[f"{prefix}.down.conv.weight"], stride=(stride, stride))
        skip = _bn(skip, w, f"{prefix}.down.bn")
    else:
        skip = x
    return relu(y + skip)


def visual_encode(clip: VideoClip, weights: TensorBundle, cfg: EnhancerConfig) -> np.ndarray:
    """Encode a mouth-ROI clip to one feature vector per video frame.

    3-D conv stem (kernel 5x7x7, stride 1x2x2) shared across time, then a
    per-frame 2-D residual trunk and spatial average pooling. The temporal
    stride is 1, so the output keeps T_v rows: (T_v, visual_feat_dim).
    """
    if not cfg.visual_feat_dim:
        raise ShapeMismatch("config has no video branch (visual_feat_dim = 0)")
    x = clip.frames[None]  # (1, T, 96, 96)
    x = conv3d(x, weights["visual.stem.conv.weight"],
               stride=(1, 2, 2), padding=(2, 3, 3))
    x = relu(_bn(x, weights, "visual.stem.bn"))
    t_v = x.shape[1]
    feats = np.zeros((t_v, cfg.visual_feat_dim))
    for t in range(t_v):
        f = max_pool2d(x[:, t], kernel=3, stride=2, padding=1)
        for s in range(1, 5):
            stride = 1 if s == 1 else 2
            f = _basic_block(f, weights, f"visual.layer{s}.0", stride)
            f = _basic_block(f, weights, f"visual.layer{s}.1", 1)
        feats[t] = f.mean(axis=(1, 2))
    return feats


# --- transformer encoder ------------------------------------------------------

def enhancer_forward(
    noisy_mel: MelSpectrogram,
    clip: VideoClip | None,
    weights: TensorBundle,
    cfg: EnhancerConfig,
    return_attention: bool = False,
    return_hidden: bool = False,
):
    """Predict clean mel frames from noisy mel frames plus the mouth ROI.

    Output frame count always equals the input audio frame count. With
    return_attention, also returns the per-layer (heads, T, T) softmax
    maps; with return_hidden, also returns the pre-decoder hidden states.
    """
    if noisy_mel.params.n_mels != cfg.n_mels:
        raise ShapeMismatch(
            f"mel has {noisy_mel.params.n_mels} bands, config wants {cfg.n_mels}"
        )
    frames = noisy_mel.frames
    t_audio = frames.shape[0]
    a = linear(frames, weights["enhancer.audio_proj.weight"],
               weights["enhancer.audio_proj.bias"])
    if cfg.visual_feat_dim:
        if clip is None:
            raise ShapeMismatch("audio-visual config requires a video clip")
        vfeat = visual_encode(clip, weights, cfg)
        idx = align_indices(t_audio, vfeat.shape[0],
                            noisy_mel.params.frame_rate, clip.fps)
        h = np.concatenate([a, vfeat[idx]], axis=1)
    else:
        h = a
    x = linear(h, weights["enhancer.embed.weight"], weights["enhancer.embed.bias"])

    attn_maps = []
    for i in range(cfg.n_layers):
        p = f"enhancer.blocks.{i}"
        normed = layer_norm(x, weights[f"{p}.ln1.gamma"], weights[f"{p}.ln1.beta"])
        attn_out, maps = attention_with_relpos(
            normed,
            weights[f"{p}.attn.qkv.weight"], weights[f"{p}.attn.qkv.bias"],
            weights[f"{p}.attn.out.weight"], weights[f"{p}.attn.out.bias"],
            weights[f"{p}.attn.relpos"], cfg.n_heads,
            return_attention=True,
        )
        if return_attention:
            attn_maps.append(maps)
        x = x + attn_out
        normed = layer_norm(x, weights[f"{p}.ln2.gamma"], weights[f"{p}.ln2.beta"])
        ff = linear(gelu(linear(normed, weights[f"{p}.ff.w1.weight"],
                                weights[f"{p}.ff.w1.bias"])),
                    weights[f"{p}.ff.w2.weight"], weights[f"{p}.ff.w2.bias"])
        x = x + ff

    x = layer_norm(x, weights["enhancer.ln_out.gamma"], weights["enhancer.ln_out.beta"])
    pred = linear(x, weights["enhancer.decoder.weight"], weights["enhancer.decoder.bias"])
    if not np.all(np.isfinite(pred)):
        raise NonFiniteActivation("enhancer produced non-finite mel values")
    out = MelSpectrogram(pred, noisy_mel.params)
    extras = []
    if return_attention:
        extras.append(attn_maps)
    if return_hidden:
        extras.append(x)
    if extras:
        return (out, *extras)
    return out


def enhancer_loss(pred: MelSpectrogram, target: MelSpectrogram) -> float:
    """Mean absolute difference over all (frame, band) cells."""
    if pred.frames.shape != target.frames.shape:
        raise ShapeMismatch(
            f"prediction {pred.frames.shape} vs target {target.frames.shape}"
        )
    return float(np.mean(np.abs(pred.frames - target.frames)))
