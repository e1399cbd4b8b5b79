"""A desk-scale demonstration that the enhancer objective is minimizable.

A ~400-parameter single-block enhancer fits one synthetic (noisy, clean)
mel pair by plain SGD, with gradients from central finite differences.
This is deliberately tiny: it verifies the loss surface and forward pass
end to end without an autodiff engine or real training.
"""
from __future__ import annotations

import numpy as np

from ..dsp import AudioParams, MelSpectrogram
from .enhancer import EnhancerConfig, enhancer_forward, enhancer_loss, enhancer_manifest
from .tensors import TensorBundle, init_weights

__all__ = ["micro_train_demo", "micro_config"]


def micro_config() -> EnhancerConfig:
    """Audio-only toy dimensions; 410 trainable parameters."""
    return EnhancerConfig(
        n_layers=1,
        attn_dim=6,
        ff_dim=8,
        n_heads=2,
        n_mels=4,
        audio_feat_dim=4,
        visual_feat_dim=0,
        rel_pos_clip=4,
    )


def _toy_pair(cfg: EnhancerConfig, rng) -> tuple[MelSpectrogram, MelSpectrogram]:
    params = AudioParams(n_mels=cfg.n_mels)
    t = 6
    base = np.linspace(0, 2 * np.pi, t)[:, None] + np.arange(cfg.n_mels)[None, :]
    clean = np.sin(base)
    noisy = clean + 0.5 * rng.standard_normal(clean.shape)
    return MelSpectrogram(noisy, params), MelSpectrogram(clean, params)


def micro_train_demo(
    seed: int = 0,
    steps: int = 200,
    lr: float = 0.05,
    fd_step: float = 1e-4,
) -> np.ndarray:
    """Run the demo; returns the loss trajectory (length steps + 1, entry 0
    is the initial loss). Deterministic per seed; lr = 0 gives a flat line."""
    cfg = micro_config()
    rng = np.random.default_rng(seed)
    noisy, clean = _toy_pair(cfg, rng)
    bundle = init_weights(enhancer_manifest(cfg), seed)

    def loss_of(b: TensorBundle) -> float:
        return enhancer_loss(enhancer_forward(noisy, None, b, cfg), clean)

    losses = [loss_of(bundle)]
    for _ in range(steps):
        arrays = {}
        for name in bundle.names():
            base = bundle[name]
            grad = np.zeros_like(base)
            work = dict(bundle.arrays)
            probe = base.copy()
            work[name] = probe
            probed = TensorBundle(work)
            # TensorBundle copies arrays on construction; grab the live view
            probe = probed.arrays[name]
            for i in range(base.size):
                orig = probe.flat[i]
                probe.flat[i] = orig + fd_step
                hi = loss_of(probed)
                probe.flat[i] = orig - fd_step
                lo = loss_of(probed)
                probe.flat[i] = orig
                grad.flat[i] = (hi - lo) / (2.0 * fd_step)
            arrays[name] = base - lr * grad
        bundle = TensorBundle(arrays)
        losses.append(loss_of(bundle))
    return np.array(losses)
