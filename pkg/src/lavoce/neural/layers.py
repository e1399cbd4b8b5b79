"""Forward-pass primitives on float64 numpy arrays.

Single-utterance layout throughout (no batch axis): 1-D feature maps are
(channels, length), 2-D maps are (channels, height, width), sequences are
(time, dim). Convolutions follow the usual cross-correlation convention
with zero padding.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided
from scipy.special import erf

from ..errors import ShapeMismatch, TooShort

__all__ = [
    "linear",
    "conv1d",
    "conv_transpose1d",
    "conv2d",
    "conv3d",
    "batch_norm",
    "layer_norm",
    "relu",
    "leaky_relu",
    "gelu",
    "avg_pool1d",
    "max_pool2d",
    "softmax",
    "attention_with_relpos",
]


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """x: (..., in); w: (out, in); b: (out,)."""
    if x.shape[-1] != w.shape[1]:
        raise ShapeMismatch(f"linear: input dim {x.shape[-1]} != fan-in {w.shape[1]}")
    out = x @ w.T
    return out if b is None else out + b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def leaky_relu(x: np.ndarray, slope: float = 0.1) -> np.ndarray:
    return np.where(x >= 0.0, x, slope * x)


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def layer_norm(
    x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5
) -> np.ndarray:
    """Normalize over the last axis."""
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * gamma + beta


def batch_norm(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    eps: float = 1e-5,
) -> np.ndarray:
    """Inference-mode normalization over the leading channel axis."""
    extra = (1,) * (x.ndim - 1)
    shape = (-1,) + extra
    return (x - running_mean.reshape(shape)) / np.sqrt(
        running_var.reshape(shape) + eps
    ) * gamma.reshape(shape) + beta.reshape(shape)


# --- convolutions -------------------------------------------------------------

def conv1d(
    x: np.ndarray,
    w: np.ndarray,
    b: np.ndarray | None = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
    groups: int = 1,
) -> np.ndarray:
    """x: (C_in, L); w: (C_out, C_in/groups, K). Zero padding both ends."""
    c_in, _ = x.shape
    c_out, c_in_g, k = w.shape
    if c_in_g * groups != c_in or c_out % groups:
        raise ShapeMismatch(
            f"conv1d: {c_in} input channels, kernel {w.shape}, groups {groups}"
        )
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding)))
    span = (k - 1) * dilation + 1
    l_out = (x.shape[1] - span) // stride + 1
    if l_out < 1:
        raise TooShort(f"conv1d: length {x.shape[1]} < kernel span {span}")
    out = np.zeros((c_out, l_out))
    opg = c_out // groups
    for g in range(groups):
        xg = x[g * c_in_g : (g + 1) * c_in_g]
        wg = w[g * opg : (g + 1) * opg]
        og = out[g * opg : (g + 1) * opg]
        # one matmul per tap keeps everything in BLAS
        for kk in range(k):
            start = kk * dilation
            seg = xg[:, start : start + (l_out - 1) * stride + 1 : stride]
            og += wg[:, :, kk] @ seg
    if b is not None:
        out += b[:, None]
    return out


def conv_transpose1d(
    x: np.ndarray,
    w: np.ndarray,
    b: np.ndarray | None = None,
    stride: int = 1,
    padding: int = 0,
) -> np.ndarray:
    """x: (C_in, L); w: (C_in, C_out, K). Output length (L-1)*stride - 2*padding + K.

    Computed as zero-insertion upsampling followed by correlation with the
    flipped kernel.
    """
    c_in, length = x.shape
    w_in, c_out, k = w.shape
    if w_in != c_in:
        raise ShapeMismatch(f"conv_transpose1d: {c_in} channels, kernel {w.shape}")
    up = np.zeros((c_in, (length - 1) * stride + 1))
    up[:, ::stride] = x
    flipped = np.ascontiguousarray(w.transpose(1, 0, 2)[:, :, ::-1])
    return conv1d(up, flipped, b, stride=1, padding=k - 1 - padding)


def conv2d(
    x: np.ndarray,
    w: np.ndarray,
    b: np.ndarray | None = None,
    stride: tuple[int, int] = (1, 1),
    padding: tuple[int, int] = (0, 0),
) -> np.ndarray:
    """x: (C_in, H, W); w: (C_out, C_in, KH, KW)."""
    c_in = x.shape[0]
    c_out, w_in, kh, kw = w.shape
    if w_in != c_in:
        raise ShapeMismatch(f"conv2d: {c_in} channels, kernel {w.shape}")
    sh, sw = stride
    ph, pw = padding
    if ph or pw:
        x = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    h_out = (x.shape[1] - kh) // sh + 1
    w_out = (x.shape[2] - kw) // sw + 1
    if h_out < 1 or w_out < 1:
        raise TooShort(f"conv2d: input {x.shape} smaller than kernel ({kh},{kw})")
    s0, s1, s2 = x.strides
    win = as_strided(
        x,
        shape=(c_in, h_out, w_out, kh, kw),
        strides=(s0, s1 * sh, s2 * sw, s1, s2),
        writeable=False,
    )
    out = np.einsum("ihwjk,oijk->ohw", win, w, optimize=True)
    if b is not None:
        out += b[:, None, None]
    return out


def conv3d(
    x: np.ndarray,
    w: np.ndarray,
    b: np.ndarray | None = None,
    stride: tuple[int, int, int] = (1, 1, 1),
    padding: tuple[int, int, int] = (0, 0, 0),
) -> np.ndarray:
    """x: (C_in, T, H, W); w: (C_out, C_in, KT, KH, KW).

    Decomposed as a sum of 2-D convolutions over the temporal taps so that
    no full 5-D window tensor is ever materialized.
    """
    c_in = x.shape[0]
    c_out, w_in, kt, kh, kw = w.shape
    if w_in != c_in:
        raise ShapeMismatch(f"conv3d: {c_in} channels, kernel {w.shape}")
    st, sh, sw = stride
    pt, ph, pw = padding
    if pt:
        x = np.pad(x, ((0, 0), (pt, pt), (0, 0), (0, 0)))
    t_out = (x.shape[1] - kt) // st + 1
    if t_out < 1:
        raise TooShort(f"conv3d: {x.shape[1]} frames < kernel span {kt}")
    out = None
    for tau in range(kt):
        frames = x[:, tau : tau + (t_out - 1) * st + 1 : st]
        for t in range(t_out):
            plane = conv2d(frames[:, t], w[:, :, tau], stride=(sh, sw), padding=(ph, pw))
            if out is None:
                out = np.zeros((c_out, t_out) + plane.shape[1:])
            out[:, t] += plane
    if b is not None:
        out += b[:, None, None, None]
    return out


# --- pooling ------------------------------------------------------------------

def avg_pool1d(
    x: np.ndarray, kernel: int = 4, stride: int = 2, padding: int = 1
) -> np.ndarray:
    """x: (C, L). Zero-padded average with a constant divisor, so the
    default geometry maps length L to floor(L/2) exactly."""
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding)))
    l_out = (x.shape[1] - kernel) // stride + 1
    if l_out < 1:
        raise TooShort(f"avg_pool1d: length {x.shape[1]} < kernel {kernel}")
    s0, s1 = x.strides
    win = as_strided(
        x,
        shape=(x.shape[0], l_out, kernel),
        strides=(s0, s1 * stride, s1),
        writeable=False,
    )
    return win.mean(axis=2)


def max_pool2d(
    x: np.ndarray,
    kernel: int = 3,
    stride: int = 2,
    padding: int = 1,
) -> np.ndarray:
    """x: (C, H, W); padding uses -inf so borders never win."""
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)),
                   constant_values=-np.inf)
    h_out = (x.shape[1] - kernel) // stride + 1
    w_out = (x.shape[2] - kernel) // stride + 1
    if h_out < 1 or w_out < 1:
        raise TooShort(f"max_pool2d: input {x.shape} smaller than kernel {kernel}")
    s0, s1, s2 = x.strides
    win = as_strided(
        x,
        shape=(x.shape[0], h_out, w_out, kernel, kernel),
        strides=(s0, s1 * stride, s2 * stride, s1, s2),
        writeable=False,
    )
    return win.max(axis=(3, 4))


# --- attention ----------------------------------------------------------------

def attention_with_relpos(
    x: np.ndarray,
    qkv_w: np.ndarray,
    qkv_b: np.ndarray,
    out_w: np.ndarray,
    out_b: np.ndarray,
    relpos: np.ndarray,
    n_heads: int,
    return_attention: bool = False,
):
    """Multi-head self-attention with a learned relative position bias.

    x: (T, d); qkv_w: (3d, d); relpos: (n_heads, 2*clip + 1). The bias for
    attending from position i to j is relpos[h, clamp(j - i) + clip].
    """
    t, d = x.shape
    if d % n_heads:
        raise ShapeMismatch(f"attention: dim {d} not divisible by {n_heads} heads")
    dh = d // n_heads
    clip = (relpos.shape[1] - 1) // 2
    qkv = linear(x, qkv_w, qkv_b)
    q, k, v = np.split(qkv, 3, axis=1)
    q = q.reshape(t, n_heads, dh).transpose(1, 0, 2)
    k = k.reshape(t, n_heads, dh).transpose(1, 0, 2)
    v = v.reshape(t, n_heads, dh).transpose(1, 0, 2)
    logits = q @ k.transpose(0, 2, 1) / np.sqrt(dh)
    offsets = np.clip(np.arange(t)[None, :] - np.arange(t)[:, None], -clip, clip)
    logits += relpos[:, offsets + clip]
    weights = softmax(logits, axis=-1)
    ctx = (weights @ v).transpose(1, 0, 2).reshape(t, d)
    out = linear(ctx, out_w, out_b)
    if return_attention:
        return out, weights
    return out
