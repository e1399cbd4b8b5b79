"""Finite-difference verification of the loss implementations.

There is no autodiff here by design: losses are checked by central
differences against hand-derived directional derivatives where a layer
admits one (linear and convolution parameters), and against a halved-step
secant consistency check everywhere else.
"""
from __future__ import annotations

import numpy as np

from ..errors import NonFiniteLoss
from .tensors import TensorBundle

__all__ = ["finite_diff_gradcheck", "relative_error", "central_difference"]


def relative_error(a: float, b: float) -> float:
    """|a - b| scaled by the larger magnitude; exact agreement is 0."""
    diff = abs(a - b)
    if diff == 0.0:
        return 0.0
    return diff / max(abs(a), abs(b), 1e-10)


def _eval(loss_fn, bundle: TensorBundle) -> float:
    value = float(loss_fn(bundle))
    if not np.isfinite(value):
        raise NonFiniteLoss(f"loss evaluated to {value!r}")
    return value


def central_difference(
    loss_fn, params: TensorBundle, name: str, index: int, step: float
) -> float:
    """d loss / d params[name].flat[index] by central differences."""
    base = params[name]
    bumped = base.copy()
    bumped.flat[index] = base.flat[index] + step
    hi = _eval(loss_fn, params.replaced(name, bumped))
    bumped.flat[index] = base.flat[index] - step
    lo = _eval(loss_fn, params.replaced(name, bumped))
    return (hi - lo) / (2.0 * step)


def finite_diff_gradcheck(
    loss_fn,
    params: TensorBundle,
    n_probes: int,
    seed: int = 0,
    step: float = 1e-4,
    analytic=None,
    tensor_names=None,
) -> float:
    """Probe n_probes randomly chosen scalar parameters; return the max
    relative error.

    loss_fn maps a TensorBundle to a float. analytic, when given, is a
    callable (tensor_name, flat_index) -> derivative or None; probes it
    answers are compared against it, the rest against a step/2 secant.
    tensor_names restricts the probe population.
    """
    rng = np.random.default_rng(seed)
    names = list(tensor_names) if tensor_names else params.names()
    sizes = np.array([params[n].size for n in names], dtype=np.int64)
    total = int(sizes.sum())
    if total == 0:
        raise ValueError("no parameters to probe")
    flat_choices = rng.choice(total, size=min(n_probes, total), replace=False)
    bounds = np.cumsum(sizes)

    worst = 0.0
    for flat in np.sort(flat_choices):
        t_idx = int(np.searchsorted(bounds, flat, side="right"))
        name = names[t_idx]
        index = int(flat - (bounds[t_idx] - sizes[t_idx]))
        fd = central_difference(loss_fn, params, name, index, step)
        reference = analytic(name, index) if analytic is not None else None
        if reference is None:
            reference = central_difference(loss_fn, params, name, index, step / 2.0)
        worst = max(worst, relative_error(fd, float(reference)))
    return worst
