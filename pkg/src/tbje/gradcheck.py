"""Finite-difference verification of taped gradients.

The oracle is the central difference (f(x+h) - f(x-h)) / 2h evaluated on the
raw float64 buffers; it never touches the tape. Relative errors use a small
denominator floor so that coordinates whose true derivative is ~0 are judged
by the absolute difference instead of blowing up.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .rng import make_rng
from .tensor import Tape, Tensor

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4
_ERROR_FLOOR = 1e-4


def relative_error(a, b, floor: float = _ERROR_FLOOR):
    """|a - b| scaled by max(|a|, |b|, floor), elementwise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def central_difference(f: Callable[[], float], buffer: np.ndarray, index,
                       h: float = DEFAULT_STEP) -> float:
    """Derivative of ``f`` w.r.t. one coordinate of ``buffer``, in place."""
    saved = buffer[index]
    buffer[index] = saved + h
    hi = f()
    buffer[index] = saved - h
    lo = f()
    buffer[index] = saved
    return (hi - lo) / (2.0 * h)


def check_gradients(loss_fn: Callable[[], Tensor],
                    params: Mapping[str, Tensor],
                    max_coords: int = 50,
                    h: float = DEFAULT_STEP,
                    seed: int = 0) -> dict[str, float]:
    """Max relative error between taped and finite-difference gradients.

    ``loss_fn`` must rebuild the forward pass from the current parameter
    buffers each time it is called (it is invoked many times with perturbed
    parameters). Coordinates are subsampled per tensor once ``max_coords``
    is exceeded. Returns {parameter name: max relative error}.
    """
    for p in params.values():
        p.grad = None
    with Tape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    taped = {name: np.array(p.grad if p.grad is not None else np.zeros_like(p.data))
             for name, p in params.items()}

    def evaluate() -> float:
        return loss_fn().item()

    rng = make_rng(seed, "gradcheck-coords")
    report = {}
    for name, p in params.items():
        n = p.data.size
        if n <= max_coords:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=max_coords, replace=False)
        worst = 0.0
        grads = taped[name].reshape(-1)
        for c in coords:
            # multi-index mutation works for any memory layout; a flat view
            # would silently become a copy on strided buffers
            where = np.unravel_index(int(c), p.data.shape)
            fd = central_difference(evaluate, p.data, where, h=h)
            worst = max(worst, float(relative_error(grads[c], fd)))
        report[name] = worst
    return report
