"""Central finite-difference gradient checking.

The oracle only ever calls the forward function on perturbed copies of the
data; it never looks at the tape.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def numerical_grad(f: Callable[[], Tensor], t: Tensor, h: float = 1e-5) -> np.ndarray:
    g = np.zeros(t.shape)
    flat = t.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f().item()
        flat[i] = orig - h
        fm = f().item()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """``||a - b|| / max(||a||, ||b||, floor)``.

    The floor sits well above the ~1e-11 rounding noise of a central
    difference at h=1e-5, so gradients that are exactly zero (e.g. the key
    bias under softmax shift invariance) do not read as failures.
    """
    num = np.linalg.norm(a - b)
    den = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(num / den)


def check_gradients(
    f: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-5
) -> float:
    """Largest relative error between analytic and numerical gradients of
    the scalar ``f()`` with respect to each tensor in ``tensors``."""
    for t in tensors:
        t.grad = None
    backward(f())
    worst = 0.0
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros(t.shape)
        worst = max(worst, rel_error(analytic, numerical_grad(f, t, h)))
    return worst
