"""Finite-difference verification of tape gradients."""
from __future__ import annotations

from collections.abc import Mapping

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)`` elementwise."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(fn, point, h: float = 1e-5, max_coords: int | None = None,
               seed: int = 0, floor: float = 1e-6) -> float:
    """Max relative error between tape and central-difference gradients.

    ``point`` is a Tensor or a mapping of named Tensors; ``fn`` is called with
    the same object and must return a scalar Tensor.  With ``max_coords`` only
    that many coordinates per tensor are probed (deterministic subset).
    """
    tensors = list(point.values()) if isinstance(point, Mapping) else [point]
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    out = fn(point)
    if not isinstance(out, Tensor) or out.size != 1:
        raise ShapeError("grad_check: fn must return a scalar Tensor")
    out.backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        numeric = np.empty(coords.size)
        for n, i in enumerate(coords):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn(point).item()
            flat[i] = orig - h
            fm = fn(point).item()
            flat[i] = orig
            numeric[n] = (fp - fm) / (2 * h)
        err = relative_error(analytic.reshape(-1)[coords], numeric, floor)
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
