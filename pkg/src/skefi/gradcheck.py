"""Finite-difference verification of the autodiff engine.

Checks run in float64; central differences are unreliable in single
precision, which is why the engine lets a whole graph run at the dtype of
its inputs.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ContractError
from .tensor import Tensor


def gradient_check(f: Callable[[Tensor], Tensor], point: Tensor,
                   h: float = 1e-3) -> float:
    """Max relative error between autodiff and central differences.

    ``f`` maps one tensor to a scalar tensor and must be evaluable
    repeatedly (side effects must not change its output). The error at
    each coordinate is |g_ad - g_fd| / max(1, |g_ad| + |g_fd|).
    """
    x = Tensor(point.data.astype(np.float64), requires_grad=True)
    out = f(x)
    if out.ndim != 0:
        raise ContractError(f"gradient_check needs a scalar map, got shape {out.shape}")
    out.backward()
    g_ad = x.grad if x.grad is not None else np.zeros_like(x.data)

    g_fd = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    fd_flat = g_fd.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(Tensor(x.data, requires_grad=False)).item()
        flat[i] = orig - h
        lo = f(Tensor(x.data, requires_grad=False)).item()
        flat[i] = orig
        fd_flat[i] = (hi - lo) / (2.0 * h)

    denom = np.maximum(1.0, np.abs(g_ad) + np.abs(g_fd))
    return float(np.max(np.abs(g_ad - g_fd) / denom)) if flat.size else 0.0
