"""Network operations over skeleton feature maps.

Feature maps are laid out channels-first: ``(B, C, T, N)`` with an
optional leading batch axis (3-d inputs are treated as a single sample).
``T`` is the frame axis, ``N`` the joint axis. All operations participate
in the autodiff graph.
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError
from .tensor import Tensor, _make, _wrap, matmul, reshape, tmean

# ----------------------------------------------------------------------
# shape helpers


def _batched(x: Tensor) -> Tuple[Tensor, bool]:
    """Promote a single-sample (C, T, N) map to (1, C, T, N)."""
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), False
    if x.ndim == 4:
        return x, True
    raise DimensionError(f"expected a (C,T,N) or (B,C,T,N) map, got shape {x.shape}")


def _debatch(x: Tensor, had_batch: bool) -> Tensor:
    return x if had_batch else reshape(x, x.shape[1:])


def conv_out_len(t: int, kernel: int, stride: int, dilation: int, same_pad: bool) -> int:
    span = (kernel - 1) * dilation + 1
    if same_pad:
        return -(-t // stride)  # ceil
    if t < span:
        raise DimensionError(f"input length {t} shorter than kernel span {span}")
    return (t - span) // stride + 1


# ----------------------------------------------------------------------
# convolution along the frame axis


def temporal_conv(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None,
                  stride: int = 1, dilation: int = 1, same_pad: bool = True) -> Tensor:
    """Cross-correlation along time only; the joint axis is untouched.

    ``kernel`` is (C_out, C_in, K) or (C_out, C_in, K, 1); same padding
    adds (K-1)*dilation/2 zeros per side, so the output has ceil(T/stride)
    frames. K must be odd. The effective receptive field is
    1 + (K-1)*dilation frames.
    """
    x, had_batch = _batched(x)
    kernel = _wrap(kernel)
    w = kernel
    if w.ndim == 4:
        if w.shape[3] != 1:
            raise DimensionError(f"temporal kernel must be K x 1, got {w.shape}")
        w = reshape(w, w.shape[:3])
    if w.ndim != 3:
        raise DimensionError(f"kernel must be (C_out, C_in, K), got {kernel.shape}")
    c_out, c_in, k = w.shape
    if k % 2 == 0:
        raise ContractError(f"temporal kernel size must be odd, got {k}")
    if dilation < 1 or stride < 1:
        raise ContractError("stride and dilation must be >= 1")
    b_, c, t, n = x.shape
    if c != c_in:
        raise DimensionError(
            f"input has {c} channels but kernel expects {c_in}")
    if bias is not None:
        bias = _wrap(bias)
        if bias.shape != (c_out,):
            raise DimensionError(f"bias must be ({c_out},), got {bias.shape}")

    pad = (k - 1) * dilation // 2 if same_pad else 0
    t_out = conv_out_len(t, k, stride, dilation, same_pad)
    xd, wd = x.data, w.data

    if pad:
        xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (0, 0)))
    else:
        xp = xd
    span = (k - 1) * dilation + 1
    # (B, C, T_windows, N, span) view, then stride/dilate by slicing.
    win = sliding_window_view(xp, span, axis=2)[:, :, ::stride][..., ::dilation]
    win = win[:, :, :t_out]
    out = np.tensordot(win, wd, axes=([1, 4], [1, 2]))  # (B, T', N, C_out)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if bias is not None:
        out += bias.data.reshape(1, c_out, 1, 1)

    t_pad = xp.shape[2]
    parents = (x, kernel) + ((bias,) if bias is not None else ())

    def grad_fn(g):
        gx = gw = gb = None
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if kernel.requires_grad:
            gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
            if kernel.ndim == 4:
                gw = gw.reshape(kernel.shape)
        if x.requires_grad:
            # (B, T', N, C_in, K) contribution, scattered back over windows
            gfull = np.tensordot(g, wd, axes=([1], [0]))
            gxp = np.zeros((b_, c_in, t_pad, n), dtype=g.dtype)
            stop = (t_out - 1) * stride + 1
            for kk in range(k):
                gxp[:, :, kk * dilation: kk * dilation + stop: stride, :] += \
                    gfull[..., kk].transpose(0, 3, 1, 2)
            gx = gxp[:, :, pad: pad + t, :] if pad else gxp
        if bias is not None:
            return (gx, gw, gb)
        return (gx, gw)

    return _debatch(_make(out, parents, grad_fn), had_batch)


def max_pool_time(x: Tensor, kernel: int = 3, stride: int = 1) -> Tensor:
    """Same-padded max pooling along the frame axis."""
    x, had_batch = _batched(x)
    b_, c, t, n = x.shape
    if kernel % 2 == 0:
        raise ContractError(f"pool kernel must be odd, got {kernel}")
    pad = (kernel - 1) // 2
    t_out = conv_out_len(t, kernel, stride, 1, True)
    neg = np.array(-np.inf, dtype=x.data.dtype)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (0, 0)), constant_values=neg)
    win = sliding_window_view(xp, kernel, axis=2)[:, :, ::stride][:, :, :t_out]
    out = win.max(axis=-1)
    amax = win.argmax(axis=-1)

    def grad_fn(g):
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        stop = (t_out - 1) * stride + 1
        for kk in range(kernel):
            gxp[:, :, kk: kk + stop: stride, :] += g * (amax == kk)
        return (gxp[:, :, pad: pad + t, :],)

    return _debatch(_make(np.ascontiguousarray(out), (x,), grad_fn), had_batch)


# ----------------------------------------------------------------------
# joint mixing and channel mixing


def joint_contract(x: Tensor, mix: Tensor) -> Tensor:
    """Mix joints: out[..., t, i] = sum_j in[..., t, j] * mix[j, i].

    ``mix`` is (N, N) shared across samples, or (B, N, N) per sample.
    """
    x, had_batch = _batched(x)
    mix = _wrap(mix)
    n = x.shape[3]
    if mix.ndim == 2:
        if mix.shape != (n, n):
            raise DimensionError(f"mix must be ({n},{n}), got {mix.shape}")
        out = matmul(x, mix)
    elif mix.ndim == 3:
        if mix.shape[1:] != (n, n) or mix.shape[0] != x.shape[0]:
            raise DimensionError(
                f"per-sample mix must be ({x.shape[0]},{n},{n}), got {mix.shape}")
        out = matmul(x, reshape(mix, (mix.shape[0], 1, n, n)))
    else:
        raise DimensionError(f"mix must be 2-d or 3-d, got shape {mix.shape}")
    return _debatch(out, had_batch)


def pointwise_transform(x: Tensor, weights: Tensor,
                        bias: Optional[Tensor] = None) -> Tensor:
    """Channel-mixing matrix applied independently at every (t, n)."""
    x, had_batch = _batched(x)
    weights = _wrap(weights)
    if weights.ndim != 2:
        raise DimensionError(f"weights must be (C_out, C_in), got {weights.shape}")
    c_out, c_in = weights.shape
    b_, c, t, n = x.shape
    if c != c_in:
        raise DimensionError(f"input has {c} channels but weights expect {c_in}")
    flat = reshape(x, (b_, c, t * n))
    out = matmul(weights, flat)  # (B, C_out, T*N) by broadcasting
    out = reshape(out, (b_, c_out, t, n))
    if bias is not None:
        bias = _wrap(bias)
        if bias.shape != (c_out,):
            raise DimensionError(f"bias must be ({c_out},), got {bias.shape}")
        out = out + reshape(bias, (1, c_out, 1, 1))
    return _debatch(out, had_batch)


# ----------------------------------------------------------------------
# nonlinearities, normalization, pooling


def relu(x: Tensor) -> Tensor:
    x = _wrap(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0), (x,), lambda g: (g * mask,))


def softmax_rows(m: Tensor) -> Tensor:
    """Row-wise softmax over the last axis, max-subtracted for stability."""
    m = _wrap(m)
    z = m.data - m.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((g - dot) * y,)

    return _make(y, (m,), grad_fn)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               running_mean: np.ndarray, running_var: np.ndarray,
               train: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over all non-channel axes.

    ``x`` is (B, C, T, N); statistics are taken over (B, T, N). In train
    mode the running arrays are updated in place with momentum; in infer
    mode they are used as-is (initialization stats count as defined
    behavior). Running variance is the biased batch variance.
    """
    x, had_batch = _batched(x)
    gamma, beta = _wrap(gamma), _wrap(beta)
    b_, c, t, n = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"gamma/beta must be ({c},)")
    axes = (0, 2, 3)
    if train:
        if b_ * t * n < 2:
            raise ContractError("train-mode batch norm needs more than one value per channel")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean.astype(x.data.dtype, copy=False)
        var = running_var.astype(x.data.dtype, copy=False)

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
    out = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)

    def grad_fn(g):
        gx = gg = gb = None
        if gamma.requires_grad:
            gg = (g * xhat).sum(axis=axes)
        if beta.requires_grad:
            gb = g.sum(axis=axes)
        if x.requires_grad:
            gi = g * gamma.data.reshape(1, c, 1, 1)
            if train:
                mean_gi = gi.mean(axis=axes, keepdims=True)
                mean_gx = (gi * xhat).mean(axis=axes, keepdims=True)
                gx = (gi - mean_gi - xhat * mean_gx) * inv.reshape(1, c, 1, 1)
            else:
                gx = gi * inv.reshape(1, c, 1, 1)
        return (gx, gg, gb)

    return _debatch(_make(out, (x, gamma, beta), grad_fn), had_batch)


def global_average_pool(x: Tensor) -> Tensor:
    """Mean over frames, joints and persons: (..., C, T, N, M) -> (..., C)."""
    x = _wrap(x)
    if x.ndim not in (4, 5):
        raise DimensionError(
            f"expected (C,T,N,M) or (B,C,T,N,M), got shape {x.shape}")
    return tmean(x, axis=(-3, -2, -1))
