"""Temporal modeling layers.

* ``sst``: one 9x1 same-padded strided convolution with batch norm.
* ``mst``: four parallel branches (two dilated 3x1 convolutions, a max
  pool, a pointwise path), each a quarter of the output width,
  concatenated.
* ``espmst``: identical parameters to ``mst``; the second output slot is
  the sum of the two dilated branches, smoothing the sampling gaps that
  dilation introduces, at zero extra parameter cost.

The ``*_forward`` functions are the cores; ``TemporalBlock`` adds the
residual path and relu.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .errors import ConfigurationError, ContractError
from .nn import BatchNorm, ConvUnit, Module
from .ops import max_pool_time, relu
from .tensor import Tensor, concat

TEMPORAL_VARIANTS = ("sst", "mst", "espmst")
SST_KERNEL = 9
BRANCH_KERNEL = 3
BRANCH_DILATIONS = (1, 2)


class TemporalBlock(Module):
    """One temporal layer of the chosen variant."""

    def __init__(self, variant: str, c_in: int, c_out: int, stride: int = 1,
                 rng: Optional[np.random.Generator] = None, dtype=np.float32,
                 residual: bool = True):
        super().__init__()
        if variant not in TEMPORAL_VARIANTS:
            raise ConfigurationError(
                f"unknown temporal variant {variant!r}; known: {TEMPORAL_VARIANTS}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.variant = variant
        self.c_in, self.c_out, self.stride = c_in, c_out, stride
        self.with_residual = residual

        if variant == "sst":
            self.conv = self.add_child(
                "conv", ConvUnit(c_in, c_out, SST_KERNEL, stride=stride,
                                 rng=rng, dtype=dtype))
            self.bn = self.add_child("bn", BatchNorm(c_out, dtype=dtype))
            self.residual = None  # identity-only; see sst_forward
        else:
            if c_out % 4 != 0:
                raise ConfigurationError(
                    f"multi-scale temporal width must divide by 4, got {c_out}")
            cb = c_out // 4
            self.branch_width = cb
            d1, d2 = BRANCH_DILATIONS
            self.reduce1 = self.add_child("reduce1", ConvUnit(c_in, cb, 1, rng=rng, dtype=dtype))
            self.conv1 = self.add_child("conv1", ConvUnit(cb, cb, BRANCH_KERNEL,
                                                          stride=stride, dilation=d1,
                                                          rng=rng, dtype=dtype))
            self.bn1 = self.add_child("bn1", BatchNorm(cb, dtype=dtype))
            self.reduce2 = self.add_child("reduce2", ConvUnit(c_in, cb, 1, rng=rng, dtype=dtype))
            self.conv2 = self.add_child("conv2", ConvUnit(cb, cb, BRANCH_KERNEL,
                                                          stride=stride, dilation=d2,
                                                          rng=rng, dtype=dtype))
            self.bn2 = self.add_child("bn2", BatchNorm(cb, dtype=dtype))
            self.reduce3 = self.add_child("reduce3", ConvUnit(c_in, cb, 1, rng=rng, dtype=dtype))
            self.bn3 = self.add_child("bn3", BatchNorm(cb, dtype=dtype))
            self.conv4 = self.add_child("conv4", ConvUnit(c_in, cb, 1, stride=stride,
                                                          rng=rng, dtype=dtype))
            self.bn4 = self.add_child("bn4", BatchNorm(cb, dtype=dtype))
            if residual and (stride != 1 or c_in != c_out):
                self.residual = self.add_child(
                    "residual", ConvUnit(c_in, c_out, 1, stride=stride, rng=rng, dtype=dtype))
            else:
                self.residual = None

    # branch outputs, each (B, C_out/4, T', N) ---------------------------

    def _dilated_branch(self, x: Tensor, which: int) -> Tensor:
        reduce = self.reduce1 if which == 1 else self.reduce2
        conv = self.conv1 if which == 1 else self.conv2
        bn = self.bn1 if which == 1 else self.bn2
        return bn(conv(relu(reduce(x))))

    def _pool_branch(self, x: Tensor) -> Tensor:
        return self.bn3(max_pool_time(self.reduce3(x), BRANCH_KERNEL, self.stride))

    def _point_branch(self, x: Tensor) -> Tensor:
        return self.bn4(self.conv4(x))

    def core_forward(self, x: Tensor) -> Tensor:
        if self.variant == "sst":
            return sst_forward(x, self)
        if self.variant == "mst":
            return mst_forward(x, self)
        return esp_mst_forward(x, self)

    def forward(self, x: Tensor) -> Tensor:
        if self.variant == "sst":
            return relu(sst_forward(x, self))
        y = self.core_forward(x)
        if self.with_residual:
            r = x if self.residual is None else self.residual(x)
            y = y + r
        return relu(y)


def _require_variant(layer: TemporalBlock, variant: str):
    if layer.variant != variant:
        raise ContractError(f"layer variant is {layer.variant!r}, expected {variant!r}")


def sst_forward(f_in: Tensor, layer: TemporalBlock) -> Tensor:
    """Single-scale core: conv + bn, identity residual when shapes allow."""
    _require_variant(layer, "sst")
    y = layer.bn(layer.conv(f_in))
    if layer.with_residual and layer.stride == 1 and layer.c_in == layer.c_out:
        y = y + f_in
    return y


def mst_forward(f_in: Tensor, layer: TemporalBlock) -> Tensor:
    """Multi-scale core: concat of the four branch outputs."""
    _require_variant(layer, "mst")
    b1 = layer._dilated_branch(f_in, 1)
    b2 = layer._dilated_branch(f_in, 2)
    b3 = layer._pool_branch(f_in)
    b4 = layer._point_branch(f_in)
    return concat([b1, b2, b3, b4], axis=-3)


def esp_mst_forward(f_in: Tensor, layer: TemporalBlock) -> Tensor:
    """Multi-scale core with the two dilated branches additively fused."""
    _require_variant(layer, "espmst")
    b1 = layer._dilated_branch(f_in, 1)
    b2 = layer._dilated_branch(f_in, 2)
    b3 = layer._pool_branch(f_in)
    b4 = layer._point_branch(f_in)
    return concat([b1, b1 + b2, b3, b4], axis=-3)
