"""Spatial graph-convolution layers.

Three variants share one chassis:

* ``stgc``: fixed partitioned adjacency, each subset gated by a learnable
  edge mask (initialized to ones so training starts from the plain graph).
* ``agc``: adds a freely learnable joint-mixing matrix (initialized to
  zeros) and a data-dependent affinity computed from two embeddings.
* ``tcagc``: additionally mixes in a temporal-context affinity whose
  embeddings are 9x1 same-padded temporal convolutions, so the joint
  mixing of a frame can react to neighboring frames.

The ``*_forward`` functions are the bare mixing cores; ``SpatialBlock``
wraps a core with the residual connection, batch norm and relu used
inside the network.
"""

from __future__ import annotations

from typing import List, Optional

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError
from .graph import PartitionedAdjacency
from .nn import BatchNorm, ConvUnit, Module, ModuleList, ParamList, Parameter, fan_in_uniform
from .ops import (joint_contract, pointwise_transform, relu, softmax_rows,
                  temporal_conv, _batched, _debatch)
from .tensor import Tensor, matmul, reshape, transpose

SPATIAL_VARIANTS = ("stgc", "agc", "tcagc")
TEMPORAL_EMBED_KERNEL = 9


def embed_width(c_out: int) -> int:
    """Affinity embedding channels: a quarter of the output width, floor 4."""
    return max(4, c_out // 4)


def compute_affinity(f_in: Tensor, theta_weight: Tensor, phi_weight: Tensor,
                     embed_kind: str, theta_bias: Optional[Tensor] = None,
                     phi_bias: Optional[Tensor] = None) -> Tensor:
    """Row-stochastic joint-affinity matrix from two learned embeddings.

    Both embeddings map the input to (C_e, T, N); flattening over
    channel-time and multiplying yields an N x N similarity, normalized
    by a row-wise softmax. ``embed_kind`` selects 1x1 channel maps
    ("pointwise") or 9x1 same-padded temporal convolutions ("temporal9").
    Returns (N, N) for a single sample, (B, N, N) for a batch.
    """
    x, had_batch = _batched(f_in)
    t_in = x.shape[2]

    def embed(w, b):
        if embed_kind == "pointwise":
            return pointwise_transform(x, w, b)
        if embed_kind == "temporal9":
            return temporal_conv(x, w, b, stride=1, dilation=1, same_pad=True)
        raise ConfigurationError(f"unknown embed kind {embed_kind!r}")

    e_theta = embed(theta_weight, theta_bias)
    e_phi = embed(phi_weight, phi_bias)
    b, ce, t, n = e_theta.shape
    if t != t_in:
        raise ContractError("embedding changed the frame count")
    rows = reshape(transpose(e_theta, (0, 3, 1, 2)), (b, n, ce * t))
    cols = reshape(e_phi, (b, ce * t, n))
    sim = matmul(rows, cols)
    out = softmax_rows(sim)
    return out if had_batch else reshape(out, (n, n))


class SpatialBlock(Module):
    """One spatial layer: variant core + residual + batch norm + relu."""

    def __init__(self, variant: str, c_in: int, c_out: int,
                 adjacency: PartitionedAdjacency,
                 rng: Optional[np.random.Generator] = None, dtype=np.float32):
        super().__init__()
        if variant not in SPATIAL_VARIANTS:
            raise ConfigurationError(
                f"unknown spatial variant {variant!r}; known: {SPATIAL_VARIANTS}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.variant = variant
        self.c_in, self.c_out = c_in, c_out
        self.joint_count = adjacency.joint_count
        self.kv = adjacency.kv
        # fixed graph structure, cast once to the working dtype
        self.adj = [Tensor(a.astype(dtype)) for a in adjacency.subsets]

        n = self.joint_count
        self.weight = self.add_child("weight", ParamList())
        for _ in range(self.kv):
            self.weight.append(Parameter(fan_in_uniform(rng, (c_out, c_in), c_in, dtype)))

        if variant == "stgc":
            self.edge_mask = self.add_child("edge_mask", ParamList())
            for _ in range(self.kv):
                self.edge_mask.append(Parameter(np.ones((n, n), dtype=dtype)))
        else:
            self.learned_adj = self.add_child("learned_adj", ParamList())
            for _ in range(self.kv):
                self.learned_adj.append(Parameter(np.zeros((n, n), dtype=dtype)))
            ce = embed_width(c_out)
            self.embed_dim = ce
            self.theta = self.add_child("theta", ModuleList(
                [ConvUnit(c_in, ce, 1, rng=rng, dtype=dtype) for _ in range(self.kv)]))
            self.phi = self.add_child("phi", ModuleList(
                [ConvUnit(c_in, ce, 1, rng=rng, dtype=dtype) for _ in range(self.kv)]))
            if variant == "tcagc":
                self.theta_t = self.add_child("theta_t", ModuleList(
                    [ConvUnit(c_in, ce, TEMPORAL_EMBED_KERNEL, rng=rng, dtype=dtype)
                     for _ in range(self.kv)]))
                self.phi_t = self.add_child("phi_t", ModuleList(
                    [ConvUnit(c_in, ce, TEMPORAL_EMBED_KERNEL, rng=rng, dtype=dtype)
                     for _ in range(self.kv)]))

        if c_in != c_out:
            self.residual = self.add_child(
                "residual", ConvUnit(c_in, c_out, 1, rng=rng, dtype=dtype))
        else:
            self.residual = None
        self.bn = self.add_child("bn", BatchNorm(c_out, dtype=dtype))

    # core ---------------------------------------------------------------

    def _check_joints(self, x: Tensor):
        if x.shape[-1] != self.joint_count:
            raise DimensionError(
                f"input has {x.shape[-1]} joints, layer expects {self.joint_count}")

    def core_forward(self, x: Tensor) -> Tensor:
        if self.variant == "stgc":
            return stgc_forward(x, self)
        if self.variant == "agc":
            return agc_forward(x, self)
        return tc_agc_forward(x, self)

    def forward(self, x: Tensor) -> Tensor:
        y = self.bn(self.core_forward(x))
        r = x if self.residual is None else self.residual(x)
        return relu(y + r)


def _require_variant(layer: SpatialBlock, variant: str):
    if layer.variant != variant:
        raise ContractError(f"layer variant is {layer.variant!r}, expected {variant!r}")


def stgc_forward(f_in: Tensor, layer: SpatialBlock) -> Tensor:
    """Partition-wise graph convolution with masked fixed adjacency."""
    _require_variant(layer, "stgc")
    layer._check_joints(f_in)
    out = None
    for k in range(layer.kv):
        mix = layer.adj[k] * layer.edge_mask[k].tensor
        z = pointwise_transform(joint_contract(f_in, mix), layer.weight[k].tensor)
        out = z if out is None else out + z
    return out


def _adaptive_forward(f_in: Tensor, layer: SpatialBlock,
                      include_temporal: bool) -> Tensor:
    layer._check_joints(f_in)
    x, had_batch = _batched(f_in)
    out = None
    for k in range(layer.kv):
        mix = layer.adj[k] + layer.learned_adj[k].tensor
        th, ph = layer.theta[k], layer.phi[k]
        affinity = compute_affinity(x, th.weight.tensor, ph.weight.tensor,
                                    "pointwise", th.bias.tensor, ph.bias.tensor)
        mix = mix + affinity
        if include_temporal:
            tht, pht = layer.theta_t[k], layer.phi_t[k]
            temporal_affinity = compute_affinity(
                x, tht.weight.tensor, pht.weight.tensor, "temporal9",
                tht.bias.tensor, pht.bias.tensor)
            mix = mix + temporal_affinity
        z = pointwise_transform(joint_contract(x, mix), layer.weight[k].tensor)
        out = z if out is None else out + z
    return _debatch(out, had_batch)


def agc_forward(f_in: Tensor, layer: SpatialBlock) -> Tensor:
    """Adaptive variant: fixed + learned + data-dependent joint mixing."""
    _require_variant(layer, "agc")
    return _adaptive_forward(f_in, layer, include_temporal=False)


def tc_agc_forward(f_in: Tensor, layer: SpatialBlock,
                   include_temporal_affinity: bool = True) -> Tensor:
    """Adaptive variant with the extra temporal-context affinity term.

    ``include_temporal_affinity=False`` drops that term, reproducing the
    plain adaptive forward bit for bit on shared parameters.
    """
    _require_variant(layer, "tcagc")
    return _adaptive_forward(f_in, layer, include_temporal=include_temporal_affinity)
