"""The full recognition network: ten spatial+temporal blocks, global
average pooling and an affine classifier over logits."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError
from .graph import SkeletonGraph, build_partitioned_adjacency
from .nn import BatchNorm, Linear, Module
from .ops import global_average_pool
from .rng import stream
from .spatial import SPATIAL_VARIANTS, SpatialBlock
from .temporal import TEMPORAL_VARIANTS, TemporalBlock
from .tensor import Tensor, reshape, transpose

DEFAULT_CHANNELS = (64, 64, 64, 64, 128, 128, 128, 256, 256, 256)
DEFAULT_STRIDES = (1, 1, 1, 1, 2, 1, 1, 2, 1, 1)
CANONICAL_BLOCKS = 10


@dataclass(frozen=True)
class NetworkConfig:
    spatial_variant: str = "tcagc"
    temporal_variant: str = "espmst"
    block_channels: Tuple[int, ...] = DEFAULT_CHANNELS
    block_strides: Tuple[int, ...] = DEFAULT_STRIDES
    in_channels: int = 3
    joints: int = 18
    persons: int = 1
    class_count: int = 400
    # depth != 10 is allowed only for gradient-check builds
    reduced_depth: bool = False

    def __post_init__(self):
        object.__setattr__(self, "block_channels", tuple(self.block_channels))
        object.__setattr__(self, "block_strides", tuple(self.block_strides))
        if self.spatial_variant not in SPATIAL_VARIANTS:
            raise ConfigurationError(f"unknown spatial variant {self.spatial_variant!r}")
        if self.temporal_variant not in TEMPORAL_VARIANTS:
            raise ConfigurationError(f"unknown temporal variant {self.temporal_variant!r}")
        if len(self.block_channels) != len(self.block_strides):
            raise ConfigurationError("block_channels and block_strides lengths differ")
        if len(self.block_channels) != CANONICAL_BLOCKS and not self.reduced_depth:
            raise ConfigurationError(
                f"the network has {CANONICAL_BLOCKS} blocks; "
                "set reduced_depth=True for test builds")
        if self.temporal_variant in ("mst", "espmst"):
            bad = [c for c in self.block_channels if c % 4 != 0]
            if bad:
                raise ConfigurationError(
                    f"multi-scale temporal widths must divide by 4, got {bad}")
        if self.class_count < 1 or self.in_channels < 1 or self.persons < 1:
            raise ConfigurationError("class_count, in_channels, persons must be >= 1")

    @property
    def block_count(self) -> int:
        return len(self.block_channels)

    def with_classes(self, class_count: int) -> "NetworkConfig":
        return replace(self, class_count=class_count)


def config_fingerprint(config: NetworkConfig) -> bytes:
    """32-byte digest of the backbone topology (class count excluded,
    so a checkpoint stays compatible across classifier replacement)."""
    text = "|".join([
        "v1",
        f"spatial={config.spatial_variant}",
        f"temporal={config.temporal_variant}",
        "channels=" + ",".join(map(str, config.block_channels)),
        "strides=" + ",".join(map(str, config.block_strides)),
        f"in={config.in_channels}",
        f"joints={config.joints}",
        f"persons={config.persons}",
    ])
    return hashlib.sha256(text.encode()).digest()


class _Block(Module):
    def __init__(self, spatial: SpatialBlock, temporal: TemporalBlock):
        super().__init__()
        self.spatial = self.add_child("spatial", spatial)
        self.temporal = self.add_child("temporal", temporal)

    def forward(self, x: Tensor) -> Tensor:
        return self.temporal(self.spatial(x))


class SkeFiNetwork(Module):
    """Input normalization, block stack, pooling, classifier."""

    def __init__(self, config: NetworkConfig, graph: SkeletonGraph,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        if graph.joint_count != config.joints:
            raise ConfigurationError(
                f"config expects {config.joints} joints, graph has {graph.joint_count}")
        self.config = config
        self.graph = graph
        self.dtype = dtype
        adjacency = build_partitioned_adjacency(graph)

        feat = config.in_channels * config.joints * config.persons
        self.input_bn = self.add_child("input_bn", BatchNorm(feat, dtype=dtype))

        self.blocks = []
        c_in = config.in_channels
        for i, (c_out, stride_) in enumerate(
                zip(config.block_channels, config.block_strides), start=1):
            blk = _Block(
                SpatialBlock(config.spatial_variant, c_in, c_out, adjacency,
                             rng=rng, dtype=dtype),
                TemporalBlock(config.temporal_variant, c_out, c_out,
                              stride=stride_, rng=rng, dtype=dtype),
            )
            self.add_child(f"block{i}", blk)
            self.blocks.append(blk)
            c_in = c_out

        self.fc = self.add_child("fc", Linear(c_in, config.class_count,
                                              rng=rng, dtype=dtype))
        for name, p in self.named_parameters():
            p.name = name

    def forward(self, batch: Tensor) -> Tensor:
        return network_forward(self, batch)


def build_network(config: NetworkConfig, graph: SkeletonGraph, seed: int = 0,
                  dtype=np.float32) -> SkeFiNetwork:
    """Construct the network deterministically from a seed."""
    return SkeFiNetwork(config, graph, rng=stream(seed, "init"), dtype=dtype)


def network_forward(net: SkeFiNetwork, batch) -> Tensor:
    """Logits for a (B, C, T, N, M) batch; persons pooled at the end."""
    if not isinstance(batch, Tensor):
        batch = Tensor(np.asarray(batch, dtype=net.dtype))
    if batch.ndim != 5:
        raise DimensionError(f"expected (B, C, T, N, M) input, got shape {batch.shape}")
    b, c, t, n, m = batch.shape
    cfg = net.config
    if n != cfg.joints:
        raise DimensionError(f"input has {n} joints, network expects {cfg.joints}")
    if c != cfg.in_channels:
        raise DimensionError(f"input has {c} channels, network expects {cfg.in_channels}")
    if m != cfg.persons:
        raise DimensionError(f"input has {m} persons, network expects {cfg.persons}")
    if t < 4:
        raise ContractError(f"need at least 4 frames, got {t}")

    # normalize per (person, joint, channel) feature over the batch and time
    x = transpose(batch, (0, 4, 3, 1, 2))            # (B, M, N, C, T)
    x = reshape(x, (b, m * n * c, t, 1))
    x = net.input_bn(x)
    x = reshape(x, (b, m, n, c, t))

    # fold persons into the batch for the block stack
    x = transpose(x, (0, 1, 3, 4, 2))                # (B, M, C, T, N)
    x = reshape(x, (b * m, c, t, n))
    for blk in net.blocks:
        x = blk(x)

    _, c_f, t_f, _ = x.shape
    x = reshape(x, (b, m, c_f, t_f, n))
    x = transpose(x, (0, 2, 3, 4, 1))                # (B, C, T', N, M)
    x = global_average_pool(x)                       # (B, C)
    return net.fc(x)


def count_parameters(net: SkeFiNetwork) -> int:
    return sum(p.data.size for _, p in net.named_parameters())
