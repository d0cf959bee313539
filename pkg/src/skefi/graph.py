"""Skeleton graph layouts and partitioned, normalized adjacency matrices.

Two layouts ship with the package:

* ``kinetics18``: the OpenPose 18-joint topology (a tree, 17 edges),
  center joint 1 (neck).
* ``coco17``: the 17-keypoint COCO protocol with its standard limb and
  face links, center joint 0 (nose).

Adjacency math is done in float64; layers cast to their working dtype.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, ContractError

# joint index -> name, kinetics18 (OpenPose ordering)
KINETICS18_JOINTS = (
    "nose", "neck",
    "right_shoulder", "right_elbow", "right_wrist",
    "left_shoulder", "left_elbow", "left_wrist",
    "right_hip", "right_knee", "right_ankle",
    "left_hip", "left_knee", "left_ankle",
    "right_eye", "left_eye", "right_ear", "left_ear",
)

KINETICS18_EDGES = (
    (4, 3), (3, 2), (7, 6), (6, 5), (13, 12), (12, 11), (10, 9), (9, 8),
    (11, 5), (8, 2), (5, 1), (2, 1), (0, 1), (15, 0), (14, 0),
    (17, 15), (16, 14),
)

# left/right partner joints, used when mirroring clips
KINETICS18_SWAP_PAIRS = (
    (2, 5), (3, 6), (4, 7), (8, 11), (9, 12), (10, 13), (14, 15), (16, 17),
)

COCO17_JOINTS = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)

COCO17_EDGES = (
    (15, 13), (13, 11), (16, 14), (14, 12), (11, 12), (5, 11), (6, 12),
    (5, 6), (5, 7), (6, 8), (7, 9), (8, 10), (1, 2), (0, 1), (0, 2),
    (1, 3), (2, 4),
)

LAYOUT_IDS: Dict[str, int] = {"kinetics18": 0, "coco17": 1}
LAYOUT_NAMES: Dict[int, str] = {v: k for k, v in LAYOUT_IDS.items()}


@dataclass(frozen=True)
class SkeletonGraph:
    joint_count: int
    edges: Tuple[Tuple[int, int], ...]
    center_joint: int
    layout_id: str

    def __post_init__(self):
        for i, j in self.edges:
            if not (0 <= i < self.joint_count and 0 <= j < self.joint_count):
                raise ConfigurationError(f"edge ({i},{j}) out of range")
            if i == j:
                raise ConfigurationError(f"self-edge at joint {i}")
        if not is_connected(self.joint_count, self.edges):
            raise ConfigurationError("skeleton graph must be connected")

    def joint_names(self) -> Tuple[str, ...]:
        return KINETICS18_JOINTS if self.layout_id == "kinetics18" else COCO17_JOINTS


def build_skeleton_graph(layout_id: str) -> SkeletonGraph:
    if layout_id == "kinetics18":
        return SkeletonGraph(18, KINETICS18_EDGES, center_joint=1,
                             layout_id="kinetics18")
    if layout_id == "coco17":
        return SkeletonGraph(17, COCO17_EDGES, center_joint=0,
                             layout_id="coco17")
    raise ConfigurationError(
        f"unknown layout {layout_id!r}; known: {sorted(LAYOUT_IDS)}")


def _neighbors(n: int, edges: Sequence[Tuple[int, int]]) -> List[List[int]]:
    adj: List[List[int]] = [[] for _ in range(n)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    return adj


def hop_distances(n: int, edges: Sequence[Tuple[int, int]], source: int) -> np.ndarray:
    """BFS hop distance from ``source`` on the undirected graph."""
    adj = _neighbors(n, edges)
    dist = np.full(n, -1, dtype=np.int64)
    dist[source] = 0
    q = deque([source])
    while q:
        u = q.popleft()
        for v in adj[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


def is_connected(n: int, edges: Sequence[Tuple[int, int]]) -> bool:
    return bool((hop_distances(n, edges, 0) >= 0).all())


def spatial_partition(graph: SkeletonGraph) -> List[np.ndarray]:
    """Split each root's neighborhood into self / centripetal / centrifugal.

    Returns three 0/1 matrices indexed [root, neighbor]. Subset 1 holds
    neighbors at least as close to the center as the root (equidistant
    neighbors tie-break into it); subset 2 holds strictly farther ones.
    """
    n = graph.joint_count
    dist = hop_distances(n, graph.edges, graph.center_joint)
    self_loop = np.eye(n, dtype=np.float64)
    toward = np.zeros((n, n), dtype=np.float64)
    away = np.zeros((n, n), dtype=np.float64)
    for i, j in graph.edges:
        for root, nbr in ((i, j), (j, i)):
            if dist[nbr] <= dist[root]:
                toward[root, nbr] = 1.0
            else:
                away[root, nbr] = 1.0
    return [self_loop, toward, away]


def normalize_adjacency(raw: np.ndarray, epsilon: float = 0.001) -> np.ndarray:
    """Degree-normalize: out = D^{-1/2} raw D^{-1/2}, D_ii = row_sum_i + eps.

    The epsilon keeps empty rows well defined (they map to zero rows),
    and zero entries of ``raw`` stay exactly zero.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[0] != raw.shape[1]:
        raise ContractError(f"adjacency must be square, got shape {raw.shape}")
    if (raw < 0).any():
        raise ContractError("adjacency entries must be nonnegative")
    inv_sqrt = 1.0 / np.sqrt(raw.sum(axis=1) + epsilon)
    return inv_sqrt[:, None] * raw * inv_sqrt[None, :]


@dataclass(frozen=True)
class PartitionedAdjacency:
    """The K_v normalized joint-mixing matrices for one skeleton layout."""

    subsets: Tuple[np.ndarray, ...]
    epsilon: float = 0.001
    kv: int = field(default=3)

    def __post_init__(self):
        if len(self.subsets) != self.kv:
            raise ConfigurationError(
                f"expected {self.kv} subsets, got {len(self.subsets)}")

    @property
    def joint_count(self) -> int:
        return self.subsets[0].shape[0]


def build_partitioned_adjacency(graph: SkeletonGraph,
                                epsilon: float = 0.001) -> PartitionedAdjacency:
    raws = spatial_partition(graph)
    return PartitionedAdjacency(
        subsets=tuple(normalize_adjacency(a, epsilon) for a in raws),
        epsilon=epsilon,
    )
