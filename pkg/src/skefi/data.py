"""Dataset handling: import-style preprocessing, augmentation, a synthetic
noisy-skeleton generator, and the on-disk dataset format.

Dataset file layout (SKDS, binary, little-endian)::

    magic "SKDS" (4 bytes)
    version      u32 = 1
    class_count  u32
    sample_count u32
    C, T, N, M   u32 each
    layout_id    u32          (0 = kinetics18, 1 = coco17)
    per sample:  label u32, then C*T*N*M float32 values, row-major

Clips are channels-first (C, T, N) with an optional person axis appended
at dataset level: stored samples are (C, T, N, M).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractError, DimensionError, FormatError
from .graph import KINETICS18_SWAP_PAIRS, LAYOUT_IDS, LAYOUT_NAMES
from .rng import per_sample

_MAGIC = b"SKDS"
_VERSION = 1
_HEADER = struct.Struct("<4s8I")

# root entropy anchoring per-class motion signatures; independent of the
# run seed so datasets generated with different seeds share class meaning
_MOTION_ROOT = 0x5AEF1


@dataclass
class SkeletonDataset:
    """A stack of equally-shaped labeled skeleton clips."""

    data: np.ndarray          # (S, C, T, N, M) float32
    labels: np.ndarray        # (S,) int64, < class_count
    class_count: int
    layout_id: str = "kinetics18"
    provenance: str = "synthetic"

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.data.ndim != 5:
            raise DimensionError(f"dataset array must be (S,C,T,N,M), got {self.data.shape}")
        if len(self.labels) != self.data.shape[0]:
            raise DimensionError("labels and samples disagree in count")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ContractError("labels must lie in [0, class_count)")
        if self.layout_id not in LAYOUT_IDS:
            raise FormatError(f"unknown layout id {self.layout_id!r}")

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape[1:]


@dataclass(frozen=True)
class SynthConfig:
    class_count: int = 8
    samples_per_class: int = 50
    frames: int = 30
    jitter: float = 0.02
    frame_drop_prob: float = 0.0
    drop_burst_len: int = 4
    seed: int = 0
    # shifts which motion signatures the classes use, so disjoint synthetic
    # domains can be generated; labels always stay 0..class_count-1
    class_offset: int = 0

    def __post_init__(self):
        if not (0.0 <= self.frame_drop_prob <= 1.0):
            raise ContractError("frame_drop_prob must lie in [0, 1]")
        if self.jitter < 0:
            raise ContractError("jitter must be nonnegative")
        if self.drop_burst_len < 1:
            raise ContractError("drop_burst_len must be >= 1")


# ----------------------------------------------------------------------
# import-style preprocessing


def mmfi_preprocess(raw: np.ndarray) -> np.ndarray:
    """(3, 297, 17) keypoints -> (3, 300, 18).

    Pads three zero frames at the end and appends a joint that is, in
    every frame, the exact midpoint of joints 0 and 7.
    """
    raw = np.asarray(raw, dtype=np.float32)
    if raw.shape != (3, 297, 17):
        raise DimensionError(f"expected a (3, 297, 17) sequence, got {raw.shape}")
    seq = np.zeros((3, 300, 18), dtype=np.float32)
    seq[:, :297, :17] = raw
    seq[:, :, 17] = (seq[:, :, 0] + seq[:, :, 7]) * np.float32(0.5)
    return seq


def _swap_permutation(n: int, swap_pairs: Sequence[Tuple[int, int]]) -> np.ndarray:
    perm = np.arange(n)
    for a, b in swap_pairs:
        perm[a], perm[b] = b, a
    return perm


def mirror_clip(clip: np.ndarray,
                swap_pairs: Sequence[Tuple[int, int]] = KINETICS18_SWAP_PAIRS) -> np.ndarray:
    """Left-right mirror: negate x and exchange paired joints.

    Negation about the origin keeps the map an exact involution in
    float arithmetic; y and confidence channels are untouched.
    """
    clip = np.asarray(clip)
    perm = _swap_permutation(clip.shape[-1], swap_pairs)
    out = clip[..., perm].copy()
    out[0] = -out[0]
    return out


def segment_and_mirror(seq: np.ndarray, clip_len: int = 30,
                       swap_pairs: Sequence[Tuple[int, int]] = KINETICS18_SWAP_PAIRS
                       ) -> List[np.ndarray]:
    """Cut a sequence into consecutive clips and append their mirrors."""
    seq = np.asarray(seq, dtype=np.float32)
    c, t, n = seq.shape
    if t % clip_len != 0:
        raise ContractError(f"clip length {clip_len} must divide {t} frames")
    clips = [np.ascontiguousarray(seq[:, i * clip_len:(i + 1) * clip_len, :])
             for i in range(t // clip_len)]
    clips += [mirror_clip(clip, swap_pairs) for clip in clips]
    return clips


def pad_frames(clip: np.ndarray, target_t: int) -> np.ndarray:
    """Zero-pad the frame axis to ``target_t``, split evenly with the odd
    frame at the end; original frames are preserved verbatim."""
    clip = np.asarray(clip)
    t = clip.shape[1]
    if target_t < t:
        raise ContractError(f"cannot pad {t} frames down to {target_t}")
    lead = (target_t - t) // 2
    trail = target_t - t - lead
    pad = [(0, 0)] * clip.ndim
    pad[1] = (lead, trail)
    return np.pad(clip, pad)


def random_rotate_translate(clip: np.ndarray, rng: np.random.Generator,
                            max_angle: float, max_shift: float) -> np.ndarray:
    """One planar rotation about the clip centroid plus one translation,
    shared by all frames and joints; channel 2 (confidence) untouched."""
    clip = np.asarray(clip, dtype=np.float32)
    angle = rng.uniform(-max_angle, max_angle)
    dx = rng.uniform(-max_shift, max_shift)
    dy = rng.uniform(-max_shift, max_shift)
    if angle == 0.0 and dx == 0.0 and dy == 0.0:
        return clip.copy()
    out = clip.copy()
    cx = clip[0].mean()
    cy = clip[1].mean()
    ca, sa = np.cos(angle), np.sin(angle)
    x = clip[0] - cx
    y = clip[1] - cy
    out[0] = (cx + ca * x - sa * y + dx).astype(np.float32)
    out[1] = (cy + sa * x + ca * y + dy).astype(np.float32)
    return out


def inject_frame_loss(clip: np.ndarray, drop_prob: float, burst_len: int,
                      rng: np.random.Generator) -> np.ndarray:
    """Zero whole frame bursts, mimicking sensor dropouts.

    The frame axis is cut into consecutive bursts of ``burst_len`` and
    each is zeroed independently with probability ``drop_prob``, so the
    expected zeroed fraction equals ``drop_prob``. Lost frames match the
    zero-padding convention and are indistinguishable from padding.
    """
    if not (0.0 <= drop_prob <= 1.0):
        raise ContractError("drop_prob must lie in [0, 1]")
    if burst_len < 1:
        raise ContractError("burst_len must be >= 1")
    clip = np.asarray(clip)
    t = clip.shape[1]
    out = clip.copy()
    for start in range(0, t, burst_len):
        if rng.random() < drop_prob:
            out[:, start:start + burst_len] = 0
    return out


# ----------------------------------------------------------------------
# synthetic generator

# resting pose on the kinetics18 layout, (x, y) per joint, roughly in
# [-1, 1] with y pointing up
_BASE_POSE = np.array([
    [0.00, 0.85],    # nose
    [0.00, 0.65],    # neck
    [-0.20, 0.62],   # right shoulder
    [-0.32, 0.35],   # right elbow
    [-0.38, 0.08],   # right wrist
    [0.20, 0.62],    # left shoulder
    [0.32, 0.35],    # left elbow
    [0.38, 0.08],    # left wrist
    [-0.12, 0.05],   # right hip
    [-0.14, -0.40],  # right knee
    [-0.15, -0.85],  # right ankle
    [0.12, 0.05],    # left hip
    [0.14, -0.40],   # left knee
    [0.15, -0.85],   # left ankle
    [-0.06, 0.90],   # right eye
    [0.06, 0.90],    # left eye
    [-0.13, 0.86],   # right ear
    [0.13, 0.86],    # left ear
], dtype=np.float32)


def _motion_signature(identity: int):
    """Deterministic per-class motion parameters, independent of run seed."""
    ss = np.random.SeedSequence(entropy=_MOTION_ROOT, spawn_key=(identity,))
    rng = np.random.Generator(np.random.PCG64(ss))
    n = _BASE_POSE.shape[0]
    freq = rng.uniform(1.0, 3.5)
    moving = rng.random(n) < 0.5
    if not moving.any():
        moving[int(rng.integers(n))] = True
    amp = rng.uniform(0.08, 0.30, size=(n, 2)).astype(np.float32)
    amp *= moving[:, None]
    phase = rng.uniform(0.0, 2 * np.pi, size=(n, 2)).astype(np.float32)
    return freq, amp, phase


def synth_generate(config: SynthConfig) -> SkeletonDataset:
    """Parametric per-class joint trajectories with jitter and frame loss.

    Each class is a fixed signature of sinusoidal joint motions (distinct
    frequency, amplitudes, phases); samples of a class differ by a random
    global phase. The confidence channel is 1 until frame loss zeroes it.
    Pure function of the config.
    """
    t = config.frames
    n = _BASE_POSE.shape[0]
    total = config.class_count * config.samples_per_class
    data = np.zeros((total, 3, t, n, 1), dtype=np.float32)
    labels = np.zeros(total, dtype=np.int64)
    ticks = np.arange(t, dtype=np.float32) / t

    idx = 0
    for cls in range(config.class_count):
        freq, amp, phase = _motion_signature(cls + config.class_offset)
        for _ in range(config.samples_per_class):
            rng = per_sample(config.seed, "synth", idx)
            global_phase = rng.uniform(0.0, 2 * np.pi)
            # (T, N, 2) trajectory around the base pose
            arg = 2 * np.pi * freq * ticks[:, None, None] + global_phase + phase[None]
            coords = _BASE_POSE[None] + amp[None] * np.sin(arg)
            if config.jitter > 0:
                coords = coords + rng.normal(0.0, config.jitter, size=coords.shape)
            clip = np.ones((3, t, n), dtype=np.float32)
            clip[0] = coords[:, :, 0]
            clip[1] = coords[:, :, 1]
            if config.frame_drop_prob > 0:
                clip = inject_frame_loss(clip, config.frame_drop_prob,
                                         config.drop_burst_len, rng)
            data[idx, :, :, :, 0] = clip
            labels[idx] = cls
            idx += 1
    return SkeletonDataset(data, labels, config.class_count,
                           layout_id="kinetics18", provenance="synthetic")


# ----------------------------------------------------------------------
# dataset-level conveniences


def pad_dataset(ds: SkeletonDataset, target_t: int) -> SkeletonDataset:
    """Apply the symmetric frame padding to every sample."""
    s, c, t, n, m = ds.data.shape
    if target_t == t:
        return ds
    if target_t < t:
        raise ContractError(f"cannot pad {t} frames down to {target_t}")
    lead = (target_t - t) // 2
    trail = target_t - t - lead
    data = np.pad(ds.data, ((0, 0), (0, 0), (lead, trail), (0, 0), (0, 0)))
    return replace(ds, data=data)


def pad_persons(ds: SkeletonDataset, target_m: int) -> SkeletonDataset:
    """Zero-pad the person axis (for transfer onto a wider-M backbone)."""
    m = ds.data.shape[4]
    if target_m == m:
        return ds
    if target_m < m:
        raise ContractError(f"cannot reduce {m} persons to {target_m}")
    data = np.pad(ds.data, ((0, 0), (0, 0), (0, 0), (0, 0), (0, target_m - m)))
    return replace(ds, data=data)


# ----------------------------------------------------------------------
# SKDS serialization


def save_dataset(ds: SkeletonDataset, path: str):
    s, c, t, n, m = ds.data.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, ds.class_count, s, c, t, n, m,
                              LAYOUT_IDS[ds.layout_id]))
        flat = np.ascontiguousarray(ds.data, dtype="<f4")
        for i in range(s):
            fh.write(struct.pack("<I", int(ds.labels[i])))
            fh.write(flat[i].tobytes())


def load_dataset(path: str) -> SkeletonDataset:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise FormatError(
                f"truncated header: got {len(head)} bytes at offset 0, "
                f"need {_HEADER.size}")
        magic, version, class_count, count, c, t, n, m, layout_raw = _HEADER.unpack(head)
        if magic != _MAGIC:
            raise FormatError(f"bad magic {magic!r} at offset 0, expected {_MAGIC!r}")
        if version != _VERSION:
            raise FormatError(f"unsupported dataset version {version} at offset 4")
        if layout_raw not in LAYOUT_NAMES:
            raise FormatError(f"unknown layout id {layout_raw} at offset 32")
        sample_bytes = c * t * n * m * 4
        data = np.zeros((count, c, t, n, m), dtype=np.float32)
        labels = np.zeros(count, dtype=np.int64)
        offset = _HEADER.size
        for i in range(count):
            rec = fh.read(4 + sample_bytes)
            if len(rec) < 4 + sample_bytes:
                raise FormatError(
                    f"truncated sample {i} at offset {offset}: got {len(rec)} "
                    f"of {4 + sample_bytes} bytes")
            (label,) = struct.unpack_from("<I", rec)
            if label >= class_count:
                raise FormatError(f"label {label} out of range at offset {offset}")
            labels[i] = label
            data[i] = np.frombuffer(rec, dtype="<f4", offset=4).reshape(c, t, n, m)
            offset += 4 + sample_bytes
        trailing = fh.read(1)
        if trailing:
            raise FormatError(f"trailing bytes at offset {offset}")
    return SkeletonDataset(data, labels, class_count,
                           layout_id=LAYOUT_NAMES[layout_raw], provenance="imported")
