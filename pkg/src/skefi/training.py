"""Loss, optimizer, schedules, train/eval loops, checkpoints, and the
two-stage transfer procedure with block-wise freezing.

Checkpoint file layout (SKCK, binary, little-endian)::

    magic "SKCK" (4 bytes)
    version            u32 = 1
    config fingerprint 32 bytes (sha-256 of the backbone topology)
    class_count        u32
    entry_count        u32
    per entry: name_len u32, name bytes (utf-8), frozen u8,
               rank u32, dims u32 * rank, float32 payload

Entries cover every parameter and every batch-norm running statistic,
so a loaded network reproduces infer-mode outputs bit-exactly.
"""

from __future__ import annotations

import csv
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import SkeletonDataset, pad_persons
from .errors import CheckpointError, ContractError, DimensionError, FormatError
from .network import SkeFiNetwork, NetworkConfig, config_fingerprint, network_forward
from .rng import per_sample, stream
from .tensor import Tensor, _make, zero_grads

_CKPT_MAGIC = b"SKCK"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 0.1
    milestones: Tuple[int, ...] = (45, 55)
    gamma: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 128
    max_epochs: int = 65
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(self.milestones))
        if any(a >= b for a, b in zip(self.milestones, self.milestones[1:])):
            raise ContractError("milestones must be strictly increasing")
        if not (0.0 < self.gamma < 1.0):
            raise ContractError("gamma must lie in (0, 1)")


# transfer-stage defaults: the fine-tuning schedule with its shorter decay
TRANSFER_DEFAULTS = TrainConfig(base_lr=0.05, milestones=(5, 10, 15),
                                batch_size=16, max_epochs=20)
# from-scratch baseline defaults used for comparison runs
SCRATCH_DEFAULTS = TrainConfig(base_lr=0.05, milestones=(20, 40),
                               batch_size=16, max_epochs=50)


# ----------------------------------------------------------------------
# loss


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log softmax probability of the true class,
    stabilized through log-sum-exp."""
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise DimensionError(f"logits must be (B, K), got shape {logits.shape}")
    b, k = logits.shape
    if labels.shape != (b,):
        raise DimensionError(f"labels must be ({b},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ContractError(f"labels must lie in [0, {k})")

    z = logits.data
    m = z.max(axis=1, keepdims=True)
    exp = np.exp(z - m)
    total = exp.sum(axis=1, keepdims=True)
    log_probs = (z - m) - np.log(total)
    loss = -log_probs[np.arange(b), labels].mean()
    softmax = exp / total

    def grad_fn(g):
        d = softmax.copy()
        d[np.arange(b), labels] -= 1.0
        return (d * (g / b),)

    return _make(np.asarray(loss, dtype=z.dtype), (logits,), grad_fn)


# ----------------------------------------------------------------------
# optimizer and schedule


def sgd_nesterov_step(params, state: Dict[str, np.ndarray], lr: float,
                      momentum: float, weight_decay: float):
    """One update: g' = g + wd*w;  v <- mu*v + g';  w <- w - lr*(g' + mu*v).

    Frozen parameters are skipped entirely; their momentum buffers are
    never created.
    """
    for p in params:
        if p.frozen:
            continue
        g = p.tensor.grad
        if g is None:
            continue
        if weight_decay:
            g = g + weight_decay * p.data
        v = state.get(p.name)
        if v is None:
            v = np.zeros_like(p.data)
        v = momentum * v + g
        state[p.name] = v
        p.data = p.data - lr * (g + momentum * v)


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Pure function of (config, epoch): tenfold-style decay at milestones."""
    if epoch < 0:
        raise ContractError("epoch must be >= 0")
    drops = sum(1 for m in cfg.milestones if m <= epoch)
    return cfg.base_lr * cfg.gamma ** drops


# ----------------------------------------------------------------------
# freezing and transfer


def freeze_blocks(net: SkeFiNetwork, k: int):
    """Freeze blocks 1..k (parameters and normalization statistics);
    blocks k+1.., the classifier and the input norm stay trainable."""
    if not (0 <= k <= len(net.blocks)):
        raise ContractError(f"freeze depth {k} out of range 0..{len(net.blocks)}")
    for i, blk in enumerate(net.blocks, start=1):
        blk.set_frozen(i <= k)
    net.fc.set_frozen(False)
    net.input_bn.set_frozen(False)


def transfer_setup(pretrained: "Checkpoint", target_class_count: int,
                   freeze_k: int = 6, *, config: NetworkConfig,
                   graph, seed: int = 0) -> SkeFiNetwork:
    """Fresh network with the checkpoint's backbone, a re-initialized
    classifier for the target classes, and the first ``freeze_k`` blocks
    frozen. ``config`` must describe the checkpoint's backbone (the file
    stores only its fingerprint)."""
    from .network import build_network
    net = build_network(config.with_classes(target_class_count), graph, seed=seed)
    apply_checkpoint(net, pretrained, classifier=False)
    freeze_blocks(net, freeze_k)
    return net


# ----------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    fingerprint: bytes
    class_count: int
    # name -> (frozen flag, float32 array); insertion order is the file order
    entries: Dict[str, Tuple[bool, np.ndarray]]
    version: int = _CKPT_VERSION


def checkpoint_from_network(net: SkeFiNetwork) -> Checkpoint:
    entries: Dict[str, Tuple[bool, np.ndarray]] = {}
    for name, p in net.named_parameters():
        entries[name] = (p.frozen, p.data.astype(np.float32, copy=True))
    for name, buf in net.named_buffers():
        entries[name] = (False, buf.astype(np.float32, copy=True))
    return Checkpoint(config_fingerprint(net.config), net.config.class_count, entries)


def save_checkpoint(net: SkeFiNetwork, path: str) -> Checkpoint:
    ckpt = checkpoint_from_network(net)
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", ckpt.version))
        fh.write(ckpt.fingerprint)
        fh.write(struct.pack("<II", ckpt.class_count, len(ckpt.entries)))
        for name, (frozen, arr) in ckpt.entries.items():
            raw = name.encode()
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<BI", int(frozen), arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return ckpt


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()

    def need(offset, nbytes, what):
        if offset + nbytes > len(blob):
            raise FormatError(f"truncated checkpoint: {what} at offset {offset}")
        return blob[offset:offset + nbytes]

    if need(0, 4, "magic") != _CKPT_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r} at offset 0, expected {_CKPT_MAGIC!r}")
    (version,) = struct.unpack("<I", need(4, 4, "version"))
    if version != _CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version} at offset 4")
    fingerprint = bytes(need(8, 32, "fingerprint"))
    class_count, entry_count = struct.unpack("<II", need(40, 8, "counts"))
    pos = 48
    entries: Dict[str, Tuple[bool, np.ndarray]] = {}
    for _ in range(entry_count):
        (name_len,) = struct.unpack("<I", need(pos, 4, "name length"))
        pos += 4
        name = need(pos, name_len, "name").decode()
        pos += name_len
        frozen, rank = struct.unpack("<BI", need(pos, 5, f"{name} header"))
        pos += 5
        dims = struct.unpack(f"<{rank}I", need(pos, 4 * rank, f"{name} dims"))
        pos += 4 * rank
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(need(pos, 4 * count, f"{name} payload"), dtype="<f4")
        pos += 4 * count
        entries[name] = (bool(frozen), arr.reshape(dims).copy())
    if pos != len(blob):
        raise FormatError(f"trailing bytes at offset {pos}")
    return Checkpoint(fingerprint, class_count, entries, version)


def apply_checkpoint(net: SkeFiNetwork, ckpt: Checkpoint, classifier: bool = True):
    """Write checkpoint values into the network.

    With ``classifier=False`` the classifier entries are skipped on both
    sides (used by transfer). Name-set and shape mismatches raise with
    the offending parameter names.
    """

    def keep(name: str) -> bool:
        return classifier or not name.startswith("fc.")

    params = {name: p for name, p in net.named_parameters() if keep(name)}
    buffers = {name: b for name, b in net.named_buffers() if keep(name)}
    ckpt_names = {n for n in ckpt.entries if keep(n)}
    net_names = set(params) | set(buffers)
    missing = sorted(net_names - ckpt_names)
    unexpected = sorted(ckpt_names - net_names)
    if missing or unexpected:
        raise CheckpointError(
            "checkpoint does not match network: "
            f"missing {missing or 'none'}; unexpected {unexpected or 'none'}")
    if classifier and ckpt.class_count != net.config.class_count:
        raise CheckpointError(
            f"checkpoint has {ckpt.class_count} classes, network has "
            f"{net.config.class_count}")
    for name, p in params.items():
        frozen, arr = ckpt.entries[name]
        if arr.shape != p.data.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: checkpoint {arr.shape}, "
                f"network {p.data.shape}")
    if ckpt.fingerprint != config_fingerprint(net.config):
        raise CheckpointError("config fingerprint mismatch")
    for name, p in params.items():
        frozen, arr = ckpt.entries[name]
        p.data = arr.copy()
        p.frozen = frozen
    for name, buf in buffers.items():
        _, arr = ckpt.entries[name]
        if arr.shape != buf.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: checkpoint {arr.shape}, "
                f"network {buf.shape}")
        net.set_buffer(name, arr)
    # normalization layers follow their own parameters' freeze state
    for m in net.modules():
        if m._params:
            m.frozen = all(p.frozen for p in m._params.values())


# ----------------------------------------------------------------------
# evaluation


def predict_logits(net: SkeFiNetwork, ds: SkeletonDataset,
                   batch_size: int = 128) -> np.ndarray:
    net.eval()
    ds = _align_persons(net, ds)
    chunks = []
    for start in range(0, len(ds), batch_size):
        batch = Tensor(ds.data[start:start + batch_size])
        chunks.append(network_forward(net, batch).data)
    return np.concatenate(chunks, axis=0) if chunks else np.zeros((0, net.config.class_count))


def evaluate_topk(net: SkeFiNetwork, ds: SkeletonDataset,
                  k_list: Sequence[int] = (1, 5)) -> Dict[int, float]:
    """Top-k accuracy; ranking ties resolve to the lower class index."""
    k_list = [min(k, net.config.class_count) for k in k_list]
    logits = predict_logits(net, ds)
    # stable sort on -logits: descending score, ties by class index
    order = np.argsort(-logits, axis=1, kind="stable")
    out = {}
    for k in k_list:
        hits = (order[:, :k] == ds.labels[:, None]).any(axis=1)
        out[k] = float(hits.mean()) if len(ds) else 0.0
    return out


def _align_persons(net: SkeFiNetwork, ds: SkeletonDataset) -> SkeletonDataset:
    m = ds.data.shape[4]
    want = net.config.persons
    if m == want:
        return ds
    if m < want:
        return pad_persons(ds, want)
    raise DimensionError(f"dataset has {m} persons, network supports {want}")


# ----------------------------------------------------------------------
# training loop


@dataclass
class EpochStats:
    epoch: int
    lr: float
    loss: float
    train_top1: float
    val_top1: float
    val_top5: float


@dataclass
class TrainResult:
    log: List[EpochStats]
    best: Checkpoint
    best_epoch: int


TRAIN_MODES = ("pretrain", "finetune", "scratch")

AugmentFn = Callable[[np.ndarray, np.random.Generator], np.ndarray]


def train(net: SkeFiNetwork, dataset: SkeletonDataset, cfg: TrainConfig,
          mode: str = "scratch", val: Optional[SkeletonDataset] = None,
          augment: Optional[AugmentFn] = None, workers: int = 1,
          stop_at_train_top1: Optional[float] = None) -> TrainResult:
    """Run the loop; deterministic given the config seed.

    Validation defaults to the training set when no split is supplied.
    Returns the per-epoch log and the best-validation checkpoint (ties
    resolve to the earlier epoch). ``stop_at_train_top1`` ends the run
    early once the training accuracy reaches the threshold.
    """
    if mode not in TRAIN_MODES:
        raise ContractError(f"unknown mode {mode!r}; known: {TRAIN_MODES}")
    if len(dataset) == 0:
        raise ContractError("training dataset is empty")
    if dataset.class_count != net.config.class_count:
        raise ContractError(
            f"dataset has {dataset.class_count} classes, classifier has "
            f"{net.config.class_count}")
    frozen = [p.name for p in net.parameters() if p.frozen]
    if mode in ("pretrain", "scratch") and frozen:
        raise ContractError(f"{mode} expects no frozen parameters, found {frozen[:3]}")

    dataset = _align_persons(net, dataset)
    val_ds = _align_persons(net, val) if val is not None else dataset
    shuffler = stream(cfg.seed, "shuffle")
    params = list(net.parameters())
    opt_state: Dict[str, np.ndarray] = {}
    pool = ThreadPoolExecutor(workers) if (augment is not None and workers > 1) else None

    log: List[EpochStats] = []
    best: Optional[Checkpoint] = None
    best_epoch, best_acc = -1, -1.0
    size = len(dataset)
    try:
        for epoch in range(cfg.max_epochs):
            lr = lr_at_epoch(cfg, epoch)
            order = shuffler.permutation(size)
            net.train(True)
            losses, hits = [], 0
            for start in range(0, size, cfg.batch_size):
                sel = order[start:start + cfg.batch_size]
                xb = dataset.data[sel]
                if augment is not None:
                    xb = _augment_batch(xb, sel, epoch, size, cfg.seed, augment, pool)
                yb = dataset.labels[sel]
                logits = network_forward(net, Tensor(xb))
                loss = cross_entropy(logits, yb)
                zero_grads([p.tensor for p in params])
                loss.backward()
                sgd_nesterov_step(params, opt_state, lr, cfg.momentum,
                                  cfg.weight_decay)
                losses.append(loss.item() * len(sel))
                hits += int((logits.data.argmax(axis=1) == yb).sum())
            train_loss = float(np.sum(losses) / size)
            train_top1 = hits / size
            acc = evaluate_topk(net, val_ds, (1, 5))
            k5 = min(5, net.config.class_count)
            log.append(EpochStats(epoch, lr, train_loss, train_top1,
                                  acc[1], acc[k5]))
            if acc[1] > best_acc:
                best_acc, best_epoch = acc[1], epoch
                best = checkpoint_from_network(net)
            if stop_at_train_top1 is not None and train_top1 >= stop_at_train_top1:
                break
    finally:
        if pool is not None:
            pool.shutdown()
    assert best is not None
    return TrainResult(log, best, best_epoch)


def _augment_batch(xb: np.ndarray, sel: np.ndarray, epoch: int, size: int,
                   seed: int, augment: AugmentFn,
                   pool: Optional[ThreadPoolExecutor]) -> np.ndarray:
    # streams keyed by (epoch, original index): worker-count independent
    def one(pos: int) -> np.ndarray:
        rng = per_sample(seed, "augment", epoch * size + int(sel[pos]))
        out = xb[pos].copy()
        for person in range(out.shape[3]):
            out[:, :, :, person] = augment(out[:, :, :, person], rng)
        return out

    if pool is None:
        done = [one(i) for i in range(len(sel))]
    else:
        done = list(pool.map(one, range(len(sel))))
    return np.stack(done, axis=0)


def write_run_log(path: str, log: Sequence[EpochStats]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "lr", "loss", "train_top1", "val_top1", "val_top5"])
        for st in log:
            w.writerow([st.epoch, f"{st.lr:.10g}", f"{st.loss:.6f}",
                        f"{st.train_top1:.6f}", f"{st.val_top1:.6f}",
                        f"{st.val_top5:.6f}"])
