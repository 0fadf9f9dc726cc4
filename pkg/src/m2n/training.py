"""Training loops, evaluation metrics, and checkpoint serialization.

Batches average per-sample losses and take one optimizer step; shuffling,
splitting, and initialization all derive from the training seed, so a
(seed, config, dataset) triple reproduces checkpoints bit-exactly on one
platform.  The kept checkpoint is the epoch with the best validation
metric; when the validation split is empty the training split stands in.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import SegmentFeatures, split
from .network import (
    Ablation,
    M2NConfig,
    ModelParams,
    decode_cml,
    decode_sel,
    forward_cml,
    forward_sel,
    loss_cml,
    loss_sel,
)
from .optim import Adam
from .rng import Rng, derive

_TAG_EPOCH = 4

TASKS = ("sel", "cml")
DIRECTIONS = ("a2v", "v2a")


class CheckpointError(ValueError):
    """Checkpoint file is malformed or does not match the model."""


@dataclass
class TrainConfig:
    """Loop hyperparameters; checkpoint/log paths are optional side outputs."""

    task: str = "sel"
    epochs: int = 60
    batch_size: int = 32
    lr: float = 5e-4
    seed: int = 7
    ratios: tuple[float, float, float] = (0.8, 0.2, 0.0)
    ckpt_path: str | None = None
    log_path: str | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")


@dataclass
class TrainResult:
    params: ModelParams
    loss_log: list[float]
    best_val: float
    best_epoch: int
    val_log: list[float] = field(default_factory=list)


def _reachable(name: str, task: str, ablation: Ablation) -> bool:
    """Whether the loss can produce a gradient for this parameter.

    The class head only feeds the supervised task, and ablated-off modules
    never run, so those parameters must be left out of the optimizer.
    """
    prefix = name.split(".", 1)[0]
    if task == "cml" and prefix == "cls":
        return False
    if prefix == "mspm":
        # with the proposal machinery cut, only the input normalization runs
        return ablation.use_mspm or name.startswith("mspm.imn.")
    gates = {
        "cmn_v": ablation.use_cmn,
        "cmn_a": ablation.use_cmn,
        "imn_v": ablation.use_imn,
        "imn_a": ablation.use_imn,
        "masm": ablation.use_masm,
    }
    return gates.get(prefix, True)


def _sample_loss(sample: SegmentFeatures, params: ModelParams, cfg: M2NConfig,
                 task: str, ablation: Ablation) -> T.Tensor:
    if task == "sel":
        out = forward_sel(sample, params, cfg, ablation)
        return loss_sel(out, sample.video_class, sample.relevance())
    start, length = sample.event_span()
    rel = sample.relevance()
    span = slice(start, start + length)
    p_a2v = forward_cml(sample.audio[span], sample.visual, "a2v", params, cfg, ablation)
    p_v2a = forward_cml(sample.visual[span], sample.audio, "v2a", params, cfg, ablation)
    return (loss_cml(p_a2v, rel) + loss_cml(p_v2a, rel)) * 0.5


def train(dataset: list[SegmentFeatures], model_cfg: M2NConfig, cfg: TrainConfig,
          ablation: Ablation | None = None, quiet: bool = True) -> TrainResult:
    """Train on the dataset's train split and keep the best-validation epoch."""
    if not dataset:
        raise ValueError("dataset is empty")
    ablation = ablation or Ablation()
    train_idx, val_idx, _ = split(dataset, cfg.ratios, cfg.seed)
    if not train_idx:
        raise ValueError("train split is empty")
    eval_idx = val_idx if val_idx else train_idx

    params = ModelParams(model_cfg, cfg.seed)
    named = [(n, p) for n, p in params.named_parameters()
             if _reachable(n, cfg.task, ablation)]
    opt = Adam(named, lr=cfg.lr)
    loss_log: list[float] = []
    val_log: list[float] = []
    best_val, best_epoch = -1.0, -1
    best_state = params.state_dict()

    log_fh = open(cfg.log_path, "w", encoding="utf-8") if cfg.log_path else None
    try:
        for epoch in range(cfg.epochs):
            order = list(train_idx)
            Rng(derive(cfg.seed, _TAG_EPOCH, epoch)).shuffle(order)
            epoch_loss, seen = 0.0, 0
            for lo in range(0, len(order), cfg.batch_size):
                batch = order[lo:lo + cfg.batch_size]
                opt.zero_grad()
                losses = [_sample_loss(dataset[i], params, model_cfg, cfg.task, ablation)
                          for i in batch]
                total = losses[0]
                for extra in losses[1:]:
                    total = total + extra
                mean = total * (1.0 / len(batch))
                mean.backward()
                opt.step()
                epoch_loss += float(mean.item()) * len(batch)
                seen += len(batch)
            epoch_loss /= seen
            loss_log.append(epoch_loss)
            if log_fh:
                log_fh.write(f"{epoch},{epoch_loss:.6f}\n")
                log_fh.flush()

            val = _evaluate(params, model_cfg, dataset, eval_idx, cfg.task, ablation)
            val_log.append(val)
            if val > best_val:
                best_val, best_epoch = val, epoch
                best_state = params.state_dict()
            if cfg.ckpt_path:
                save_checkpoint(params.state_dict(), cfg.ckpt_path)
            if not quiet:
                print(f"epoch {epoch}: loss={epoch_loss:.4f} val={val:.4f}")
    finally:
        if log_fh:
            log_fh.close()

    params.load_state(best_state)
    if cfg.ckpt_path:
        save_checkpoint(best_state, cfg.ckpt_path)
    return TrainResult(params=params, loss_log=loss_log, best_val=best_val,
                       best_epoch=best_epoch, val_log=val_log)


def _evaluate(params, model_cfg, dataset, indices, task, ablation) -> float:
    subset = [dataset[i] for i in indices]
    if task == "sel":
        return eval_sel(params, model_cfg, subset, ablation)
    a2v = eval_cml(params, model_cfg, subset, "a2v", ablation)
    v2a = eval_cml(params, model_cfg, subset, "v2a", ablation)
    return 0.5 * (a2v + v2a)


def eval_sel(params: ModelParams, cfg: M2NConfig, samples: list[SegmentFeatures],
             ablation: Ablation | None = None) -> float:
    """Fraction of segments, pooled over samples, whose decoded label matches."""
    ablation = ablation or Ablation()
    correct = total = 0
    with T.no_grad():
        for sample in samples:
            pred = decode_sel(forward_sel(sample, params, cfg, ablation))
            correct += int((pred == sample.labels.astype(np.int64)).sum())
            total += sample.n_segments
    return correct / total if total else 0.0


def eval_cml(params: ModelParams, cfg: M2NConfig, samples: list[SegmentFeatures],
             direction: str, ablation: Ablation | None = None) -> float:
    """Fraction of samples whose decoded window equals the true span exactly."""
    ablation = ablation or Ablation()
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    correct = 0
    with T.no_grad():
        for sample in samples:
            start, length = sample.event_span()
            span = slice(start, start + length)
            query = sample.audio[span] if direction == "a2v" else sample.visual[span]
            context = sample.visual if direction == "a2v" else sample.audio
            p_r = forward_cml(query, context, direction, params, cfg, ablation)
            if decode_cml(p_r, length) == start:
                correct += 1
    return correct / len(samples) if samples else 0.0


def run_ablation(dataset: list[SegmentFeatures], model_cfg: M2NConfig, cfg: TrainConfig,
                 variants: dict[str, Ablation]) -> dict[str, float]:
    """Train each variant with identical settings; returns best-val accuracy each."""
    return {name: train(dataset, model_cfg, cfg, ablation).best_val
            for name, ablation in variants.items()}


def save_checkpoint(state: dict[str, np.ndarray], path: str) -> None:
    """Write a named-tensor container: u32 count, then per tensor a u16-length
    name, u8 rank, u32 dims, and the f32 payload; all little-endian."""
    parts = [struct.pack("<I", len(state))]
    for name, arr in state.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise CheckpointError(f"parameter name too long: {name[:32]}...")
        a = np.asarray(arr, dtype=np.float32)
        if a.ndim > 0xFF:
            raise CheckpointError(f"rank {a.ndim} exceeds format limit for {name}")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.astype("<f4").tobytes())
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()

    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise CheckpointError(f"{path}: truncated at byte {off}")
        piece = blob[off:off + n]
        off += n
        return piece

    (count,) = struct.unpack("<I", take(4))
    state: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        if name in state:
            raise CheckpointError(f"{path}: duplicate tensor name {name!r}")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n_items = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = take(4 * n_items)
        state[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes")
    return state
