"""Training loop, data splits and validation-based model selection.

The same loop serves pretraining on noisy labels, supervised training on
clean labels, and fine-tuning (which only differs in where the weights
start).
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Adam, Tensor, bce_with_logits
from .config import TrainConfig
from .dataio import Checkpoint
from .errors import EmptyHistory, EmptyTrainSet, InsufficientSamples, InvariantViolation, ShapeMismatch
from .metrics import evaluate
from .radar import RadarImage, SegMask
from .unet import UNetConfig, UNetModel, binarize, embed_center

log = logging.getLogger(__name__)

PROVENANCES = ("noisy", "human", "synthetic-truth")


@dataclass(frozen=True, eq=False)
class Sample:
    image: RadarImage
    mask: SegMask
    provenance: str = "synthetic-truth"
    sample_id: str = ""

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise InvariantViolation(f"unknown provenance {self.provenance!r}")
        if self.mask.bits.shape != self.image.values.shape:
            raise ShapeMismatch(f"mask {self.mask.bits.shape} vs image {self.image.values.shape}")


@dataclass
class DatasetSplit:
    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def __post_init__(self):
        seen = {}
        for part in ("train", "val", "test"):
            for s in getattr(self, part):
                key = _identity(s)
                if key in seen and seen[key] != part:
                    raise InvariantViolation(f"sample {key!r} appears in both {seen[key]} and {part}")
                seen[key] = part


def _identity(s):
    return getattr(s, "sample_id", None) or id(s)


def split_fixed(samples, counts, seed: int = 0) -> DatasetSplit:
    """Seeded shuffle, then cut into (train, val, test) of exactly ``counts``."""
    n_train, n_val, n_test = counts
    if min(counts) < 0:
        raise InsufficientSamples(f"negative split count in {counts}")
    samples = list(samples)
    if n_train + n_val + n_test > len(samples):
        raise InsufficientSamples(f"need {n_train + n_val + n_test} samples, have {len(samples)}")
    order = np.random.default_rng(seed).permutation(len(samples))
    picked = [samples[i] for i in order]
    return DatasetSplit(
        train=picked[:n_train],
        val=picked[n_train : n_train + n_val],
        test=picked[n_train + n_val : n_train + n_val + n_test],
    )


@dataclass(frozen=True)
class HistoryEntry:
    epoch: int
    train_loss: float
    val_metric: float
    checkpoint_id: str


@dataclass
class TrainHistory:
    entries: list = field(default_factory=list)
    metric: str = "dice"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_metric", "checkpoint_id"])
        for e in self.entries:
            w.writerow([e.epoch, repr(e.train_loss), repr(e.val_metric), e.checkpoint_id])
        return buf.getvalue()


def checkpoint_id(epoch: int) -> str:
    return f"epoch{epoch:04d}"


def select_best(history: TrainHistory, metric: str | None = None) -> str:
    """Checkpoint id of the best epoch: highest dice or lowest loss, earliest on ties."""
    if not history.entries:
        raise EmptyHistory("no epochs recorded")
    metric = metric or history.metric
    best = history.entries[0]
    for e in history.entries[1:]:
        if (metric == "dice" and e.val_metric > best.val_metric) or (metric == "loss" and e.val_metric < best.val_metric):
            best = e
    return best.checkpoint_id


def _stack(samples, dtype, out_hw):
    x = np.stack([s.image.values for s in samples])[:, None].astype(dtype)
    t = np.stack([s.mask.bits for s in samples])[:, None].astype(dtype)
    v = np.stack([s.image.valid for s in samples])[:, None]
    h, w = out_hw
    if (h, w) != x.shape[2:]:
        top, left = (x.shape[2] - h) // 2, (x.shape[3] - w) // 2
        t = t[:, :, top : top + h, left : left + w]
        v = v[:, :, top : top + h, left : left + w]
    return Tensor(x), np.ascontiguousarray(t), np.ascontiguousarray(v)


def batch_loss(model: UNetModel, samples, pos_weight: float = 1.0) -> Tensor:
    size = samples[0].image.size
    x, t, v = _stack(samples, model.dtype, model.output_size(size, size))
    return bce_with_logits(model.forward(x), t, v, pos_weight)


def mean_loss(model: UNetModel, samples, pos_weight: float = 1.0, batch_size: int = 8) -> float:
    """Pixel-weighted mean loss over ``samples`` without building a tape for training."""
    total, pixels = 0.0, 0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        size = chunk[0].image.size
        _, _, v = _stack(chunk, model.dtype, model.output_size(size, size))
        n = int(v.sum())
        total += float(batch_loss(model, chunk, pos_weight).data) * n
        pixels += n
    return total / pixels


def predict_samples(model: UNetModel, samples, threshold: float = 0.5, batch_size: int = 8):
    masks = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        x = Tensor(np.stack([s.image.values for s in chunk])[:, None].astype(model.dtype))
        logits = model.forward(x).data[:, 0]
        for s, lg in zip(chunk, logits):
            bits = embed_center(binarize(lg, threshold), s.image.size) & s.image.valid
            masks.append(SegMask(bits=bits.astype(np.uint8), provenance="predicted"))
    return masks


def dice_on(model: UNetModel, samples, threshold: float = 0.5) -> float:
    preds = predict_samples(model, samples, threshold)
    return evaluate([(p, s.mask, s.image.valid) for p, s in zip(preds, samples)]).dice


def _load_params(model: UNetModel, tensors: dict):
    for name, p in model.params.items():
        p.data[...] = tensors[name]


def train(model: UNetModel, split: DatasetSplit, config: TrainConfig | None = None,
          provenance: str | None = None):
    """Train ``model`` in place; return ``(best_checkpoint, history)``.

    Each epoch: (optionally) shuffle with the run's RNG, walk mini-batches
    (the last may be short), minimize mean BCE with Adam, then score the
    validation set. The weights of the best epoch are loaded back into
    ``model`` before returning. Without a validation set the training
    samples are scored instead.
    """
    config = config or TrainConfig()
    if not split.train:
        raise EmptyTrainSet("training split is empty")
    size = split.train[0].image.size
    for s in list(split.train) + list(split.val):
        if s.image.size != size:
            raise ShapeMismatch("all samples must share one grid size")
    model.output_size(size, size)
    provenance = provenance or split.train[0].provenance
    meta = {"provenance": provenance, "train.seed": config.seed, "train.lr": repr(config.lr),
            "train.batch_size": config.batch_size, "train.pos_weight": repr(config.pos_weight)}

    history = TrainHistory(metric=config.selection_metric)
    if config.epochs == 0:
        return model.to_checkpoint(epoch=0, **meta), history

    rng = np.random.default_rng(config.seed)
    opt = Adam(model.params, lr=config.lr)
    val = split.val or split.train
    best_params, best_value, best_epoch, stale = None, None, 0, 0
    n = len(split.train)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        losses = []
        for start in range(0, n, config.batch_size):
            batch = [split.train[i] for i in order[start : start + config.batch_size]]
            opt.zero_grad()
            loss = batch_loss(model, batch, config.pos_weight)
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
        train_loss = float(np.mean(losses))
        if config.selection_metric == "dice":
            value = dice_on(model, val)
            better = best_value is None or value > best_value
        else:
            value = mean_loss(model, val, config.pos_weight)
            better = best_value is None or value < best_value
        history.entries.append(HistoryEntry(epoch, train_loss, value, checkpoint_id(epoch)))
        log.info("epoch %d: train_loss=%.5f val_%s=%.5f", epoch, train_loss, config.selection_metric, value)
        if better:
            best_value, best_epoch, stale = value, epoch, 0
            best_params = {k: p.data.copy() for k, p in model.params.items()}
        else:
            stale += 1
            if config.patience and stale >= config.patience:
                log.info("early stop after epoch %d", epoch)
                break

    _load_params(model, best_params)
    return model.to_checkpoint(epoch=best_epoch, checkpoint_id=checkpoint_id(best_epoch), **meta), history


def finetune(start: Checkpoint, split: DatasetSplit, config: TrainConfig | None = None,
             model_config: UNetConfig | None = None):
    """Continue training every layer of ``start`` on a (clean-labelled) split.

    Raises :class:`CheckpointMismatch` when ``start`` does not fit
    ``model_config``.
    """
    model = UNetModel.from_checkpoint(start, model_config)
    ckpt, history = train(model, split, config)
    ckpt.metadata["finetuned_from"] = start.metadata.get("checkpoint_id", "initial")
    return ckpt, history
