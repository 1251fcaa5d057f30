"""Training loop, evaluation and the per-epoch metrics log."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .checkpoint import save_checkpoint
from .config import RunConfig
from .data import DatasetError, SegSample, SplitSpec, batches, load_dataset, split, synthetic_ellipses
from .losses import ConfusionCounts, accumulate, confusion, deep_supervision_loss
from .model import EGEUNet, build
from .optim import adamw_step, lr_at
from .tensor import Tape, Tensor, backward

METRICS_HEADER = ("epoch", "train_loss", "val_miou", "val_dsc", "lr", "wall_seconds")


@dataclass
class MetricsRow:
    epoch: int
    train_loss: float
    val_miou: float
    val_dsc: float
    lr: float
    wall_seconds: float

    def csv(self) -> str:
        return ",".join([str(self.epoch)] + [repr(float(getattr(self, k))) for k in METRICS_HEADER[1:]])


@dataclass
class TrainResult:
    model: EGEUNet
    rows: list[MetricsRow] = field(default_factory=list)
    best_epoch: int = 0
    best_miou: float = -1.0


def load_run_data(cfg: RunConfig) -> tuple[list[SegSample], list[SegSample]]:
    """Train/validation samples for a run; the held-out split doubles as validation.

    With ``data.split_ratio = 1`` there is no held-out part and validation
    runs on the training images.
    """
    size = cfg["image.size"]
    if cfg["data.dir"]:
        samples = load_dataset(cfg["data.dir"], size)
    elif cfg["data.synthetic"] > 0:
        samples = synthetic_ellipses(cfg["data.synthetic"], size, seed=cfg["data.seed"])
    else:
        raise DatasetError("set data.dir (or data.synthetic for generated images)")
    if not samples:
        raise DatasetError(f"no images found in {cfg['data.dir']}")
    if len(samples) == 1 or cfg["data.split_ratio"] >= 1.0:
        return list(samples), list(samples)
    train, val = split(samples, SplitSpec(cfg["data.split_ratio"], cfg["data.seed"]))
    if not train:
        raise DatasetError("split leaves no training images")
    return train, val or train


def predict_logits(model: EGEUNet, images: np.ndarray, batch_size: int = 8) -> np.ndarray:
    dtype = model.parameters()[0].dtype
    out = []
    for start in range(0, len(images), batch_size):
        final, _ = model(Tensor(np.asarray(images[start:start + batch_size], dtype=dtype)))
        out.append(final.data)
    return np.concatenate(out) if out else np.zeros((0, 1) + tuple(images.shape[-2:]), dtype=dtype)


def evaluate(model: EGEUNet, samples: Sequence[SegSample], batch_size: int = 8,
             threshold: float = 0.5) -> ConfusionCounts:
    """Dataset-level confusion counts, pooled over every pixel of every sample."""
    if not samples:
        raise DatasetError("empty evaluation set")
    counts = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        logits = predict_logits(model, np.stack([s.image for s in chunk]), batch_size)
        counts.append(confusion(logits, np.stack([s.mask for s in chunk]), threshold))
    return accumulate(counts)


def train_step(model: EGEUNet, images: np.ndarray, masks: np.ndarray, cfg: RunConfig, opt) -> float:
    params = model.parameters()
    dtype = params[0].dtype
    with Tape() as tape:
        final, aux = model(Tensor(images.astype(dtype, copy=False)))
        loss = deep_supervision_loss([final] + aux, masks.astype(dtype, copy=False), cfg.loss_weights())
    grads = backward(loss, tape, params)
    adamw_step(params, grads, opt)
    return loss.item()


def train(cfg: RunConfig, train_samples: Sequence[SegSample], val_samples: Sequence[SegSample],
          out_dir=None, workers: int = 1, model: EGEUNet | None = None,
          log: Callable[[MetricsRow], None] | None = None) -> TrainResult:
    """Run the full recipe. With ``out_dir`` writes metrics.csv and checkpoints as it goes."""
    model = model or build(cfg.model_config())
    opt = cfg.optimizer()
    sched = cfg.schedule()
    result = TrainResult(model)
    out = Path(out_dir) if out_dir is not None else None
    metrics_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out / "metrics.csv", "w", encoding="utf-8", newline="")
        metrics_fh.write(",".join(METRICS_HEADER) + "\n")
    try:
        for epoch in range(cfg["train.epochs"]):
            t0 = time.perf_counter()
            opt.lr = lr_at(sched, epoch)
            total, seen = 0.0, 0
            for imgs, masks, _ in batches(train_samples, cfg["train.batch_size"], cfg["seed"], epoch,
                                          cfg["data.augment"], cfg["data.rotation"], workers):
                total += train_step(model, imgs, masks, cfg, opt) * len(imgs)
                seen += len(imgs)
            counts = evaluate(model, val_samples, cfg["train.batch_size"], cfg["eval.threshold"])
            wall = time.perf_counter() - t0 if cfg["train.record_time"] else 0.0
            row = MetricsRow(epoch + 1, total / seen, counts.miou, counts.dsc, opt.lr, wall)
            result.rows.append(row)
            if row.val_miou > result.best_miou:
                result.best_miou, result.best_epoch = row.val_miou, row.epoch
                if out is not None:
                    save_checkpoint(model, out / "best.egeu")
            if metrics_fh is not None:
                metrics_fh.write(row.csv() + "\n")
                metrics_fh.flush()
                if row.epoch % cfg["train.ckpt_every"] == 0:
                    save_checkpoint(model, out / f"epoch_{row.epoch:04d}.egeu")
            if log is not None:
                log(row)
        if out is not None:
            save_checkpoint(model, out / "last.egeu")
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    return result


def read_metrics(path) -> list[MetricsRow]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or tuple(lines[0].split(",")) != METRICS_HEADER:
        raise ValueError(f"{path}: unexpected metrics header")
    rows = []
    for line in lines[1:]:
        f = line.split(",")
        rows.append(MetricsRow(int(f[0]), *(float(v) for v in f[1:])))
    return rows
