"""Stage loss (BCE + Dice), the weighted deep-supervision sum, and mIoU/DSC."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import ops
from .tensor import ShapeError, Tensor, add, as_tensor, div, make_result, mul, tsum

DEFAULT_LAMBDAS = (1.0, 0.5, 0.4, 0.3, 0.2, 0.1)
DICE_SMOOTH = 1.0


class TargetError(ValueError):
    """The target is not a binary map of the right shape."""


@dataclass(frozen=True)
class LossWeights:
    lambdas: tuple[float, ...] = DEFAULT_LAMBDAS

    def __post_init__(self):
        lam = tuple(float(v) for v in self.lambdas)
        object.__setattr__(self, "lambdas", lam)
        if len(lam) != 6:
            raise ValueError(f"expected 6 stage weights, got {len(lam)}")
        if any(v < 0 for v in lam):
            raise ValueError(f"stage weights must be non-negative, got {lam}")


def _check_pair(logits: Tensor, target) -> np.ndarray:
    y = target.data if isinstance(target, Tensor) else np.asarray(target)
    if y.shape != logits.shape:
        raise ShapeError(f"logits {logits.shape} and target {y.shape} differ in shape")
    if not np.isin(y, (0, 1)).all():
        raise TargetError("target must contain only 0 and 1")
    return y.astype(logits.dtype, copy=False)


def bce_loss(logits: Tensor, target) -> Tensor:
    """Mean binary cross-entropy computed from logits: max(x,0) - x*y + log(1+exp(-|x|))."""
    y = _check_pair(logits, target)
    x = logits.data
    per = np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))
    n = x.size

    def bw(g):
        return (g * (ops.stable_sigmoid(x) - y) / n,)

    return make_result(np.asarray(per.mean(), dtype=x.dtype), (logits,), bw, op="bce")


def dice_loss(logits: Tensor, target, smooth: float = DICE_SMOOTH) -> Tensor:
    """1 - (2 sum(p y) + s) / (sum(p) + sum(y) + s) with p = sigmoid(logits)."""
    y = as_tensor(_check_pair(logits, target), logits)
    p = ops.sigmoid(logits)
    inter = tsum(mul(p, y))
    num = add(mul(inter, 2.0), smooth)
    den = add(tsum(p), float(y.data.sum()) + smooth)
    return 1.0 - div(num, den)


def stage_loss(logits: Tensor, target) -> Tensor:
    return add(bce_loss(logits, target), dice_loss(logits, target))


def upsample_to(logits: Tensor, size: tuple[int, int]) -> Tensor:
    if logits.shape[-2:] == tuple(size):
        return logits
    return ops.resize_to(logits, size)


def deep_supervision_loss(all_logits: Sequence[Tensor], target, weights: LossWeights | None = None) -> Tensor:
    """Sum of lambda_i * (bce + dice) over six heads, index 0 being the final head.

    Each head is bilinearly upsampled to the target resolution first.
    """
    weights = weights or LossWeights()
    if len(all_logits) != 6:
        raise ValueError(f"expected 6 head outputs, got {len(all_logits)}")
    y = target.data if isinstance(target, Tensor) else np.asarray(target)
    size = y.shape[-2:]
    total = None
    for lam, logits in zip(weights.lambdas, all_logits):
        if lam == 0.0:
            continue
        term = mul(stage_loss(upsample_to(logits, size), y), lam)
        total = term if total is None else add(total, term)
    if total is None:
        total = mul(tsum(all_logits[0]), 0.0)
    return total


# ---------------------------------------------------------------------- metrics


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def iou_foreground(self) -> float:
        d = self.tp + self.fp + self.fn
        return self.tp / d if d else 1.0

    @property
    def iou_background(self) -> float:
        d = self.tn + self.fp + self.fn
        return self.tn / d if d else 1.0

    @property
    def miou(self) -> float:
        return 0.5 * (self.iou_foreground + self.iou_background)

    @property
    def dsc(self) -> float:
        d = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / d if d else 1.0


def confusion(pred_logits, target, threshold: float = 0.5) -> ConfusionCounts:
    x = pred_logits.data if isinstance(pred_logits, Tensor) else np.asarray(pred_logits)
    y = target.data if isinstance(target, Tensor) else np.asarray(target)
    if x.shape != y.shape:
        raise ShapeError(f"prediction {x.shape} and target {y.shape} differ in shape")
    if not np.isin(y, (0, 1)).all():
        raise TargetError("target must contain only 0 and 1")
    pred = ops.stable_sigmoid(np.asarray(x, dtype=np.float64)) >= threshold
    truth = y.astype(bool)
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    return ConfusionCounts(tp, fp, fn, int(pred.size) - tp - fp - fn)


def metrics(pred_logits, target, threshold: float = 0.5) -> tuple[float, float, ConfusionCounts]:
    """Dataset-level (mIoU, DSC, counts); pass lists to pool several batches."""
    if isinstance(pred_logits, (list, tuple)):
        if not pred_logits:
            raise ValueError("empty evaluation set")
        counts = accumulate(confusion(p, t, threshold) for p, t in zip(pred_logits, target))
    else:
        if np.size(pred_logits.data if isinstance(pred_logits, Tensor) else pred_logits) == 0:
            raise ValueError("empty evaluation set")
        counts = confusion(pred_logits, target, threshold)
    return counts.miou, counts.dsc, counts


def accumulate(counts: Iterable[ConfusionCounts]) -> ConfusionCounts:
    total = ConfusionCounts()
    for c in counts:
        total = total + c
    return total
