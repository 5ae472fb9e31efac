"""Segmentation scores and binary dilation.

Ratios with an empty denominator (e.g. DSC of two empty masks) are 1.0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BinaryMask, check_same_shape


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricReport:
    dsc: float
    sensitivity: float
    specificity: float
    mae: float


def _arr(m):
    return m.data if isinstance(m, BinaryMask) else np.asarray(m)


def confusion(pred: BinaryMask, gt: BinaryMask) -> ConfusionCounts:
    check_same_shape(pred, gt)
    p = _arr(pred).astype(bool)
    g = _arr(gt).astype(bool)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp, fp, fn, p.size - tp - fp - fn)


def _ratio(num: int, den: int) -> float:
    return 1.0 if den == 0 else num / den


def dsc(c: ConfusionCounts) -> float:
    return _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)


def sensitivity(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fn)


def specificity(c: ConfusionCounts) -> float:
    return _ratio(c.tn, c.tn + c.fp)


def mae(pred_values, gt: BinaryMask) -> float:
    """Mean absolute difference; ``pred_values`` may be a mask or probabilities."""
    p = _arr(pred_values).astype(np.float64)
    g = _arr(gt).astype(np.float64)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    return float(np.mean(np.abs(p - g)))


def mask_dsc(pred: BinaryMask, gt: BinaryMask) -> float:
    return dsc(confusion(pred, gt))


def report(pred: BinaryMask, gt: BinaryMask, pred_values=None) -> MetricReport:
    c = confusion(pred, gt)
    return MetricReport(
        dsc=dsc(c),
        sensitivity=sensitivity(c),
        specificity=specificity(c),
        mae=mae(pred if pred_values is None else pred_values, gt),
    )


def dilate(mask: BinaryMask, iters: int = 1) -> BinaryMask:
    """Iterated dilation with a full 3×3 structuring element."""
    if iters < 0:
        raise ValueError("iters must be >= 0")
    m = mask.data.astype(bool)
    for _ in range(iters):
        p = np.pad(m, 1)
        out = np.zeros_like(m)
        h, w = m.shape
        for di in range(3):
            for dj in range(3):
                out |= p[di:di + h, dj:dj + w]
        m = out
    return BinaryMask(m)


def summarize(values) -> tuple[float, float]:
    """Mean and population standard deviation."""
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        return float("nan"), float("nan")
    return float(v.mean()), float(v.std())


def format_mean_std(mean: float, std: float) -> str:
    return f"{mean:.4f} ± {std:.4f}"
