"""Threshold-segmentation environment: level-to-threshold mapping, the banded
segmentation, the gated exponential-DSC reward and 3-step episodes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import BinaryMask, Image2D, check_same_shape, image_max_pixel
from .metrics import dilate, mask_dsc

N_LEVELS = 50
EPISODE_STEPS = 3


@dataclass(frozen=True)
class ThresholdLevels:
    level_upper: int
    level_lower: int

    def __post_init__(self):
        for v in (self.level_upper, self.level_lower):
            if not 0 <= v < N_LEVELS:
                raise ValueError(f"threshold level {v} outside [0, {N_LEVELS - 1}]")


@dataclass(frozen=True)
class ThresholdPair:
    th_upper: float
    th_lower: float


@dataclass(frozen=True)
class RewardConfig:
    k: float = 5.0
    gate: float = 0.7
    dilation_iters: int = 1

    def __post_init__(self):
        if self.k <= 0:
            raise ValueError("k must be positive")
        if not 0 < self.gate < 1:
            raise ValueError("gate must lie in (0, 1)")
        if self.dilation_iters < 0:
            raise ValueError("dilation_iters must be >= 0")


@dataclass(frozen=True)
class EnvState:
    image: Image2D
    mask: BinaryMask
    step_index: int = 0
    gt: BinaryMask | None = field(default=None, compare=False)
    # dilated gt, computed once per episode
    gt_dilated: BinaryMask | None = field(default=None, compare=False, repr=False)

    @property
    def done(self) -> bool:
        return self.step_index >= EPISODE_STEPS


@dataclass
class EpisodeResult:
    masks: list[BinaryMask]
    final_mask: BinaryMask
    rewards: list[float]
    levels: list[ThresholdLevels]


def compute_thresholds(max_p: float, levels: ThresholdLevels) -> ThresholdPair:
    if max_p <= 0:
        raise ValueError("max pixel value must be positive")
    lo = max_p / 2
    step = (max_p - lo) / N_LEVELS
    upper = lo + step * levels.level_upper
    lower = lo + step * levels.level_lower
    if upper < lower:
        upper, lower = lower, upper
    return ThresholdPair(upper, lower)


def threshold_segment(img: Image2D, pair: ThresholdPair) -> BinaryMask:
    """Inclusive band: 1 where th_lower <= intensity <= th_upper."""
    # compare in float64 so the band edges are exactly the computed thresholds
    d = img.data.astype(np.float64)
    return BinaryMask((d >= pair.th_lower) & (d <= pair.th_upper))


def reward_exp(dsc_value: float, k: float) -> float:
    return math.expm1(k * dsc_value) / math.expm1(k)


def reward(mask: BinaryMask, gt: BinaryMask, cfg: RewardConfig = RewardConfig(),
           gt_dilated: BinaryMask | None = None) -> float:
    check_same_shape(mask, gt)
    if gt_dilated is None:
        gt_dilated = dilate(gt, cfg.dilation_iters)
    r = reward_exp(mask_dsc(mask, gt_dilated), cfg.k)
    return r if mask_dsc(mask, gt) > cfg.gate else r - 1.0


def env_reset(image: Image2D, gt: BinaryMask | None = None,
              cfg: RewardConfig = RewardConfig()) -> EnvState:
    if gt is not None:
        check_same_shape(image, gt)
    if image_max_pixel(image) <= 0:
        raise ValueError("image has no positive intensities")
    gd = dilate(gt, cfg.dilation_iters) if gt is not None else None
    return EnvState(image, BinaryMask.blank(image.shape), 0, gt, gd)


def env_step(state: EnvState, levels: ThresholdLevels, cfg: RewardConfig = RewardConfig()):
    """Return ``(next_state, reward, done)``; reward is None without ground truth."""
    if state.done:
        raise RuntimeError("episode already finished")
    pair = compute_thresholds(image_max_pixel(state.image), levels)
    mask = threshold_segment(state.image, pair)
    r = None
    if state.gt is not None:
        r = reward(mask, state.gt, cfg, state.gt_dilated)
    nxt = EnvState(state.image, mask, state.step_index + 1, state.gt, state.gt_dilated)
    return nxt, r, nxt.done


def combine_masks(masks) -> BinaryMask:
    """Pixel-wise union of the per-step masks."""
    masks = list(masks)
    if not masks:
        raise ValueError("no masks to combine")
    out = masks[0].data.astype(bool)
    for m in masks[1:]:
        check_same_shape(masks[0], m)
        out = out | m.data.astype(bool)
    return BinaryMask(out)


def brute_force_best(image: Image2D, gt: BinaryMask) -> tuple[ThresholdLevels, float]:
    """Exhaustive search of all 50×50 level pairs for the best DSC.

    Ties go to the lexicographically smallest (level_upper, level_lower).
    Vectorised over the sorted intensity list: the band [lo, hi] picks a
    contiguous run of sorted pixels, so TP/pred counts come from prefix sums.
    """
    check_same_shape(image, gt)
    max_p = image_max_pixel(image)
    vals = image.data.astype(np.float64).ravel()
    g = gt.data.ravel().astype(np.int64)
    order = np.argsort(vals, kind="stable")
    sv = vals[order]
    cum_fg = np.concatenate([[0], np.cumsum(g[order])])
    n_gt = int(g.sum())

    th = np.array([compute_thresholds(max_p, ThresholdLevels(i, 0)).th_upper
                   for i in range(N_LEVELS)])
    lo_idx = np.searchsorted(sv, th, side="left")   # first index with value >= th
    hi_idx = np.searchsorted(sv, th, side="right")  # first index with value > th

    best = (-1.0, None)
    for u in range(N_LEVELS):
        for lw in range(N_LEVELS):
            a, b = (lw, u) if lw <= u else (u, lw)
            start, stop = lo_idx[a], hi_idx[b]
            if stop > start:
                n_pred = stop - start
                tp = cum_fg[stop] - cum_fg[start]
            else:
                n_pred = tp = 0
            den = n_pred + n_gt
            d = 1.0 if den == 0 else 2 * tp / den
            if d > best[0]:
                best = (d, ThresholdLevels(u, lw))
    return best[1], float(best[0])
