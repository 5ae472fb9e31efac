"""Refinement network: residual encoder, pyramid pooling, skip decoder.

Input is the max-scaled image stacked with the coarse mask; output is a
per-pixel foreground probability at the input resolution.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import BinaryMask, Image2D, RngStream, check_same_shape, concat_state
from .nncore import (
    INPUT,
    Adam,
    Add,
    AvgPoolToGrid,
    ConcatCh,
    Conv2D,
    Network,
    ReLU,
    Sigmoid,
    UpsampleBilinear,
)

PROB_EPS = 1e-7


@dataclass(frozen=True)
class RefineNetSpec:
    widths: tuple[int, int, int] = (16, 32, 64)
    pool_sizes: tuple[int, ...] = (1, 2, 3, 6)
    in_ch: int = 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        d["pool_sizes"] = list(self.pool_sizes)
        return d


@dataclass(frozen=True)
class RefineLossConfig:
    lam: float = 1.0
    eps: float = PROB_EPS

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")


@dataclass(frozen=True)
class RefineTrainConfig:
    lr: float = 1e-3
    batch: int = 8
    patience: int = 5
    min_delta: float = 1e-4


def build_refine_net(spec: RefineNetSpec = RefineNetSpec()) -> Network:
    w1, w2, w3 = spec.widths
    layers = []
    c_in = spec.in_ch
    for i, w in enumerate(spec.widths, start=1):
        layers += [
            (f"down{i}", Conv2D(in_ch=c_in, out_ch=w, k=3, stride=2, pad=1)),
            (f"down{i}_relu", ReLU()),
            (f"res{i}a", Conv2D(in_ch=w, out_ch=w, k=3, pad=1)),
            (f"res{i}a_relu", ReLU()),
            (f"res{i}b", Conv2D(in_ch=w, out_ch=w, k=3, pad=1)),
            (f"res{i}_add", Add(skip=f"down{i}_relu")),
            (f"enc{i}", ReLU()),
        ]
        c_in = w
    branch = max(1, w3 // 4)
    names = []
    for s in spec.pool_sizes:
        layers += [
            (f"psp{s}_pool", AvgPoolToGrid(src="enc3", s=s)),
            (f"psp{s}_conv", Conv2D(in_ch=w3, out_ch=branch, k=1)),
            (f"psp{s}", ReLU()),
        ]
        names.append(f"psp{s}")
    layers += [
        ("psp_cat", ConcatCh(src="enc3", sources=tuple(names))),
        ("bottleneck", Conv2D(in_ch=w3 + branch * len(names), out_ch=w3, k=3, pad=1)),
        ("bottleneck_relu", ReLU()),
        ("up3", UpsampleBilinear(factor=2)),
        ("cat2", ConcatCh(sources=("enc2",))),
        ("dec2", Conv2D(in_ch=w3 + w2, out_ch=w2, k=3, pad=1)),
        ("dec2_relu", ReLU()),
        ("up2", UpsampleBilinear(factor=2)),
        ("cat1", ConcatCh(sources=("enc1",))),
        ("dec1", Conv2D(in_ch=w2 + w1, out_ch=w1, k=3, pad=1)),
        ("dec1_relu", ReLU()),
        ("up1", UpsampleBilinear(factor=2)),
        ("cat0", ConcatCh(sources=(INPUT,))),
        ("dec0", Conv2D(in_ch=w1 + spec.in_ch, out_ch=w1, k=3, pad=1)),
        ("dec0_relu", ReLU()),
        ("logit", Conv2D(in_ch=w1, out_ch=1, k=1)),
        ("prob", Sigmoid()),
    ]
    return Network(layers)


def refine_input(image: Image2D, coarse: BinaryMask) -> np.ndarray:
    """(2, H', W') network input, zero-padded so H', W' are multiples of 8."""
    state = concat_state(image, coarse)
    h, w = state.shape[1:]
    ph, pw = (-h) % 8, (-w) % 8
    if ph or pw:
        state = np.pad(state, ((0, 0), (0, ph), (0, pw)))
    return state


def refine_forward(net: Network, image: Image2D, coarse: BinaryMask) -> np.ndarray:
    """Foreground probability map with the image's shape, values in (0, 1)."""
    check_same_shape(image, coarse)
    h, w = image.shape
    out = net.forward(refine_input(image, coarse)[None], cache=False)[0, 0, :h, :w]
    return np.clip(out, PROB_EPS, 1 - PROB_EPS).astype(np.float32)


def binarize(prob: np.ndarray, tau: float = 0.5) -> BinaryMask:
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    return BinaryMask(np.asarray(prob) >= tau)


def refine_loss(pred, gt, cfg: RefineLossConfig = RefineLossConfig()) -> float:
    return refine_loss_and_grad(pred, gt, cfg)[0]


def refine_loss_and_grad(pred, gt, cfg: RefineLossConfig = RefineLossConfig()):
    """Mean BCE (logs on clamped probabilities) plus lam * mean L1, and d/dpred."""
    p = np.asarray(pred, dtype=np.float64)
    y = gt.data.astype(np.float64) if isinstance(gt, BinaryMask) else np.asarray(gt, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {y.shape}")
    n = p.size
    pc = np.clip(p, cfg.eps, 1 - cfg.eps)
    bce = -(y * np.log(pc) + (1 - y) * np.log1p(-pc))
    l1 = np.abs(p - y)
    loss = float(bce.mean() + cfg.lam * l1.mean())
    inside = (p > cfg.eps) & (p < 1 - cfg.eps)
    grad = np.where(inside, (pc - y) / (pc * (1 - pc)), 0.0) / n
    grad += cfg.lam * np.sign(p - y) / n
    return loss, grad


@dataclass
class RefineStats:
    epoch_losses: list[float] = field(default_factory=list)
    stopped_early: bool = False
    steps: int = 0

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else 0.0


def train_refine(dataset: Sequence[tuple[Image2D, BinaryMask, BinaryMask]], epochs: int,
                 rng: RngStream, net: Optional[Network] = None,
                 spec: RefineNetSpec = RefineNetSpec(),
                 train_cfg: RefineTrainConfig = RefineTrainConfig(),
                 loss_cfg: RefineLossConfig = RefineLossConfig(),
                 early_stopping: bool = True):
    """Minibatch Adam on (image, coarse, gt) triples. Returns ``(net, RefineStats)``."""
    dataset = list(dataset)
    if not dataset:
        raise ValueError("empty dataset")
    if net is None:
        net = build_refine_net(spec)
        net.init_params(rng.child(0))
    stats = RefineStats()
    if epochs <= 0:
        return net, stats
    gen = rng.child(1).generator()
    opt = Adam(lr=train_cfg.lr)
    inputs = np.stack([refine_input(img, c) for img, c, _ in dataset])
    targets = np.zeros((len(dataset), 1) + inputs.shape[2:], dtype=np.float64)
    for i, (img, _, gt) in enumerate(dataset):
        h, w = gt.shape
        targets[i, 0, :h, :w] = gt.data
    # padded border pixels carry no loss
    valid = np.zeros_like(targets)
    for i, (img, _, _) in enumerate(dataset):
        h, w = img.shape
        valid[i, 0, :h, :w] = 1.0
    best, stale = np.inf, 0
    for _ in range(epochs):
        order = gen.permutation(len(dataset))
        total, count = 0.0, 0
        for start in range(0, len(order), train_cfg.batch):
            idx = order[start:start + train_cfg.batch]
            pred = net.forward(inputs[idx])
            m = valid[idx]
            loss, grad = refine_loss_and_grad(pred, targets[idx], loss_cfg)
            if not np.all(m):
                sel = m.astype(bool)
                loss, g = refine_loss_and_grad(pred[sel], targets[idx][sel], loss_cfg)
                grad = np.zeros(pred.shape)
                grad[sel] = g
            net.backward(grad)
            opt.step(net)
            stats.steps += 1
            total += loss * len(idx)
            count += len(idx)
        epoch_loss = total / count
        stats.epoch_losses.append(epoch_loss)
        if early_stopping:
            if epoch_loss < best - train_cfg.min_delta:
                best, stale = epoch_loss, 0
            else:
                stale += 1
                if stale >= train_cfg.patience:
                    stats.stopped_early = True
                    break
    return net, stats
