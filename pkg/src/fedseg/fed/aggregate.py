"""Sample-count weights, weighted parameter averaging and saturation stopping."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..core import ParameterVector


@dataclass(frozen=True)
class SiteWeight:
    site_id: int
    n_drl: int
    n_rm: int

    def __post_init__(self):
        if self.n_drl < 1 or self.n_rm < 1:
            raise ValueError("sample counts must be >= 1")


@dataclass(frozen=True)
class RoundPolicy:
    local_epochs: int = 10
    patience: int = 3
    rel_tol: float = 1e-3
    max_rounds: int = 20

    def __post_init__(self):
        if self.local_epochs < 1 or self.patience < 1 or self.rel_tol <= 0:
            raise ValueError("round policy values must be positive")
        if self.max_rounds < 0:
            raise ValueError("max_rounds must be >= 0")


def weights_normalize(sites: Sequence[SiteWeight]) -> tuple[list[float], list[float]]:
    """alpha_k = n_drl_k / sum(n_drl), beta_k likewise for the RM counts."""
    if not sites:
        raise ValueError("no sites")
    tot_drl = sum(s.n_drl for s in sites)
    tot_rm = sum(s.n_rm for s in sites)
    return [s.n_drl / tot_drl for s in sites], [s.n_rm / tot_rm for s in sites]


def aggregate(params: Sequence[ParameterVector], weights: Sequence[float],
              site_ids: Sequence[int] | None = None) -> ParameterVector:
    """Weighted sum accumulated in float64 in ascending site-id order, stored as float32."""
    if not params or len(params) != len(weights):
        raise ValueError("need one weight per parameter vector")
    if abs(sum(weights) - 1.0) > 1e-6:
        raise ValueError(f"weights sum to {sum(weights)}, expected 1")
    layout = params[0].layout
    for p in params[1:]:
        if p.layout != layout:
            raise ValueError("parameter layouts differ between sites")
    order = range(len(params)) if site_ids is None else np.argsort(site_ids, kind="stable")
    acc = np.zeros(len(params[0]), dtype=np.float64)
    for i in order:
        acc += float(weights[i]) * params[i].values.astype(np.float64)
    return ParameterVector(acc.astype(np.float32), layout)


def saturation_check(loss_history: Sequence[float], policy: RoundPolicy) -> bool:
    """True iff each of the last ``patience`` relative improvements is below rel_tol."""
    if len(loss_history) < policy.patience + 1:
        return False
    tail = loss_history[-(policy.patience + 1):]
    for prev, cur in zip(tail[:-1], tail[1:]):
        if (prev - cur) / max(prev, 1e-12) >= policy.rel_tol:
            return False
    return True
