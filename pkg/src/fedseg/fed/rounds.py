"""Synchronous federated rounds shared by the in-process and networked modes."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..core import ParameterVector
from .aggregate import RoundPolicy, SiteWeight, aggregate, saturation_check, weights_normalize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GlobalModel:
    theta_cdrl: ParameterVector
    theta_crm: ParameterVector
    round: int = 0

    def __eq__(self, other):
        return (isinstance(other, GlobalModel) and self.round == other.round
                and self.theta_cdrl == other.theta_cdrl and self.theta_crm == other.theta_crm)

    __hash__ = None


@dataclass(frozen=True)
class LocalUpdate:
    site_id: int
    round: int
    drl: ParameterVector
    rm: ParameterVector
    train_loss: float


# site_id, current global model -> that site's locally trained update
Trainer = Callable[[int, GlobalModel], LocalUpdate]


@dataclass
class RoundRecord:
    round: int
    aggregated_loss: float
    site_losses: dict[int, float]


@dataclass
class FedResult:
    model: GlobalModel
    history: list[RoundRecord] = field(default_factory=list)
    saturated: bool = False

    @property
    def losses(self) -> list[float]:
        return [r.aggregated_loss for r in self.history]


class RoundAggregator:
    """Coordinator-side round state: weights, loss history and stopping rule."""

    def __init__(self, sites: Sequence[SiteWeight], policy: RoundPolicy, init: GlobalModel):
        if not sites:
            raise ValueError("no sites")
        ids = [s.site_id for s in sites]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate site ids")
        self.sites = sorted(sites, key=lambda s: s.site_id)
        self.alpha, self.beta = weights_normalize(self.sites)
        self.policy = policy
        self.model = init
        self.history: list[RoundRecord] = []
        self.saturated = False

    @property
    def site_ids(self) -> list[int]:
        return [s.site_id for s in self.sites]

    def finished(self) -> bool:
        return self.saturated or self.model.round >= self.policy.max_rounds

    def apply(self, updates: Sequence[LocalUpdate]) -> GlobalModel:
        by_site = {u.site_id: u for u in updates}
        if sorted(by_site) != self.site_ids or len(updates) != len(self.sites):
            raise ValueError("need exactly one update from every registered site")
        ordered = [by_site[i] for i in self.site_ids]
        for u in ordered:
            if u.round != self.model.round:
                raise ValueError(f"site {u.site_id} sent round {u.round}, expected {self.model.round}")
        drl = aggregate([u.drl for u in ordered], self.alpha, self.site_ids)
        rm = aggregate([u.rm for u in ordered], self.beta, self.site_ids)
        losses = [float(np.float32(u.train_loss)) for u in ordered]
        agg_loss = float(sum(a * l for a, l in zip(self.alpha, losses)))
        self.history.append(RoundRecord(self.model.round, agg_loss, dict(zip(self.site_ids, losses))))
        self.model = GlobalModel(drl, rm, self.model.round + 1)
        self.saturated = saturation_check([r.aggregated_loss for r in self.history], self.policy)
        log.info("round %d aggregated loss %.6f", self.model.round, agg_loss)
        return self.model

    def result(self) -> FedResult:
        return FedResult(self.model, list(self.history), self.saturated)


def run_federated(sites: Sequence[SiteWeight], policy: RoundPolicy, trainer: Trainer,
                  init: GlobalModel) -> FedResult:
    """In-process simulation: every round each site trains from the current
    global model, then DRL and RM parameters are aggregated separately."""
    agg = RoundAggregator(sites, policy, init)
    while not agg.finished():
        updates = [trainer(sid, agg.model) for sid in agg.site_ids]
        agg.apply(updates)
    return agg.result()
