"""Desk-scale experiments: learning signal, refinement gain and federation gain."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import pipeline as pl
from .agent import run_episode_greedy
from .config import ExperimentConfig
from .core import RngStream
from .data import SiteData, build_sites
from .fed import run_federated
from .metrics import mask_dsc
from .threshenv import brute_force_best


def with_seeds(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    """Same config with both the data and the training seed set to ``seed``."""
    return dataclasses.replace(cfg, seeds=dataclasses.replace(cfg.seeds, data=seed, train=seed))


def sites_for(cfg: ExperimentConfig) -> list[SiteData]:
    return build_sites(cfg.data.distribution, cfg.data.slices_per_subject, cfg.phantom_spec(),
                       cfg.data.split_frac)


def greedy_dsc(qnet, site: SiteData, input_size: int) -> list[float]:
    return [mask_dsc(run_episode_greedy(qnet, s.image, input_size).final_mask, s.gt) for s in site.test]


def oracle_dsc(site: SiteData) -> list[float]:
    return [brute_force_best(s.image, s.gt)[1] for s in site.test]


@dataclass
class LocalOutcome:
    """Mean test DSC over the pooled test samples of all sites."""

    untrained: float
    drl: float
    refined: float
    oracle: float


def local_training_outcome(cfg: ExperimentConfig) -> LocalOutcome:
    """Train every site locally and score untrained, DRL-only, DRL+RM and the threshold ceiling."""
    size = cfg.agent.qnet.input_size
    untrained, drl, refined, oracle = [], [], [], []
    for site in sites_for(cfg):
        q0, _ = pl.init_networks(cfg)
        untrained += greedy_dsc(q0, site, size)
        qnet, rm, _ = pl.train_local_site(site, cfg)
        for s, p in zip(site.test, pl.predict(qnet, rm, site.test, size)):
            drl.append(mask_dsc(p.coarse, s.gt))
            refined.append(mask_dsc(p.refined, s.gt))
        oracle += oracle_dsc(site)
    return LocalOutcome(*(float(np.mean(v)) for v in (untrained, drl, refined, oracle)))


@dataclass
class FedComparison:
    """Per-site mean test DSC (keyed by site id) for federated and local-only training."""

    seed: int
    rounds: int
    fed_drl: dict[int, float]
    fed_refined: dict[int, float]
    local_drl: dict[int, float]
    local_refined: dict[int, float]


def _site_scores(qnet, rm, sites, cfg):
    drl, refined = {}, {}
    for site in sites:
        drl[site.site_id], refined[site.site_id] = pl.mean_test_dsc(qnet, rm, site, cfg)
    return drl, refined


def compare_fed_local(cfg: ExperimentConfig, seed: int) -> FedComparison:
    """Federated training against local-only training with the same per-network epoch budget.

    The local baseline runs ``local_epochs x rounds`` epochs without early
    stopping and with the same exploration horizon as the federated run.
    """
    cfg = with_seeds(cfg, seed)
    sites = sites_for(cfg)
    trainers = {s.site_id: pl.SiteTrainer(s, cfg) for s in sites}
    result = run_federated([pl.site_weight(s) for s in sites], cfg.fed.policy,
                           lambda sid, m: trainers[sid](sid, m), pl.init_global(cfg))
    rounds = result.model.round
    qnet, rm = pl.networks_from_global(result.model, cfg)
    fed_drl, fed_ref = _site_scores(qnet, rm, sites, cfg)

    epochs = cfg.fed.policy.local_epochs * rounds
    loc_drl, loc_ref = {}, {}
    for site in sites:
        per_round = cfg.fed.policy.local_epochs * len(site.train_idx) * 3
        qnet, rm, _, _ = pl.train_site(
            site, cfg, RngStream(cfg.seeds.train).child(2, site.site_id),
            drl_epochs=epochs, rm_epochs=epochs, early_stopping=False,
            planned_steps=per_round * cfg.fed.explore_rounds)
        d, r = _site_scores(qnet, rm, [site], cfg)
        loc_drl.update(d)
        loc_ref.update(r)
    return FedComparison(seed, rounds, fed_drl, fed_ref, loc_drl, loc_ref)


def seed_average(comps: Sequence[FedComparison], attr: str) -> dict[int, float]:
    ids = sorted(getattr(comps[0], attr))
    return {i: float(np.mean([getattr(c, attr)[i] for c in comps])) for i in ids}
