"""Site-level training and evaluation: DQN coarse masks followed by refinement."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .agent import build_qnet, run_episode_greedy, train_local_drl
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .core import BinaryMask, RngStream
from .data import Sample, SiteData
from .fed import GlobalModel, LocalUpdate, SiteWeight
from .metrics import report, summarize
from .nncore import Network
from .refine import binarize, build_refine_net, refine_forward, train_refine

# stream tags for RngStream.child
_INIT, _FED, _LOCAL = 0, 1, 2


def site_weight(site: SiteData) -> SiteWeight:
    n = len(site.train_idx)
    return SiteWeight(site.site_id, n, n)


def init_networks(cfg: ExperimentConfig) -> tuple[Network, Network]:
    root = RngStream(cfg.seeds.train)
    qnet = build_qnet(cfg.agent.qnet)
    qnet.init_params(root.child(_INIT, 0))
    rm = build_refine_net(cfg.refine.net)
    rm.init_params(root.child(_INIT, 1))
    return qnet, rm


def init_global(cfg: ExperimentConfig) -> GlobalModel:
    qnet, rm = init_networks(cfg)
    return GlobalModel(qnet.get_params(), rm.get_params(), 0)


def coarse_episodes(qnet: Network, samples: Sequence[Sample], input_size: int):
    return [run_episode_greedy(qnet, s.image, input_size) for s in samples]


def refine_triples(qnet: Network, samples: Sequence[Sample], input_size: int):
    return [(s.image, ep.final_mask, s.gt)
            for s, ep in zip(samples, coarse_episodes(qnet, samples, input_size))]


@dataclass
class LocalLog:
    rows: list[dict] = field(default_factory=list)

    def add(self, stage: str, epoch: int, loss: float, reward: float | str = "") -> None:
        self.rows.append({"stage": stage, "epoch": epoch, "loss": loss, "reward": reward})


def train_site(site: SiteData, cfg: ExperimentConfig, rng: RngStream,
               qnet: Optional[Network] = None, rm: Optional[Network] = None,
               drl_epochs: Optional[int] = None, rm_epochs: Optional[int] = None,
               early_stopping: bool = True, step_offset: int = 0,
               planned_steps: Optional[int] = None):
    """Train the DQN, then the refinement net on that DQN's coarse masks.

    Returns ``(qnet, rm, drl_stats, rm_stats)``.
    """
    train = site.train
    if not train:
        raise ValueError(f"site {site.site_id} has no training samples")
    if qnet is None or rm is None:
        q0, r0 = init_networks(cfg)
        qnet = qnet or q0
        rm = rm or r0
    qnet, drl_stats = train_local_drl(
        train, cfg.agent.epochs if drl_epochs is None else drl_epochs, cfg.agent.dqn, rng.child(0),
        qnet=qnet, spec=cfg.agent.qnet, reward_cfg=cfg.env, early_stopping=early_stopping,
        step_offset=step_offset, planned_steps=planned_steps,
    )
    triples = refine_triples(qnet, train, cfg.agent.qnet.input_size)
    rm, rm_stats = train_refine(
        triples, cfg.refine.epochs if rm_epochs is None else rm_epochs, rng.child(1), net=rm,
        spec=cfg.refine.net, train_cfg=cfg.refine.train, loss_cfg=cfg.refine.loss,
        early_stopping=early_stopping,
    )
    return qnet, rm, drl_stats, rm_stats


def train_local_site(site: SiteData, cfg: ExperimentConfig):
    """Local-only training with early stopping; returns (qnet, rm, LocalLog)."""
    qnet, rm, ds, rs = train_site(site, cfg, RngStream(cfg.seeds.train).child(_LOCAL, site.site_id))
    log = LocalLog()
    for i, (loss, rew) in enumerate(zip(ds.epoch_losses, ds.epoch_rewards)):
        log.add("drl", i, loss, rew)
    for i, loss in enumerate(rs.epoch_losses):
        log.add("rm", i, loss)
    return qnet, rm, log


class SiteTrainer:
    """Deterministic per-round local update for one site in federated mode.

    Each round starts from the broadcast parameters with fresh optimizer and
    replay state; randomness is keyed by (train seed, site id, round).
    """

    def __init__(self, site: SiteData, cfg: ExperimentConfig):
        self.site = site
        self.cfg = cfg
        self.qnet, self.rm = init_networks(cfg)

    def __call__(self, site_id: int, model: GlobalModel) -> LocalUpdate:
        if site_id != self.site.site_id:
            raise ValueError(f"trainer for site {self.site.site_id} called for site {site_id}")
        cfg = self.cfg
        self.qnet.set_params(model.theta_cdrl)
        self.rm.set_params(model.theta_crm)
        epochs = cfg.fed.policy.local_epochs
        per_round = epochs * len(self.site.train_idx) * 3
        rng = RngStream(cfg.seeds.train).child(_FED, site_id, model.round)
        qnet, rm, ds, rs = train_site(
            self.site, cfg, rng, self.qnet, self.rm, drl_epochs=epochs, rm_epochs=epochs,
            early_stopping=False, step_offset=model.round * per_round,
            planned_steps=per_round * cfg.fed.explore_rounds,
        )
        return LocalUpdate(site_id, model.round, qnet.get_params(), rm.get_params(),
                           ds.final_loss + rs.final_loss)


# --------------------------------------------------------------------------
# evaluation

METRICS = ("dsc", "sensitivity", "specificity", "mae")
VARIANTS = ("DRL", "DRL+RM")


@dataclass
class SamplePrediction:
    episode_masks: list[BinaryMask]
    coarse: BinaryMask
    refined_prob: np.ndarray
    refined: BinaryMask


def predict(qnet: Network, rm: Network, samples: Sequence[Sample], input_size: int) -> list[SamplePrediction]:
    out = []
    for s in samples:
        ep = run_episode_greedy(qnet, s.image, input_size)
        prob = refine_forward(rm, s.image, ep.final_mask)
        out.append(SamplePrediction(ep.masks, ep.final_mask, prob, binarize(prob)))
    return out


def metric_rows(site_id: int, samples: Sequence[Sample], preds: Sequence[SamplePrediction]) -> list[dict]:
    """Mean/std of each metric for the DRL-only and refined predictions.

    MAE uses the refined probabilities for the DRL+RM variant.
    """
    per = {v: {m: [] for m in METRICS} for v in VARIANTS}
    for s, p in zip(samples, preds):
        for variant, rep in (("DRL", report(p.coarse, s.gt)),
                             ("DRL+RM", report(p.refined, s.gt, p.refined_prob))):
            for m in METRICS:
                per[variant][m].append(getattr(rep, m))
    rows = []
    for v in VARIANTS:
        for m in METRICS:
            mean, std = summarize(per[v][m])
            rows.append({"site": site_id, "variant": v, "metric": m, "mean": mean, "std": std})
    return rows


def save_models(out_dir, qnet: Network, rm: Network, cfg: ExperimentConfig, steps: int = 0) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "drl", qnet, "drl", cfg.agent.qnet.to_dict(), steps)
    save_checkpoint(out / "rm", rm, "rm", cfg.refine.net.to_dict(), steps)


def load_models(ckpt_dir, cfg: ExperimentConfig) -> tuple[Network, Network]:
    ckpt = Path(ckpt_dir)
    qnet = build_qnet(cfg.agent.qnet)
    rm = build_refine_net(cfg.refine.net)
    load_checkpoint(ckpt / "drl", qnet, "drl", cfg.agent.qnet.to_dict())
    load_checkpoint(ckpt / "rm", rm, "rm", cfg.refine.net.to_dict())
    return qnet, rm


def networks_from_global(model: GlobalModel, cfg: ExperimentConfig) -> tuple[Network, Network]:
    qnet = build_qnet(cfg.agent.qnet)
    rm = build_refine_net(cfg.refine.net)
    qnet.set_params(model.theta_cdrl)
    rm.set_params(model.theta_crm)
    return qnet, rm


def mean_test_dsc(qnet: Network, rm: Network, site: SiteData, cfg: ExperimentConfig) -> tuple[float, float]:
    """(DRL-only, DRL+RM) mean DSC on the site's test split."""
    rows = metric_rows(site.site_id, site.test, predict(qnet, rm, site.test, cfg.agent.qnet.input_size))
    get = {(r["variant"], r["metric"]): r["mean"] for r in rows}
    return get[("DRL", "dsc")], get[("DRL+RM", "dsc")]
