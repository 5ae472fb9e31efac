"""Command-line entry points.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .agent import QNetworkSpec, build_qnet
from .config import ConfigError, ExperimentConfig, load_config
from .core import Image2D, RngStream
from .data import build_sites, find_manifest, load_manifest, load_site, pgm_write, site_id_from_dir, write_dataset
from .fed import FederationError, coordinator_serve, run_federated, site_client_run
from .metrics import format_mean_std
from .nncore import gradient_check, param_count
from .refine import RefineNetSpec, build_refine_net

class UsageError(Exception):
    pass


def _config(args) -> ExperimentConfig:
    if getattr(args, "config", None) is None:
        return ExperimentConfig()
    try:
        return load_config(args.config)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc


def _write_csv(path, rows, fields) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def _site_data(site_dir):
    manifest = find_manifest(site_dir)
    return manifest, load_site(manifest, site_id_from_dir(site_dir))


def _all_sites(data_dir):
    manifest = find_manifest(data_dir)
    ids = [e["id"] for e in load_manifest(manifest)["sites"]]
    return [load_site(manifest, i) for i in ids]


# --------------------------------------------------------------------------
# commands

def cmd_gen_data(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from exc
    spec = cfg.phantom_spec()
    sites = build_sites(cfg.data.distribution, cfg.data.slices_per_subject, spec, cfg.data.split_frac)
    write_dataset(out, sites, spec, cfg.data.distribution, cfg.data.slices_per_subject)
    for s in sites:
        print(f"site{s.site_id}: {len(s.samples)} samples ({len(s.train_idx)} train / {len(s.test_idx)} test)")
    return 0


def cmd_train_local(args) -> int:
    cfg = _config(args)
    _, site = _site_data(args.site_dir)
    if not site.train_idx:
        raise RuntimeError(f"site {site.site_id} has no training samples")
    qnet, rm, local_log = pl.train_local_site(site, cfg)
    out = Path(args.out)
    pl.save_models(out, qnet, rm, cfg)
    _write_csv(out / "train_log.csv", local_log.rows, ["stage", "epoch", "loss", "reward"])
    print(f"site{site.site_id}: trained {len(local_log.rows)} epochs, checkpoints in {out}")
    return 0


def _write_fed_outputs(out: Path, result, cfg) -> None:
    out.mkdir(parents=True, exist_ok=True)
    qnet, rm = pl.networks_from_global(result.model, cfg)
    pl.save_models(out, qnet, rm, cfg, steps=result.model.round)
    site_ids = sorted(result.history[0].site_losses) if result.history else []
    rows = []
    for rec in result.history:
        row = {"round": rec.round, "aggregated_loss": rec.aggregated_loss}
        for sid in site_ids:
            row[f"site{sid}_loss"] = rec.site_losses[sid]
        rows.append(row)
    _write_csv(out / "rounds.csv", rows, ["round", "aggregated_loss"] + [f"site{s}_loss" for s in site_ids])


def cmd_fed_coordinator(args) -> int:
    cfg = _config(args)
    init = pl.init_global(cfg)
    policy = cfg.fed.policy
    if args.max_rounds is not None:
        policy = replace(policy, max_rounds=args.max_rounds)
    if args.simulate:
        if not args.data:
            raise UsageError("--simulate needs --data")
        sites = _all_sites(args.data)
        trainers = {s.site_id: pl.SiteTrainer(s, cfg) for s in sites}
        result = run_federated([pl.site_weight(s) for s in sites], policy,
                               lambda sid, m: trainers[sid](sid, m), init)
    else:
        endpoint = args.endpoint or cfg.fed.endpoint
        expected = args.expected_sites or cfg.fed.expected_sites
        result = coordinator_serve(endpoint, expected, policy, init,
                                   register_timeout=cfg.fed.register_timeout)
    _write_fed_outputs(Path(args.out), result, cfg)
    print(f"federation finished after {result.model.round} rounds"
          f"{' (saturated)' if result.saturated else ''}")
    return 0


def cmd_fed_site(args) -> int:
    cfg = _config(args)
    _, site = _site_data(args.site_dir)
    trainer = pl.SiteTrainer(site, cfg)
    final = site_client_run(args.endpoint or cfg.fed.endpoint, pl.site_weight(site), trainer,
                            trainer.qnet.get_params(), trainer.rm.get_params())
    print(f"site{site.site_id}: done after round {final}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    _, site = _site_data(args.site_dir)
    if not site.test_idx:
        raise RuntimeError(f"site {site.site_id} has no test samples")
    qnet, rm = pl.load_models(args.checkpoints, cfg)
    preds = pl.predict(qnet, rm, site.test, cfg.agent.qnet.input_size)
    rows = pl.metric_rows(site.site_id, site.test, preds)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(out, rows, ["site", "variant", "metric", "mean", "std"])
    for r in rows:
        print(f"site{r['site']} {r['variant']:7s} {r['metric']:12s} {format_mean_std(r['mean'], r['std'])}")
    return 0


def montage(tiles) -> np.ndarray:
    return np.concatenate([np.asarray(t, dtype=np.float64) for t in tiles], axis=1)


def panel_tiles(sample, pred) -> list[np.ndarray]:
    """input | gt | round 1 | round 2 | round 3 | refined output, as 0..255 tiles."""
    tiles = [sample.image.data, sample.gt.data * 255.0]
    tiles += [m.data * 255.0 for m in pred.episode_masks]
    tiles.append(pred.refined.data * 255.0)
    return tiles


def cmd_render_panels(args) -> int:
    cfg = _config(args)
    _, site = _site_data(args.site_dir)
    qnet, rm = pl.load_models(args.checkpoints, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    preds = pl.predict(qnet, rm, site.test, cfg.agent.qnet.input_size)
    for idx, s, p in zip(site.test_idx, site.test, preds):
        pgm_write(Image2D(montage(panel_tiles(s, p))), out / f"site{site.site_id}_panel_{idx:04d}.pgm")
    print(f"wrote {len(preds)} panels to {out}")
    return 0


def _counts(cfg: ExperimentConfig) -> tuple[int, int]:
    return param_count(build_qnet(cfg.agent.qnet)), param_count(build_refine_net(cfg.refine.net))


def cmd_param_count(args) -> int:
    cfg = _config(args)
    drl, rm = _counts(cfg)
    print(f"DRL: {drl}")
    print(f"RM: {rm}")
    print(f"total: {drl + rm}")
    return 0


def cmd_grad_check(args) -> int:
    _config(args)  # validated for a uniform CLI contract; the checked nets are fixed tiny instances
    tol = args.tolerance
    ok = True
    nets = [
        ("DRL", build_qnet(QNetworkSpec(input_size=8, channels=(2, 2, 2), hidden=4)), (1, 2, 8, 8)),
        ("RM", build_refine_net(RefineNetSpec(widths=(2, 2, 2))), (1, 2, 16, 16)),
    ]
    for name, net, shape in nets:
        net.init_params(RngStream(args.seed, 1))
        if args.inject_fault:
            net.grad_fault = (net.layout[0].name, 2.0)
        x = RngStream(args.seed, 2).generator().uniform(0, 1, size=shape)
        rep = gradient_check(net, x, tol, check_input=False)
        status = "PASS" if rep.passed else "FAIL"
        print(f"{name}: {status} max relative error {rep.max_param_error:.3e} over {rep.n_checked} parameters")
        ok &= rep.passed
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedseg", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-data", help="generate phantom site datasets and a manifest")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train-local", help="train DRL then RM on one site's training split")
    t.add_argument("--site-dir", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train_local)

    c = sub.add_parser("fed-coordinator", help="run the federation coordinator")
    c.add_argument("--config")
    c.add_argument("--out", required=True)
    c.add_argument("--endpoint")
    c.add_argument("--expected-sites", type=int)
    c.add_argument("--max-rounds", type=int)
    c.add_argument("--simulate", action="store_true", help="run all sites in-process")
    c.add_argument("--data", help="dataset root (required with --simulate)")
    c.set_defaults(func=cmd_fed_coordinator)

    s = sub.add_parser("fed-site", help="join a federation as one site")
    s.add_argument("--site-dir", required=True)
    s.add_argument("--config")
    s.add_argument("--endpoint")
    s.set_defaults(func=cmd_fed_site)

    e = sub.add_parser("evaluate", help="score a site's test split")
    e.add_argument("--site-dir", required=True)
    e.add_argument("--checkpoints", required=True)
    e.add_argument("--config")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("render-panels", help="write input/gt/rounds/refined montages")
    r.add_argument("--site-dir", required=True)
    r.add_argument("--checkpoints", required=True)
    r.add_argument("--config")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render_panels)

    pc = sub.add_parser("param-count", help="print DRL, RM and total parameter counts")
    pc.add_argument("--config")
    pc.set_defaults(func=cmd_param_count)

    gc = sub.add_parser("grad-check", help="finite-difference check of tiny DRL and RM nets")
    gc.add_argument("--config")
    gc.add_argument("--tolerance", type=float, default=1e-4)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    gc.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FederationError, RuntimeError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
