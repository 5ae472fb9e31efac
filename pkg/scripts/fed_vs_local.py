"""Federated vs local-only training with equal per-network epoch budgets.

    python3 scripts/fed_vs_local.py --config configs/desk.yaml --distribution 10 4 4 --seeds 0 1 2
"""
import argparse
import dataclasses
import time

from fedseg.config import load_config
from fedseg.experiments import compare_fed_local


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", default="configs/desk.yaml")
    p.add_argument("--distribution", type=int, nargs="+", default=[10, 4, 4])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = p.parse_args()
    cfg = load_config(args.config)
    cfg = dataclasses.replace(cfg, data=dataclasses.replace(cfg.data, distribution=tuple(args.distribution)))
    print("seed,rounds,site,fed_drl,local_drl,fed_drl_rm,local_drl_rm,seconds")
    for seed in args.seeds:
        t0 = time.perf_counter()
        c = compare_fed_local(cfg, seed)
        secs = time.perf_counter() - t0
        for sid in sorted(c.fed_drl):
            print(f"{seed},{c.rounds},{sid},{c.fed_drl[sid]:.4f},{c.local_drl[sid]:.4f},"
                  f"{c.fed_refined[sid]:.4f},{c.local_refined[sid]:.4f},{secs:.0f}", flush=True)


if __name__ == "__main__":
    main()
