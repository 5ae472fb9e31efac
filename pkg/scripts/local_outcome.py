"""Local training on every site: untrained vs trained DQN vs DQN+RM vs the threshold ceiling.

    python3 scripts/local_outcome.py --config configs/desk.yaml
"""
import argparse
import dataclasses
import time

from fedseg.config import load_config
from fedseg.experiments import local_training_outcome, with_seeds


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", default="configs/desk.yaml")
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    args = p.parse_args()
    cfg = load_config(args.config)
    print("seed,untrained,drl,drl_rm,oracle,seconds")
    for seed in args.seeds:
        t0 = time.perf_counter()
        o = local_training_outcome(with_seeds(cfg, seed))
        vals = ",".join(f"{v:.4f}" for v in dataclasses.astuple(o))
        print(f"{seed},{vals},{time.perf_counter() - t0:.0f}", flush=True)


if __name__ == "__main__":
    main()
