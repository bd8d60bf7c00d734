"""Weighted schedule: final accuracy as the local-loss weight alpha varies."""

import argparse
from dataclasses import replace

import numpy as np

from selective_fd.data import PartitionSpec
from selective_fd.orchestrator import run_experiment
from selective_fd.presets import synthetic_strong


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--rounds", type=int, default=30)
    p.add_argument("--partition", default="dirichlet", choices=["strong", "weak", "dirichlet"])
    args = p.parse_args()

    print(f"{'alpha':<8}{'final acc':>10}")
    for alpha in (0.1, 0.3, 0.5, 0.7, 0.9):
        accs = []
        for seed in range(args.seeds):
            base = synthetic_strong(seed, schedule="weighted", rounds=args.rounds,
                                    partition=PartitionSpec(mode=args.partition, num_clients=4))
            cfg = replace(base, train=replace(base.train, alpha=alpha))
            accs.append(run_experiment(cfg)[-1].mean_acc)
        print(f"{alpha:<8g}{np.mean(accs):>10.4f}")


if __name__ == "__main__":
    main()
