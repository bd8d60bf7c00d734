"""Sweep tau_client and tau_server; report p_proxy and final accuracy.

The client sweep holds tau_server fixed and vice versa. p_proxy is averaged
over all rounds.
"""

import argparse

import numpy as np

from selective_fd.data import PartitionSpec
from selective_fd.orchestrator import run_experiment
from selective_fd.presets import synthetic_strong
from selective_fd.selectors import SelectorConfig


def sweep(name, values, make_selector, args):
    print(f"\n{name:<12}{'p_proxy_client':>16}{'p_proxy':>10}{'final acc':>11}")
    for v in values:
        pc, pp, acc = [], [], []
        for seed in range(args.seeds):
            cfg = synthetic_strong(seed, mode=args.mode, rounds=args.rounds,
                                   selector=make_selector(v),
                                   partition=PartitionSpec(mode=args.partition, num_clients=4))
            logs = run_experiment(cfg)[1:]
            pc.append(np.mean([rl.p_proxy_client_mean for rl in logs]))
            pp.append(np.mean([rl.p_proxy for rl in logs]))
            acc.append(logs[-1].mean_acc)
        print(f"{v:<12g}{np.mean(pc):>16.4f}{np.mean(pp):>10.4f}{np.mean(acc):>11.4f}")


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--rounds", type=int, default=30)
    p.add_argument("--mode", default="soft", choices=["hard", "soft"])
    p.add_argument("--partition", default="dirichlet", choices=["strong", "weak", "dirichlet"])
    args = p.parse_args()
    sweep("tau_client", [0.0, 0.1, 0.25, 0.5, 0.9],
          lambda v: SelectorConfig(tau_client=v, tau_server=1.0), args)
    sweep("tau_server", [2.0, 1.0, 0.5, 0.1],
          lambda v: SelectorConfig(tau_client=0.25, tau_server=v), args)


if __name__ == "__main__":
    main()
