"""AUROC of client selectors for detecting incorrect local predictions.

Scores are taken on the pretrained models over the first round's candidate
proxy rows. Positives are rows the client classifies correctly.
"""

import argparse

import numpy as np

from selective_fd import orchestrator as orch
from selective_fd.data import PartitionSpec
from selective_fd.metrics import auroc
from selective_fd.model import predict_hard
from selective_fd.presets import synthetic_strong


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--partition", default="strong", choices=["strong", "weak", "dirichlet"])
    args = p.parse_args()

    print(f"{'seed':<6}{'client':<8}{'density_ratio':>15}{'confidence':>12}")
    dr_all, conf_all = [], []
    for seed in range(args.seeds):
        cfg = synthetic_strong(seed, partition=PartitionSpec(mode=args.partition, num_clients=4))
        clients, fed = orch.setup(cfg)
        orch.pretrain(clients, cfg.train)
        cand = orch.candidate_indices(cfg, 1, len(fed.proxy_features))
        X, truth = fed.proxy_features[cand], fed.proxy_truth[cand]
        for c in clients:
            correct = predict_hard(c.model, X) == truth
            if correct.all() or not correct.any():
                print(f"{seed:<6}{c.client_id:<8}{'n/a':>15}{'n/a':>12}")
                continue
            dr = auroc(orch.selector_scores(c, X, "density_ratio"), correct)
            conf = auroc(orch.selector_scores(c, X, "confidence"), correct)
            dr_all.append(dr)
            conf_all.append(conf)
            print(f"{seed:<6}{c.client_id:<8}{dr:>15.4f}{conf:>12.4f}")
    print(f"{'mean':<14}{np.mean(dr_all):>15.4f}{np.mean(conf_all):>12.4f}")


if __name__ == "__main__":
    main()
