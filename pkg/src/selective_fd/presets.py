"""Named experiment configurations used by the acceptance suite and scripts."""

from __future__ import annotations

import os
from dataclasses import replace

from .data import PartitionSpec
from .model import TrainConfig
from .orchestrator import DatasetConfig, ExperimentConfig
from .selectors import SelectorConfig


def synthetic_strong(seed=0, **overrides):
    """Four Gaussian classes in 2-D, one class per client, 60 hard-label rounds."""
    config = ExperimentConfig(
        dataset=DatasetConfig(kind="synth", num_classes=4, dim=2, n_per_class=400,
                              n_test_per_class=250, separation=6.0, noise=0.8),
        partition=PartitionSpec(mode="strong", num_clients=4, proxy_fraction_per_class=0.15),
        train=TrainConfig(),
        selector=SelectorConfig(client_strategy="density_ratio", tau_client=0.25,
                                tau_server=1.0),
        method="selective",
        mode="hard",
        rounds=60,
        seed=seed,
    )
    return replace(config, **overrides)


def mnist_strong(root, seed=0, **overrides):
    """Ten clients, one digit each, 1000 training rows per client, 2000 proxy rows.

    Per class: 1450 rows are drawn, 200 go to the proxy set, and the remaining
    1250 split 1000/250 into train and validation.
    """
    files = {
        "train_images": "train-images-idx3-ubyte",
        "train_labels": "train-labels-idx1-ubyte",
        "test_images": "t10k-images-idx3-ubyte",
        "test_labels": "t10k-labels-idx1-ubyte",
    }
    paths = {k: os.path.join(root, v) for k, v in files.items()}
    config = ExperimentConfig(
        dataset=DatasetConfig(kind="idx", num_classes=10, dim=784, idx_per_class=1450, **paths),
        partition=PartitionSpec(mode="strong", num_clients=10,
                                proxy_fraction_per_class=200 / 1450, validation_fraction=0.2),
        train=TrainConfig(),
        selector=SelectorConfig(tau_client=0.25, tau_server=1.0),
        method="selective",
        mode="hard",
        rounds=200,
        seed=seed,
        hidden_dims=((128,), (256,), (128, 64), (256, 128)),
    )
    return replace(config, **overrides)


def mnist_files_present(root):
    if not root:
        return False
    cfg = mnist_strong(root)
    ds = cfg.dataset
    return all(os.path.exists(p) for p in
               (ds.train_images, ds.train_labels, ds.test_images, ds.test_labels))
