"""Datasets, IDX loading and federated partitioning."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ParameterError, PartitionError, SpecError
from .numcore import RngStream

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049

STRONG = "strong"
WEAK = "weak"
DIRICHLET = "dirichlet"
IID = "iid"
PARTITION_MODES = (STRONG, WEAK, DIRICHLET, IID)


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    # positions in the source dataset; used for disjointness bookkeeping
    origin: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ParameterError(f"features {X.shape} and labels {y.shape} disagree")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ParameterError("label out of range")
        if not np.all(np.isfinite(X)):
            raise ParameterError("non-finite feature values")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        if self.origin is None:
            object.__setattr__(self, "origin", np.arange(y.size))

    def __len__(self):
        return int(self.labels.size)

    @property
    def dim(self):
        return int(self.features.shape[1])

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(
            self.features[idx], self.labels[idx], self.num_classes, self.origin[idx]
        )

    def classes_present(self):
        return [int(c) for c in np.unique(self.labels)]


@dataclass(frozen=True)
class PartitionSpec:
    mode: str = STRONG
    num_clients: int = 4
    beta: float = 0.5
    proxy_fraction_per_class: float = 0.15
    validation_fraction: float = 0.2
    seed: int = 0

    def validate(self, num_classes):
        if self.mode not in PARTITION_MODES:
            raise SpecError(f"unknown partition mode {self.mode!r}")
        K = self.num_clients
        if K < 1:
            raise SpecError("num_clients must be >= 1")
        if not 0 < self.proxy_fraction_per_class < 1:
            raise SpecError("proxy_fraction_per_class must lie in (0, 1)")
        if not 0 < self.validation_fraction < 1:
            raise SpecError("validation_fraction must lie in (0, 1)")
        if self.mode == STRONG and K > num_classes:
            raise SpecError(f"strong non-IID needs num_clients <= {num_classes}, got {K}")
        if self.mode == WEAK:
            if num_classes < 2:
                raise SpecError("weak non-IID needs at least 2 classes")
            if K + 1 < num_classes:
                raise SpecError(
                    f"weak non-IID with {K} clients leaves classes unassigned "
                    f"(need num_clients >= {num_classes - 1})"
                )
        if self.mode == DIRICHLET and not self.beta > 0:
            raise SpecError("dirichlet beta must be positive")


@dataclass(frozen=True)
class FederationData:
    client_train: list
    client_validation: list
    proxy_features: np.ndarray
    test: LabeledDataset
    num_classes: int
    # diagnostics only; training code receives proxy_features alone
    proxy_truth: np.ndarray = field(repr=False, default=None)
    proxy_origin: np.ndarray = field(repr=False, default=None)

    @property
    def num_clients(self):
        return len(self.client_train)


def synth_gaussians(num_classes, dim, n_per_class, separation, noise, rng):
    """Isotropic Gaussian blobs with centers evenly spaced on a circle."""
    if num_classes < 2 or dim < 2:
        raise ParameterError("need num_classes >= 2 and dim >= 2")
    if not separation > 0 or not noise > 0:
        raise ParameterError("separation and noise must be positive")
    g = rng.generator()
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    centers = np.zeros((num_classes, dim))
    centers[:, 0] = separation * np.cos(angles)
    centers[:, 1] = separation * np.sin(angles)
    labels = np.repeat(np.arange(num_classes), n_per_class)
    X = centers[labels] + noise * g.standard_normal((labels.size, dim))
    return LabeledDataset(X, labels, num_classes)


def _read_header(f, path, n_fields):
    raw = f.read(4 * n_fields)
    if len(raw) < 4 * n_fields:
        raise OSError(f"{path}: truncated header")
    return struct.unpack(">" + "I" * n_fields, raw)


def load_idx(images_path, labels_path, num_classes=10):
    """Read an IDX image/label file pair; pixels are scaled to [0, 1]."""
    with open(images_path, "rb") as f:
        magic, n, rows, cols = _read_header(f, images_path, 4)
        if magic != IDX_IMAGES_MAGIC:
            raise FormatError(f"{images_path}: bad images magic {magic} (expected 2051)")
        body = f.read()
    if len(body) < n * rows * cols:
        raise OSError(f"{images_path}: truncated, expected {n * rows * cols} pixel bytes")
    pixels = np.frombuffer(body, dtype=np.uint8, count=n * rows * cols)

    with open(labels_path, "rb") as f:
        magic, n_labels = _read_header(f, labels_path, 2)
        if magic != IDX_LABELS_MAGIC:
            raise FormatError(f"{labels_path}: bad labels magic {magic} (expected 2049)")
        body = f.read()
    if len(body) < n_labels:
        raise OSError(f"{labels_path}: truncated, expected {n_labels} label bytes")
    if n != n_labels:
        raise FormatError(f"image count {n} != label count {n_labels}")
    labels = np.frombuffer(body, dtype=np.uint8, count=n_labels).astype(np.int64)
    X = pixels.reshape(n, rows * cols).astype(np.float64) / 255.0
    return LabeledDataset(X, labels, max(num_classes, int(labels.max()) + 1))


def write_idx(images, labels, images_path, labels_path):
    """Write uint8 images ``(n, rows, cols)`` and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.size))
        f.write(labels.tobytes())


def dirichlet_sample(beta, K, rng):
    """One draw from the symmetric Dirichlet ``Dir_K(beta)``."""
    if not beta > 0:
        raise ParameterError("beta must be positive")
    if K < 1:
        raise ParameterError("K must be >= 1")
    g = rng if isinstance(rng, np.random.Generator) else rng.generator()
    if K == 1:
        return np.ones(1)
    return g.dirichlet(np.full(K, float(beta)))


def _rounded_count(fraction, n):
    return int(math.floor(fraction * n + 0.5))


def partition(dataset, spec, test):
    """Split ``dataset`` into proxy pool and per-client train/validation sets.

    ``test`` is supplied separately and passed through unchanged.
    """
    C = dataset.num_classes
    spec.validate(C)
    K = spec.num_clients
    root = RngStream(spec.seed, ("partition",))
    y = dataset.labels

    proxy_idx = []
    rest_by_class = {}
    for c in range(C):
        rows = np.flatnonzero(y == c)
        perm = root.child("proxy", c).generator().permutation(rows)
        n_proxy = min(_rounded_count(spec.proxy_fraction_per_class, rows.size), rows.size)
        proxy_idx.append(np.sort(perm[:n_proxy]))
        rest_by_class[c] = np.sort(perm[n_proxy:])
    proxy_idx = np.concatenate(proxy_idx) if proxy_idx else np.zeros(0, np.int64)

    assigned = [[] for _ in range(K)]
    if spec.mode == STRONG:
        for c in range(C):
            assigned[c % K].append(rest_by_class[c])
    elif spec.mode == WEAK:
        receivers = {c: [] for c in range(C)}
        for k in range(K):
            for c in sorted({k % C, (k + 1) % C}):
                receivers[c].append(k)
        for c in range(C):
            rows = root.child("weak", c).generator().permutation(rest_by_class[c])
            for chunk, k in zip(np.array_split(rows, len(receivers[c])), receivers[c]):
                assigned[k].append(chunk)
    elif spec.mode == IID:
        rows = np.concatenate([rest_by_class[c] for c in range(C)])
        rows = root.child("iid").generator().permutation(rows)
        for k, chunk in enumerate(np.array_split(rows, K)):
            assigned[k].append(chunk)
    else:
        for c in range(C):
            rows = rest_by_class[c]
            p = dirichlet_sample(spec.beta, K, root.child("dirichlet", c))
            owner = root.child("dirichlet_assign", c).generator().choice(K, size=rows.size, p=p)
            for k in range(K):
                assigned[k].append(rows[owner == k])

    train, val = [], []
    for k in range(K):
        rows = np.sort(np.concatenate(assigned[k])) if assigned[k] else np.zeros(0, np.int64)
        tr, va = [], []
        g = root.child("validation", k).generator()
        for c in np.unique(y[rows]):
            rc = g.permutation(rows[y[rows] == c])
            n_val = _rounded_count(spec.validation_fraction, rc.size)
            if rc.size >= 2:
                n_val = min(max(n_val, 1), rc.size - 1)
            va.append(rc[:n_val])
            tr.append(rc[n_val:])
        tr = np.sort(np.concatenate(tr)) if tr else np.zeros(0, np.int64)
        va = np.sort(np.concatenate(va)) if va else np.zeros(0, np.int64)
        if tr.size == 0:
            raise PartitionError(f"client {k} has an empty training set")
        if va.size == 0:
            raise PartitionError(f"client {k} has an empty validation set")
        train.append(dataset.subset(tr))
        val.append(dataset.subset(va))

    return FederationData(
        client_train=train,
        client_validation=val,
        proxy_features=dataset.features[proxy_idx].copy(),
        test=test,
        num_classes=C,
        proxy_truth=y[proxy_idx].copy(),
        proxy_origin=dataset.origin[proxy_idx].copy(),
    )
