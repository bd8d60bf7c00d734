"""Feed-forward ReLU classifiers with a softmax head and plain SGD."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, NumericalError, ParameterError, ShapeError
from .numcore import argmax_rows, as_matrix, softmax

LOG_FLOOR = 1e-12
CHECKPOINT_MAGIC = b"SFDM"
CHECKPOINT_VERSION = 1


@dataclass
class MlpModel:
    layer_dims: list
    weights: list
    biases: list

    @property
    def input_dim(self):
        return self.layer_dims[0]

    @property
    def num_classes(self):
        return self.layer_dims[-1]

    def param_count(self):
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def flat_params(self):
        return np.concatenate(
            [np.concatenate([W.ravel(), b]) for W, b in zip(self.weights, self.biases)]
        )

    def set_flat_params(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.param_count():
            raise ShapeError(f"expected {self.param_count()} parameters, got {flat.size}")
        pos = 0
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = flat[pos:pos + W.size].reshape(W.shape).copy()
            pos += W.size
            self.biases[i] = flat[pos:pos + b.size].copy()
            pos += b.size

    def copy(self):
        return MlpModel(
            list(self.layer_dims),
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
        )


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    pretrain_steps: int = 200
    local_steps: int = 1
    distill_steps: int = 10
    local_batch: int = 64
    distill_batch: int = 128
    alpha: float = 0.5

    def validate(self):
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be positive")
        for name in ("pretrain_steps", "local_steps", "distill_steps"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be nonnegative")
        if self.local_batch < 1 or self.distill_batch < 1:
            raise ParameterError("batch sizes must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError("alpha must lie in [0, 1]")


def init_mlp(layer_dims, rng, zero_head=True):
    """He-normal hidden weights, zero biases.

    With ``zero_head`` the output layer starts at zero. Rows of the head for
    classes absent from training then move in lockstep, and because hidden
    activations are nonnegative a model trained on a single class predicts
    that class on every input.
    """
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ParameterError(f"invalid layer dims {layer_dims}")
    g = rng.generator()
    weights, biases = [], []
    last = len(dims) - 2
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        W = g.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        if zero_head and i == last:
            W[:] = 0.0
        weights.append(W)
        biases.append(np.zeros(fan_out))
    return MlpModel(dims, weights, biases)


def _forward_cache(model, X):
    X = as_matrix(X)
    if X.shape[1] != model.input_dim:
        raise ShapeError(f"input has {X.shape[1]} features, model expects {model.input_dim}")
    acts = [X]
    h = X
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ W + b
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts, softmax(acts[-1])


def forward(model, X):
    return _forward_cache(model, X)[1]


def predict_hard(model, X):
    return argmax_rows(forward(model, X))


def cross_entropy(probs, targets, weights=None):
    per_row = -(targets * np.log(probs + LOG_FLOOR)).sum(axis=1)
    if weights is None:
        return float(per_row.mean())
    return float((weights * per_row).sum())


def loss_and_grads(model, X, targets, weights=None):
    """Cross-entropy loss and its parameter gradients.

    ``weights`` are per-row loss weights summing to one; ``None`` means the
    plain minibatch mean.
    """
    targets = as_matrix(targets, "targets")
    acts, probs = _forward_cache(model, X)
    n = probs.shape[0]
    if targets.shape != probs.shape:
        raise ShapeError(f"targets {targets.shape} vs outputs {probs.shape}")
    if np.any(targets < 0) or np.abs(targets.sum(1) - 1.0).max() > 1e-6:
        raise ParameterError("target rows must be probability vectors")
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=np.float64)
    loss = cross_entropy(probs, targets, w)
    delta = (probs - targets) * w[:, None]
    gW = [None] * len(model.weights)
    gb = [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        gW[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (acts[i] > 0)
    if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in gW + gb):
        raise NumericalError("non-finite loss or gradient")
    return loss, gW, gb


def sgd_step(model, X, targets, lr, weights=None):
    """One gradient step in place; returns the loss before the update."""
    loss, gW, gb = loss_and_grads(model, X, targets, weights)
    if lr != 0:
        for i in range(len(model.weights)):
            model.weights[i] = model.weights[i] - lr * gW[i]
            model.biases[i] = model.biases[i] - lr * gb[i]
    return loss


def weighted_step(model, X_local, y_local_targets, X_proxy, proxy_targets, alpha, lr):
    """Single step on ``alpha * CE_local + (1 - alpha) * CE_proxy``."""
    n_l, n_p = len(X_local), len(X_proxy)
    if n_p == 0:
        return sgd_step(model, X_local, y_local_targets, lr)
    X = np.vstack([X_local, X_proxy])
    T = np.vstack([y_local_targets, proxy_targets])
    w = np.concatenate([np.full(n_l, alpha / n_l), np.full(n_p, (1.0 - alpha) / n_p)])
    return sgd_step(model, X, T, lr, weights=w)


def save_checkpoint(model, path):
    dims = model.layer_dims
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(dims)))
        f.write(struct.pack(f"<{len(dims)}I", *dims))
        f.write(model.flat_params().astype("<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a model checkpoint")
    version, n_dims = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    dims = list(struct.unpack_from(f"<{n_dims}I", blob, 12))
    model = MlpModel(
        dims,
        [np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])],
        [np.zeros(b) for b in dims[1:]],
    )
    offset = 12 + 4 * n_dims
    flat = np.frombuffer(blob, dtype="<f8", offset=offset)
    if flat.size != model.param_count():
        raise FormatError(f"{path}: parameter block has {flat.size} values")
    model.set_flat_params(flat.astype(np.float64))
    return model
