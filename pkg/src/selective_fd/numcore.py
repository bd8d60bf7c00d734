"""Dense numerical helpers: Gaussian Gram matrices, SPD solves, quantiles,
softmax and seeded splittable random streams.

Matrices are plain ``float64`` numpy arrays of shape ``(rows, cols)``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from .errors import NumericalError, ParameterError, ShapeError


def as_matrix(X, name="X"):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {X.shape}")
    return X


def sq_distances(X, Y):
    """Pairwise squared Euclidean distances, clipped at zero."""
    X = as_matrix(X, "X")
    Y = as_matrix(Y, "Y")
    if X.shape[1] != Y.shape[1]:
        raise ShapeError(f"column mismatch: {X.shape[1]} vs {Y.shape[1]}")
    d2 = (X * X).sum(1)[:, None] + (Y * Y).sum(1)[None, :] - 2.0 * (X @ Y.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def gaussian_gram(X, Y, sigma):
    """Entry ``(i, j)`` is ``exp(-|X_i - Y_j|^2 / (2 sigma^2))``."""
    if not sigma > 0 or not math.isfinite(sigma):
        raise ParameterError(f"sigma must be positive and finite, got {sigma}")
    d2 = sq_distances(X, Y)
    return np.exp(-d2 / (2.0 * sigma * sigma))


def _cholesky(A):
    c, info = lapack.dpotrf(A, lower=1, clean=1, overwrite_a=0)
    return c, info


def solve_spd(A, b):
    """Solve ``A x = b`` for symmetric positive definite ``A``.

    Uses a Cholesky factorization. If it fails, ``1e-9 * trace(A) / n`` is
    added to the diagonal and the factorization is retried once. One step of
    iterative refinement against the original ``A`` follows.
    """
    A = as_matrix(A, "A")
    b = np.asarray(b, dtype=np.float64)
    n = A.shape[0]
    if n < 1 or A.shape != (n, n):
        raise ShapeError(f"A must be square and non-empty, got {A.shape}")
    if b.shape[0] != n:
        raise ShapeError(f"b has length {b.shape[0]}, expected {n}")
    scale = max(1.0, float(np.abs(A).max()))
    if np.abs(A - A.T).max() > 1e-10 * scale:
        raise ParameterError("A is not symmetric")

    c, info = _cholesky(A)
    if info > 0:
        ridge = 1e-9 * float(np.trace(A)) / n
        c, info = _cholesky(A + ridge * np.eye(n))
    if info != 0:
        raise NumericalError(
            f"matrix is not positive definite (leading minor {info} failed)",
            pivot=int(info) - 1,
        )
    x, _ = lapack.dpotrs(c, b, lower=1)
    r = b - A @ x
    dx, _ = lapack.dpotrs(c, r, lower=1)
    x = x + dx
    if not np.all(np.isfinite(x)):
        raise NumericalError("non-finite solution")
    return x


def quantile(values, q):
    """Lower empirical quantile: the order statistic at ``max(0, ceil(q n) - 1)``."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ParameterError("quantile of empty input")
    if np.isnan(v).any():
        raise ParameterError("quantile input contains NaN")
    if not 0.0 <= q <= 1.0:
        raise ParameterError(f"q must lie in [0, 1], got {q}")
    k = max(0, math.ceil(q * v.size) - 1)
    return float(np.sort(v)[k])


def softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def argmax_rows(P):
    # np.argmax returns the first maximum, i.e. the lowest-index tie-break
    return np.argmax(np.asarray(P), axis=-1)


def onehot(labels, num_classes):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _label_key(label):
    digest = hashlib.blake2b(repr(label).encode(), digest_size=4).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream addressed by ``(seed, path)``.

    Each call to :meth:`generator` restarts the stream from its beginning, so
    a given path always yields the same values regardless of what other
    streams were consumed first.
    """

    seed: int
    path: tuple = ()

    def child(self, *labels):
        return RngStream(self.seed, self.path + tuple(labels))

    def generator(self):
        ss = np.random.SeedSequence(
            entropy=int(self.seed) & 0xFFFFFFFFFFFFFFFF,
            spawn_key=tuple(_label_key(x) for x in self.path),
        )
        return np.random.Generator(np.random.Philox(ss))
