"""Kernelized unconstrained least-squares importance fitting (KuLSIF).

Estimates ``w(x) = p(x) / u(x)`` where ``p`` is the local data density and
``u`` is uniform over a box enclosing the data. The minimiser of

    1/(2 n_u) sum_{x in S_u} w(x)^2 - 1/n_k sum_{x in S_k} w(x) + beta/2 |w|^2

over a Gaussian RKHS has the closed form

    w(x) = sum_i a_i k(x, u_i) + 1/(beta n_k) sum_j k(x, s_j),

with ``a = -v / (beta n_u)`` and ``(K_uu / n_u + beta I) v = K_uk 1 / n_k``.
``v`` is the vector of fitted values ``w(u_i)`` on the background points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore
from .errors import NumericalError, ParameterError, StateError
from .numcore import as_matrix, gaussian_gram, solve_spd

DEFAULT_BETA = 1e-3
DEFAULT_MARGIN = 0.05
BANDWIDTH_SUBSAMPLE = 500


@dataclass
class BoundingBox:
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def around(cls, points, margin=DEFAULT_MARGIN):
        P = as_matrix(points)
        lo, hi = P.min(axis=0), P.max(axis=0)
        width = hi - lo
        center = 0.5 * (lo + hi)
        pad = margin * width
        flat = width == 0
        pad[flat] = margin * (1.0 + np.abs(center[flat]))
        return cls(lo - pad, hi + pad)

    @property
    def center(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def width(self):
        return self.hi - self.lo


@dataclass
class RatioEstimator:
    sigma: float
    beta: float
    background_points: np.ndarray
    local_points: np.ndarray
    dual_a: np.ndarray
    dual_b: float
    threshold: float | None = None

    def raw(self, X):
        X = as_matrix(X)
        w = gaussian_gram(X, self.background_points, self.sigma) @ self.dual_a
        w += self.dual_b * gaussian_gram(X, self.local_points, self.sigma).sum(axis=1)
        return w

    @property
    def calibrated(self):
        return self.threshold is not None


def fit_kulsif(local, background, sigma, beta=DEFAULT_BETA):
    S_k = as_matrix(local, "local")
    S_u = as_matrix(background, "background")
    if not sigma > 0 or not beta > 0:
        raise ParameterError(f"sigma and beta must be positive (sigma={sigma}, beta={beta})")
    n_k, n_u = S_k.shape[0], S_u.shape[0]
    if n_k < 1 or n_u < 1:
        raise ParameterError("need at least one local and one background point")
    K_uu = gaussian_gram(S_u, S_u, sigma)
    K_uk = gaussian_gram(S_u, S_k, sigma)
    A = K_uu / n_u + beta * np.eye(n_u)
    rhs = K_uk.sum(axis=1) / n_k
    try:
        v = solve_spd(A, rhs)
    except NumericalError as exc:
        raise NumericalError(f"KuLSIF system is singular; try a larger beta ({exc})",
                             pivot=exc.pivot) from exc
    resid = np.linalg.norm(A @ v - rhs)
    if resid > 1e-8 * max(1.0, np.linalg.norm(rhs)):
        raise NumericalError(f"KuLSIF stationarity residual {resid:.3e} too large; try a larger beta")
    return RatioEstimator(
        sigma=float(sigma),
        beta=float(beta),
        background_points=S_u,
        local_points=S_k,
        dual_a=-v / (beta * n_u),
        dual_b=1.0 / (beta * n_k),
    )


def sample_background(points_for_box, n_u, rng, margin=DEFAULT_MARGIN):
    """Uniform draws from the margin-widened bounding box of the given points."""
    if n_u < 1:
        raise ParameterError("n_u must be >= 1")
    box = BoundingBox.around(points_for_box, margin)
    U = rng.generator().random((n_u, box.lo.size))
    return box.lo + U * box.width


def estimate_ratio(est, X, raw=False):
    w = est.raw(X)
    return w if raw else np.maximum(w, 0.0)


def calibrate(est, validation, tau_client):
    """Set the cutoff to the ``tau_client`` quantile of validation ratios."""
    V = as_matrix(validation, "validation")
    if V.shape[0] == 0:
        raise ParameterError("validation set is empty")
    # looked up through the module so verify's fault-injection test sees patches
    est.threshold = numcore.quantile(estimate_ratio(est, V), tau_client)
    return est.threshold


def median_bandwidth(X, rng, max_points=BANDWIDTH_SUBSAMPLE):
    X = as_matrix(X)
    n = X.shape[0]
    if n < 2:
        raise ParameterError("median bandwidth needs at least two points")
    if n > max_points:
        X = X[rng.generator().choice(n, size=max_points, replace=False)]
    d = np.sqrt(numcore.sq_distances(X, X)[np.triu_indices(X.shape[0], k=1)])
    med = float(np.median(d))
    if med > 0:
        return med
    positive = d[d > 0]
    if positive.size == 0:
        raise ParameterError("all points coincide; bandwidth undefined")
    return float(positive.mean())


def require_calibrated(est):
    if not est.calibrated:
        raise StateError("ratio estimator used before calibrate()")
