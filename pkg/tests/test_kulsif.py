import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from selective_fd.errors import ParameterError, StateError
from selective_fd.kulsif import (
    BoundingBox, calibrate, estimate_ratio, fit_kulsif, median_bandwidth, sample_background,
)
from selective_fd.numcore import RngStream, gaussian_gram
from selective_fd.selectors import ratio_margin

GRID = np.linspace(0.0, 1.0, 101)
AWAY = (GRID < 0.45) | (GRID > 0.55)
TRUTH = 2.0 * (GRID <= 0.5)


def uniform_pair(n, seed, tag="k"):
    r = RngStream(seed, (tag, n))
    return (r.child("local").generator().uniform(0, 0.5, (n, 1)),
            r.child("bg").generator().uniform(0, 1, (n, 1)))


def direct_minimiser(S_k, S_u, sigma, beta, X):
    """Minimise the empirical objective over span{k(., z) : z in S_u u S_k}.

    With coefficients c the objective is quadratic:
    c'(K_zu K_uz / n_u + beta K_zz) c / 2 - c' K_zk 1 / n_k,
    so the minimiser solves the normal equations (least squares, pseudo-inverse).
    """
    Z = np.vstack([S_u, S_k])
    K_uz = gaussian_gram(S_u, Z, sigma)
    K_kz = gaussian_gram(S_k, Z, sigma)
    K_zz = gaussian_gram(Z, Z, sigma)
    H = K_uz.T @ K_uz / len(S_u) + beta * K_zz
    h = K_kz.sum(0) / len(S_k)
    c = np.linalg.lstsq(H, h, rcond=1e-13)[0]
    return gaussian_gram(X, Z, sigma) @ c


def test_one_point_hand_solution():
    est = fit_kulsif([[0.3]], [[0.3]], sigma=1.0, beta=1.0)
    assert estimate_ratio(est, [[0.3]])[0] == pytest.approx(0.5, rel=1e-14)


def test_dual_layout():
    S_k, S_u = uniform_pair(20, 0)
    est = fit_kulsif(S_k, S_u, 0.2, 0.01)
    assert est.dual_b == pytest.approx(1 / (0.01 * 20))
    assert est.dual_a.shape == (20,)


def test_stationarity_residual():
    S_k, S_u = uniform_pair(80, 1)
    sigma, beta = 0.1, 1e-3
    est = fit_kulsif(S_k, S_u, sigma, beta)
    v = -est.dual_a * beta * len(S_u)
    A = gaussian_gram(S_u, S_u, sigma) / len(S_u) + beta * np.eye(len(S_u))
    rhs = gaussian_gram(S_u, S_k, sigma).sum(1) / len(S_k)
    assert np.linalg.norm(A @ v - rhs) <= 1e-8 * max(1, np.linalg.norm(rhs))
    # v holds the fitted values on the background points
    np.testing.assert_allclose(estimate_ratio(est, S_u, raw=True), v, rtol=1e-9, atol=1e-9)


def test_matches_direct_objective_minimiser():
    g = np.random.default_rng(0)
    S_k, S_u = g.normal(size=(15, 2)), g.uniform(-3, 3, size=(20, 2))
    X = g.normal(size=(30, 2))
    est = fit_kulsif(S_k, S_u, 1.0, 0.05)
    np.testing.assert_allclose(estimate_ratio(est, X, raw=True),
                               direct_minimiser(S_k, S_u, 1.0, 0.05, X), rtol=1e-6, atol=1e-6)


def test_local_row_permutation_invariance():
    S_k, S_u = uniform_pair(60, 2)
    X = np.random.default_rng(2).uniform(0, 1, (25, 1))
    a = fit_kulsif(S_k, S_u, 0.1, 1e-3)
    b = fit_kulsif(S_k[::-1].copy(), S_u, 0.1, 1e-3)
    np.testing.assert_allclose(estimate_ratio(a, X, raw=True), estimate_ratio(b, X, raw=True),
                               rtol=0, atol=1e-10)


def test_one_dimensional_uniform_truth():
    S_k, S_u = uniform_pair(500, 0)
    w = estimate_ratio(fit_kulsif(S_k, S_u, 0.1, 1e-3), GRID[:, None])
    assert w[GRID >= 0.6].mean() <= 0.2
    assert w[GRID <= 0.4].mean() >= 1.2


def test_far_query_vanishes():
    S_k, S_u = uniform_pair(100, 3)
    est = fit_kulsif(S_k, S_u, 0.1, 1e-3)
    assert estimate_ratio(est, [[50.0]])[0] <= 1e-6


def test_ratio_positive_on_local_points():
    S_k, S_u = uniform_pair(100, 4)
    est = fit_kulsif(S_k, S_u, 0.1, 1e-3)
    assert estimate_ratio(est, S_k).mean() > 0


def test_invalid_parameters():
    with pytest.raises(ParameterError):
        fit_kulsif([[0.0]], [[0.0]], 0.0, 1.0)
    with pytest.raises(ParameterError):
        fit_kulsif([[0.0]], [[0.0]], 1.0, 0.0)


def test_consistency_trend():
    errs = []
    for n in (50, 200, 800):
        e = []
        for s in range(10):
            S_k, S_u = uniform_pair(n, s, "trend")
            w = estimate_ratio(fit_kulsif(S_k, S_u, 0.1, n ** -0.9), GRID[:, None])
            e.append(np.abs(w - TRUTH)[AWAY].mean())
        errs.append(np.mean(e))
    assert errs[1] <= 1.1 * errs[0] and errs[2] <= 1.1 * errs[1]


def test_background_inside_widened_box(rng):
    pts = np.array([[0.0, 0.0], [1.0, 1.0]])
    U = sample_background(pts, 1000, rng, margin=0.05)
    assert np.all(U >= -0.05) and np.all(U <= 1.05)


def test_background_moments(rng):
    pts = np.array([[0.0, -2.0], [4.0, 2.0]])
    U = sample_background(pts, 10000, rng, margin=0.05)
    box = BoundingBox.around(pts, 0.05)
    assert np.all(np.abs(U.mean(0) - box.center) <= 0.05 * box.width)


def test_background_deterministic_and_degenerate(rng):
    pts = np.array([[1.0, 3.0], [1.0, 5.0]])
    a, b = sample_background(pts, 50, rng), sample_background(pts, 50, rng)
    np.testing.assert_array_equal(a, b)
    # zero-width first axis widened to +-margin*(1+|center|) = +-0.1
    assert a[:, 0].min() >= 0.9 and a[:, 0].max() <= 1.1 and a[:, 0].std() > 0


def test_calibrate_quantile_rule():
    S_k, S_u = uniform_pair(100, 5)
    est = fit_kulsif(S_k, S_u, 0.1, 1e-3)
    V = np.random.default_rng(5).uniform(0, 0.5, (40, 1))
    r = estimate_ratio(est, V)
    assert calibrate(est, V, 0.0) == r.min()
    assert np.all(r >= est.threshold)
    thresholds = [calibrate(est, V, q) for q in (0, 0.1, 0.25, 0.5, 0.9, 1.0)]
    assert thresholds == sorted(thresholds)
    assert calibrate(est, V, 0.25) == np.sort(r)[9]


def test_calibrate_on_given_ratios():
    class Fixed:
        threshold = None

        def raw(self, X):
            return np.asarray(X, float).ravel()

    est = Fixed()
    assert calibrate(est, [[1.0], [2.0], [3.0], [4.0]], 0.25) == 1.0


def test_calibrate_empty_validation():
    est = fit_kulsif([[0.0]], [[0.0]], 1.0, 1.0)
    with pytest.raises(ParameterError):
        calibrate(est, np.zeros((0, 1)), 0.5)


def test_uncalibrated_estimator_is_state_error():
    est = fit_kulsif([[0.0]], [[0.0]], 1.0, 1.0)
    with pytest.raises(StateError):
        ratio_margin([est], [[0.0]])


@settings(max_examples=30, deadline=None)
@given(scale=st.floats(1e-3, 1e3), tau=st.floats(0, 1), seed=st.integers(0, 1000))
def test_selection_invariant_to_positive_scaling(scale, tau, seed):
    g = np.random.default_rng(seed)
    val, query = g.exponential(size=30), g.exponential(size=50)
    from selective_fd.numcore import quantile
    thr, thr_scaled = quantile(val, tau), quantile(val * scale, tau)
    keep = query >= thr
    keep_scaled = query * scale >= thr_scaled
    # rounding can at most turn a near-miss into an exact tie
    flipped = keep != keep_scaled
    assert np.all(query[flipped] * scale == thr_scaled)


def test_median_bandwidth_cases(rng):
    assert median_bandwidth(np.array([[0.0, 0.0], [2.0, 0.0]]), rng) == pytest.approx(2.0)
    x, y = [0.0, 0.0], [3.0, 4.0]
    assert median_bandwidth(np.array([x, x, y]), rng) == pytest.approx(5.0)
    with pytest.raises(ParameterError):
        median_bandwidth(np.array([[1.0, 1.0]]), rng)
    with pytest.raises(ParameterError):
        median_bandwidth(np.array([[1.0, 1.0], [1.0, 1.0]]), rng)


def test_median_bandwidth_subsample_stable(rng):
    X = np.random.default_rng(0).normal(size=(5000, 3))
    from scipy.spatial.distance import pdist
    full = np.median(pdist(X))
    sub = median_bandwidth(X, rng)
    assert abs(sub - full) <= 0.15 * full
