import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from selective_fd.errors import NumericalError, ParameterError, ShapeError
from selective_fd.numcore import (
    RngStream, argmax_rows, gaussian_gram, quantile, softmax, solve_spd,
)


def brute_gram(X, Y, sigma):
    out = np.empty((len(X), len(Y)))
    for i, x in enumerate(X):
        for j, y in enumerate(Y):
            out[i, j] = math.exp(-sum((a - b) ** 2 for a, b in zip(x, y)) / (2 * sigma ** 2))
    return out


def test_gram_identity_and_formula():
    np.testing.assert_array_equal(gaussian_gram([[0.0, 0.0]], [[0.0, 0.0]], 1.0), [[1.0]])
    assert gaussian_gram([[0.0]], [[1.0]], 1.0)[0, 0] == pytest.approx(math.exp(-0.5), rel=1e-15)


def test_gram_matches_brute_force(np_rng):
    X, Y = np_rng.normal(size=(7, 3)), np_rng.normal(size=(5, 3))
    np.testing.assert_allclose(gaussian_gram(X, Y, 0.7), brute_gram(X, Y, 0.7), rtol=1e-12)


def test_gram_symmetry(np_rng):
    X, Y = np_rng.normal(size=(9, 4)), np_rng.normal(size=(6, 4))
    np.testing.assert_allclose(gaussian_gram(X, Y, 1.3), gaussian_gram(Y, X, 1.3).T, rtol=0, atol=1e-15)


def test_gram_errors():
    with pytest.raises(ParameterError):
        gaussian_gram([[0.0]], [[0.0]], 0.0)
    with pytest.raises(ParameterError):
        gaussian_gram([[0.0]], [[0.0]], -1.0)
    with pytest.raises(ShapeError):
        gaussian_gram(np.zeros((2, 2)), np.zeros((2, 3)), 1.0)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 200), d=st.integers(1, 5), seed=st.integers(0, 2**32 - 1))
def test_gram_is_psd_with_unit_diagonal(n, d, seed):
    X = np.random.default_rng(seed).normal(size=(n, d)) * 3
    G = gaussian_gram(X, X, 1.0)
    np.testing.assert_allclose(np.diag(G), 1.0)
    np.testing.assert_array_equal(G, G.T)
    np.linalg.cholesky(G + 1e-9 * np.eye(n))
    assert np.all(G > 0) and np.all(G <= 1)


def test_solve_spd_trivial_systems():
    np.testing.assert_allclose(solve_spd(np.eye(3), [1.0, 2.0, 3.0]), [1, 2, 3])
    np.testing.assert_allclose(solve_spd([[2.0, 0.0], [0.0, 4.0]], [2.0, 8.0]), [1, 2])


def test_solve_spd_residual_bound_random(np_rng):
    for _ in range(100):
        n = int(np_rng.integers(1, 40))
        # condition number <= 1e6 by construction of the spectrum
        Q, _ = np.linalg.qr(np_rng.normal(size=(n, n)))
        eig = np.logspace(0, -6 * np_rng.random(), n)
        A = (Q * eig) @ Q.T
        A = 0.5 * (A + A.T)
        b = np_rng.normal(size=n)
        x = solve_spd(A, b)
        assert np.linalg.norm(A @ x - b) <= 1e-8 * max(1.0, np.linalg.norm(b))


def test_solve_spd_mtm_plus_identity(np_rng):
    M = np_rng.normal(size=(30, 30))
    A = M.T @ M + np.eye(30)
    b = np_rng.normal(size=30)
    x = solve_spd(A, b)
    assert np.linalg.norm(A @ x - b) <= 1e-8 * max(1, np.linalg.norm(b))
    np.testing.assert_array_equal(x, solve_spd(A, b))


def test_solve_spd_rejects_indefinite():
    A = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -5.0]])
    with pytest.raises(NumericalError) as info:
        solve_spd(A, np.ones(3))
    assert info.value.pivot == 2


def test_solve_spd_ridge_fallback_semidefinite():
    # rank-deficient PSD matrix: plain Cholesky fails, the ridge retry succeeds
    v = np.array([1.0, 1.0])
    A = np.outer(v, v)
    x = solve_spd(A, np.array([1.0, 1.0]))
    assert np.all(np.isfinite(x))


def brute_lower_quantile(values, q):
    s = sorted(values)
    for k in range(1, len(s) + 1):
        if k / len(s) >= q:
            return s[k - 1]
    return s[-1]


def test_quantile_examples():
    assert quantile([1, 2, 3, 4], 0) == 1
    assert quantile([1, 2, 3, 4], 1) == 4
    assert quantile([4, 1, 3, 2], 0.25) == 1


def test_quantile_errors():
    with pytest.raises(ParameterError):
        quantile([], 0.5)
    with pytest.raises(ParameterError):
        quantile([1.0, float("nan")], 0.5)


@given(values=st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50),
       q=st.floats(0, 1))
def test_quantile_matches_order_statistic(values, q):
    assert quantile(values, q) == brute_lower_quantile(values, q)


@given(values=st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50),
       q1=st.floats(0, 1), q2=st.floats(0, 1))
def test_quantile_monotone(values, q1, q2):
    lo, hi = sorted((q1, q2))
    assert quantile(values, lo) <= quantile(values, hi)


def test_softmax_examples():
    np.testing.assert_allclose(softmax([0.0, 0.0, 0.0]), [1 / 3] * 3)
    out = softmax([1000.0, 0.0])
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-300)


@given(z=arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)),
       c=st.floats(-100, 100))
def test_softmax_shift_invariance_and_normalisation(z, c):
    p = softmax(z)
    assert abs(p.sum() - 1.0) <= 1e-12
    assert np.all(p > 0)
    np.testing.assert_allclose(softmax(z + c), p, rtol=0, atol=1e-12)


@given(z=arrays(np.float64, st.integers(1, 12), elements=st.sampled_from([-1.0, 0.0, 0.5, 2.0])))
def test_softmax_preserves_argmax_with_ties(z):
    assert argmax_rows(softmax(z)) == int(np.flatnonzero(z == z.max())[0])


def test_rng_stream_reproducible_and_path_dependent():
    a = RngStream(7, ("client", 3)).generator().random(5)
    b = RngStream(7, ("client", 3)).generator().random(5)
    c = RngStream(7, ("client", 4)).generator().random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_rng_stream_independent_of_consumption_order():
    root = RngStream(11)
    first = root.child("x").generator().random(3)
    root.child("y").generator().random(1000)
    np.testing.assert_array_equal(first, root.child("x").generator().random(3))


def test_rng_substreams_uncorrelated():
    a = RngStream(5, ("a",)).generator().standard_normal(20000)
    b = RngStream(5, ("b",)).generator().standard_normal(20000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.03
