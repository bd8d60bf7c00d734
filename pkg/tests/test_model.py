import math

import numpy as np
import pytest

from selective_fd.data import synth_gaussians
from selective_fd.errors import NumericalError, ShapeError
from selective_fd.model import (
    MlpModel, forward, init_mlp, load_checkpoint, predict_hard, save_checkpoint, sgd_step,
    weighted_step,
)
from selective_fd.numcore import RngStream, onehot


def test_init_counts_and_determinism(rng):
    m = init_mlp([2, 3], rng)
    assert m.weights[0].size == 6 and m.biases[0].size == 3
    a, b = init_mlp([4, 16, 3], rng), init_mlp([4, 16, 3], rng)
    np.testing.assert_array_equal(a.flat_params(), b.flat_params())


def test_init_he_scale():
    stds = [init_mlp([4, 16, 3], RngStream(s)).weights[0].std() for s in range(10)]
    assert abs(np.mean(stds) - math.sqrt(2 / 4)) <= 0.2 * math.sqrt(2 / 4)


def test_init_zero_head_optional():
    m = init_mlp([4, 16, 3], RngStream(0))
    assert np.all(m.weights[-1] == 0) and np.all(m.biases[0] == 0)
    m = init_mlp([4, 16, 3], RngStream(0), zero_head=False)
    assert np.any(m.weights[-1] != 0)


def test_zero_weight_model_is_uniform():
    m = MlpModel([3, 4], [np.zeros((3, 4))], [np.zeros(4)])
    np.testing.assert_allclose(forward(m, np.ones((2, 3))), 0.25)


def test_forward_rows_are_distributions(np_rng):
    m = init_mlp([5, 8, 8, 6], RngStream(1), zero_head=False)
    P = forward(m, np_rng.normal(size=(30, 5)))
    assert np.all(P > 0)
    assert np.abs(P.sum(1) - 1).max() <= 1e-12


def test_forward_hand_evaluated():
    # 2 inputs, 3 hidden ReLU units, 2 outputs
    W1 = np.array([[1.0, -1.0, 0.5], [2.0, 0.0, -1.0]])
    b1 = np.array([0.0, 1.0, 0.0])
    W2 = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    b2 = np.array([0.0, 0.5])
    m = MlpModel([2, 3, 2], [W1, W2], [b1, b2])
    x = [1.0, 1.0]
    # hidden pre-activations: (3, 0, -0.5) -> relu (3, 0, 0); logits (3, 0.5)
    e3, e05 = math.exp(3.0), math.exp(0.5)
    np.testing.assert_allclose(forward(m, [x])[0], [e3 / (e3 + e05), e05 / (e3 + e05)], rtol=1e-14)


def test_forward_shape_error():
    m = init_mlp([3, 2], RngStream(0))
    with pytest.raises(ShapeError):
        forward(m, np.zeros((1, 4)))


def test_sgd_step_self_target_leaves_params():
    m = init_mlp([3, 5, 4], RngStream(2), zero_head=False)
    X = np.random.default_rng(0).normal(size=(6, 3))
    before = m.flat_params()
    sgd_step(m, X, forward(m, X), 0.5)
    np.testing.assert_array_equal(m.flat_params(), before)


def test_uniform_prediction_loss_is_log_c():
    m = MlpModel([2, 4], [np.zeros((2, 4))], [np.zeros(4)])
    loss = sgd_step(m, np.ones((3, 2)), onehot([0, 1, 2], 4), 0.0)
    assert loss == pytest.approx(math.log(4), rel=1e-10)


def numeric_grad(m, X, T, eps=1e-5):
    theta = m.flat_params()
    out = np.zeros_like(theta)

    def loss_at(t):
        probe = m.copy()
        probe.set_flat_params(t)
        P = forward(probe, X)
        return float(np.mean(-(T * np.log(P + 1e-12)).sum(1)))

    for i in range(theta.size):
        up, dn = theta.copy(), theta.copy()
        up[i] += eps
        dn[i] -= eps
        out[i] = (loss_at(up) - loss_at(dn)) / (2 * eps)
    return out


def analytic_grad(m, X, T):
    # one step with lr=1 moves parameters by exactly minus the gradient
    probe = m.copy()
    before = probe.flat_params()
    sgd_step(probe, X, T, 1.0)
    return before - probe.flat_params()


@pytest.mark.parametrize("kind", ["hard", "soft"])
@pytest.mark.parametrize("dims", [[3, 5, 4], [2, 32, 4], [2, 16, 8, 3]])
def test_gradient_matches_finite_differences(kind, dims):
    g = np.random.default_rng(len(dims))
    m = init_mlp(dims, RngStream(3), zero_head=False)
    X = g.normal(size=(8, dims[0]))
    C = dims[-1]
    T = onehot(g.integers(0, C, 8), C) if kind == "hard" else np.exp(g.normal(size=(8, C)))
    T = T / T.sum(1, keepdims=True)
    a, n = analytic_grad(m, X, T), numeric_grad(m, X, T)
    rel = np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), 1e-8)
    assert rel.max() <= 1e-4


def test_lr_zero_is_bit_identical():
    m = init_mlp([3, 5, 4], RngStream(4))
    before = m.flat_params()
    sgd_step(m, np.ones((2, 3)), onehot([0, 1], 4), 0.0)
    np.testing.assert_array_equal(m.flat_params(), before)


def test_minibatch_permutation_equivariance():
    g = np.random.default_rng(5)
    X = g.normal(size=(10, 3))
    T = onehot(g.integers(0, 4, 10), 4)
    a, b = init_mlp([3, 5, 4], RngStream(5), zero_head=False), None
    b = a.copy()
    perm = g.permutation(10)
    la = sgd_step(a, X, T, 0.1)
    lb = sgd_step(b, X[perm], T[perm], 0.1)
    assert la == pytest.approx(lb, rel=1e-14)
    np.testing.assert_allclose(a.flat_params(), b.flat_params(), rtol=0, atol=1e-14)


def test_non_finite_loss_raises():
    m = init_mlp([2, 3], RngStream(0))
    m.weights[0][:] = np.nan
    with pytest.raises(NumericalError):
        sgd_step(m, np.ones((1, 2)), onehot([0], 3), 0.1)


def test_predict_hard_tie_break_and_argmax():
    m = MlpModel([1, 2], [np.zeros((1, 2))], [np.zeros(2)])
    assert predict_hard(m, [[1.0]]).tolist() == [0]
    m = init_mlp([4, 6, 5], RngStream(8), zero_head=False)
    X = np.random.default_rng(8).normal(size=(50, 4))
    np.testing.assert_array_equal(predict_hard(m, X), forward(m, X).argmax(1))


def test_training_sanity_floor():
    ds = synth_gaussians(2, 2, 200, 4.0, 0.5, RngStream(0, ("sanity",)))
    m = init_mlp([2, 16, 2], RngStream(0))
    g = np.random.default_rng(0)
    T = onehot(ds.labels, 2)
    for _ in range(500):
        idx = g.choice(len(ds), 64, replace=False)
        sgd_step(m, ds.features[idx], T[idx], 0.1)
    assert np.mean(predict_hard(m, ds.features) == ds.labels) >= 0.99


def test_single_class_training_predicts_that_class_everywhere():
    ds = synth_gaussians(4, 2, 100, 6.0, 0.8, RngStream(0))
    rows = ds.labels == 2
    m = init_mlp([2, 64, 32, 4], RngStream(1))
    for _ in range(200):
        sgd_step(m, ds.features[rows][:64], onehot(ds.labels[rows][:64], 4), 0.1)
    grid = np.random.default_rng(0).uniform(-20, 20, size=(2000, 2))
    assert set(predict_hard(m, grid).tolist()) == {2}


def test_weighted_step_extremes_match_plain_steps():
    g = np.random.default_rng(6)
    Xl, Xp = g.normal(size=(4, 3)), g.normal(size=(5, 3))
    Tl, Tp = onehot(g.integers(0, 4, 4), 4), onehot(g.integers(0, 4, 5), 4)
    base = init_mlp([3, 5, 4], RngStream(6), zero_head=False)
    a, b = base.copy(), base.copy()
    weighted_step(a, Xl, Tl, Xp, Tp, 1.0, 0.1)
    sgd_step(b, Xl, Tl, 0.1)
    np.testing.assert_allclose(a.flat_params(), b.flat_params(), atol=1e-14)


def test_checkpoint_roundtrip(tmp_path):
    m = init_mlp([3, 7, 2], RngStream(9), zero_head=False)
    path = tmp_path / "m.sfdm"
    save_checkpoint(m, path)
    assert open(path, "rb").read(4) == b"SFDM"
    back = load_checkpoint(path)
    assert back.layer_dims == [3, 7, 2]
    np.testing.assert_array_equal(back.flat_params(), m.flat_params())
