import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fcpnfv import deep
from fcpnfv.deep import (
    AutoencoderLayer, SparseHyper, ae_grad, ae_loss, ae_train, encode, init_layer, predict_stack,
    softmax_train, sweep_hidden_sizes, sweep_split, train_stack,
)
from fcpnfv.errors import DegenerateLabels, ShapeError
from fcpnfv.persist import TrainedModel, dumps_model

from conftest import blobs
from oracles import central_difference, naive_ae_loss, naive_forward, relative_errors

QUICK = dict(
    hyper1=SparseHyper(epochs=60), hyper2=SparseHyper(epochs=30), softmax_epochs=80, finetune_epochs=40
)


def random_layer(r, D, H, scale=0.5):
    return AutoencoderLayer(
        r.normal(scale=scale, size=(H, D)), r.normal(scale=0.1, size=H),
        r.normal(scale=scale, size=(D, H)), r.normal(scale=0.1, size=D),
    )


def test_zero_layer_closed_form():
    D, H = 5, 3
    layer = AutoencoderLayer(np.zeros((H, D)), np.zeros(H), np.zeros((D, H)), np.zeros(D))
    loss = ae_loss(layer, np.zeros((4, D)), SparseHyper(beta=0, l2=0))
    assert loss == pytest.approx(0.125 * D, abs=1e-15)


def test_kl_term_vanishes_at_target_rate():
    rho = 0.1
    D, H = 3, 4
    layer = AutoencoderLayer(np.zeros((H, D)), np.full(H, np.log(rho / (1 - rho))), np.ones((D, H)), np.zeros(D))
    X = np.random.default_rng(0).uniform(size=(6, D))
    with_kl = ae_loss(layer, X, SparseHyper(rho=rho, beta=4, l2=0))
    without = ae_loss(layer, X, SparseHyper(rho=rho, beta=0, l2=0))
    assert abs(with_kl - without) < 1e-12


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_loss_matches_naive_loop(seed):
    r = np.random.default_rng(seed)
    layer = random_layer(r, 5, 3)
    X = r.uniform(size=(7, 5))
    h = SparseHyper(rho=0.2, beta=3.0, l2=0.01)
    got = ae_loss(layer, X, h)
    want = naive_ae_loss(layer.W1, layer.b1, layer.W2, layer.b2, X, 0.2, 3.0, 0.01)
    assert relative_errors(got, want) < 1e-12


def test_loss_shape_errors():
    layer = init_layer(3, 2, 0)
    with pytest.raises(ShapeError):
        ae_loss(layer, np.zeros((2, 4)))
    with pytest.raises(ShapeError):
        ae_loss(layer, np.zeros((0, 3)))


def _coords(r, shapes, n):
    out = []
    for _ in range(n):
        p = int(r.integers(len(shapes)))
        out.append((p, tuple(int(r.integers(s)) for s in shapes[p])))
    return out


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_ae_gradient_finite_differences(seed):
    r = np.random.default_rng(seed)
    layer = random_layer(r, 6, 4)
    X = r.uniform(size=(8, 6))
    h = SparseHyper(rho=0.1, beta=4.0, l2=0.001)
    params = layer.params()
    coords = _coords(r, [p.shape for p in params], 20)
    num = central_difference(lambda: ae_loss(layer, X, h), params, coords, 1e-5)
    g = ae_grad(layer, X, h).params()
    ana = np.array([g[p][idx] for p, idx in coords])
    assert np.max(relative_errors(ana, num)) < 1e-6


def test_weight_decay_gradient_is_lambda_w():
    D = 4
    eye = AutoencoderLayer(np.eye(D), np.zeros(D), np.eye(D), np.zeros(D))
    X = np.random.default_rng(3).uniform(size=(5, D))
    lam = 0.37
    a = ae_grad(eye, X, SparseHyper(beta=0, l2=lam))
    b = ae_grad(eye, X, SparseHyper(beta=0, l2=0))
    np.testing.assert_allclose(a.W1 - b.W1, lam * np.eye(D), atol=1e-15)
    np.testing.assert_allclose(a.W2 - b.W2, lam * np.eye(D), atol=1e-15)
    np.testing.assert_array_equal(a.b1, b.b1)


def test_duplicated_batch_gives_same_gradient(rng):
    layer = random_layer(rng, 5, 3)
    X = rng.uniform(size=(6, 5))
    a = ae_grad(layer, X).params()
    b = ae_grad(layer, np.vstack([X, X])).params()
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, rtol=1e-12, atol=1e-15)


def test_softmax_gradient_finite_differences(rng):
    H = rng.uniform(size=(10, 4))
    T = np.eye(3)[rng.integers(3, size=10)]
    params = [rng.normal(size=(3, 4)), rng.normal(size=3)]
    coords = _coords(rng, [p.shape for p in params], 12)
    num = central_difference(lambda: deep._softmax_loss_grad(params, H, T, 0.01)[0], params, coords)
    g = deep._softmax_loss_grad(params, H, T, 0.01)[1]
    assert np.max(relative_errors([g[p][i] for p, i in coords], num)) < 1e-6


def test_stack_gradient_finite_differences(rng):
    X = rng.uniform(size=(9, 5))
    T = np.eye(3)[rng.integers(3, size=9)]
    params = [rng.normal(size=(4, 5)), rng.normal(size=4), rng.normal(size=(2, 4)), rng.normal(size=2),
              rng.normal(size=(3, 2)), rng.normal(size=3)]
    coords = _coords(rng, [p.shape for p in params], 20)
    num = central_difference(lambda: deep._stack_loss_grad(params, X, T)[0], params, coords)
    g = deep._stack_loss_grad(params, X, T)[1]
    assert np.max(relative_errors([g[p][i] for p, i in coords], num)) < 1e-6


def test_manifold_is_reconstructed():
    t = np.random.default_rng(7).uniform(0.1, 0.9, size=200)
    X = np.repeat(t[:, None], 4, axis=1)
    layer = ae_train(X, 1, SparseHyper(beta=0, l2=0, epochs=400), seed=0)
    assert deep.reconstruction_mse(layer, X) < 0.01


def test_zero_epochs_returns_initial_layer():
    X = np.random.default_rng(1).uniform(size=(5, 3))
    layer = ae_train(X, 2, SparseHyper(epochs=0), seed=4)
    ref = init_layer(3, 2, 4)
    for a, b in zip(layer.params(), ref.params()):
        np.testing.assert_array_equal(a, b)
    bound = np.sqrt(6 / 5)
    assert np.all(np.abs(ref.W1) <= bound) and np.all(ref.b1 == 0)


def test_training_is_deterministic_and_loss_monotone():
    X = np.random.default_rng(2).uniform(size=(30, 6))
    trace = []
    a = ae_train(X, 3, SparseHyper(epochs=100), seed=9, trace=trace)
    b = ae_train(X, 3, SparseHyper(epochs=100), seed=9)
    for u, v in zip(a.params(), b.params()):
        assert u.tobytes() == v.tobytes()
    assert all(y <= x + 1e-9 for x, y in zip(trace, trace[1:]))
    assert trace[-1] < trace[0]


def test_softmax_uniform_logits_and_degenerate():
    np.testing.assert_allclose(deep.softmax(np.zeros((2, 3))), 1 / 3, rtol=1e-15)
    with pytest.raises(DegenerateLabels):
        softmax_train(np.zeros((3, 2)), [1, 1, 1])
    head, classes = softmax_train(np.eye(2), [1, 2], epochs=5)
    with pytest.raises(ShapeError):
        head.probabilities(np.zeros((1, 3)))


def test_separable_blobs_with_small_stack():
    centers = [[0, 0], [10, 0], [5, 8]]
    Xtr, ytr = blobs(40, centers, 1.0, seed=11)
    Xte, yte = blobs(40, centers, 1.0, seed=12)
    m = train_stack(Xtr, ytr + 1, (8, 4), seed=0)
    assert np.mean(m.predict(Xte) == yte + 1) == 1.0


def test_probabilities_and_forward_oracles(rng):
    X, y = blobs(15, [[0, 0, 0], [3, 3, 0], [0, 3, 3]], 1.0, seed=5)
    m = train_stack(X, y, (5, 3), seed=1, **{**QUICK, "finetune_epochs": 0})
    assert not m.fine_tuned
    Q = rng.normal(size=(20, 3)) * 2
    P = m.predict_proba(Q)
    assert np.max(np.abs(P.sum(1) - 1)) <= 1e-12
    scaled = m.scaling.apply(Q)
    composed = m.softmax.probabilities(encode(m.encoders[1], encode(m.encoders[0], scaled)))
    np.testing.assert_array_equal(P, composed)
    encs = [(e.W, e.b) for e in m.encoders]
    for q, p in zip(scaled, P):
        np.testing.assert_allclose(p, naive_forward(encs, m.softmax.W, m.softmax.b, q), rtol=0, atol=1e-12)
    label, p = predict_stack(m, Q[0])
    assert label == m.classes[int(np.argmax(p))]
    with pytest.raises(ShapeError):
        m.predict(np.zeros((1, 4)))


def test_fine_tune_keeps_training_accuracy():
    X, y = blobs(25, [[0, 0], [2, 1], [1, 3]], 1.0, seed=8)
    pre = train_stack(X, y, (6, 4), seed=2, **{**QUICK, "finetune_epochs": 0})
    tuned = train_stack(X, y, (6, 4), seed=2, **QUICK)
    acc = lambda m: np.mean(m.predict(X) == y)  # noqa: E731
    assert acc(tuned) >= acc(pre) - 0.01


def test_growing_sizes_warn(caplog):
    X, y = blobs(10, [[0, 0], [3, 3]], 1.0, seed=1)
    with caplog.at_level(logging.WARNING):
        train_stack(X, y, (2, 4), seed=0, **QUICK)
    assert "not decreasing" in caplog.text


def test_stack_determinism_through_persistence():
    X, y = blobs(12, [[0, 0], [3, 3]], 1.0, seed=3)
    a = train_stack(X, y, (4, 2), seed=5, **QUICK)
    b = train_stack(X, y, (4, 2), seed=5, **QUICK)
    wrap = lambda m: dumps_model(TrainedModel(m, None, ("a", "b"), "severity", {}, 5))  # noqa: E731
    assert wrap(a) == wrap(b)


def test_sweep_cardinality_and_replay():
    X, y = blobs(20, [[0, 0, 0], [2, 2, 0]], 1.0, seed=4)
    data = sweep_split(X, y, seed=0)
    rows = sweep_hidden_sizes(data, [3, 4, 5], [2, 3], seed=1, **QUICK)
    assert len(rows) == 6
    assert all(np.isfinite(r["accuracy"]) and np.isfinite(r["mse"]) for r in rows)
    assert [(r["h1"], r["h2"]) for r in rows] == [(a, b) for a in (3, 4, 5) for b in (2, 3)]
    for r in rows[:2]:
        m = train_stack(data.X_train, data.y_train, (r["h1"], r["h2"]), seed=1, **QUICK)
        assert r["accuracy"] == float(np.mean(m.predict(data.X_val) == data.y_val))
        assert r["mse"] == m.ae1_mse
