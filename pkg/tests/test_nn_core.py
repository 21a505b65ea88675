import math

import numpy as np
import pytest

from medintake_tools.errors import ConfigError, NumericError
from medintake_tools.model import build_model, forward_params
from medintake_tools.nn_core import (
    AdamState,
    adam_step,
    backward,
    conv_group_forward,
    cross_entropy,
    dense_backward,
    dense_forward,
    dropout,
    one_hot,
    pool_backward,
    softmax,
    xavier_bound,
    xavier_init
)


def test_xavier_bound_and_range():
    sample = xavier_init(2, 1, (1000,), np.random.default_rng(0))

    assert xavier_bound(2, 1) == pytest.approx(math.sqrt(2))
    assert np.abs(sample).max() <= math.sqrt(2)


def test_xavier_variance():
    sample = xavier_init(100, 100, (100000,), np.random.default_rng(1), dtype=np.float64)
    expected = xavier_bound(100, 100) ** 2 / 3

    assert expected == pytest.approx(0.01)
    assert abs(sample.var() - expected) < 0.05 * expected


def test_xavier_deterministic_and_validated():
    a = xavier_init(3, 4, (3, 4), np.random.default_rng(2))
    b = xavier_init(3, 4, (3, 4), np.random.default_rng(2))

    assert np.array_equal(a, b)
    with pytest.raises(ConfigError):
        xavier_init(0, 4, (0, 4), np.random.default_rng(2))


def test_conv_group_forward_window_sums():
    doc = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    pooled, cache = conv_group_forward(doc, np.ones((2, 2, 1)), np.zeros(1))

    assert np.array_equal(cache.pre[0, :, 0], [2.0, 3.0])
    assert np.array_equal(pooled, [3.0])


def test_conv_group_forward_zero_weights():
    doc = np.random.default_rng(3).normal(size=(10, 4))
    pooled, _ = conv_group_forward(doc, np.zeros((3, 4, 5)), np.zeros(5))

    assert np.array_equal(pooled, np.zeros(5))


def test_conv_group_forward_relu_clamps():
    pooled, _ = conv_group_forward(np.array([[1.0], [1.0]]), np.array([[[-1.0]]]), np.zeros(1))

    assert np.array_equal(pooled, [0.0])


def test_conv_group_forward_shape_mismatch():
    with pytest.raises(ConfigError):
        conv_group_forward(np.zeros((5, 3)), np.zeros((2, 4, 1)), np.zeros(1))
    with pytest.raises(ConfigError):
        conv_group_forward(np.zeros((2, 3)), np.zeros((3, 3, 1)), np.zeros(1))


def test_conv_pooling_ties_go_to_first_position():
    doc = np.array([[1.0], [1.0], [1.0]])
    _, cache = conv_group_forward(doc, np.ones((1, 1, 1)), np.zeros(1))

    assert cache.argmax[0, 0] == 0


def test_pooling_gradient_reaches_one_position_per_filter():
    rng = np.random.default_rng(3)
    docs = rng.normal(size=(4, 10, 5))
    W = rng.normal(size=(2, 5, 6))
    b = rng.normal(size=6)
    _, cache = conv_group_forward(docs, W, b)

    d_pre = pool_backward(rng.normal(size=(4, 6)), cache)

    assert d_pre.shape == (4, 9, 6)
    assert ((d_pre != 0).sum(axis=1) <= 1).all()
    for n in range(4):
        for f in range(6):
            if cache.pre[n, cache.argmax[n, f], f] <= 0:
                assert not d_pre[n, :, f].any()


def test_dense_forward():
    y, _ = dense_forward(np.array([1.0, 2.0]), np.eye(2), np.zeros(2))
    assert np.array_equal(y, [1.0, 2.0])

    y, _ = dense_forward(np.array([1.0, -3.0]), np.eye(2), np.zeros(2), "relu")
    assert np.array_equal(y, [1.0, 0.0])

    y, _ = dense_forward(np.array([1.0, 1.0]), np.array([[1.0], [1.0]]), np.array([0.5]))
    assert np.array_equal(y, [2.5])


def test_dense_forward_shape_mismatch():
    with pytest.raises(ConfigError):
        dense_forward(np.ones(3), np.eye(2), np.zeros(2))


def test_softmax():
    assert np.allclose(softmax(np.zeros(3)), [1 / 3] * 3)
    assert np.allclose(softmax(np.array([math.log(2), 0.0, 0.0])), [0.5, 0.25, 0.25])

    p = softmax(np.array([1000.0, 0.0, 0.0]))
    assert np.all(np.isfinite(p))
    assert p[0] == pytest.approx(1.0)


def test_softmax_is_shift_invariant():
    logits = np.random.default_rng(5).normal(size=(4, 3))

    for shift in (-50.0, 0.5, 37.0):
        assert np.allclose(softmax(logits + shift), softmax(logits), rtol=0, atol=1e-6)


def test_softmax_rejects_nan():
    with pytest.raises(NumericError):
        softmax(np.array([np.nan, 0.0, 0.0]))


def test_cross_entropy():
    assert cross_entropy(np.full(3, 1 / 3), 2) == pytest.approx(math.log(3))
    assert cross_entropy(np.array([0.0, 1.0, 0.0]), 2) == 0.0
    assert cross_entropy(np.array([0.0, 1.0, 0.0]), 1) == pytest.approx(27.631, abs=1e-3)


def test_dropout_inference_is_identity():
    x = np.arange(6.0)
    y, mask = dropout(x, 0.5, None, training=False)

    assert y is x
    assert mask is None


def test_dropout_keep_all():
    x = np.arange(6.0)
    y, mask = dropout(x, 1.0, np.random.default_rng(0), training=True)

    assert np.array_equal(y, x)
    assert np.all(mask == 1.0)


def test_dropout_preserves_mean():
    y, _ = dropout(np.ones(10000), 0.5, np.random.default_rng(4), training=True)

    assert abs(y.mean() - 1.0) < 0.02


def test_dropout_rejects_keep_prob():
    for keep_prob in (0.0, -0.1, 1.5):
        with pytest.raises(ConfigError):
            dropout(np.ones(3), keep_prob, np.random.default_rng(0), training=True)


def test_adam_single_step():
    params = {"theta": np.zeros(1)}
    state = AdamState.fresh(params, 0.999)

    new_params, new_state = adam_step(params, {"theta": np.ones(1)}, state, 0.001)

    assert new_params["theta"][0] == pytest.approx(-0.000999999990, rel=1e-9)
    assert new_state.t == 1
    assert params["theta"][0] == 0.0
    assert state.t == 0


def test_adam_zero_gradient_keeps_params():
    params = {"theta": np.array([0.3, -0.2])}
    new_params, _ = adam_step(params, {"theta": np.zeros(2)}, AdamState.fresh(params, 0.9), 0.01)

    assert np.array_equal(new_params["theta"], params["theta"])


def test_adam_deterministic():
    params = {"theta": np.array([0.3, -0.2])}
    grads = {"theta": np.array([0.1, 0.5])}
    state = AdamState.fresh(params, 0.999)

    a, _ = adam_step(params, grads, state.clone(), 0.01)
    b, _ = adam_step(params, grads, state.clone(), 0.01)

    assert np.array_equal(a["theta"], b["theta"])


def test_adam_rejects_non_finite_gradient():
    params = {"conv0_W": np.zeros(2)}

    with pytest.raises(NumericError, match="conv0_W"):
        adam_step(params, {"conv0_W": np.array([np.inf, 0.0])}, AdamState.fresh(params, 0.999), 0.01)


def test_single_linear_layer_gradient():
    x = np.array([[1.0]])
    W = np.array([[0.3, -0.4]])
    b = np.zeros(2)

    def loss(W):
        logits, _ = dense_forward(x, W, b)
        return -math.log(softmax(logits)[0, 0])

    logits, cache = dense_forward(x, W, b)
    d_logits = softmax(logits) - np.array([[1.0, 0.0]])
    _, dW, _ = dense_backward(d_logits, W, cache)

    step = 1e-5
    numeric = np.zeros_like(W)
    for j in range(2):
        plus, minus = W.copy(), W.copy()
        plus[0, j] += step
        minus[0, j] -= step
        numeric[0, j] = (loss(plus) - loss(minus)) / (2 * step)

    assert np.linalg.norm(dW - numeric) / (np.linalg.norm(dW) + np.linalg.norm(numeric)) < 1e-6


def test_backward_is_zero_at_the_optimum(toy_hp):
    model = build_model(toy_hp, 8, seed=0, restricted=False, dtype=np.float64)
    docs = np.random.default_rng(6).normal(size=(4, 12, 8))
    golds = np.array([1, 2, 3, 1])

    _, cache = forward_params(model.params, toy_hp, docs, False, None)
    perfect = cache.copy(update={"probs": one_hot(golds, np.float64)})
    grads = backward(model.params, perfect, golds)

    assert set(grads) == set(model.params)
    assert all(not g.any() for g in grads.values())


def test_backward_needs_a_cache(toy_hp):
    model = build_model(toy_hp, 8, seed=0, restricted=False)

    with pytest.raises(ValueError):
        backward(model.params, None, [1])
