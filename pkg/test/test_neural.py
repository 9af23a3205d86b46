#!/usr/bin/env python3
"""
测试 numpy 神经网络层：梯度检查、形状、损失和优化器
"""

import sys
from pathlib import Path

# 添加父目录到Python路径
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pytest

from errors import ConfigError, LabelError, NumericalError, ShapeError
from neural import (
    LSTM,
    Adam,
    Conv1D,
    Dense,
    Dropout,
    MaxPool1D,
    Network,
    ReLU,
    Softmax,
    cross_entropy,
    numerical_gradient,
    relative_error,
)

TOL = 1e-4
BPTT_TOL = 1e-3


def _check_layer(layer, x, seed=0, tol=TOL, eps=1e-3):
    """比较解析梯度和中心差分（对输入和所有参数）"""
    if layer.params:
        layer.set_dtype(np.float64)
    rng = np.random.default_rng(seed)
    out = layer.forward(x, training=False)
    weights = rng.standard_normal(out.shape)

    def loss():
        return float(np.sum(layer.infer(x) * weights))

    dx = layer.backward(weights)
    assert relative_error(dx, numerical_gradient(loss, x, eps)) < tol
    for p, g in zip(layer.params, layer.grads):
        assert relative_error(g, numerical_gradient(loss, p, eps)) < tol


# ---------------------------------------------------------------------------
# 梯度检查 (float64)
# ---------------------------------------------------------------------------


def test_conv_gradients():
    x = np.random.default_rng(1).standard_normal((2, 16, 2))
    _check_layer(Conv1D(5, 2, 3, rng=np.random.default_rng(2)), x)


def test_conv_even_kernel_gradients():
    x = np.random.default_rng(3).standard_normal((2, 10, 1))
    _check_layer(Conv1D(4, 1, 2, rng=np.random.default_rng(4)), x)


def test_maxpool_gradients():
    rng = np.random.default_rng(5)
    # distinct values spaced well beyond the finite-difference step
    x = rng.permutation(2 * 9 * 3).reshape(2, 9, 3).astype(np.float64) * 0.1
    _check_layer(MaxPool1D(2), x)


def test_dense_gradients():
    x = np.random.default_rng(6).standard_normal((4, 5))
    _check_layer(Dense(5, 3, rng=np.random.default_rng(7)), x)


def test_dense_flatten_gradients():
    x = np.random.default_rng(8).standard_normal((2, 4, 3))
    _check_layer(Dense(12, 2, flatten=True, rng=np.random.default_rng(9)), x)


def test_relu_gradients():
    rng = np.random.default_rng(10)
    x = rng.uniform(0.1, 1.0, (3, 6)) * rng.choice([-1.0, 1.0], (3, 6))
    _check_layer(ReLU(), x)


def test_softmax_gradients():
    x = np.random.default_rng(11).standard_normal((4, 2))
    _check_layer(Softmax(), x)


def test_lstm_gradients():
    x = np.random.default_rng(12).standard_normal((2, 5, 3))
    _check_layer(LSTM(3, 4, rng=np.random.default_rng(13)), x, tol=BPTT_TOL)


# ---------------------------------------------------------------------------
# 随机形状的梯度检查
# ---------------------------------------------------------------------------

FD_EPS = 1e-5
# inputs are redrawn until every pre-activation and every max-pool gap clears this
KINK_MARGIN = 1e-3


def _preactivation(conv, x):
    plain = Conv1D(conv.kernel, conv.in_ch, conv.out_ch)
    plain.set_dtype(np.float64)
    plain.W[...] = conv.W
    plain.b[...] = conv.b
    return plain.infer(x)


def _clear_of_kinks(conv, x, pool=None):
    z = _preactivation(conv, x)
    if np.min(np.abs(z)) < KINK_MARGIN:
        return False
    if pool is None:
        return True
    r = np.maximum(z, 0.0)
    lo = r.shape[1] // pool
    windows = np.sort(r[:, : lo * pool].reshape(r.shape[0], lo, pool, r.shape[2]), axis=2)
    live = windows[:, :, -1] > 0
    return bool(np.all((windows[:, :, -1] - windows[:, :, -2])[live] > KINK_MARGIN))


def _draw_input(rng, shape, accept):
    for _ in range(100):
        x = rng.standard_normal(shape)
        if accept(x):
            return x
    pytest.fail(f"no input of shape {shape} clear of activation kinks")


@pytest.mark.parametrize("relu", [False, True], ids=["linear", "relu"])
@pytest.mark.parametrize("trial", range(100))
def test_conv_gradients_random_shapes(trial, relu):
    rng = np.random.default_rng(1000 + trial)
    batch, length = int(rng.integers(1, 4)), int(rng.integers(4, 13))
    in_ch, out_ch = int(rng.integers(1, 4)), int(rng.integers(1, 5))
    kernel = int(rng.integers(1, min(length, 7) + 1))
    conv = Conv1D(kernel, in_ch, out_ch, relu=relu, rng=rng)
    conv.set_dtype(np.float64)
    conv.b[...] = rng.uniform(-0.5, 0.5, out_ch)

    x = _draw_input(rng, (batch, length, in_ch), lambda x: not relu or _clear_of_kinks(conv, x))
    _check_layer(conv, x, seed=trial, eps=FD_EPS)


@pytest.mark.parametrize("rate", [0.2, 0.5, 0.8])
def test_dropout_training_gradients_with_fixed_mask(rate):
    rng = np.random.default_rng(20)
    x = rng.standard_normal((3, 7, 2))
    weights = rng.standard_normal(x.shape)
    layer = Dropout(rate, seed=21)

    def forward():
        layer.rng = np.random.default_rng(21)
        return layer.forward(x, training=True)

    out = forward()
    assert np.any(out == 0.0) and np.any(out != 0.0)
    dx = layer.backward(weights)
    assert relative_error(dx, numerical_gradient(lambda: float(np.sum(forward() * weights)), x)) < TOL


@pytest.mark.parametrize("trial", range(20))
def test_conv_network_gradients_random_shapes(trial):
    rng = np.random.default_rng(2000 + trial)
    batch, length, in_ch = int(rng.integers(2, 5)), int(rng.integers(4, 11)), int(rng.integers(1, 3))
    kernel = int(rng.integers(1, min(length, 5) + 1))
    conv = Conv1D(kernel, in_ch, 3, relu=True, rng=rng)
    dropout = Dropout(0.5, seed=trial)
    net = Network([
        conv, MaxPool1D(2), Dense((length // 2) * 3, 5, flatten=True, rng=rng),
        dropout, Dense(5, 2, rng=rng), Softmax(),
    ]).set_dtype(np.float64)
    x = _draw_input(rng, (batch, length, in_ch), lambda x: _clear_of_kinks(conv, x, pool=2))
    labels = rng.integers(0, 2, batch)

    def forward():
        dropout.rng = np.random.default_rng(trial)
        return net.forward(x, training=True)

    def loss():
        return cross_entropy(forward(), labels)[0]

    dx = net.backward_from_logits(forward(), labels)
    grads = [g.copy() for g in net.gradients()]
    assert relative_error(dx, numerical_gradient(loss, x, FD_EPS)) < TOL
    for param, grad in zip(net.parameters(), grads):
        assert relative_error(grad, numerical_gradient(loss, param, FD_EPS)) < TOL


# ---------------------------------------------------------------------------
# 形状与数值
# ---------------------------------------------------------------------------


def test_conv_identity_kernel():
    conv = Conv1D(3, 1, 1)
    conv.W[...] = np.array([0.0, 1.0, 0.0]).reshape(3, 1, 1)
    conv.b[...] = 0.0
    x = np.random.default_rng(0).standard_normal((1, 12, 1)).astype(np.float32)
    assert np.allclose(conv.forward(x), x)


def test_conv_output_shape():
    conv = Conv1D(5, 1, 32, relu=True)
    out = conv.forward(np.zeros((1, 128, 1), dtype=np.float32))
    assert out.shape == (1, 128, 32)


@pytest.mark.parametrize("kernel", [5, 10, 20])
def test_conv_same_length(kernel):
    out = Conv1D(kernel, 2, 4).forward(np.ones((3, 64, 2), dtype=np.float32))
    assert out.shape == (3, 64, 4)


def test_conv_shape_errors():
    conv = Conv1D(5, 2, 4)
    with pytest.raises(ShapeError):
        conv.forward(np.zeros((1, 16, 3), dtype=np.float32))
    with pytest.raises(ShapeError):
        conv.forward(np.zeros((1, 4, 2), dtype=np.float32))


def test_maxpool_values():
    pool = MaxPool1D(2)
    x = np.array([1.0, 3.0, 2.0, 8.0]).reshape(1, 4, 1)
    assert pool.forward(x)[0, :, 0].tolist() == [3.0, 8.0]
    odd = np.array([1.0, 3.0, 2.0, 8.0, 100.0]).reshape(1, 5, 1)
    assert pool.forward(odd)[0, :, 0].tolist() == [3.0, 8.0]


def test_maxpool_shape_errors():
    with pytest.raises(ShapeError):
        MaxPool1D(2).forward(np.zeros((1, 1, 3)))
    with pytest.raises(ShapeError):
        MaxPool1D(2).forward(np.zeros((4, 3)))


def test_dense_flatten_is_channel_major():
    dense = Dense(6, 1, flatten=True)
    dense.W[...] = np.arange(6, dtype=np.float32).reshape(6, 1)
    dense.b[...] = 0.0
    # (B=1, L=3, C=2) with a single 1 at position 0 of channel 1
    x = np.zeros((1, 3, 2), dtype=np.float32)
    x[0, 0, 1] = 1.0
    # channel 1, position 0 sits at flat index 1 * 3 + 0
    assert dense.forward(x)[0, 0] == 3.0


def test_softmax_values():
    sm = Softmax()
    assert np.allclose(sm.forward(np.zeros((1, 2))), [[0.5, 0.5]])
    x = np.random.default_rng(1).standard_normal((10, 2))
    p = sm.forward(x)
    assert np.allclose(p.sum(axis=1), 1.0)
    assert np.allclose(sm.forward(x + 100.0), p)


def test_dropout_identity_at_inference():
    drop = Dropout(0.5, seed=1)
    x = np.random.default_rng(2).standard_normal((50, 8)).astype(np.float32)
    assert np.array_equal(drop.forward(x, training=False), x)
    trained = drop.forward(np.ones((200, 50), dtype=np.float32), training=True)
    assert set(np.unique(trained)) <= {0.0, 2.0}
    assert 0.4 < np.mean(trained == 0.0) < 0.6


def test_dropout_rate_validation():
    with pytest.raises(ConfigError):
        Dropout(1.0)
    with pytest.raises(ConfigError):
        Network([Dropout(0.1)]).set_dropout(-0.1)


def test_lstm_zero_weights_give_zero_output():
    lstm = LSTM(3, 4)
    for p in lstm.params:
        p[...] = 0.0
    out = lstm.forward(np.random.default_rng(0).standard_normal((2, 6, 3)).astype(np.float32))
    assert out.shape == (2, 6, 4)
    assert np.all(out == 0.0)


def test_lstm_forget_bias_starts_at_one():
    lstm = LSTM(3, 4)
    assert np.all(lstm.b[4:8] == 1.0)
    assert np.all(lstm.b[:4] == 0.0)


# ---------------------------------------------------------------------------
# 损失、优化器、网络
# ---------------------------------------------------------------------------


def test_cross_entropy_values():
    loss, _ = cross_entropy(np.array([[0.5, 0.5]]), np.array([0]))
    assert loss == pytest.approx(np.log(2.0))
    loss, _ = cross_entropy(np.array([[1.0, 0.0]]), np.array([1]))
    assert loss == pytest.approx(-np.log(1e-12))
    assert np.isfinite(loss)


def test_cross_entropy_label_errors():
    p = np.array([[0.5, 0.5], [0.2, 0.8]])
    with pytest.raises(LabelError):
        cross_entropy(p, np.array([0, 2]))
    with pytest.raises(LabelError):
        cross_entropy(p, np.array([0.5, 1.0]))
    with pytest.raises(ShapeError):
        cross_entropy(p, np.array([0, 1, 1]))


def test_adam_first_step_moves_by_lr():
    p = np.zeros(3)
    opt = Adam([p], lr=0.01)
    opt.step([np.array([0.5, -2.0, 10.0])])
    assert np.allclose(p, [-0.01, 0.01, -0.01], atol=1e-6)
    assert opt.state["t"] == 1


def _small_net(seed=0):
    rng = np.random.default_rng(seed)
    return Network([Dense(4, 6, rng=rng), ReLU(), Dense(6, 2, rng=rng), Softmax()]).set_dtype(np.float64)


def test_fused_backward_matches_softmax_then_ce():
    net = _small_net()
    x = np.random.default_rng(1).standard_normal((8, 4))
    labels = np.array([0, 1, 1, 0, 1, 0, 0, 1])

    p = net.forward(x, training=True)
    _, grad = cross_entropy(p, labels)
    dx_slow = net.backward(grad)
    slow = [g.copy() for g in net.gradients()]

    dx_fast = net.backward_from_logits(p, labels)
    assert np.allclose(dx_fast, dx_slow)
    for a, b in zip(net.gradients(), slow):
        assert np.allclose(a, b)


def test_shard_gradients_accumulate_to_full_batch():
    net = _small_net(3)
    x = np.random.default_rng(4).standard_normal((8, 4))
    labels = np.array([1, 1, 0, 0, 1, 0, 1, 0])

    net.backward_from_logits(net.forward(x, training=True), labels)
    full = [g.copy() for g in net.gradients()]

    total = [np.zeros_like(g) for g in full]
    for shard in (slice(0, 4), slice(4, 8)):
        net.backward_from_logits(net.forward(x[shard], training=True), labels[shard])
        for acc, g in zip(total, net.gradients()):
            acc += g * 0.5
    for a, b in zip(total, full):
        assert np.allclose(a, b)


def test_network_gradient_check_end_to_end():
    net = _small_net(5)
    x = np.random.default_rng(6).standard_normal((3, 4))
    labels = np.array([0, 1, 1])

    def loss():
        return cross_entropy(net.predict(x), labels)[0]

    net.backward_from_logits(net.forward(x, training=True), labels)
    for p, g in zip(net.parameters(), net.gradients()):
        assert relative_error(g, numerical_gradient(loss, p, eps=1e-5)) < TOL


def test_predict_leaves_training_cache_alone():
    net = _small_net()
    x = np.random.default_rng(7).standard_normal((5, 4))
    labels = np.array([0, 1, 0, 1, 0])

    net.backward_from_logits(net.forward(x, training=True), labels)
    expected = [g.copy() for g in net.gradients()]

    p = net.forward(x, training=True)
    net.predict(np.random.default_rng(8).standard_normal((9, 4)))
    net.backward_from_logits(p, labels)
    for a, b in zip(net.gradients(), expected):
        assert np.allclose(a, b)


def test_same_seed_same_weights():
    a = Conv1D(5, 1, 8, rng=np.random.default_rng(42))
    b = Conv1D(5, 1, 8, rng=np.random.default_rng(42))
    assert np.array_equal(a.W, b.W)


def test_named_parameters_and_counts():
    net = _small_net()
    names = [name for name, _ in net.named_parameters()]
    assert names == ["0.dense.W", "0.dense.b", "2.dense.W", "2.dense.b"]
    assert net.n_params == 4 * 6 + 6 + 6 * 2 + 2


def test_debug_mode_catches_non_finite():
    net = Network([Dense(2, 2)], debug=True)
    with pytest.raises(NumericalError):
        net.forward(np.array([[np.inf, 0.0]], dtype=np.float32))
