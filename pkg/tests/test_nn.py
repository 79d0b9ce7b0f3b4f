import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtlalloc import nn
from mtlalloc.errors import DimensionError, NumericError
from mtlalloc.nn import AdamState, DenseParams, adam_step, make_rng


def loop_forward(weights, biases, x, acts, masks=None):
    """Plain-loop oracle for a single sample."""
    y = list(x)
    for l, (W, b, act) in enumerate(zip(weights, biases, acts)):
        H = None if masks is None else masks[l]
        out = []
        for n in range(W.shape[1]):
            z = b[n]
            for k in range(W.shape[0]):
                w = W[k, n] if H is None else H[k, n] * W[k, n]
                z += w * y[k]
            out.append(z)
        if act == "relu":
            out = [max(v, 0.0) for v in out]
        elif act == "tanh":
            out = [math.tanh(v) for v in out]
        elif act == "sigmoid":
            out = [1 / (1 + math.exp(-v)) for v in out]
        elif act == "softmax":
            m = max(out)
            e = [math.exp(v - m) for v in out]
            out = [v / sum(e) for v in e]
        y = out
    return np.array(y)


def small_net(seed, widths=(3, 5, 4, 2)):
    rng = make_rng(seed)
    p = DenseParams.xavier(list(widths), rng)
    for b in p.biases:
        b[:] = rng.normal(0, 0.1, b.shape)
    return p


# ------------------------------------------------------------------ init


def test_xavier_1x1_bound():
    for s in range(20):
        v = nn.xavier_init((1, 1), make_rng(s))[0, 0]
        assert -math.sqrt(3) <= v <= math.sqrt(3)


def test_xavier_deterministic():
    a = nn.xavier_init((4, 4), make_rng(7))
    b = nn.xavier_init((4, 4), make_rng(7))
    assert np.array_equal(a, b)


def test_xavier_variance():
    W = nn.xavier_init((100, 100), make_rng(3))
    assert abs(W.var() - 0.01) < 0.2 * 0.01


def test_xavier_zero_shape():
    with pytest.raises(DimensionError):
        nn.xavier_init((0, 3), make_rng(0))


def test_gaussian_degenerate_and_mean():
    assert np.all(nn.gaussian_init((3, 4), 0.1, 0.0, make_rng(0)) == 0.1)
    W = nn.gaussian_init((100, 100), 0.1, 0.001, make_rng(1))
    assert 0.099 <= W.mean() <= 0.101
    assert np.array_equal(W, nn.gaussian_init((100, 100), 0.1, 0.001, make_rng(1)))
    with pytest.raises(ValueError):
        nn.gaussian_init((2, 2), 0.0, -1.0, make_rng(0))


def test_derived_streams_differ():
    a = make_rng(5, 1).random(4)
    b = make_rng(5, 2).random(4)
    assert not np.array_equal(a, b)
    assert np.array_equal(a, make_rng(5, 1).random(4))


# ------------------------------------------------------------ activations


def test_relu_tanh_values():
    assert nn.relu_tanh(0.0, 5) == 0.0
    assert nn.relu_tanh(-3.0, 5) == 0.0
    assert nn.relu_tanh(0.2, 5) == pytest.approx(0.7615941559557649, abs=1e-12)


def test_softmax_basic():
    assert np.allclose(nn.softmax(np.array([0.0, 0.0])), [0.5, 0.5])
    x = make_rng(0).normal(0, 50, size=(100, 7))
    s = nn.softmax(x)
    assert np.all(np.abs(s.sum(axis=1) - 1) < 1e-12)
    assert np.all(np.isfinite(s))


@given(st.lists(st.floats(-30, 30), min_size=1, max_size=12))
def test_softmax_open_interval(xs):
    s = nn.softmax(np.array(xs))
    assert np.all(s > 0) and np.all(s < 1 + 1e-15)
    assert abs(s.sum() - 1) < 1e-12


def test_sigmoid_extremes():
    s = nn.sigmoid(np.array([-800.0, 0.0, 800.0]))
    assert s[1] == 0.5 and 0 <= s[0] < 1e-300 and s[2] == 1.0


# ---------------------------------------------------------------- forward


def test_forward_identity_layer():
    x = np.array([0.3, -1.2, 4.0])
    y, _ = nn.forward([np.eye(3)], [np.zeros(3)], x, ["identity"])
    assert np.array_equal(y, x)


def test_forward_matches_loop_oracle():
    p = small_net(1)
    acts = ["relu", "tanh", "softmax"]
    x = make_rng(2).normal(size=3)
    y, _ = nn.forward(p.weights, p.biases, x, acts)
    assert np.max(np.abs(y - loop_forward(p.weights, p.biases, x, acts))) < 1e-12


def test_forward_masked_matches_loop_oracle():
    p = small_net(3)
    rng = make_rng(4)
    masks = [None, (rng.random((5, 4)) > 0.4).astype(float), None]
    acts = ["relu", "relu", "sigmoid"]
    x = rng.normal(size=3)
    y, _ = nn.forward(p.weights, p.biases, x, acts, masks)
    assert np.max(np.abs(y - loop_forward(p.weights, p.biases, x, acts, masks))) < 1e-12


def test_all_ones_masks_bit_identical():
    p = small_net(5)
    X = make_rng(6).normal(size=(10, 3))
    acts = ["relu", "relu", "softmax"]
    y0, _ = nn.forward(p.weights, p.biases, X, acts)
    y1, _ = nn.forward(p.weights, p.biases, X, acts, [np.ones_like(W) for W in p.weights])
    assert np.array_equal(y0, y1)


def test_forward_shape_errors():
    p = small_net(0)
    with pytest.raises(DimensionError):
        nn.forward(p.weights, p.biases, np.ones(4), ["relu"] * 3)
    with pytest.raises(DimensionError):
        nn.forward(p.weights, p.biases, np.ones(3), ["relu"] * 3, [None, np.ones((2, 2)), None])


def test_forward_nonfinite_reports_layer():
    W = [np.array([[1e300]]), np.array([[1e300]])]
    with pytest.raises(NumericError) as exc:
        nn.forward(W, [np.zeros(1), np.zeros(1)], np.array([1e10]), ["identity", "identity"])
    assert exc.value.layer == 0


# --------------------------------------------------------------- backward


def finite_diff_check(p, X, acts, G, masks=None, h=1e-5):
    _, tape = nn.forward(p.weights, p.biases, X, acts, masks)
    grads = nn.backward(tape, G)

    def f():
        y, _ = nn.forward(p.weights, p.biases, X, acts, masks)
        return float(np.sum(G * y))

    worst = 0.0
    for arr, g in zip(p.arrays(), sum(([w, b] for w, b in zip(grads.weights, grads.biases)), [])):
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            fp = f()
            arr[idx] = old - h
            fm = f()
            arr[idx] = old
            fd = (fp - fm) / (2 * h)
            worst = max(worst, abs(fd - g[idx]) / max(1e-6, abs(fd), abs(g[idx])))
    return worst


@pytest.mark.parametrize("head", ["softmax", "sigmoid", "tanh", "identity"])
def test_backward_finite_differences(head):
    p = small_net(11)
    rng = make_rng(12)
    X = rng.normal(size=(4, 3))
    G = rng.normal(size=(4, 2))
    assert finite_diff_check(p, X, ["relu", "tanh", head], G) < 1e-4


def test_backward_finite_differences_masked():
    p = small_net(13)
    rng = make_rng(14)
    masks = [None, rng.random((5, 4)), None]  # soft masks behave as constants
    X = rng.normal(size=(4, 3))
    G = rng.normal(size=(4, 2))
    assert finite_diff_check(p, X, ["relu", "relu", "softmax"], G, masks) < 1e-4


def test_zero_mask_zero_gradient():
    p = small_net(15)
    rng = make_rng(16)
    H = (rng.random((5, 4)) > 0.5).astype(float)
    X = rng.normal(size=(6, 3))
    _, tape = nn.forward(p.weights, p.biases, X, ["relu", "relu", "identity"], [None, H, None])
    g = nn.backward(tape, rng.normal(size=(6, 2)))
    assert np.all(g.weights[1][H == 0] == 0.0)
    _, tape = nn.forward(p.weights, p.biases, X, ["relu", "relu", "identity"], [None, np.zeros((5, 4)), None])
    assert np.all(nn.backward(tape, np.ones((6, 2))).weights[1] == 0.0)


def test_linear_mse_closed_form():
    rng = make_rng(21)
    X = rng.normal(size=(20, 3))
    Y = rng.normal(size=(20, 2))
    W = rng.normal(size=(3, 2))
    b = rng.normal(size=2)
    y, tape = nn.forward([W], [b], X, ["identity"])
    g = nn.backward(tape, 2 * (y - Y) / len(X))
    # d/dW mean ||XW + b - Y||^2 = 2/n X^T (XW + b - Y)
    R = X @ W + b - Y
    assert np.max(np.abs(g.weights[0] - 2 / len(X) * X.T @ R)) < 1e-10
    assert np.max(np.abs(g.biases[0] - 2 / len(X) * R.sum(axis=0))) < 1e-10


def test_backward_shape_error():
    p = small_net(0)
    _, tape = nn.forward(p.weights, p.biases, np.ones((2, 3)), ["relu"] * 3)
    with pytest.raises(DimensionError):
        nn.backward(tape, np.ones((2, 3)))


# ------------------------------------------------------------------- adam


def test_adam_first_step():
    p = [np.array([1.0])]
    st_ = AdamState.like(p)
    adam_step(p, [np.array([1.0])], st_, 0.001)
    assert p[0][0] == pytest.approx(1.0 - 0.001, abs=1e-10)
    assert st_.step_count == 1


def test_adam_zero_gradient_no_change():
    p = [np.array([[0.3, -2.0]])]
    st_ = AdamState.like(p)
    for _ in range(5):
        adam_step(p, [np.zeros((1, 2))], st_, 0.01)
    assert np.array_equal(p[0], [[0.3, -2.0]])


def test_adam_two_steps_hand_computed():
    g, lr, b1, b2, eps = 0.5, 0.01, 0.9, 0.999, 1e-8
    x = 2.0
    m = v = 0.0
    for t in (1, 2):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    p = [np.array([2.0])]
    st_ = AdamState.like(p)
    for _ in range(2):
        adam_step(p, [np.array([g])], st_, lr)
    assert abs(p[0][0] - x) < 1e-12
    assert abs(st_.first_moment[0][0] - m) < 1e-12
    assert abs(st_.second_moment[0][0] - v) < 1e-12


def test_adam_rejects_nonfinite():
    p = [np.zeros(2)]
    with pytest.raises(NumericError):
        adam_step(p, [np.array([np.nan, 0.0])], AdamState.like(p), 0.1)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_params_json_roundtrip(seed):
    import json

    p = small_net(seed % 1000)
    q = DenseParams.from_dict(json.loads(json.dumps(p.to_dict())))
    assert all(np.array_equal(a, b) for a, b in zip(p.arrays(), q.arrays()))
