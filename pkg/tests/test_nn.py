import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from daforge.errors import NumericError, ShapeError, UsageError
from daforge.nn import (AdamState, Conv2D, ConvTranspose2D, Dense, MaxPool2D, Network, ReLU, Reshape,
                        Sigmoid, Softmax, Upsample2D, adam_step, check_gradients, cross_entropy,
                        one_hot, softmax_stable)

LAYER_CASES = {
    "Conv2D": ([Conv2D(3, 3)], (5, 6, 2)),
    "Conv2D-5x5": ([Conv2D(2, 5)], (7, 7, 3)),
    "ConvTranspose2D": ([ConvTranspose2D(3, 3)], (4, 5, 2)),
    "MaxPool2D": ([MaxPool2D(2)], (5, 7, 2)),
    "Upsample2D": ([Upsample2D(2)], (3, 3, 2)),
    "Dense": ([Dense(4)], (6,)),
    "ReLU": ([ReLU()], (6,)),
    "Sigmoid": ([Sigmoid()], (5,)),
    "Softmax": ([Softmax()], (5,)),
    "Reshape": ([Reshape((3, 4)), Reshape((-1,))], (12,)),
}


def linear_loss(weights):
    return lambda out: (float(np.sum(out * weights)), weights)


@pytest.mark.parametrize("case", sorted(LAYER_CASES))
@pytest.mark.parametrize("seed", range(10))
def test_layer_gradients_match_finite_differences(case, seed):
    layers, shape = LAYER_CASES[case]
    rng = np.random.default_rng(seed)
    net = Network([type(l)(**l.config()) for l in layers], shape, rng=seed)
    w = rng.normal(size=(3,) + net.output_shape)
    report = check_gradients(net, linear_loss(w), rng.normal(size=(3,) + shape), tol=1e-6)
    assert report.passed, str(report)


def test_conv_shape_arithmetic():
    net = Network([Conv2D(8, 5)], (52, 52, 3))
    assert net.output_shape == (48, 48, 8)
    assert net.forward(np.zeros((1, 52, 52, 3))).shape == (1, 48, 48, 8)


def test_reshape_length_2028_to_26x26x3():
    net = Network([Reshape((26, 26, 3))], (2028,))
    x = np.arange(2028.0)[None]
    y = net.forward(x)
    assert y.shape == (1, 26, 26, 3)
    np.testing.assert_array_equal(y.ravel(), x.ravel())


def test_relu_values():
    y = Network([ReLU()], (3,)).forward(np.array([[-1.0, 0.0, 2.0]]))
    np.testing.assert_array_equal(y, [[0.0, 0.0, 2.0]])


def test_dense_weight_gradient_is_outer_product():
    net = Network([Dense(2)], (3,), rng=0)
    x = np.array([[1.0, 2.0, 3.0]])
    g = np.array([[0.5, -1.0]])
    net.forward(x)
    grads, _ = net.backward(g)
    np.testing.assert_allclose(grads[0], x.T @ g)
    np.testing.assert_allclose(grads[1], g[0])


def test_maxpool_routes_gradient_to_argmax():
    net = Network([MaxPool2D(2)], (2, 2, 1))
    x = np.array([1.0, 4.0, 3.0, 2.0]).reshape(1, 2, 2, 1)
    net.forward(x)
    _, dx = net.backward(np.ones((1, 1, 1, 1)))
    np.testing.assert_array_equal(dx.ravel(), [0.0, 1.0, 0.0, 0.0])


def test_maxpool_odd_size_floors():
    assert Network([MaxPool2D(2)], (7, 7, 1)).output_shape == (3, 3, 1)


def test_backward_does_not_mutate_params():
    net = Network([Conv2D(2, 3), ReLU(), Reshape((-1,)), Dense(3)], (5, 5, 1), rng=3)
    before = net.get_weights()
    out = net.forward(np.random.default_rng(0).normal(size=(2, 5, 5, 1)))
    net.backward(np.ones_like(out))
    for a, b in zip(before, net.params):
        np.testing.assert_array_equal(a, b)


def test_backward_before_forward_is_usage_error():
    net = Network([Dense(2)], (3,))
    with pytest.raises(UsageError):
        net.backward(np.ones((1, 2)))


def test_shape_mismatch_names_layer():
    net = Network([Dense(2)], (3,))
    with pytest.raises(ShapeError, match="layer 0"):
        net.forward(np.ones((1, 4)))


def test_geometry_underflow_names_layer():
    with pytest.raises(ShapeError, match="layer 2"):
        Network([Conv2D(2, 3), ReLU(), Conv2D(2, 5)], (5, 5, 1))


def test_forward_is_deterministic():
    x = np.random.default_rng(1).normal(size=(4, 8, 8, 3))
    a = Network([Conv2D(4, 3), ReLU(), MaxPool2D()], (8, 8, 3), rng=7).forward(x)
    b = Network([Conv2D(4, 3), ReLU(), MaxPool2D()], (8, 8, 3), rng=7).forward(x)
    assert a.tobytes() == b.tobytes()


def test_stateless_layers_have_no_params():
    net = Network([ReLU(), Sigmoid(), Softmax(), Reshape((2, 2, 1)), Upsample2D(), MaxPool2D()], (4,))
    assert net.params == []


def test_spec_round_trip_rebuilds_same_network():
    net = Network([Conv2D(2, 3), ReLU(), Reshape((-1,)), Dense(3), Softmax()], (5, 5, 3), rng=1)
    clone = net.copy()
    x = np.random.default_rng(0).normal(size=(2, 5, 5, 3))
    assert clone.forward(x).tobytes() == net.forward(x).tobytes()


# -- softmax --------------------------------------------------------------

def test_softmax_uniform():
    np.testing.assert_allclose(softmax_stable([0.0, 0.0, 0.0]), [1 / 3] * 3)


def test_softmax_no_overflow():
    p = softmax_stable([1000.0, 0.0])
    assert np.all(np.isfinite(p))
    np.testing.assert_allclose(p, [1.0, 0.0], atol=1e-12)


def test_softmax_ln2():
    np.testing.assert_allclose(softmax_stable([np.log(2.0), 0.0]), [2 / 3, 1 / 3], rtol=1e-12)


@settings(max_examples=100, deadline=None)
@given(hnp.arrays(np.float64, (4, 6), elements=st.floats(-30, 30)))
def test_softmax_rows_sum_to_one(z):
    p = softmax_stable(z)
    assert np.all(p > 0) and np.all(p <= 1)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)


@settings(max_examples=100, deadline=None)
@given(hnp.arrays(np.float64, (3, 5), elements=st.floats(-30, 30)))
def test_sigmoid_in_open_unit_interval(z):
    y = Network([Sigmoid()], (5,)).forward(z)
    assert np.all(y > 0) and np.all(y < 1)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, (2, 3, 4, 2), elements=st.floats(-1e6, 1e6)))
def test_upsample_then_maxpool_is_identity(x):
    net = Network([Upsample2D(2), MaxPool2D(2)], (3, 4, 2))
    np.testing.assert_array_equal(net.forward(x), x)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, (2, 24), elements=st.floats(-1e6, 1e6)))
def test_reshape_round_trip_is_identity(x):
    net = Network([Reshape((2, 3, 4)), Reshape((24,))], (24,))
    np.testing.assert_array_equal(net.forward(x), x)


# -- adam -----------------------------------------------------------------

def test_adam_zero_gradient_leaves_params():
    p = [np.array([1.0, -2.0])]
    st_ = AdamState.for_params(p)
    adam_step(p, [np.zeros(2)], st_, 0.1)
    np.testing.assert_array_equal(p[0], [1.0, -2.0])
    assert st_.t == 1


def test_adam_first_step_moves_by_lr():
    # m = 0.1, v = 0.001; bias-corrected m_hat = v_hat = 1 -> step = lr / (1 + eps)
    p = [np.array([1.0])]
    adam_step(p, [np.array([1.0])], AdamState.for_params(p), 0.1)
    np.testing.assert_allclose(p[0], [1.0 - 0.1 / (1.0 + 1e-8)], rtol=1e-15)
    np.testing.assert_allclose(p[0], [0.9], atol=1e-8)


def test_adam_repeated_steps_monotone():
    p = [np.array([0.0])]
    s = AdamState.for_params(p)
    trace = [0.0]
    for _ in range(5):
        adam_step(p, [np.array([2.0])], s, 0.01)
        trace.append(float(p[0][0]))
    assert all(b < a for a, b in zip(trace, trace[1:]))
    assert s.t == 5


def test_adam_non_finite_gradient_names_param():
    p = [np.zeros(2), np.zeros(3)]
    with pytest.raises(NumericError, match="bias"):
        adam_step(p, [np.zeros(2), np.array([0.0, np.nan, 0.0])], AdamState.for_params(p), 0.1,
                  names=["kernel", "bias"])
    np.testing.assert_array_equal(p[1], 0.0)


# -- gradient checker -----------------------------------------------------

def test_gradcheck_dense_softmax_cross_entropy():
    rng = np.random.default_rng(0)
    net = Network([Dense(4), Softmax()], (5,), rng=0)
    y = one_hot([0, 2, 3], 4)
    report = check_gradients(net, lambda p: cross_entropy(p, y), rng.normal(size=(3, 5)), tol=1e-6)
    assert report.passed, str(report)


def test_gradcheck_flags_corrupted_backward():
    net = Network([Dense(3), ReLU(), Dense(2)], (4,), rng=0)
    layer = net.layers[2]
    orig = layer.backward

    def broken(dy):
        dx = orig(dy)
        layer.grads[0] = layer.grads[0] * 1.5
        return dx

    layer.backward = broken
    w = np.random.default_rng(1).normal(size=(2, 2))
    report = check_gradients(net, linear_loss(w), np.random.default_rng(2).normal(size=(2, 4)))
    assert report.flagged == ["net.2.Dense.kernel"]


def test_gradcheck_zero_input_relu_is_finite():
    net = Network([Dense(3), ReLU(), Dense(2)], (4,), rng=0)
    w = np.ones((2, 2))
    report = check_gradients(net, linear_loss(w), np.zeros((2, 4)))
    assert all(np.isfinite(b.rel_error) for b in report.blocks)
