import json

import numpy as np
import pytest

from pathlasso.errors import NumericError, ShapeError
from pathlasso.network import (
    Gradients,
    Network,
    OptimizerState,
    backprop,
    forward,
    forward_batch,
    init_network,
    l2_loss,
    optimizer_step,
)

from conftest import central_diff


def single(W, b=None, act="identity"):
    W = np.atleast_2d(np.asarray(W, dtype=float))
    return Network([W.shape[1], W.shape[0]], [W], [None if b is None else np.asarray(b, dtype=float)], [act])


def test_identity_network_passes_input_through():
    outs = forward(single(np.eye(2), [0, 0]), np.array([3.0, -1.0]))
    assert np.array_equal(outs[-1], [3.0, -1.0])
    assert np.array_equal(outs[0], [3.0, -1.0])


def test_tanh_of_zero_input():
    assert np.array_equal(forward(single([[1, 1]], [0], "tanh"), np.zeros(2))[-1], [0.0])


def test_two_layer_forward_composes_single_layers(rng):
    net = init_network([3, 5, 2], ["tanh", "identity"], rng)
    net.biases[0][:] = rng.normal(size=5)
    x = rng.normal(size=3)
    first = single(net.weights[0], net.biases[0], "tanh")
    second = single(net.weights[1], net.biases[1], "identity")
    expected = forward(second, forward(first, x)[-1])[-1]
    assert np.allclose(forward(net, x)[-1], expected, atol=1e-14)


def test_forward_rejects_wrong_length():
    with pytest.raises(ShapeError):
        forward(single(np.eye(2)), np.zeros(3))


def test_forward_has_no_side_effects(rng):
    net = init_network([3, 4, 2], ["tanh", "identity"], rng)
    before = net.copy()
    forward_batch(net, rng.normal(size=(5, 3)))
    assert all(np.array_equal(a, b) for a, b in zip(net.params(), before.params()))


def test_zero_tanh_network_outputs_zero(rng):
    net = Network([3, 4, 2], [np.zeros((4, 3)), np.zeros((2, 4))], [np.zeros(4), np.zeros(2)], ["tanh", "tanh"])
    assert np.array_equal(forward_batch(net, rng.normal(size=(6, 3)))[-1], np.zeros((6, 2)))


def test_loss_examples(rng):
    assert l2_loss(single(np.eye(2), [0, 0]), np.eye(2), np.eye(2)) == 0.0
    zero = single(np.zeros((2, 2)), [0, 0])
    assert l2_loss(zero, rng.normal(size=(2, 2)), np.array([[1.0, 0.0], [0.0, 1.0]])) == 1.0
    net = init_network([3, 4, 2], ["tanh", "identity"], rng)
    X, T = rng.normal(size=(7, 3)), rng.normal(size=(7, 2))
    direct = np.mean([np.sum((forward(net, x)[-1] - t) ** 2) for x, t in zip(X, T)])
    assert abs(l2_loss(net, X, T) - direct) < 1e-12


def test_loss_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        l2_loss(single(np.eye(2)), np.zeros((3, 2)), np.zeros((2, 2)))


def test_zero_residual_gives_zero_gradients(rng):
    net = init_network([3, 4, 2], ["tanh", "identity"], rng)
    X = rng.normal(size=(5, 3))
    g = backprop(net, X, forward_batch(net, X)[-1])
    assert all(np.all(a == 0) for a in g.params())


@pytest.mark.parametrize("dims", [[2, 3], [3, 4, 2], [5, 7, 3], [2, 3, 3, 2]])
def test_backprop_matches_finite_differences(rng, dims):
    acts = ["tanh"] * (len(dims) - 2) + ["identity"]
    net = init_network(dims, acts, rng)
    for b in net.biases:
        b[:] = rng.normal(size=b.shape) * 0.3
    X, T = rng.normal(size=(20, dims[0])), rng.normal(size=(20, dims[-1]))
    numeric = central_diff(lambda: l2_loss(net, X, T), net.params())
    analytic = backprop(net, X, T).params()
    for a, n in zip(analytic, numeric):
        assert np.max(np.abs(a - n)) < 1e-6


def test_bias_gradient_of_linear_layer(rng):
    net = single(rng.normal(size=(2, 3)), np.zeros(2))
    X, T = rng.normal(size=(9, 3)), rng.normal(size=(9, 2))
    resid = forward_batch(net, X)[-1] - T
    # derivative of the mean squared distance carries the factor 2
    assert np.allclose(backprop(net, X, T).d_biases[0], 2 * resid.mean(axis=0), atol=1e-14)


def test_plain_sgd_formula():
    net = single([[1.0]], None)
    optimizer_step(net, Gradients([np.array([[2.0]])], [None]), OptimizerState("plain_sgd", 0.1))
    assert net.weights[0][0, 0] == pytest.approx(0.8, abs=1e-15)


@pytest.mark.parametrize("kind", ["adam", "plain_sgd"])
def test_zero_gradient_leaves_parameters(rng, kind):
    net = init_network([2, 3], ["identity"], rng)
    before = net.copy()
    zero = Gradients([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])
    _, state = optimizer_step(net, zero, OptimizerState(kind, 0.1))
    assert state.step_count == 1
    assert all(np.array_equal(a, b) for a, b in zip(net.params(), before.params()))


@pytest.mark.parametrize("scale", [1e-3, 1.0, 1e3])
def test_adam_first_step_moves_by_learning_rate(scale):
    net = single(np.zeros((2, 2)), np.zeros(2))
    g = Gradients([np.full((2, 2), scale)], [np.full(2, scale)])
    optimizer_step(net, g, OptimizerState("adam", 0.01))
    assert np.allclose(net.weights[0], -0.01, rtol=1e-4)


def test_non_finite_gradient_rejected():
    net = single(np.eye(2))
    with pytest.raises(NumericError):
        optimizer_step(net, Gradients([np.array([[np.nan, 0], [0, 0]])], [None]), OptimizerState("plain_sgd", 0.1))


def test_invalid_networks():
    with pytest.raises(ShapeError):
        Network([2, 3], [np.zeros((2, 3))], [None], ["identity"])
    with pytest.raises(NumericError):
        Network([1, 1], [np.array([[np.inf]])], [None], ["identity"])
    with pytest.raises(ValueError):
        OptimizerState("adam", 0.0)


def test_json_round_trip_is_bit_identical(rng):
    net = init_network([3, 5, 2], ["tanh", "identity"], rng, has_bias=[True, False])
    net.biases[0][:] = rng.normal(size=5)
    back = Network.from_dict(json.loads(json.dumps(net.to_dict())))
    assert back.has_bias == [True, False]
    assert all(np.array_equal(a, b) for a, b in zip(net.params(), back.params()))


def test_glorot_range(rng):
    net = init_network([10, 30], ["tanh"], rng)
    assert np.max(np.abs(net.weights[0])) <= np.sqrt(6 / 40)
