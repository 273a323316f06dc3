import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nfdm_ae import autodiff as ad
from nfdm_ae import receiver_nn as rnn

SELU_L = 1.0507009873554805
SELU_A = 1.6732632423543772


def np_selu(x):
    return SELU_L * np.where(x > 0, x, SELU_A * np.expm1(np.minimum(x, 0)))


def test_slice_blocks():
    x = np.arange(6144) + 0j
    b = rnn.slice_blocks(x)
    assert b.shape == (64, 96)
    assert np.array_equal(b.reshape(-1), x)
    assert np.array_equal(rnn.slice_blocks(x[:96])[0], x[:96])
    with pytest.raises(ValueError):
        rnn.slice_blocks(np.zeros(100))


def test_glorot_bounds_and_variance():
    p = rnn.glorot_init([(96, 32), (32, 400)], np.random.default_rng(0), "strict96")
    lim = math.sqrt(6 / 128)
    assert lim == pytest.approx(0.2165, abs=1e-4)
    assert np.all(np.abs(p.weights[0]) <= lim)
    w = p.weights[1]
    lim2 = math.sqrt(6 / 432)
    assert np.var(w) == pytest.approx(lim2**2 / 3, rel=0.05)
    assert all(np.all(b == 0) for b in p.biases)


def test_glorot_seeded():
    a = rnn.glorot_init(rnn.layer_shapes(), np.random.default_rng(5))
    b = rnn.glorot_init(rnn.layer_shapes(), np.random.default_rng(5))
    assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))


def test_layer_shapes():
    assert rnn.layer_shapes("strict96") == [(96, 32), (32, 32), (32, 16)]
    assert rnn.layer_shapes("interleaved")[0] == (192, 32)


def test_param_validation():
    with pytest.raises(ValueError):
        rnn.MlpParams([np.zeros((96, 32))], [np.zeros(31)], ("softmax",), "strict96")
    with pytest.raises(ValueError):
        rnn.MlpParams([np.zeros((96, 32))], [np.zeros(32)], ("softmax",), "interleaved")


def test_features():
    blocks = np.arange(2 * 96).reshape(2, 96) * (1 + 2j)
    f = rnn.features(blocks, "interleaved", 0.5)
    assert f.shape == (2, 192)
    assert f[0, 2] == pytest.approx(0.5 * 1) and f[0, 3] == pytest.approx(0.5 * 2)
    g = rnn.features(blocks, "strict96")
    assert g.shape == (2, 96)
    assert g[0, 2] == blocks[0, 2].real and g[0, 3] == blocks[0, 2].imag


def test_zero_network_uniform():
    p = rnn.MlpParams([np.zeros(s) for s in rnn.layer_shapes()],
                      [np.zeros(s[1]) for s in rnn.layer_shapes()])
    probs = rnn.nn_forward(p, np.ones((3, 192)))
    assert np.allclose(probs, 1 / 16)
    assert np.array_equal(rnn.decide(probs), [1, 1, 1])


def test_selu_constants():
    y = ad.selu(np.array([0.0, 1.0, -1.0]))
    assert y[0] == 0 and y[1] == pytest.approx(1.0507, abs=1e-4)
    assert y[2] == pytest.approx(SELU_L * SELU_A * (math.exp(-1) - 1))


@given(st.floats(-50, 50))
def test_softmax_shift_invariance(c):
    z = np.random.default_rng(0).standard_normal((4, 16))
    assert np.allclose(ad.softmax(z + c), ad.softmax(z), atol=1e-12, rtol=0)


def test_probabilities_normalized(rng):
    p = rnn.glorot_init(rnn.layer_shapes(), rng)
    probs = rnn.nn_forward(p, rng.standard_normal((10, 192)))
    assert np.all(probs > 0) and np.allclose(probs.sum(axis=1), 1, atol=1e-9)


def test_toy_forward_by_hand():
    W0 = np.array([[0.5, -1.0], [2.0, 0.25]])
    b0 = np.array([0.1, -0.2])
    W1 = np.array([[1.0, -0.5], [0.3, 0.8]])
    b1 = np.array([0.0, 0.05])
    x = np.array([[0.7, -0.3]])
    h = np_selu(x @ W0 + b0)
    z = h @ W1 + b1
    ref = np.exp(z) / np.exp(z).sum()
    got = rnn.nn_forward({"W0": W0, "b0": b0, "W1": W1, "b1": b1}, x, ("selu", "softmax"))
    assert np.max(np.abs(got - ref)) < 1e-12


def test_decide_rules():
    p = np.eye(16)[[4, 9]]
    assert np.array_equal(rnn.decide(p), [5, 10])
    perm = np.random.default_rng(1).permutation(16)
    q = np.random.default_rng(2).dirichlet(np.ones(16), 5)
    assert np.array_equal(perm[rnn.decide(q[:, perm]) - 1], rnn.decide(q) - 1)
    assert np.array_equal(rnn.decide(np.log(q) * 3 + 1), rnn.decide(q))


def test_cross_entropy_values():
    assert float(rnn.cross_entropy(np.full((4, 16), 1 / 16), [1, 2, 3, 4])) == pytest.approx(math.log(16))
    assert float(rnn.cross_entropy(np.eye(16)[[2, 5]], [3, 6])) == pytest.approx(0, abs=1e-12)
    p = np.full((1, 16), 0.5 / 15)
    p[0, 7] = 0.5
    assert float(rnn.cross_entropy(p, [8])) == pytest.approx(math.log(2))
    assert float(rnn.cross_entropy(np.zeros((1, 16)), [1])) == pytest.approx(-math.log(1e-12))


def test_mlp_backprop_closed_form(rng):
    p = rnn.glorot_init(rnn.layer_shapes(), rng)
    x = rng.standard_normal((20, 192))
    y = rng.integers(1, 17, 20)
    _, tape = ad.record_forward(lambda v: rnn.cross_entropy(rnn.nn_forward(v, x), y), p.as_dict())
    g = ad.backward(tape)
    # textbook backprop
    W, b = p.weights, p.biases
    z0 = x @ W[0] + b[0]
    h0 = np_selu(z0)
    z1 = h0 @ W[1] + b[1]
    h1 = np_selu(z1)
    z2 = h1 @ W[2] + b[2]
    P = np.exp(z2 - z2.max(1, keepdims=True))
    P /= P.sum(1, keepdims=True)
    d2 = (P - np.eye(16)[y - 1]) / len(y)
    dselu = lambda z: SELU_L * np.where(z > 0, 1.0, SELU_A * np.exp(np.minimum(z, 0)))
    d1 = (d2 @ W[2].T) * dselu(z1)
    d0 = (d1 @ W[1].T) * dselu(z0)
    ref = {"W2": h1.T @ d2, "b2": d2.sum(0), "W1": h0.T @ d1, "b1": d1.sum(0),
           "W0": x.T @ d0, "b0": d0.sum(0)}
    for k, r in ref.items():
        assert np.max(np.abs(g[k] - r)) <= 1e-10 * max(1.0, np.max(np.abs(r))), k


def test_nn_gradcheck(rng):
    p = rnn.glorot_init(rnn.layer_shapes("strict96"), rng, "strict96")
    x = rng.standard_normal((8, 96))
    y = rng.integers(1, 17, 8)
    rep = ad.gradcheck(lambda v: rnn.cross_entropy(rnn.nn_forward(v, x), y), p.as_dict(), 6, rng=rng)
    assert rep.max_rel_error < 1e-6


def test_nonfinite_activation_diagnostic():
    p = rnn.glorot_init(rnn.layer_shapes(), np.random.default_rng(0))
    x = np.full((1, 192), np.nan)
    with pytest.raises(FloatingPointError, match="layer 0"):
        rnn.nn_forward(p, x)
