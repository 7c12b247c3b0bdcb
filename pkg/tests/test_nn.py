import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import max_rel_error, numeric_grad, rel_error
from multiband_loc import nn


def _net(activation, rng, dropout=0.0, sizes=(6, 7, 5, 3)):
    return nn.build_mlp(list(sizes), activation, rng, dropout_rate=dropout)


def test_identity_layer_passthrough():
    layer = nn.DenseLayer(np.eye(4), np.zeros(4), "identity")
    x = np.array([1.0, -2.0, 3.5, 0.0])
    out, _ = nn.forward(nn.MlpModel([layer]), x)
    assert np.array_equal(out, x)


def test_leaky_relu_definition():
    layer = nn.DenseLayer(np.eye(1), np.zeros(1), "leaky_relu", 0.01)
    out, _ = nn.forward(nn.MlpModel([layer]), np.array([-1.0]))
    assert out[0] == pytest.approx(-0.01)


def test_zero_dropout_train_equals_infer(rng):
    net = _net("relu", rng)
    x = rng.standard_normal((5, 6))
    a, _ = nn.forward(net, x)
    net.mode = "train"
    b, _ = nn.forward(net, x, np.random.default_rng(0))
    assert np.array_equal(a, b)


def test_shape_mismatch(rng):
    with pytest.raises(nn.ShapeError):
        nn.forward(_net("relu", rng), np.ones(5))


@pytest.mark.parametrize("activation", nn.ACTIVATIONS)
@pytest.mark.parametrize("dropout", [0.0, 0.3])
def test_gradient_check(activation, dropout):
    rng = np.random.default_rng(7)
    net = _net(activation, rng, dropout)
    net.mode = "train"
    x = rng.standard_normal((4, 6))
    upstream = rng.standard_normal((4, 3))

    def loss():
        out, _ = nn.forward(net, x, np.random.default_rng(99))  # same mask every call
        return float(np.sum(out * upstream))

    _, cache = nn.forward(net, x, np.random.default_rng(99))
    g = nn.backward(net, cache, upstream)
    assert max_rel_error(net.parameters(), g.grads, loss) < 1e-4
    assert rel_error(g.input, numeric_grad(loss, x)) < 1e-4


def test_single_vector_gradients_match_batch(rng):
    net = _net("leaky_relu", rng)
    x = rng.standard_normal(6)
    _, c1 = nn.forward(net, x)
    _, c2 = nn.forward(net, x[None])
    g1 = nn.backward(net, c1, np.ones(3))
    g2 = nn.backward(net, c2, np.ones((1, 3)))
    assert all(np.array_equal(a, b) for a, b in zip(g1.grads, g2.grads))
    assert g1.input.shape == (6,)


def test_zero_upstream_gives_zero_grads(rng):
    net = _net("relu", rng)
    _, cache = nn.forward(net, rng.standard_normal((3, 6)))
    g = nn.backward(net, cache, np.zeros((3, 3)))
    assert all(not np.any(a) for a in g.grads)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
def test_linear_layer_closed_form(seed, scale):
    rng = np.random.default_rng(seed)
    w, b = rng.standard_normal((3, 4)), rng.standard_normal(3)
    net = nn.MlpModel([nn.DenseLayer(w, b, "identity")])
    x = scale * rng.standard_normal((5, 4))
    y = rng.standard_normal((5, 3))
    out, cache = nn.forward(net, x)
    g = nn.backward(net, cache, out - y)  # d/dout of 0.5 * ||out - y||^2
    r = x @ w.T + b - y
    assert np.allclose(g.grads[0], r.T @ x, rtol=1e-12, atol=1e-12)
    assert np.allclose(g.grads[1], r.sum(axis=0), rtol=1e-12, atol=1e-12)
    # flipping the input sign flips the residual's input term only
    _, c_neg = nn.forward(net, -x)
    g_neg = nn.backward(net, c_neg, -x @ w.T + b - y)
    assert np.allclose(g_neg.grads[0], (-x @ w.T + b - y).T @ -x)


def test_stale_cache_detected(rng):
    net = _net("relu", rng)
    _, cache = nn.forward(net, np.ones(6))
    nn.mark_updated(net)
    with pytest.raises(nn.StaleCacheError):
        nn.backward(net, cache, np.ones(3))


def test_dropout_preserves_expectation():
    rng = np.random.default_rng(3)
    # dropout feeds a linear head, so the train-mode mean equals the infer output
    net = nn.build_mlp([4, 64, 3], "relu", rng, dropout_rate=0.1)
    x = np.abs(rng.standard_normal(4)) + 0.5
    ref, _ = nn.forward(net, x)
    net.mode = "train"
    out, _ = nn.forward(net, np.tile(x, (10_000, 1)), np.random.default_rng(4))
    assert np.linalg.norm(out.mean(axis=0) - ref) <= 0.02 * np.linalg.norm(ref)


def test_dropout_needs_rng(rng):
    net = _net("relu", rng, 0.2)
    net.mode = "train"
    with pytest.raises(ValueError):
        nn.forward(net, np.ones(6))


def test_dropout_rate_validated(rng):
    with pytest.raises(ValueError):
        _net("relu", rng, 1.0)


def test_adam_zero_gradient_no_change():
    p = [np.array([1.0, -2.0])]
    state = nn.AdamState()
    nn.adam_step(p, [np.zeros(2)], state)
    assert np.array_equal(p[0], [1.0, -2.0])
    assert state.step_count == 1


def test_adam_constant_gradient_step_size():
    p = [np.zeros(3)]
    g = [np.array([0.5, -3.0, 1e-3])]
    state = nn.AdamState(learning_rate=1e-2)
    for step in range(1, 501):
        before = p[0].copy()
        nn.adam_step(p, g, state)
        assert state.step_count == step
    delta = p[0] - before
    assert np.allclose(delta, -1e-2 * np.sign(g[0]), rtol=1e-4)


def test_adam_first_step_matches_formula():
    p = [np.array([0.3])]
    state = nn.AdamState(learning_rate=0.1)
    nn.adam_step(p, [np.array([2.0])], state)
    assert p[0][0] == pytest.approx(0.3 - 0.1 * 2.0 / (2.0 + 1e-8), rel=1e-12)


def test_adam_non_finite():
    with pytest.raises(nn.NonFiniteError):
        nn.adam_step([np.zeros(2)], [np.array([1.0, math.nan])], nn.AdamState())


def test_training_trajectory_deterministic():
    def run():
        rng = np.random.default_rng(0)
        net = nn.build_mlp([3, 8, 1], "relu", rng, dropout_rate=0.2)
        net.mode = "train"
        state = nn.AdamState(learning_rate=0.01)
        x, y = rng.standard_normal((16, 3)), rng.standard_normal((16, 1))
        for _ in range(20):
            out, cache = nn.forward(net, x, rng)
            nn.adam_step(net.parameters(), nn.backward(net, cache, out - y).grads, state)
            nn.mark_updated(net)
        return np.concatenate([p.ravel() for p in net.parameters()])

    assert run().tobytes() == run().tobytes()


def test_he_uniform_bounds():
    net = nn.build_mlp([100, 50, 10], "relu", np.random.default_rng(0))
    assert np.abs(net.layers[0].weights).max() <= math.sqrt(6 / 100)
    assert np.abs(net.layers[1].weights).max() <= math.sqrt(6 / 60)


def test_checkpoint_round_trip(tmp_path, rng):
    net = _net("leaky_relu", rng, 0.1)
    path = tmp_path / "m.ckpt"
    nn.save_checkpoint(path, "test", {"net": net}, {"note": "x"}, {"stats": np.arange(3.0)})
    kind, nets, meta, extra = nn.load_checkpoint(path)
    assert kind == "test" and meta == {"note": "x"}
    back = nets["net"]
    for a, b in zip(net.parameters(), back.parameters()):
        assert a.tobytes() == b.tobytes()
    assert back.dropout_layers == net.dropout_layers
    assert np.array_equal(extra["stats"], np.arange(3.0))


def test_checkpoint_resave_byte_identical(tmp_path, rng):
    nets = {"zeta": _net("relu", rng), "alpha": _net("identity", rng)}
    first, second = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    nn.save_checkpoint(first, "test", nets, {"k": [1, 2]}, {"s": np.ones(2)})
    nn.save_checkpoint(second, *nn.load_checkpoint(first))
    assert first.read_bytes() == second.read_bytes()
