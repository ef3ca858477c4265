import numpy as np
import pytest

from flowalign import nn_core
from flowalign.errors import (
    ParseError,
    ShapeError,
    TrainingError,
    UsageError,
    ValidationError,
)
from flowalign.nn_core import DenseNet, OptimizerState, fd_max_relative_error, fit_mse, step


def manual_forward(net, x):
    """Independent oracle: explicit per-layer loops, no shared code path."""
    a = [float(v) for v in x]
    for w, b, act in zip(net.weights, net.biases, net.activations):
        nxt = []
        for j in range(w.shape[1]):
            s = float(b[j])
            for i in range(w.shape[0]):
                s += a[i] * float(w[i, j])
            if act == "relu":
                s = max(s, 0.0)
            elif act == "tanh":
                s = float(np.tanh(s))
            nxt.append(s)
        a = nxt
    return np.array(a)


def test_identity_layer_passthrough():
    net = DenseNet([2, 2], ["identity"])
    net.weights[0] = np.eye(2)
    net.biases[0] = np.zeros(2)
    assert np.array_equal(net.forward([1.0, 2.0]), [1.0, 2.0])


def test_relu_layer_clamps_negatives():
    net = DenseNet([2, 2], ["relu"])
    net.weights[0] = np.eye(2)
    net.biases[0] = np.zeros(2)
    assert np.array_equal(net.forward([-1.0, 2.0]), [0.0, 2.0])


def test_forward_matches_manual_oracle():
    rng = np.random.default_rng(7)
    for trial in range(20):
        net = DenseNet([4, 5, 3], ["tanh", "identity"], seed=trial)
        x = rng.normal(size=4)
        assert np.max(np.abs(net.forward(x) - manual_forward(net, x))) < 1e-12


def test_zero_net_returns_final_bias():
    net = DenseNet([3, 4, 2], ["relu", "identity"], seed=1)
    for w in net.weights:
        w[:] = 0.0
    net.biases[-1][:] = [0.5, -1.5]
    assert np.array_equal(net.forward([9.0, -3.0, 2.0]), [0.5, -1.5])


def test_forward_shape_error_names_layer():
    net = DenseNet([3, 2])
    with pytest.raises(ShapeError, match="layer 0"):
        net.forward([1.0, 2.0])


def test_backward_hand_derived_chain_rule():
    # y = w * x with w=2, x=3; loss = y^2 -> dL/dw = 2*y*x = 36
    net = DenseNet([1, 1], ["identity"])
    net.weights[0][:] = 2.0
    net.biases[0][:] = 0.0
    x = np.array([[3.0]])
    y = net.forward_cached(x)
    grads, _ = net.backward(x, 2.0 * y)
    assert grads[0][0, 0] == pytest.approx(36.0, abs=1e-12)


def test_backward_zero_grad_gives_zero_param_grads():
    net = DenseNet([3, 5, 2], seed=3)
    x = np.random.default_rng(0).normal(size=(4, 3))
    net.forward_cached(x)
    grads, gx = net.backward(x, np.zeros((4, 2)))
    assert all(np.all(g == 0.0) for g in grads)
    assert np.all(gx == 0.0)


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(11)
    for trial in range(5):
        net = DenseNet([4, 8, 8, 3], ["tanh", "tanh", "identity"], seed=100 + trial)
        x = rng.normal(size=(6, 4))
        y = rng.normal(size=(6, 3))

        def loss_fn():
            return nn_core.mse_loss(net.forward(x), y)

        out = net.forward_cached(x)
        grads, _ = net.backward(x, (2.0 / x.shape[0]) * (out - y))
        err = fd_max_relative_error(
            loss_fn, net.parameters(), grads, rng=rng, n_coords=40, eps=1e-5
        )
        assert err < 1e-4


def test_backward_requires_fresh_cache():
    net = DenseNet([2, 2], seed=0)
    x = np.ones((3, 2))
    with pytest.raises(UsageError):
        net.backward(x, np.ones((3, 2)))
    net.forward_cached(x)
    with pytest.raises(UsageError, match="stale"):
        net.backward(2.0 * x, np.ones((3, 2)))


def test_sgd_step_decreases_parameter_by_lr_times_grad():
    net = DenseNet([1, 1], ["identity"])
    net.weights[0][:] = 1.0
    opt = OptimizerState.for_params("sgd", 0.1, net.parameters())
    grads = [np.array([[2.0]]), np.array([0.0])]
    step(net, grads, opt)
    assert net.weights[0][0, 0] == pytest.approx(0.8, abs=1e-15)
    assert opt.step_count == 1


def test_adam_first_step_moves_against_gradient_sign():
    net = DenseNet([2, 2], ["identity"], seed=5)
    before = [p.copy() for p in net.parameters()]
    opt = OptimizerState.for_params("adam", 0.01, net.parameters())
    grads = [np.array([[1.0, -2.0], [3.0, -0.5]]), np.array([0.25, -4.0])]
    step(net, grads, opt)
    for prev, now, g in zip(before, net.parameters(), grads):
        delta = now - prev
        assert np.all(np.sign(delta[g != 0]) == -np.sign(g[g != 0]))


def test_sgd_descent_on_convex_quadratic_is_monotone():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(32, 3))
    y = x @ rng.normal(size=(3, 1))
    net = DenseNet([3, 1], ["identity"], seed=9)
    opt = OptimizerState.for_params("sgd", 0.01, net.parameters())
    losses = []
    for _ in range(200):
        out = net.forward_cached(x)
        losses.append(nn_core.mse_loss(out, y))
        grads, _ = net.backward(x, (2.0 / x.shape[0]) * (out - y))
        step(net, grads, opt)
    losses.append(nn_core.mse_loss(net.forward(x), y))
    assert all(b <= a + 1e-15 for a, b in zip(losses, losses[1:]))


def test_adam_moment_shapes_mirror_parameters():
    net = DenseNet([3, 7, 2], seed=0)
    opt = OptimizerState.for_params("adam", 1e-3, net.parameters())
    for p, m, v in zip(net.parameters(), opt.m, opt.v):
        assert m.shape == p.shape and v.shape == p.shape


def test_step_counter_monotone_across_updates():
    net = DenseNet([2, 2], seed=0)
    opt = OptimizerState.for_params("sgd", 1e-3, net.parameters())
    zero = [np.zeros_like(p) for p in net.parameters()]
    counts = []
    for _ in range(5):
        step(net, zero, opt)
        counts.append(opt.step_count)
    assert counts == [1, 2, 3, 4, 5]


def test_non_finite_gradient_reports_parameter_index():
    net = DenseNet([2, 2], seed=0)
    opt = OptimizerState.for_params("sgd", 1e-3, net.parameters())
    grads = [np.zeros((2, 2)), np.array([np.nan, 0.0])]
    with pytest.raises(TrainingError, match="parameter 1"):
        step(net, grads, opt)


def test_fit_mse_seed_determinism_is_bitwise():
    def train():
        rng = np.random.default_rng(4)
        x = rng.normal(size=(64, 3))
        y = rng.normal(size=(64, 2))
        net = DenseNet([3, 16, 2], ["tanh", "identity"], seed=21)
        fit_mse(net, x, y, epochs=30, learning_rate=1e-2, batch_size=16, seed=77)
        return net

    a, b = train(), train()
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert np.array_equal(pa, pb)


def test_fit_mse_loss_curve_decreases():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(50, 2))
    y = np.tanh(x) @ np.ones((2, 1))
    net = DenseNet([2, 16, 1], ["tanh", "identity"], seed=3)
    curve = fit_mse(net, x, y, epochs=100, learning_rate=5e-3, seed=0)
    assert curve[-1] <= curve[0]
    assert len(curve) == 101


def test_checkpoint_roundtrip_is_bit_exact(tmp_path):
    net = DenseNet([4, 9, 3], ["relu", "identity"], seed=42)
    path = tmp_path / "net.json"
    nn_core.save_net(net, path)
    loaded = nn_core.load_net(path)
    assert loaded.layer_sizes == net.layer_sizes
    assert loaded.activations == net.activations
    assert loaded.seed == net.seed
    for pa, pb in zip(net.parameters(), loaded.parameters()):
        assert np.array_equal(pa, pb)
    # a second save must produce identical bytes
    path2 = tmp_path / "net2.json"
    nn_core.save_net(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_load_net_rejects_malformed_file(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"kind": "dense_net", "format_version"')
    with pytest.raises(ParseError):
        nn_core.load_net(path)


def test_constructor_validation():
    with pytest.raises(ValidationError):
        DenseNet([3])
    with pytest.raises(ValidationError):
        DenseNet([3, 0])
    with pytest.raises(ValidationError):
        DenseNet([3, 2], ["relu", "relu"])
    with pytest.raises(ValidationError):
        DenseNet([3, 2], ["softplus"])
    with pytest.raises(ValidationError):
        OptimizerState.for_params("rmsprop", 1e-3, [])
