"""Tape autodiff and MLP forward/backward checks against independent oracles."""

import numpy as np
import pytest

from shieldrl import kernels
from shieldrl.nn import Mlp, Tape, Tensor, backward, mse_tape

# every (hidden, out) activation pairing used by a network in this repo
ARCHITECTURES = [
    ([8, 16, 16, 6], "relu", "linear"),     # transition head
    ([14, 16, 16, 1], "relu", "linear"),    # reward head / critic
    ([14, 16, 16, 1], "relu", "sigmoid"),   # termination head / blocker
    ([6, 16, 16, 2], "relu", "tanh"),       # policy
]


def test_zero_weight_net_returns_bias():
    net = Mlp([3, 4, 2])
    w, b = net.layer(1)
    b[...] = [1.5, -2.0]
    out = net(np.random.default_rng(0).normal(size=(5, 3)))
    assert np.allclose(out, [1.5, -2.0])


def test_identity_single_layer():
    net = Mlp([3, 3])
    net.set_layer(0, np.eye(3), np.zeros(3))
    x = np.random.default_rng(1).normal(size=(4, 3))
    assert np.array_equal(net(x), x)


def test_two_layer_hand_evaluation():
    # independent oracle: explicit matrix arithmetic on hand-set weights
    net = Mlp([2, 2, 1], hidden_act="relu", out_act="linear")
    w0 = np.array([[1.0, -1.0], [0.5, 2.0]])
    b0 = np.array([0.1, -0.2])
    w1 = np.array([[2.0], [-3.0]])
    b1 = np.array([0.25])
    net.set_layer(0, w0, b0)
    net.set_layer(1, w1, b1)
    x = np.array([1.0, 2.0])
    hidden = np.maximum(x @ w0 + b0, 0.0)
    expected = hidden @ w1 + b1
    assert np.allclose(net(x), expected, atol=1e-15)


def test_forward_rejects_width_mismatch():
    net = Mlp([3, 2])
    with pytest.raises(ValueError, match="width"):
        net(np.zeros((4, 5)))


def test_forward_deterministic_bitwise():
    net = Mlp.create([6, 32, 32, 2], out_act="tanh", seed=3)
    x = np.random.default_rng(4).normal(size=(16, 6))
    assert np.array_equal(net(x), net(x))


def test_backward_scalar_square():
    tape = Tape()
    x = Tensor(np.array(3.0), tape=tape, watch=True)
    y = x * x
    backward(tape, y)
    assert np.allclose(x.grad, 6.0)


def test_backward_constant_zero_grad():
    tape = Tape()
    x = Tensor(np.array(3.0), tape=tape, watch=True)
    y = Tensor(np.array(7.0), tape=tape) * 2.0
    backward(tape, y)
    assert np.allclose(x.grad, 0.0)  # unreached leaf keeps zero gradient


def test_backward_rejects_non_scalar():
    tape = Tape()
    x = Tensor(np.ones(3), tape=tape, watch=True)
    y = x * 2.0
    with pytest.raises(ValueError, match="scalar"):
        backward(tape, y)


def _fd_grad(f, flat, eps=1e-5):
    g = np.zeros_like(flat)
    for i in range(flat.size):
        p = flat.copy()
        p[i] += eps
        hi = f(p)
        p[i] -= 2 * eps
        lo = f(p)
        g[i] = (hi - lo) / (2 * eps)
    return g


def _loss_for(net, x, target, flat):
    probe = Mlp(net.sizes, flat=flat.copy())
    probe.acts = net.acts
    d = probe(x) - target
    return float(np.mean(d * d))


def _fused_forward_backward(net, x, target):
    """MSE forward + parameter gradient through the fused kernel path."""
    bsz = x.shape[0]
    cache = np.empty(bsz * net.cache_width)
    y = kernels.net_forward_cached(net.flat, net.sizes, net.acts, x, cache)
    dy = 2.0 * (y - target) / target.size
    grad = np.empty_like(net.flat)
    kernels.net_backward(net.flat, net.sizes, net.acts, cache, bsz, dy.copy(), 0, grad)
    return y.copy(), cache, grad


def _relu_margin(net, x) -> float:
    """Smallest |pre-activation| of any relu unit; FD is invalid at kinks."""
    margin = np.inf
    h = x
    for li in range(net.n_layers):
        w, b = net.layer(li)
        z = h @ w + b
        if net.acts[li] == kernels.ACT_RELU:
            margin = min(margin, np.abs(z).min())
            h = np.maximum(z, 0.0)
        elif net.acts[li] == kernels.ACT_TANH:
            h = np.tanh(z)
        elif net.acts[li] == kernels.ACT_SIGMOID:
            h = 1.0 / (1.0 + np.exp(-z))
        else:
            h = z
    return margin


@pytest.mark.parametrize("sizes,hidden_act,out_act", ARCHITECTURES)
def test_gradient_check_architectures(sizes, hidden_act, out_act):
    """Analytic gradients match central finite differences on 100 seeds.

    Inputs that land a relu unit within 1e-3 of its kink are resampled: the
    loss is not differentiable there, so central differences are no oracle.
    """
    failures = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        net = Mlp.create(sizes, hidden_act=hidden_act, out_act=out_act, seed=seed)
        for _ in range(50):
            x = rng.normal(size=(4, sizes[0]))
            if _relu_margin(net, x) > 1e-3:
                break
        target = rng.normal(size=(4, sizes[-1]))

        y, cache, g_fused = _fused_forward_backward(net, x, target)
        fd = _fd_grad(lambda p: _loss_for(net, x, target, p), net.flat)
        rel = np.abs(g_fused - fd) / np.maximum(np.abs(fd), 1e-6)
        if rel.max() >= 1e-4:
            failures += 1
    assert failures == 0


def test_tape_matches_fused_backward():
    rng = np.random.default_rng(7)
    net = Mlp.create([5, 12, 12, 3], out_act="tanh", seed=11)
    x = rng.normal(size=(6, 5))
    target = rng.normal(size=(6, 3))

    tape = Tape()
    params = net.param_tensors(tape)
    out = net.forward_tape(tape, x, params)
    loss = mse_tape(tape, out, target)
    backward(tape, loss)
    g_tape = Mlp.pack_grads(params)

    _, _, g_fused = _fused_forward_backward(net, x, target)
    assert np.allclose(g_tape, g_fused, rtol=1e-12, atol=1e-14)


def test_input_gradient_matches_fd():
    rng = np.random.default_rng(9)
    net = Mlp.create([4, 10, 2], out_act="tanh", seed=5)
    x = rng.normal(size=(3, 4))

    cache = np.empty(x.shape[0] * net.cache_width)
    y = kernels.net_forward_cached(net.flat, net.sizes, net.acts, x, cache)
    dx = kernels.net_input_grad(net.flat, net.sizes, net.acts, cache, x.shape[0],
                                np.ones_like(y))

    eps = 1e-6
    for i in range(3):
        for j in range(4):
            xp = x.copy()
            xp[i, j] += eps
            hi = net(xp).sum()
            xp[i, j] -= 2 * eps
            lo = net(xp).sum()
            fd = (hi - lo) / (2 * eps)
            assert abs(fd - dx[i, j]) < 1e-6


def test_three_layer_random_mlp_fd_check():
    rng = np.random.default_rng(21)
    net = Mlp.create([4, 8, 8, 1], seed=21)
    x = rng.normal(size=(2, 4))
    target = np.zeros((2, 1))
    _, _, g = _fused_forward_backward(net, x, target)
    fd = _fd_grad(lambda p: _loss_for(net, x, target, p), net.flat)
    rel = np.abs(g - fd) / np.maximum(np.abs(fd), 1e-6)
    assert rel.max() < 1e-4
