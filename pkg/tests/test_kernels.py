"""Backend parity: jitted kernels agree with the pure-numpy source."""

import numpy as np
import pytest

from shieldrl import kernels
from shieldrl.kernels import numpy_impl

pytestmark = pytest.mark.skipif(not kernels.NUMBA_ENABLED,
                                reason="numba backend disabled")


@pytest.fixture(scope="module")
def stacks():
    rng = np.random.default_rng(0)
    obs, act, hid = 6, 2, 24
    tr_sizes = np.array([obs + act, hid, hid, obs], np.int64)
    rw_sizes = np.array([2 * obs + act, hid, hid, 1], np.int64)
    po_sizes = np.array([obs, hid, hid, act], np.int64)
    q_sizes = np.array([obs + act, hid, hid, 1], np.int64)

    def mk(sizes, n=4, scale=0.3):
        return np.ascontiguousarray(
            rng.normal(size=(n, int(kernels.net_param_count(sizes)))) * scale)

    return {
        "obs": obs, "act": act,
        "tr": (mk(tr_sizes), tr_sizes, np.array([1, 1, 0], np.int64)),
        "rw": (mk(rw_sizes), rw_sizes, np.array([1, 1, 0], np.int64)),
        "bl": (mk(rw_sizes), rw_sizes, np.array([1, 1, 3], np.int64)),
        "dn": (mk(rw_sizes), rw_sizes, np.array([1, 1, 3], np.int64)),
        "po": (mk(po_sizes, 1)[0], po_sizes, np.array([1, 1, 2], np.int64)),
        "q": (mk(q_sizes), q_sizes, np.array([1, 1, 0], np.int64)),
        "mu_o": np.zeros(obs), "sig_o": np.ones(obs),
        "mu_a": np.zeros(act), "sig_a": np.ones(act),
        "rng": rng,
    }


def test_forward_parity(stacks):
    flats, sizes, acts = stacks["tr"]
    x = np.random.default_rng(1).normal(size=(16, int(sizes[0])))
    a = kernels.net_forward(flats[0], sizes, acts, x)
    b = numpy_impl.net_forward(flats[0], sizes, acts, x)
    assert np.array_equal(a, b)


def test_backward_parity(stacks):
    flats, sizes, acts = stacks["bl"]
    x = np.random.default_rng(2).normal(size=(8, int(sizes[0])))
    width = int(kernels.net_cache_width(sizes))
    c1 = np.empty(8 * width)
    c2 = np.empty(8 * width)
    y1 = kernels.net_forward_cached(flats[1], sizes, acts, x, c1)
    y2 = numpy_impl.net_forward_cached(flats[1], sizes, acts, x, c2)
    assert np.array_equal(y1, y2)
    assert np.array_equal(c1, c2)
    dy = np.random.default_rng(3).normal(size=y1.shape)
    g1 = np.empty_like(flats[1])
    g2 = np.empty_like(flats[1])
    dx1 = kernels.net_backward(flats[1], sizes, acts, c1, 8, dy.copy(), 0, g1)
    dx2 = numpy_impl.net_backward(flats[1], sizes, acts, c2, 8, dy.copy(), 0, g2)
    assert np.allclose(g1, g2, rtol=1e-13, atol=1e-15)
    assert np.allclose(dx1, dx2, rtol=1e-13, atol=1e-15)


def test_adam_parity():
    rng = np.random.default_rng(4)
    p1 = rng.normal(size=50)
    p2 = p1.copy()
    g = rng.normal(size=50)
    m1, v1 = np.zeros(50), np.zeros(50)
    m2, v2 = np.zeros(50), np.zeros(50)
    kernels.adam_update(p1, g, m1, v1, 1, 1e-3, 0.9, 0.999, 1e-8)
    numpy_impl.adam_update(p2, g, m2, v2, 1, 1e-3, 0.9, 0.999, 1e-8)
    assert np.array_equal(p1, p2)


def test_imagine_parity(stacks):
    s = stacks
    obs0 = np.random.default_rng(5).normal(size=s["obs"])
    args = (*s["tr"], *s["bl"], *s["po"], obs0, 6,
            s["mu_o"], s["sig_o"], s["mu_a"], s["sig_a"])
    p1, m1 = kernels.imagine_catastrophe(*args)
    p2, m2 = numpy_impl.imagine_catastrophe(*args)
    assert np.isclose(p1, p2, rtol=1e-13)
    assert np.allclose(m1, m2, rtol=1e-13)


def test_ve_targets_parity(stacks):
    s = stacks
    rng = np.random.default_rng(6)
    B = 5
    r = rng.normal(size=B)
    s1 = rng.normal(size=(B, s["obs"]))
    d = (rng.random(B) < 0.3).astype(float)
    args = (*s["tr"], *s["rw"], *s["dn"], *s["po"], *s["q"],
            r, s1, d, 3, 0.99, s["mu_o"], s["sig_o"], s["mu_a"], s["sig_a"])
    T1, v1 = kernels.ve_targets(*args)
    T2, v2 = numpy_impl.ve_targets(*args)
    assert np.allclose(T1, T2, rtol=1e-12, atol=1e-14)
    assert np.allclose(v1, v2, rtol=1e-12, atol=1e-14)


def test_mpc_parity(stacks):
    s = stacks
    rng = np.random.default_rng(7)
    seqs = rng.uniform(-1, 1, size=(9, 4, s["act"]))
    obs0 = rng.normal(size=s["obs"])
    usm = rng.normal(size=s["obs"])
    usv = np.full(s["obs"], 0.4)
    args = (*s["tr"], *s["rw"], *s["bl"], seqs, obs0,
            s["mu_o"], s["sig_o"], s["mu_a"], s["sig_a"],
            usm, usv, 50, 10.0, 1.0, 1.0, -1.0)
    r1 = kernels.mpc_score(*args)
    r2 = numpy_impl.mpc_score(*args)
    assert np.allclose(r1, r2, rtol=1e-12)
    ra1, g1 = kernels.mpc_grad(*args)
    ra2, g2 = numpy_impl.mpc_grad(*args)
    assert np.allclose(ra1, ra2, rtol=1e-12)
    assert np.allclose(g1, g2, rtol=1e-11, atol=1e-13)
    assert np.allclose(r1, ra1, rtol=1e-12)


def test_loo_parity(stacks):
    s = stacks
    rng = np.random.default_rng(8)
    states = rng.normal(size=(12, s["obs"]))
    usm = rng.normal(size=s["obs"])
    usv = np.full(s["obs"], 0.7)
    u1 = kernels.loo_divergence_batch(states, usm, usv, 40, 10.0)
    u2 = numpy_impl.loo_divergence_batch(states, usm, usv, 40, 10.0)
    assert np.allclose(u1, u2, rtol=1e-13)
    v1, g1 = kernels.loo_divergence_grad(states, usm, usv, 40, 10.0)
    v2, g2 = numpy_impl.loo_divergence_grad(states, usm, usv, 40, 10.0)
    assert np.allclose(v1, v2, rtol=1e-13)
    assert np.allclose(g1, g2, rtol=1e-13)
