import numpy as np
import pytest

from shieldrl.nn import AdamState, adam_step


def test_zero_gradient_fixed_point():
    params = np.array([1.0, -2.0, 3.0])
    st = AdamState.for_params(params, lr=0.1)
    for _ in range(5):
        adam_step(params, np.zeros(3), st)
    assert np.array_equal(params, [1.0, -2.0, 3.0])
    assert np.all(st.m == 0.0) and np.all(st.v == 0.0)


def test_moments_decay_toward_zero():
    params = np.zeros(2)
    st = AdamState.for_params(params, lr=0.0)
    adam_step(params, np.array([1.0, -1.0]), st)
    m0 = np.abs(st.m).max()
    for _ in range(50):
        adam_step(params, np.zeros(2), st)
    assert np.abs(st.m).max() < m0 * 1e-2


@pytest.mark.parametrize("magnitude", [1e-6, 1.0, 1e6])
def test_first_step_magnitude_is_learning_rate(magnitude):
    # with bias correction the first update is ~lr * sign(g) per coordinate
    # (up to the eps stabilizer, which shows at tiny gradient magnitudes)
    params = np.zeros(3)
    st = AdamState.for_params(params, lr=0.01)
    g = magnitude * np.array([1.0, -1.0, 1.0])
    adam_step(params, g, st)
    assert np.allclose(np.abs(params), 0.01, rtol=0.02)
    assert np.array_equal(np.sign(params), [-1.0, 1.0, -1.0])


def test_gradient_scaling_preserves_first_step_direction():
    for seed in range(20):
        g = np.random.default_rng(seed).normal(size=4)
        p1, p2 = np.zeros(4), np.zeros(4)
        adam_step(p1, g, AdamState.for_params(p1, lr=0.05))
        adam_step(p2, 17.3 * g, AdamState.for_params(p2, lr=0.05))
        assert np.array_equal(np.sign(p1), np.sign(p2))


def test_quadratic_convergence_against_scalar_recurrence():
    # oracle: run the Adam recurrence independently on f(x) = (x - 5)^2
    def oracle(x0, lr, steps):
        x, m, v = x0, 0.0, 0.0
        b1, b2, eps = 0.9, 0.999, 1e-8
        for t in range(1, steps + 1):
            g = 2.0 * (x - 5.0)
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            x -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
        return x

    params = np.array([0.0])
    st = AdamState.for_params(params, lr=0.1)
    for _ in range(100):
        adam_step(params, 2.0 * (params - 5.0), st)
    expected = oracle(0.0, 0.1, 100)
    assert np.allclose(params[0], expected, atol=1e-12)
    assert abs(params[0] - 5.0) < 0.5


def test_shape_mismatch_rejected():
    params = np.zeros(3)
    st = AdamState.for_params(params)
    with pytest.raises(ValueError, match="shape"):
        adam_step(params, np.zeros(4), st)
    st_bad = AdamState(m=np.zeros(2), v=np.zeros(2))
    with pytest.raises(ValueError, match="shape"):
        adam_step(params, np.zeros(3), st_bad)


def test_step_counter_strictly_increasing():
    params = np.zeros(2)
    st = AdamState.for_params(params)
    seen = []
    for _ in range(4):
        adam_step(params, np.ones(2), st)
        seen.append(st.step)
    assert seen == [1, 2, 3, 4]
