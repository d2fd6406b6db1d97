import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from shieldrl.nn import binary_cross_entropy, mse


def test_bce_half_prediction():
    assert math.isclose(binary_cross_entropy(0.5, 1), math.log(2), rel_tol=1e-12)


def test_bce_exact_prediction_near_zero():
    assert binary_cross_entropy(1.0, 1) < 1e-6
    assert binary_cross_entropy(0.0, 0) < 1e-6


def test_bce_batch_mean_hand_summation():
    pairs = [(0.9, 1), (0.2, 0), (0.6, 1), (0.3, 1)]
    expected = sum(-(y * math.log(p) + (1 - y) * math.log(1 - p)) for p, y in pairs) / len(pairs)
    got = binary_cross_entropy([p for p, _ in pairs], [y for _, y in pairs])
    assert math.isclose(got, expected, rel_tol=1e-12)


def test_bce_rejects_out_of_range():
    with pytest.raises(ValueError):
        binary_cross_entropy(1.2, 1)
    with pytest.raises(ValueError):
        binary_cross_entropy(-0.1, 0)


@given(st.floats(0.0, 1.0), st.integers(0, 1))
def test_bce_nonnegative(p, y):
    assert binary_cross_entropy(p, y) >= 0.0


def test_mse_identical_is_zero():
    x = np.arange(6.0).reshape(2, 3)
    assert mse(x, x) == 0.0


def test_mse_hand_value():
    assert mse([0.0, 0.0], [3.0, 4.0]) == 12.5


def test_mse_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="shape"):
        mse(np.zeros(3), np.zeros(4))


def test_mse_matches_naive_loop():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(7, 5))
    b = rng.normal(size=(7, 5))
    total = 0.0
    for i in range(7):
        for j in range(5):
            total += (a[i, j] - b[i, j]) ** 2
    assert abs(mse(a, b) - total / 35) < 1e-12


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=8))
def test_mse_nonnegative(vals):
    arr = np.asarray(vals)
    assert mse(arr, np.zeros_like(arr)) >= 0.0
