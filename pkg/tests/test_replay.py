"""Split replay buffer: routing, eviction, equal-proportion sampling, weights."""

import numpy as np
import pytest

from shieldrl.envs import Transition
from shieldrl.replay import RunningNormalizer, SplitBuffer


def _t(c=0, blocked=0, r=0.0, tag=0.0):
    return Transition(s=np.array([tag, 0.0]), a=np.array([0.0]),
                      s_next=np.array([tag, 1.0]), r=r, done=int(c), c=c, blocked=blocked)


def _buf(capacity=100, **kw):
    return SplitBuffer(obs_dim=2, act_dim=1, capacity=capacity, **kw)


def test_catastrophe_routes_unsafe():
    buf = _buf()
    buf.push(_t(c=1))
    assert buf.unsafe.size == 1 and buf.safe.size == 0


def test_blocked_routing_configurable():
    buf = _buf(route_blocked=True)
    buf.push(_t(blocked=1))
    assert buf.unsafe.size == 1
    buf2 = _buf(route_blocked=False)
    buf2.push(_t(blocked=1))
    assert buf2.safe.size == 1


def test_ring_eviction():
    buf = SplitBuffer(obs_dim=2, act_dim=1, capacity=4, unsafe_fraction=0.5)
    assert buf.safe.capacity == 2
    for tag in (1.0, 2.0, 3.0):
        buf.push(_t(tag=tag))
    assert buf.safe.size == 2
    kept = sorted(buf.safe.s[:2, 0].tolist())
    assert kept == [2.0, 3.0]  # oldest evicted


def test_partition_counting_oracle():
    rng = np.random.default_rng(0)
    buf = _buf(capacity=200_000)
    labels = rng.random(100_000) < 0.07
    for c in labels:
        buf.push(_t(c=int(c)))
    assert buf.unsafe.size == int(labels.sum())
    assert buf.safe.size == int((~labels).sum())


def test_no_transition_loss_before_capacity():
    buf = SplitBuffer(obs_dim=2, act_dim=1, capacity=1000, unsafe_fraction=0.1)
    for i in range(500):
        buf.push(_t(c=i % 10 == 0, tag=float(i)))
    rows = list(buf.all_rows())
    assert len(rows) == 500
    tags = sorted(r["s"][0] for r in rows)
    assert tags == [float(i) for i in range(500)]


def test_safe_only_sampling_degenerate():
    buf = _buf()
    for _ in range(10):
        buf.push(_t())
    batch = buf.sample(6)
    assert np.all(batch.c == 0)
    assert np.all(batch.weights == 1.0)


def test_sample_rejections():
    buf = _buf()
    with pytest.raises(ValueError, match="empty"):
        buf.sample(4)
    buf.push(_t())
    with pytest.raises(ValueError, match="at least 2"):
        buf.sample(1)


def test_equal_proportion_split():
    buf = _buf(capacity=10_000)
    for i in range(900):
        buf.push(_t(tag=float(i)))
    for _ in range(100):
        buf.push(_t(c=1))
    batch = buf.sample(10)
    assert int((batch.c == 1).sum()) == 5
    assert int((batch.c == 0).sum()) == 5


def test_importance_weights_by_substitution():
    # weight formula: w_P = f_P / q_P, then max-normalized
    buf = _buf(capacity=10_000)
    for _ in range(900):
        buf.push(_t())
    for _ in range(100):
        buf.push(_t(c=1))
    batch = buf.sample(10)
    f_safe, f_unsafe, q = 0.9, 0.1, 0.5
    expected_safe = (f_safe / q) / (f_safe / q)     # 1 after normalization
    expected_unsafe = (f_unsafe / q) / (f_safe / q)
    assert np.allclose(batch.weights[batch.c == 0], expected_safe)
    assert np.allclose(batch.weights[batch.c == 1], expected_unsafe)


def test_sampling_distribution_50_50():
    buf = _buf(capacity=10_000, seed=5)
    for _ in range(5000):
        buf.push(_t())
    for _ in range(50):
        buf.push(_t(c=1))
    unsafe = 0
    total = 0
    for _ in range(500):
        b = buf.sample(200)
        unsafe += int((b.c == 1).sum())
        total += len(b)
    assert abs(unsafe / total - 0.5) < 0.01


def test_importance_weighted_estimator_unbiased():
    # the weighted batch mean of g converges to the plain buffer-wide mean
    rng = np.random.default_rng(8)
    buf = _buf(capacity=20_000, seed=9)
    values = []
    for _ in range(2000):
        v = rng.normal(loc=1.0)
        values.append(v)
        buf.push(_t(r=v))
    for _ in range(200):
        v = rng.normal(loc=5.0)
        values.append(v)
        buf.push(_t(c=1, r=v))
    buffer_mean = np.mean(values)
    num = 0.0
    den = 0.0
    drawn = 0
    while drawn < 100_000:
        b = buf.sample(500)
        num += float((b.weights * b.r).sum())
        den += float(b.weights.sum())
        drawn += len(b)
    weighted_mean = num / den
    assert abs(weighted_mean - buffer_mean) / abs(buffer_mean) < 0.02


def test_snapshot_roundtrip(tmp_path):
    buf = _buf(capacity=50, seed=3)
    for i in range(30):
        buf.push(_t(c=i % 5 == 0, tag=float(i)))
    meta = buf.meta()
    path = tmp_path / "buf.jsonl"
    buf.save_jsonl(path)
    buf2 = _buf(capacity=50, seed=99)
    buf2.load_jsonl(path, meta)
    assert len(buf2) == len(buf)
    b1 = buf.sample(8)
    b2 = buf2.sample(8)
    assert np.array_equal(b1.s, b2.s)
    assert np.array_equal(b1.weights, b2.weights)


def test_running_normalizer_matches_numpy():
    rng = np.random.default_rng(0)
    data = rng.normal(loc=3.0, scale=2.0, size=(500, 4))
    norm = RunningNormalizer(4)
    for chunk in np.array_split(data, 10):
        norm.update(chunk)
    assert np.allclose(norm.mean, data.mean(axis=0), atol=1e-9)
    assert np.allclose(norm.std, data.std(axis=0), atol=1e-9)
    z = norm.normalize(data)
    assert abs(z.mean()) < 1e-9
