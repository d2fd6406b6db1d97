"""World-model ensemble: training convergence, prediction variance, rollouts."""

import numpy as np
import pytest

from shieldrl.dynamics import DynamicsEnsemble, gaussian_entropy
from shieldrl.envs import PuckState, make_env
from shieldrl.replay import RunningNormalizer, WeightedBatch


def _norms(obs_dim=6, act_dim=2):
    return RunningNormalizer(obs_dim), RunningNormalizer(act_dim)


def _model(obs_dim=6, act_dim=2, hidden=(32, 32), **kw):
    no, na = _norms(obs_dim, act_dim)
    return DynamicsEnsemble(obs_dim, act_dim, no, na, hidden=hidden, **kw)


def _batch(s, a, s2, r, done):
    n = s.shape[0]
    return WeightedBatch(s=s, a=a, s_next=s2, r=np.asarray(r, float),
                         done=np.asarray(done, np.int64), c=np.zeros(n, np.int64),
                         blocked=np.zeros(n, np.int64), weights=np.ones(n))


def test_single_transition_convergence():
    model = _model(seed=1)
    rng = np.random.default_rng(0)
    s = rng.normal(size=(1, 6))
    a = rng.uniform(-1, 1, (1, 2))
    s2 = s + rng.normal(scale=0.05, size=(1, 6))
    batch = _batch(s, a, s2, [0.3], [0])
    loss = None
    for _ in range(5000):
        loss = model.train(batch)["transition"]
        if loss < 1e-6:
            break
    assert loss < 1e-6


def test_constant_zero_reward_fit():
    model = _model(seed=2)
    rng = np.random.default_rng(1)
    s = rng.normal(size=(64, 6))
    a = rng.uniform(-1, 1, (64, 2))
    s2 = s + rng.normal(scale=0.02, size=(64, 6))
    batch = _batch(s, a, s2, np.zeros(64), np.zeros(64))
    for _ in range(4000):
        model.train(batch)
    preds = [model.predict(s[i], a[i]).mean_reward for i in range(16)]
    assert np.max(np.abs(preds)) < 1e-3


def test_termination_head_saturates_on_all_done():
    model = _model(seed=3)
    rng = np.random.default_rng(2)
    s = rng.normal(size=(32, 6))
    a = rng.uniform(-1, 1, (32, 2))
    s2 = s + 0.01
    batch = _batch(s, a, s2, np.zeros(32), np.ones(32))
    for _ in range(1500):
        model.train(batch)
    assert model.predict(s[0], a[0]).mean_term > 0.95


def test_identical_members_zero_variance():
    model = _model(seed=4)
    model.transition.stack[:] = model.transition.stack[0]
    pred = model.predict(np.zeros(6), np.zeros(2))
    assert np.all(pred.var_next == 0.0)
    assert model.transition_variance(np.zeros(6), np.zeros(2)) == 0.0


def test_two_member_variance_arithmetic():
    # members predicting x and x+2 per dim -> population variance 1 per dim
    model = _model(n_transition=2, n_reward=2, n_term=2, seed=5)
    model.transition.stack[:] = 0.0
    _, b0 = model.transition.nets[0].layer(model.transition.nets[0].n_layers - 1)
    _, b1 = model.transition.nets[1].layer(model.transition.nets[1].n_layers - 1)
    b0[...] = 0.0
    b1[...] = 2.0
    pred = model.predict(np.zeros(6), np.zeros(2))
    assert np.allclose(pred.var_next, 1.0)
    assert np.isclose(model.transition_variance(np.zeros(6), np.zeros(2)), 1.0)
    assert np.allclose(pred.mean_next, pred.next_states.mean(axis=0))


def test_variance_matches_two_pass_oracle():
    model = _model(seed=6)
    rng = np.random.default_rng(3)
    s, a = rng.normal(size=6), rng.uniform(-1, 1, 2)
    pred = model.predict(s, a)
    # naive two-pass variance
    mean = np.zeros(6)
    for row in pred.next_states:
        mean += row
    mean /= len(pred.next_states)
    var = np.zeros(6)
    for row in pred.next_states:
        var += (row - mean) ** 2
    var /= len(pred.next_states)
    assert np.allclose(pred.var_next, var, atol=1e-12)
    assert abs(model.transition_variance(s, a) - var.mean()) < 1e-12


def test_variance_monotone_in_divergence():
    model = _model(seed=7)
    model.transition.stack[:] = model.transition.stack[0]
    base = model.transition_variance(np.zeros(6), np.zeros(2))
    _, b = model.transition.nets[3].layer(model.transition.nets[3].n_layers - 1)
    b[...] += 0.5
    mid = model.transition_variance(np.zeros(6), np.zeros(2))
    b[...] += 0.5
    far = model.transition_variance(np.zeros(6), np.zeros(2))
    assert base < mid < far


def test_member_permutation_invariance():
    model = _model(seed=8)
    s, a = np.ones(6) * 0.1, np.zeros(2)
    pred = model.predict(s, a)
    perm = np.random.default_rng(0).permutation(len(model.transition))
    model.transition.stack[:] = model.transition.stack[perm]
    pred2 = model.predict(s, a)
    assert np.allclose(pred.mean_next, pred2.mean_next, atol=1e-15)
    assert np.allclose(pred.var_next, pred2.var_next, atol=1e-15)


def test_loss_decreases_on_fixed_dataset():
    model = _model(seed=9)
    rng = np.random.default_rng(4)
    s = rng.normal(size=(128, 6)) * 0.3
    a = rng.uniform(-1, 1, (128, 2))
    s2 = s + np.concatenate([s[:, 2:4], a * 0.01, np.zeros((128, 2))], axis=1)
    batch = _batch(s, a, s2, np.zeros(128), np.zeros(128))
    losses = [model.train(batch)["transition"] for _ in range(300)]
    window = 20
    smoothed = np.convolve(losses, np.ones(window) / window, mode="valid")
    # monotone decrease within 5% tolerance
    assert np.all(smoothed[1:] <= smoothed[:-1] * 1.05)
    assert smoothed[-1] < smoothed[0]


def test_rollout_base_case_matches_predict():
    model = _model(seed=10)
    s = np.random.default_rng(5).normal(size=6)
    a = np.array([0.3, -0.2])
    out = model.rollout(s, lambda t, obs: a, horizon=1, member_index=2)
    pred = model.predict(s, a)
    assert np.allclose(out["states"][1], pred.next_states[2], atol=1e-12)


def test_rollout_zero_horizon_rejected():
    model = _model(seed=11)
    with pytest.raises(ValueError, match="horizon"):
        model.rollout(np.zeros(6), lambda t, s: np.zeros(2), horizon=0, member_index=0)
    with pytest.raises(ValueError, match="member"):
        model.rollout(np.zeros(6), lambda t, s: np.zeros(2), horizon=1, member_index=9)


def test_rollout_with_hand_built_linear_model_tracks_real_env():
    # hand-set weights implementing the exact friction-free PuckWorld update
    # under zero action: pos += vel, vel and target unchanged
    model = _model(hidden=(), seed=12)
    for net in model.transition.nets:
        w = np.zeros((8, 6))
        w[2, 0] = 1.0  # delta px = vx
        w[3, 1] = 1.0  # delta py = vy
        net.set_layer(0, w, np.zeros(6))

    env = make_env("puckworld-l")
    env.set_state(PuckState(np.array([0.2, 0.3]), np.array([0.012, -0.004]),
                            np.array([0.9, 0.9])))
    obs0 = env.observation()
    out = model.rollout(obs0, lambda t, s: np.zeros(2), horizon=8, member_index=0)
    obs = obs0
    for t in range(8):
        res = env.step(np.zeros(2))
        obs = env.observation(res.next_state)
        assert np.allclose(out["states"][t + 1], obs, atol=1e-12)


def test_width_mismatch_rejected():
    model = _model(seed=13)
    with pytest.raises(ValueError, match="width"):
        model.predict(np.zeros(5), np.zeros(2))
    batch = _batch(np.zeros((4, 5)), np.zeros((4, 2)), np.zeros((4, 5)),
                   np.zeros(4), np.zeros(4))
    with pytest.raises(ValueError, match="width"):
        model.train(batch)


def test_entropy_identity():
    # H = 0.5 (ln(2 pi var) + 1) is zero exactly at var = 1/(2 pi e)
    assert gaussian_entropy(1.0 / (2.0 * np.pi * np.e)) == pytest.approx(0.0, abs=1e-15)
    vs = np.linspace(0.01, 2.0, 50)
    ent = [gaussian_entropy(v) for v in vs]
    assert np.all(np.diff(ent) > 0)
