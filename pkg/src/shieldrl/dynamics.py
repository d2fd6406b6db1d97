"""Ensemble world model: transition, reward and termination heads.

Each head is an ensemble of independently seeded MLPs trained by one Adam step
per member per call, each member on its own bootstrap resample of the batch.
The transition head predicts the observation delta; predictions are exposed in
raw observation units so ensemble variance is directly usable as an
exploration signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .nn import AdamState, Mlp, adam_step, binary_cross_entropy, param_count
from .replay import RunningNormalizer, WeightedBatch


class NanLossError(RuntimeError):
    """A training step produced a non-finite loss; the step was not applied."""


def gaussian_entropy(var: float) -> float:
    """Differential entropy of a 1-D Gaussian: 0.5 * (ln(2 pi var) + 1)."""
    return 0.5 * (np.log(2.0 * np.pi * var) + 1.0)


@dataclass
class ModelPrediction:
    next_states: np.ndarray   # (N_T, obs)
    rewards: np.ndarray       # (N_R,)
    term_probs: np.ndarray    # (N_D,)
    mean_next: np.ndarray     # (obs,)
    var_next: np.ndarray      # per-dimension population variance, (obs,)
    mean_reward: float
    mean_term: float


class _Head:
    """One ensemble head: stacked member parameters + stacked Adam state.

    The whole (N, P) parameter stack is updated by a single fused Adam call;
    per-member gradients are collected into a matching (N, P) buffer first.
    """

    def __init__(self, n_members, layer_sizes, out_act, lr, seed_base):
        p = param_count(layer_sizes)
        self.stack = np.zeros((n_members, p))
        self.nets = [
            Mlp.create(layer_sizes, out_act=out_act, seed=seed_base + j, flat=self.stack[j])
            for j in range(n_members)
        ]
        self.opt = AdamState.for_params(self.stack, lr=lr)
        self.grad = np.zeros_like(self.stack)
        self.sizes = self.nets[0].sizes
        self.acts = self.nets[0].acts

    def __len__(self):
        return len(self.nets)


class DynamicsEnsemble:
    def __init__(self, obs_dim: int, act_dim: int, normalizer_obs: RunningNormalizer,
                 normalizer_act: RunningNormalizer, n_transition: int = 4,
                 n_reward: int = 4, n_term: int = 4, hidden=(64, 64),
                 transition_hidden=None, lr: float = 3e-4, seed: int = 0):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.norm_obs = normalizer_obs
        self.norm_act = normalizer_act
        th = tuple(transition_hidden) if transition_hidden is not None else tuple(hidden)
        self.transition = _Head(n_transition, [obs_dim + act_dim, *th, obs_dim],
                                "linear", lr, seed_base=seed * 1000 + 100)
        self.reward = _Head(n_reward, [2 * obs_dim + act_dim, *hidden, 1],
                            "linear", lr, seed_base=seed * 1000 + 200)
        self.term = _Head(n_term, [2 * obs_dim + act_dim, *hidden, 1],
                          "sigmoid", lr, seed_base=seed * 1000 + 300)
        self.train_rng = np.random.default_rng(seed * 1000 + 400)

    # ------------------------------------------------------------------
    def _inputs(self, s, a, s_next=None):
        sn = self.norm_obs.normalize(np.atleast_2d(s))
        an = self.norm_act.normalize(np.atleast_2d(a))
        if s_next is None:
            return np.concatenate([sn, an], axis=1)
        s2n = self.norm_obs.normalize(np.atleast_2d(s_next))
        return np.concatenate([sn, an, s2n], axis=1)

    def train(self, batch: WeightedBatch) -> dict:
        """One weighted Adam step per member per head on the batch.

        Members draw independent bootstrap resamples so they see different
        input sequences.  Raises NanLossError (without applying the offending
        update) if any loss goes non-finite.
        """
        bsz = len(batch)
        if bsz == 0:
            raise ValueError("empty batch")
        if batch.s.shape[1] != self.obs_dim or batch.a.shape[1] != self.act_dim:
            raise ValueError("batch widths do not match the model")
        x_sa = self._inputs(batch.s, batch.a)
        x_full = self._inputs(batch.s, batch.a, batch.s_next)
        delta = batch.s_next - batch.s
        losses = {"transition": 0.0, "reward": 0.0, "termination": 0.0}

        for j, net in enumerate(self.transition.nets):
            idx = self.train_rng.integers(0, bsz, size=bsz)
            losses["transition"] += self._mse_grad(
                net, self.transition.grad[j], x_sa[idx], delta[idx], batch.weights[idx])
        adam_step(self.transition.stack, self.transition.grad, self.transition.opt)
        for j, net in enumerate(self.reward.nets):
            idx = self.train_rng.integers(0, bsz, size=bsz)
            losses["reward"] += self._mse_grad(
                net, self.reward.grad[j], x_full[idx], batch.r[idx, None], batch.weights[idx])
        adam_step(self.reward.stack, self.reward.grad, self.reward.opt)
        for j, net in enumerate(self.term.nets):
            idx = self.train_rng.integers(0, bsz, size=bsz)
            losses["termination"] += self._bce_grad(
                net, self.term.grad[j], x_full[idx], batch.done[idx].astype(float)[:, None],
                batch.weights[idx])
        adam_step(self.term.stack, self.term.grad, self.term.opt)
        return {
            "transition": losses["transition"] / len(self.transition),
            "reward": losses["reward"] / len(self.reward),
            "termination": losses["termination"] / len(self.term),
        }

    @staticmethod
    def _mse_grad(net: Mlp, grad_out, x, target, w) -> float:
        bsz = x.shape[0]
        cache = np.empty(bsz * net.cache_width)
        y = kernels.net_forward_cached(net.flat, net.sizes, net.acts, x, cache)
        err = y - target
        loss = float(np.mean(w[:, None] * err * err))
        if not np.isfinite(loss):
            raise NanLossError(f"non-finite regression loss {loss}")
        dy = 2.0 * w[:, None] * err / err.size
        kernels.net_backward(net.flat, net.sizes, net.acts, cache, bsz, dy, 0, grad_out)
        return loss

    @staticmethod
    def _bce_grad(net: Mlp, grad_out, x, target, w) -> float:
        bsz = x.shape[0]
        cache = np.empty(bsz * net.cache_width)
        p = kernels.net_forward_cached(net.flat, net.sizes, net.acts, x, cache)
        loss = float(np.mean(
            w[:, None] * -(target * np.log(np.clip(p, 1e-7, None))
                           + (1.0 - target) * np.log(np.clip(1.0 - p, 1e-7, None)))))
        if not np.isfinite(loss):
            raise NanLossError(f"non-finite cross-entropy loss {loss}")
        # fused sigmoid + cross-entropy gradient, taken at the pre-activation
        dz = w[:, None] * (p - target) / p.size
        kernels.net_backward(net.flat, net.sizes, net.acts, cache, bsz, dz, 1, grad_out)
        return loss

    # ------------------------------------------------------------------
    def predict(self, s, a) -> ModelPrediction:
        s = np.asarray(s, dtype=np.float64)
        a = np.asarray(a, dtype=np.float64)
        if s.shape[-1] != self.obs_dim or a.shape[-1] != self.act_dim:
            raise ValueError(
                f"widths ({s.shape[-1]}, {a.shape[-1]}) do not match model "
                f"({self.obs_dim}, {self.act_dim})")
        x_sa = self._inputs(s, a)
        deltas = kernels.ensemble_forward(self.transition.stack, self.transition.sizes,
                                          self.transition.acts, x_sa)[:, 0, :]
        next_states = s + deltas
        mean_next = next_states.mean(axis=0)
        var_next = next_states.var(axis=0)  # population variance across members
        n_r = len(self.reward)
        rewards = np.empty(n_r)
        terms = np.empty(len(self.term))
        for j in range(n_r):
            x_full = self._inputs(s, a, next_states[j % next_states.shape[0]])
            rewards[j] = self.reward.nets[j](x_full)[0, 0]
        for j in range(len(self.term)):
            x_full = self._inputs(s, a, next_states[j % next_states.shape[0]])
            terms[j] = self.term.nets[j](x_full)[0, 0]
        return ModelPrediction(next_states, rewards, terms, mean_next, var_next,
                               float(rewards.mean()), float(terms.mean()))

    def transition_variance(self, s, a) -> float:
        """Mean over output dimensions of the member variance (raw units)."""
        return float(self.predict(s, a).var_next.mean())

    def transition_variance_batch(self, s, a) -> np.ndarray:
        x_sa = self._inputs(s, a)
        deltas = kernels.ensemble_forward(self.transition.stack, self.transition.sizes,
                                          self.transition.acts, x_sa)
        return deltas.var(axis=0).mean(axis=1)

    def predict_next_batch(self, s, a) -> np.ndarray:
        """Mean-ensemble successor observations for a batch."""
        x_sa = self._inputs(s, a)
        deltas = kernels.ensemble_forward(self.transition.stack, self.transition.sizes,
                                          self.transition.acts, x_sa)
        return np.asarray(s) + deltas.mean(axis=0)

    def rollout(self, s0, action_fn, horizon: int, member_index: int):
        """Iterate one member's transition head for `horizon` steps.

        action_fn maps (step_index, obs) -> action.  Returns dict with the
        visited states (horizon+1, obs), predicted rewards and termination
        probabilities (horizon,).
        """
        if horizon < 1:
            raise ValueError("rollout horizon must be >= 1")
        if not 0 <= member_index < len(self.transition):
            raise ValueError(f"member index {member_index} out of range")
        net = self.transition.nets[member_index]
        rnet = self.reward.nets[member_index % len(self.reward)]
        dnet = self.term.nets[member_index % len(self.term)]
        states = np.empty((horizon + 1, self.obs_dim))
        rewards = np.empty(horizon)
        terms = np.empty(horizon)
        s = np.asarray(s0, dtype=np.float64).copy()
        states[0] = s
        for t in range(horizon):
            a = np.asarray(action_fn(t, s), dtype=np.float64)
            s2 = s + net(self._inputs(s, a))[0]
            x_full = self._inputs(s, a, s2)
            rewards[t] = rnet(x_full)[0, 0]
            terms[t] = dnet(x_full)[0, 0]
            s = s2
            states[t + 1] = s
        return {"states": states, "rewards": rewards, "term_probs": terms}

    # ------------------------------------------------------------------
    def heads(self):
        return {"transition": self.transition, "reward": self.reward, "term": self.term}
