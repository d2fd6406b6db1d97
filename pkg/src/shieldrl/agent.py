"""Off-policy actor-critic with interpolated value-expansion targets.

Candidate targets of depth h roll the target policy through each transition
member and bootstrap with each target critic; the final TD target is the
inverse-variance weighted combination over depths.  Rewards fed to the learner
combine the environment reward with a blocker-based intrinsic penalty and an
uncertainty-seeking exploration bonus, mixed by the adaptive weight lambda.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .blocker import BlockerEnsemble
from .dynamics import DynamicsEnsemble, NanLossError
from .nn import AdamState, Mlp, adam_step, param_count
from .replay import RunningNormalizer

VAR_EPS = 1e-8  # added to candidate variances before inversion


@dataclass
class RewardShapingParams:
    """Intrinsic penalty: -c_l * B below the bound, -c_h * B at or above it."""

    bound: float = 0.92
    c_l: float = 1.0
    c_h: float = 100.0

    def __post_init__(self):
        if not 0.0 < self.bound < 1.0:
            raise ValueError(f"bound must be in (0, 1), got {self.bound}")
        if not 0.0 <= self.c_l <= self.c_h:
            raise ValueError(f"need 0 <= c_l <= c_h, got {self.c_l}, {self.c_h}")


@dataclass
class ExplorationState:
    """Adaptive exploration weight driven by model-uncertainty history."""

    lam: float = 0.0
    running_max: float = 0.0
    last_sigma: float = 0.0


def update_lambda(state: ExplorationState, sigma_bar: float) -> float:
    """lambda = sigma^2 / (2 max(history, sigma^2)), then record the history.

    Zero when no variance has ever been seen; the formula itself restricts
    lambda to [0, 0.5].
    """
    if sigma_bar < 0:
        raise ValueError("mean trajectory variance cannot be negative")
    denom = max(state.running_max, sigma_bar)
    lam = 0.0 if denom <= 0.0 else sigma_bar / (2.0 * denom)
    state.lam = float(np.clip(lam, 0.0, 0.5))
    state.running_max = denom
    state.last_sigma = sigma_bar
    return state.lam


def intrinsic_reward(prob, shaping: RewardShapingParams):
    """Non-positive penalty scaled by the catastrophe probability."""
    p = np.asarray(prob, dtype=np.float64)
    scale = np.where(p < shaping.bound, shaping.c_l, shaping.c_h)
    out = -scale * p
    return float(out) if out.ndim == 0 else out


def active_reward(variance, prob, c_a: float, alpha: float):
    """Exploration bonus: c_a * variance * (1 - catastrophe_prob)^alpha."""
    v = np.asarray(variance, dtype=np.float64)
    p = np.clip(np.asarray(prob, dtype=np.float64), 0.0, 1.0)
    out = c_a * v * (1.0 - p) ** alpha
    return float(out) if out.ndim == 0 else out


def composite_reward(r, r_i, r_a, lam: float):
    """(1 - lambda) (r + r_i) + lambda * r_a."""
    if not 0.0 <= lam <= 0.5:
        raise ValueError(f"lambda must be in [0, 0.5], got {lam}")
    return (1.0 - lam) * (np.asarray(r) + np.asarray(r_i)) + lam * np.asarray(r_a)


def td_target(critic_value, r, d, gamma: float):
    """r + gamma (1 - d) Q(s', pi(s'))."""
    return np.asarray(r) + gamma * (1.0 - np.asarray(d)) * np.asarray(critic_value)


def steve_target(means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """Inverse-variance weighted combination over candidate depths.

    means/variances: (H+1, B) or (H+1,).  A single candidate short-circuits to
    its mean so the H=0 learner is bitwise the TD learner.
    """
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    variances = np.atleast_2d(np.asarray(variances, dtype=np.float64))
    if means.shape[0] == 1:
        return means[0].copy()
    inv = 1.0 / (variances + VAR_EPS)
    return (means * inv).sum(axis=0) / inv.sum(axis=0)


def steve_weights(variances: np.ndarray) -> np.ndarray:
    inv = 1.0 / (np.asarray(variances, dtype=np.float64) + VAR_EPS)
    return inv / inv.sum(axis=0)


class ActorCritic:
    """Deterministic policy with a critic ensemble and target copies."""

    def __init__(self, obs_dim: int, act_dim: int, normalizer_obs: RunningNormalizer,
                 normalizer_act: RunningNormalizer, n_critics: int = 4,
                 hidden=(64, 64), lr: float = 3e-4, tau: float = 0.005, seed: int = 0):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.norm_obs = normalizer_obs
        self.norm_act = normalizer_act
        self.tau = float(tau)

        self.policy = Mlp.create([obs_dim, *hidden, act_dim], out_act="tanh",
                                 seed=seed * 1000 + 700)
        self.policy_opt = AdamState.for_params(self.policy.flat, lr=lr)
        self.policy_target = self.policy.copy()

        q_sizes = [obs_dim + act_dim, *hidden, 1]
        p = param_count(q_sizes)
        self.q_stack = np.zeros((n_critics, p))
        self.q_target_stack = np.zeros((n_critics, p))
        self.critics = [Mlp.create(q_sizes, seed=seed * 1000 + 800 + c, flat=self.q_stack[c])
                        for c in range(n_critics)]
        self.critic_targets = [Mlp(q_sizes, flat=self.q_target_stack[c]) for c in range(n_critics)]
        self.q_target_stack[...] = self.q_stack
        self.q_opt = AdamState.for_params(self.q_stack, lr=lr)
        self.q_grad = np.zeros_like(self.q_stack)
        self.q_sizes = self.critics[0].sizes
        self.q_acts = self.critics[0].acts

    @property
    def n_critics(self) -> int:
        return len(self.critics)

    # ------------------------------------------------------------------
    def act(self, obs, noise_scale: float = 0.0, rng: np.random.Generator | None = None):
        """Deterministic policy output plus Gaussian noise, clamped to bounds."""
        a = self.policy(self.norm_obs.normalize(np.atleast_2d(obs)))[0]
        if noise_scale > 0.0:
            if rng is None:
                raise ValueError("noise requires an rng")
            a = a + rng.normal(0.0, noise_scale, size=a.shape)
        return np.clip(a, -1.0, 1.0)

    def q_values(self, obs, act, target: bool = False) -> np.ndarray:
        """(N_Q, B) critic values."""
        x = np.concatenate([self.norm_obs.normalize(np.atleast_2d(obs)),
                            self.norm_act.normalize(np.atleast_2d(act))], axis=1)
        stack = self.q_target_stack if target else self.q_stack
        return kernels.ensemble_forward(stack, self.q_sizes, self.q_acts, x)[:, :, 0]

    # ------------------------------------------------------------------
    def candidate_targets(self, dynamics: DynamicsEnsemble | None, r, s_next, d,
                          horizon: int, gamma: float):
        """Value-expansion candidates for a batch.

        Returns (means, variances, var_steps): means/variances are (H+1, B)
        over the (transition member x critic member) values; var_steps is the
        per-imagined-step cross-member state variance (H, B) feeding lambda.
        Without a dynamics model only the depth-0 candidate is emitted.
        """
        r = np.asarray(r, dtype=np.float64)
        s_next = np.atleast_2d(np.asarray(s_next, dtype=np.float64))
        d = np.asarray(d, dtype=np.float64)
        if horizon < 0:
            raise ValueError("horizon must be >= 0")
        if dynamics is None:
            horizon = 0
        if horizon == 0:
            a_next = self.policy_target(self.norm_obs.normalize(s_next))
            q = self.q_values(s_next, a_next, target=True)
            cands = td_target(q, r[None, :], d[None, :], gamma)  # (N_Q, B)
            means = cands.mean(axis=0, keepdims=True)
            variances = cands.var(axis=0, keepdims=True)
            return means, variances, np.zeros((0, r.shape[0]))
        tr, rw, dn = dynamics.transition, dynamics.reward, dynamics.term
        T, var_steps = kernels.ve_targets(
            tr.stack, tr.sizes, tr.acts,
            rw.stack, rw.sizes, rw.acts,
            dn.stack, dn.sizes, dn.acts,
            self.policy_target.flat, self.policy_target.sizes, self.policy_target.acts,
            self.q_target_stack, self.q_sizes, self.q_acts,
            r, np.ascontiguousarray(s_next), d, horizon, gamma,
            self.norm_obs.mean, self.norm_obs.std, self.norm_act.mean, self.norm_act.std)
        flat = T.reshape(T.shape[0], -1, T.shape[3])  # (H+1, N*NQ, B)
        return flat.mean(axis=1), flat.var(axis=1), var_steps

    # ------------------------------------------------------------------
    def update(self, s, a, weights, targets) -> dict:
        """Weighted critic regression + deterministic policy gradient + soft update."""
        s = np.atleast_2d(np.asarray(s, dtype=np.float64))
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        w = np.asarray(weights, dtype=np.float64)
        y = np.asarray(targets, dtype=np.float64)
        bsz = s.shape[0]
        if bsz == 0:
            raise ValueError("empty batch")
        sn = self.norm_obs.normalize(s)
        an = self.norm_act.normalize(a)
        xq = np.concatenate([sn, an], axis=1)

        critic_loss = 0.0
        q_cache = np.empty(bsz * self.critics[0].cache_width)
        for c, net in enumerate(self.critics):
            q = kernels.net_forward_cached(net.flat, net.sizes, net.acts, xq, q_cache)
            err = q[:, 0] - y
            loss = float(np.mean(w * err * err))
            if not np.isfinite(loss):
                raise NanLossError(f"non-finite critic loss {loss}")
            dy = (2.0 * w * err / bsz)[:, None]
            kernels.net_backward(net.flat, net.sizes, net.acts, q_cache, bsz, dy, 0,
                                 self.q_grad[c])
            critic_loss += loss
        adam_step(self.q_stack, self.q_grad, self.q_opt)
        critic_loss /= self.n_critics

        # actor: ascend the mean critic through the policy action
        p_cache = np.empty(bsz * self.policy.cache_width)
        a_pi = kernels.net_forward_cached(
            self.policy.flat, self.policy.sizes, self.policy.acts, sn, p_cache)
        an_pi = self.norm_act.normalize(a_pi)
        x_pi = np.concatenate([sn, an_pi], axis=1)
        q_mean = 0.0
        da_norm = np.zeros_like(an_pi)
        for c, net in enumerate(self.critics):
            q = kernels.net_forward_cached(net.flat, net.sizes, net.acts, x_pi, q_cache)
            q_mean += float(np.mean(w * q[:, 0])) / self.n_critics
            dy = (-w / (bsz * self.n_critics))[:, None]
            dx = kernels.net_input_grad(net.flat, net.sizes, net.acts, q_cache, bsz, dy)
            da_norm += dx[:, self.obs_dim:]
        actor_loss = -q_mean
        if not np.isfinite(actor_loss):
            raise NanLossError(f"non-finite actor loss {actor_loss}")
        da = da_norm / self.norm_act.std
        p_grad = np.empty_like(self.policy.flat)
        kernels.net_backward(self.policy.flat, self.policy.sizes,
                             self.policy.acts, p_cache, bsz, da, 0, p_grad)
        adam_step(self.policy.flat, p_grad, self.policy_opt)

        self.soft_update()
        return {"critic_loss": critic_loss, "actor_loss": actor_loss}

    def soft_update(self):
        t = self.tau
        self.policy_target.flat[...] = (1.0 - t) * self.policy_target.flat + t * self.policy.flat
        self.q_target_stack[...] = (1.0 - t) * self.q_target_stack + t * self.q_stack

    def hard_update(self):
        self.policy_target.flat[...] = self.policy.flat
        self.q_target_stack[...] = self.q_stack
