"""Imagination-based safety detection and MPC action replacement.

Before an action executes, the current policy is rolled a configurable number
of steps through every transition member; each imagined transition is scored
by every blocker member and the max-over-steps mean probability decides
whether the planner must take over.  The planner optimizes action sequences by
cross-entropy search refined with gradient ascent through the learned
dynamics, reward and blocker networks, plus a leave-one-out KL term that keeps
imagined states away from the unsafe data distribution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .agent import ActorCritic
from .blocker import BlockerEnsemble
from .dynamics import DynamicsEnsemble


@dataclass
class ShieldConfig:
    detection_steps: int = 10          # imagination length C
    threshold: float = 0.96            # safe threshold epsilon
    horizon: int = 10                  # MPC horizon H
    cem_iters: int = 5
    grad_steps: int = 5
    population: int = 128
    elite_frac: float = 0.1
    w_b: float = 1.0                   # blocker weight in the MPC reward
    w_u: float = 1.0                   # LOO novelty weight
    blocker_sign: float = -1.0         # -1: penalize danger; +1: printed form
    init_std: float = 0.5
    std_floor: float = 0.05
    grad_step_size: float = 0.05
    u_ceiling: float = 10.0
    sample_uniform: bool = False       # pure random shooting population
    grad_top_k: int | None = None      # refine only the best K samples (None: all)

    def __post_init__(self):
        if self.detection_steps < 1:
            raise ValueError("detection length must be >= 1")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("safe threshold must be in (0, 1)")
        if self.horizon < 1:
            raise ValueError("MPC horizon must be >= 1")
        if self.n_elite > self.population:
            raise ValueError("elite count cannot exceed the population")

    @property
    def n_elite(self) -> int:
        return max(1, int(round(self.population * self.elite_frac)))


@dataclass
class ShieldDecision:
    p: float
    blocked: int
    action: np.ndarray
    policy_action: np.ndarray
    diagnostics: dict = field(default_factory=dict)


class UnsafeDensity:
    """Diagonal Gaussian MLE over the unsafe dataset (population variance)."""

    def __init__(self, dim: int, var_floor: float = 1e-6, ceiling: float = 10.0):
        self.dim = dim
        self.var_floor = var_floor
        self.ceiling = ceiling
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 0

    def fit(self, states: np.ndarray):
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        self.count = states.shape[0]
        if self.count == 0:
            self.mean = np.zeros(self.dim)
            self.var = np.ones(self.dim)
            return
        self.mean = states.mean(axis=0)
        self.var = np.maximum(states.var(axis=0), self.var_floor)

    def divergence(self, s) -> float:
        """KL between the density refit with s added and the current one."""
        return float(self.divergence_batch(np.atleast_2d(s))[0])

    def divergence_batch(self, states: np.ndarray) -> np.ndarray:
        return kernels.loo_divergence_batch(
            np.ascontiguousarray(np.atleast_2d(states)), self.mean, self.var,
            self.count, self.ceiling)

    def state_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "var": self.var.tolist(),
                "count": self.count}

    def load_state_dict(self, d: dict):
        self.mean = np.asarray(d["mean"], dtype=np.float64)
        self.var = np.asarray(d["var"], dtype=np.float64)
        self.count = int(d["count"])


def loo_divergence(density: UnsafeDensity, s) -> float:
    return density.divergence(s)


# ----------------------------------------------------------------------
def imagine_safety(dynamics: DynamicsEnsemble, blocker: BlockerEnsemble,
                   policy, obs, steps: int):
    """Catastrophe probability of the imagined future under `policy`.

    `policy` is either an Mlp (fast kernel path) or a callable obs -> action.
    Returns (p, per_step_means) with p the max over imagined steps of the
    blocker-member x transition-member mean probability.
    """
    if steps < 1:
        raise ValueError("detection length must be >= 1")
    obs = np.asarray(obs, dtype=np.float64)
    tr, bl = dynamics.transition, blocker
    if hasattr(policy, "flat"):
        return kernels.imagine_catastrophe(
            tr.stack, tr.sizes, tr.acts,
            bl.stack, bl.sizes, bl.acts,
            policy.flat, policy.sizes, policy.acts,
            obs, steps,
            dynamics.norm_obs.mean, dynamics.norm_obs.std,
            dynamics.norm_act.mean, dynamics.norm_act.std)
    # callable policies (scripted benchmark drivers) take the numpy path
    n_t = len(tr)
    states = np.tile(obs, (n_t, 1))
    step_means = np.zeros(steps)
    p = 0.0
    for c in range(steps):
        actions = np.stack([np.asarray(policy(states[j]), dtype=np.float64)
                            for j in range(n_t)])
        x = dynamics._inputs(states, actions)
        nxt = np.empty_like(states)
        for j in range(n_t):
            nxt[j] = states[j] + tr.nets[j](x[j:j + 1])[0]
        probs = blocker.member_probs(states, actions, nxt)
        step_means[c] = float(probs.mean())
        p = max(p, step_means[c])
        states = nxt
    return p, step_means


def mpc_reward(dynamics: DynamicsEnsemble, blocker: BlockerEnsemble,
               density: UnsafeDensity, s, a, s_next,
               w_b: float = 1.0, w_u: float = 1.0, blocker_sign: float = -1.0) -> float:
    """Single-transition planner reward: E[R] + sign * w_b * E[B] + w_u * u(s')."""
    x = dynamics._inputs(s, a, s_next)
    rhat = float(np.mean([net(x)[0, 0] for net in dynamics.reward.nets]))
    bhat = blocker.catastrophe_prob(s, a, s_next)
    u = density.divergence(s_next)
    return rhat + blocker_sign * w_b * bhat + w_u * u


# ----------------------------------------------------------------------
def _score_sequences(dynamics, blocker, density, seqs, obs, cfg: ShieldConfig):
    tr, rw, bl = dynamics.transition, dynamics.reward, blocker
    return kernels.mpc_score(
        tr.stack, tr.sizes, tr.acts,
        rw.stack, rw.sizes, rw.acts,
        bl.stack, bl.sizes, bl.acts,
        np.ascontiguousarray(seqs), obs,
        dynamics.norm_obs.mean, dynamics.norm_obs.std,
        dynamics.norm_act.mean, dynamics.norm_act.std,
        density.mean, density.var, density.count, cfg.u_ceiling,
        cfg.w_b, cfg.w_u, cfg.blocker_sign)


def _grad_sequences(dynamics, blocker, density, seqs, obs, cfg: ShieldConfig):
    tr, rw, bl = dynamics.transition, dynamics.reward, blocker
    return kernels.mpc_grad(
        tr.stack, tr.sizes, tr.acts,
        rw.stack, rw.sizes, rw.acts,
        bl.stack, bl.sizes, bl.acts,
        np.ascontiguousarray(seqs), obs,
        dynamics.norm_obs.mean, dynamics.norm_obs.std,
        dynamics.norm_act.mean, dynamics.norm_act.std,
        density.mean, density.var, density.count, cfg.u_ceiling,
        cfg.w_b, cfg.w_u, cfg.blocker_sign)


def warm_start_sequence(dynamics: DynamicsEnsemble, policy, obs, horizon: int) -> np.ndarray:
    """The policy's proposed sequence through the mean-ensemble dynamics."""
    seq = np.zeros((horizon, dynamics.act_dim))
    s = np.asarray(obs, dtype=np.float64)[None, :]
    for h in range(horizon):
        if hasattr(policy, "flat"):
            a = policy(dynamics.norm_obs.normalize(s))[0]
        else:
            a = np.asarray(policy(s[0]), dtype=np.float64)
        seq[h] = np.clip(a, -1.0, 1.0)
        s = dynamics.predict_next_batch(s, a[None, :])
    return seq


def plan(dynamics: DynamicsEnsemble, blocker: BlockerEnsemble, density: UnsafeDensity,
         obs, cfg: ShieldConfig, rng: np.random.Generator,
         warm_seq: np.ndarray | None = None):
    """Gradient-assisted CEM over action sequences; returns (action, diagnostics).

    Each iteration samples a population, refines it by gradient ascent on the
    MPC return, re-evaluates, and refits the sampling distribution to the
    elites.  The best sequence ever seen survives into the next population, so
    the best return never regresses on a deterministic objective.
    """
    obs = np.asarray(obs, dtype=np.float64)
    horizon, act_dim = cfg.horizon, dynamics.act_dim
    if warm_seq is None:
        warm_seq = np.zeros((horizon, act_dim))
    mean = warm_seq.copy()
    std = np.full((horizon, act_dim), cfg.init_std)

    best_seq = warm_seq.copy()
    best_ret = -np.inf
    best_trace = []
    elite_trace = []
    for it in range(cfg.cem_iters):
        if cfg.sample_uniform:
            seqs = rng.uniform(-1.0, 1.0, size=(cfg.population, horizon, act_dim))
        else:
            seqs = mean[None] + std[None] * rng.standard_normal(
                (cfg.population, horizon, act_dim))
            seqs = np.clip(seqs, -1.0, 1.0)
        if np.isfinite(best_ret):
            seqs[0] = best_seq
        refine = seqs
        merge_idx = None
        if cfg.grad_steps and cfg.grad_top_k and cfg.grad_top_k < cfg.population:
            pre = _score_sequences(dynamics, blocker, density, seqs, obs, cfg)
            merge_idx = np.argsort(-pre)[:cfg.grad_top_k]
            refine = seqs[merge_idx].copy()
        for _ in range(cfg.grad_steps):
            _, grad = _grad_sequences(dynamics, blocker, density, refine, obs, cfg)
            stepped = np.clip(refine + cfg.grad_step_size * grad, -1.0, 1.0)
            bad = ~np.isfinite(stepped).all(axis=(1, 2))
            if bad.any():
                stepped[bad] = refine[bad]  # divergent candidates keep their last point
            refine = stepped
        if merge_idx is not None:
            seqs[merge_idx] = refine
        else:
            seqs = refine
        rets = _score_sequences(dynamics, blocker, density, seqs, obs, cfg)
        rets = np.where(np.isfinite(rets), rets, -np.inf)
        order = np.argsort(-rets)
        elites = seqs[order[:cfg.n_elite]]
        mean = elites.mean(axis=0)
        std = np.maximum(elites.std(axis=0), cfg.std_floor)
        if rets[order[0]] > best_ret:
            best_ret = float(rets[order[0]])
            best_seq = seqs[order[0]].copy()
        best_trace.append(float(rets[order[0]]))
        elite_trace.append((float(mean.mean()), float(std.mean())))
    diagnostics = {
        "iterations": cfg.cem_iters,
        "best_return": best_ret,
        "best_trace": best_trace,
        "elite_trace": elite_trace,
    }
    return best_seq[0].copy(), diagnostics


def shield_action(dynamics: DynamicsEnsemble, blocker: BlockerEnsemble,
                  density: UnsafeDensity, policy, obs, cfg: ShieldConfig,
                  rng: np.random.Generator,
                  proposed_action: np.ndarray | None = None) -> ShieldDecision:
    """Detect and, when needed, replace the policy's action.

    blocked = 1 exactly when the imagined catastrophe probability reaches the
    threshold; the executed action is then the planner's, else the proposal
    (defaulting to the deterministic policy output).
    """
    obs = np.asarray(obs, dtype=np.float64)
    p, step_means = imagine_safety(dynamics, blocker, policy, obs, cfg.detection_steps)
    if proposed_action is None:
        if hasattr(policy, "flat"):
            proposed_action = np.clip(
                policy(dynamics.norm_obs.normalize(obs[None, :]))[0], -1.0, 1.0)
        else:
            proposed_action = np.clip(np.asarray(policy(obs), dtype=np.float64), -1.0, 1.0)
    if p >= cfg.threshold:
        warm = warm_start_sequence(dynamics, policy, obs, cfg.horizon)
        action, diag = plan(dynamics, blocker, density, obs, cfg, rng, warm_seq=warm)
        diag["step_means"] = step_means.tolist()
        return ShieldDecision(float(p), 1, action, np.asarray(proposed_action), diag)
    return ShieldDecision(float(p), 0, np.asarray(proposed_action),
                          np.asarray(proposed_action), {"step_means": step_means.tolist()})
