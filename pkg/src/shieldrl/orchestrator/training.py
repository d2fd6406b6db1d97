"""End-to-end training: oversight phase, pretraining, shielded interaction loop.

Pipeline for the shielded modes: collect oracle-labeled transitions with a
correlated random policy (catastrophe rewards masked so danger keeps being
visited), train the Blocker on them, collect n0 unmasked random samples,
pretrain the dynamics n0 times, then alternate per environment step: shield ->
env step -> push -> one dynamics update -> one policy update on the composite
reward.  "hirl" limits detection to one imagined step, drops the exploration
bonus and replaces the intrinsic penalty with a flat blocked-action penalty;
"steve-unshielded" never consults the blocker at all.
"""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np

from ..agent import (ActorCritic, ExplorationState, RewardShapingParams,
                     active_reward, composite_reward, intrinsic_reward,
                     steve_target, update_lambda)
from ..blocker import BlockerEnsemble
from ..dynamics import DynamicsEnsemble
from ..envs import Transition, make_env
from ..exploration import CorrelatedRandomPolicy
from ..nn import AdamState
from ..replay import RunningNormalizer, SplitBuffer
from ..shield import ShieldConfig, UnsafeDensity, shield_action
from . import checkpoint as ckpt
from .config import RunConfig
from .oversight import OversightError, run_oracle_oversight, train_blocker_on_dataset

log = logging.getLogger(__name__)

METRIC_FIELDS = [
    "step", "episode", "r_env", "ep_return", "lam", "sigma_bar", "p", "blocked",
    "catastrophe", "catastrophes_cum", "blocked_cum", "critic_loss", "actor_loss",
    "intrinsic_mean", "active_mean", "trans_loss", "reward_loss", "term_loss",
]


class TrainingRun:
    def __init__(self, config: RunConfig, out_dir):
        self.cfg = config
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        config.save(self.out_dir / "config.txt")

        c = config
        self.env = make_env(c.env, seed=c.seed,
                            near_obstacle_prob=c.near_obstacle_prob,
                            max_steps=c.max_episode_steps)
        obs_dim, act_dim = self.env.obs_dim, self.env.act_dim
        self.norm_obs = RunningNormalizer(obs_dim)
        self.norm_act = RunningNormalizer(act_dim)
        self.buffer = SplitBuffer(obs_dim, act_dim, capacity=c.buffer_capacity,
                                  unsafe_fraction=c.unsafe_fraction,
                                  route_blocked=c.route_blocked, seed=c.seed + 11)
        self.dynamics = DynamicsEnsemble(
            obs_dim, act_dim, self.norm_obs, self.norm_act,
            n_transition=c.n_transition, n_reward=c.n_reward, n_term=c.n_term,
            hidden=c.hidden, transition_hidden=c.transition_hidden,
            lr=c.lr, seed=c.seed + 21)
        self.blocker = BlockerEnsemble(
            obs_dim, act_dim, self.norm_obs, self.norm_act,
            n_members=c.n_blocker, hidden=c.hidden, lr=c.lr, seed=c.seed + 31)
        self.agent = ActorCritic(
            obs_dim, act_dim, self.norm_obs, self.norm_act,
            n_critics=c.n_critics, hidden=c.hidden, lr=c.lr, tau=c.tau,
            seed=c.seed + 41)
        self.density = UnsafeDensity(obs_dim, ceiling=c.loo_ceiling)
        self.shaping = RewardShapingParams(bound=c.intrinsic_reward_bound,
                                           c_l=c.scaling_factor_cl,
                                           c_h=c.scaling_factor_ch)
        self.exploration = ExplorationState()
        self.shield_cfg = ShieldConfig(
            detection_steps=1 if c.mode == "hirl" else c.safety_detection_length,
            threshold=c.safe_threshold, horizon=c.mpc_horizon,
            cem_iters=c.cem_iters, grad_steps=c.cem_grad_steps,
            population=c.cem_population, elite_frac=c.cem_elite_frac,
            w_b=c.safety_weight, w_u=c.loo_weight,
            blocker_sign=1.0 if c.literal_blocker_sign else -1.0,
            init_std=c.cem_init_std, std_floor=c.cem_std_floor,
            grad_step_size=c.cem_grad_step_size, u_ceiling=c.loo_ceiling,
            grad_top_k=c.cem_grad_top_k or None)

        self.noise_rng = np.random.default_rng(c.seed + 51)
        self.cem_rng = np.random.default_rng(c.seed + 61)
        self.explore_rng = np.random.default_rng(c.seed + 71)

        self.step = 0
        self.episode = 0
        self.ep_return = 0.0
        self.catastrophes_cum = 0
        self.blocked_cum = 0
        self.unsafe_since_refit = 0
        self.episode_returns: list[tuple[int, float]] = []

        self._metrics_fh = None
        self._intercept_fh = None
        self._traj_fh = None

    # ------------------------------------------------------------------
    @property
    def uses_shield(self) -> bool:
        return self.cfg.mode in ("mbhi", "hirl")

    def _noise_scale(self) -> float:
        c = self.cfg
        frac = min(self.step / max(c.noise_decay_steps, 1), 1.0)
        return c.noise_start + frac * (c.noise_end - c.noise_start)

    def _label(self, state, next_state) -> int:
        return self.env.oracle_label(state, next_state)

    def _push(self, tr: Transition):
        self.buffer.push(tr)
        self.norm_obs.update(tr.s)
        self.norm_act.update(tr.a)
        if self.buffer.is_unsafe(tr):
            self.unsafe_since_refit += 1
            if self.unsafe_since_refit >= self.cfg.density_refit_every or self.density.count == 0:
                self.density.fit(self.buffer.unsafe_next_states())
                self.unsafe_since_refit = 0

    # ------------------------------------------------------------------
    # phases
    # ------------------------------------------------------------------
    def oversight_phase(self):
        c = self.cfg
        dataset_path = self.out_dir / "oversight_dataset.jsonl"
        if c.oversight_source == "oracle":
            transitions = run_oracle_oversight(
                c, dataset_path, rng=self.explore_rng)
            for tr in transitions:
                self._push(tr)
        elif c.oversight_source == "imported-log":
            if not c.oversight_log:
                raise OversightError("imported-log source requires oversight_log")
            import shutil
            shutil.copyfile(c.oversight_log, dataset_path)
        else:
            raise OversightError(
                "human oversight runs through the 'oversee' service; train from "
                "its exported log with oversight_source = imported-log")
        stats = train_blocker_on_dataset(self.blocker, dataset_path,
                                         steps=c.blocker_train_steps,
                                         batch_size=c.blocker_batch_size)
        log.info("oversight: %s", stats)
        (self.out_dir / "oversight_summary.json").write_text(json.dumps(stats))
        return stats

    def collect_random(self):
        c = self.cfg
        explore = CorrelatedRandomPolicy(self.env.act_dim, self.explore_rng)
        self.env.reset()
        explore.reset()
        for _ in range(c.n0):
            if self.env.needs_reset:
                self.env.reset()
                explore.reset()
            state = self.env.state.copy()
            action = explore()
            res = self.env.step(action)
            tr = Transition(self.env.observation(state), action,
                            self.env.observation(res.next_state), res.reward,
                            res.done, res.catastrophe)
            self._push(tr)

    def pretrain_dynamics(self):
        c = self.cfg
        updates = c.pretrain_updates or c.n0
        for _ in range(updates):
            batch = self.buffer.sample(min(c.batch_size, len(self.buffer)))
            self.dynamics.train(batch)

    # ------------------------------------------------------------------
    @property
    def metric_fields(self) -> list:
        return METRIC_FIELDS + [f"cand_var_h{h}" for h in range(self.cfg.ve_horizon + 1)]

    def _open_outputs(self, resume: bool):
        mode = "a" if resume else "w"
        metrics_path = self.out_dir / "metrics.csv"
        fresh = not (resume and metrics_path.exists() and metrics_path.stat().st_size)
        self._metrics_fh = open(metrics_path, mode)
        if fresh:
            self._metrics_fh.write(",".join(self.metric_fields) + "\n")
        self._intercept_fh = open(self.out_dir / "interceptions.jsonl", mode)
        if self.cfg.export_trajectories:
            self._traj_fh = open(self.out_dir / "trajectories.jsonl", mode)

    def _close_outputs(self):
        for fh in (self._metrics_fh, self._intercept_fh, self._traj_fh):
            if fh:
                fh.close()
        self._metrics_fh = self._intercept_fh = self._traj_fh = None

    def _write_metrics(self, row: dict):
        self._metrics_fh.write(",".join(
            format(row.get(k, ""), ".6g") if isinstance(row.get(k), float)
            else str(row.get(k, "")) for k in self.metric_fields) + "\n")

    # ------------------------------------------------------------------
    def _composite_rewards(self, batch):
        """Per-sample training reward plus logging means, mode-dependent."""
        c = self.cfg
        if c.mode == "steve-unshielded":
            return batch.r, 0.0, 0.0
        if c.mode == "hirl":
            r = batch.r + c.hirl_block_penalty * batch.blocked
            return r, 0.0, 0.0
        probs = self.blocker.catastrophe_prob(batch.s, batch.a, batch.s_next)
        r_i = intrinsic_reward(probs, self.shaping)
        variance = self.dynamics.transition_variance_batch(batch.s, batch.a)
        r_a = active_reward(variance, probs, c.active_learning_coefficient,
                            c.masking_alpha)
        r = composite_reward(batch.r, r_i, r_a, self.exploration.lam)
        return r, float(np.mean(r_i)), float(np.mean(r_a))

    def _train_step(self):
        c = self.cfg
        dyn_batch = self.buffer.sample(min(c.batch_size, max(len(self.buffer), 2)))
        dyn_losses = self.dynamics.train(dyn_batch)
        if c.blocker_continuous_training and c.mode != "steve-unshielded":
            bl_batch = self.buffer.sample(min(c.blocker_batch_size, max(len(self.buffer), 2)))
            self.blocker.train(bl_batch.s, bl_batch.a, bl_batch.s_next, bl_batch.c,
                               batch_size=c.blocker_batch_size)

        batch = self.buffer.sample(min(c.batch_size, max(len(self.buffer), 2)))
        r_comp, intr_mean, act_mean = self._composite_rewards(batch)
        dynamics = self.dynamics if c.ve_horizon > 0 else None
        means, variances, var_steps = self.agent.candidate_targets(
            dynamics, r_comp, batch.s_next, batch.done, c.ve_horizon, c.gamma)
        targets = steve_target(means, variances)
        losses = self.agent.update(batch.s, batch.a, batch.weights, targets)

        sigma_bar = float(var_steps.mean()) if var_steps.size else 0.0
        if c.mode == "mbhi":
            update_lambda(self.exploration, sigma_bar)
        return {
            "critic_loss": losses["critic_loss"], "actor_loss": losses["actor_loss"],
            "intrinsic_mean": intr_mean, "active_mean": act_mean,
            "trans_loss": dyn_losses["transition"], "reward_loss": dyn_losses["reward"],
            "term_loss": dyn_losses["termination"], "sigma_bar": sigma_bar,
            "cand_vars": variances.mean(axis=1),
        }

    def _interaction_step(self):
        c = self.cfg
        if self.env.needs_reset:
            if self.env.episode_steps > 0:
                self.episode += 1
            self.env.reset()
            self.ep_return = 0.0
        state = self.env.state.copy()
        obs = self.env.observation(state)

        p, blocked = 0.0, 0
        if self.uses_shield:
            proposed = self.agent.act(obs, self._noise_scale(), self.noise_rng)
            decision = shield_action(self.dynamics, self.blocker, self.density,
                                     self.agent.policy, obs, self.shield_cfg,
                                     self.cem_rng, proposed_action=proposed)
            action, p, blocked = decision.action, decision.p, decision.blocked
            if blocked:
                self._intercept_fh.write(json.dumps({
                    "state": [float(v) for v in obs], "p": float(p), "blocked": 1,
                    "policy_action": [float(v) for v in decision.policy_action],
                    "replacement_action": [float(v) for v in decision.action],
                }) + "\n")
        else:
            action = self.agent.act(obs, self._noise_scale(), self.noise_rng)

        res = self.env.step(action)
        obs_next = self.env.observation(res.next_state)
        tr = Transition(obs, np.asarray(action), obs_next, res.reward, res.done,
                        res.catastrophe, blocked)
        self._push(tr)
        if self._traj_fh:
            self._traj_fh.write(json.dumps(tr.to_json_dict()) + "\n")

        self.ep_return += res.reward
        self.catastrophes_cum += res.catastrophe
        self.blocked_cum += blocked
        ep_return_out = ""
        if res.done or self.env.truncated:
            ep_return_out = self.ep_return
            self.episode_returns.append((self.step, self.ep_return))
        return {
            "r_env": res.reward, "ep_return": ep_return_out, "p": float(p),
            "blocked": blocked, "catastrophe": res.catastrophe,
        }

    # ------------------------------------------------------------------
    def run(self, resume_from=None):
        start = time.time()
        resume = resume_from is not None
        if resume:
            self.load(resume_from)
        else:
            if self.uses_shield:
                self.oversight_phase()
            self.collect_random()
            self.pretrain_dynamics()
            # the collection episode does not count toward RL bookkeeping
            self.env.done = True
            self.env.episode_steps = 0
        self._open_outputs(resume)
        try:
            while self.step < self.cfg.total_steps:
                self.step += 1
                step_info = self._interaction_step()
                train_info = self._train_step()
                row = {
                    "step": self.step, "episode": self.episode,
                    "lam": self.exploration.lam,
                    "catastrophes_cum": self.catastrophes_cum,
                    "blocked_cum": self.blocked_cum,
                    **step_info, **{k: v for k, v in train_info.items() if k != "cand_vars"},
                }
                for h, v in enumerate(train_info["cand_vars"]):
                    row[f"cand_var_h{h}"] = float(v)
                self._write_metrics(row)
                if (self.cfg.checkpoint_every and
                        self.step % self.cfg.checkpoint_every == 0 and
                        self.step < self.cfg.total_steps):
                    self.save(self.out_dir / "checkpoints" / f"step_{self.step}")
        except Exception:
            self.save(self.out_dir / "checkpoints" / "halted")
            log.exception("run halted at step %d; checkpoint written", self.step)
            raise
        finally:
            self._close_outputs()
        self.save(self.out_dir / "checkpoints" / "final")
        summary = {
            "steps": self.step, "episodes": self.episode,
            "catastrophes": self.catastrophes_cum, "blocked": self.blocked_cum,
            "wall_seconds": time.time() - start,
            "mean_return_last_50_episodes": float(np.mean(
                [r for _, r in self.episode_returns[-50:]])) if self.episode_returns else None,
        }
        (self.out_dir / "summary.json").write_text(json.dumps(summary, indent=1))
        return summary

    # ------------------------------------------------------------------
    # checkpointing
    # ------------------------------------------------------------------
    def _net_entries(self) -> dict:
        entries = {}

        def add_head(prefix, head):
            for j, net in enumerate(head.nets):
                entries[f"{prefix}.{j}"] = net
            entries[f"{prefix}.adam.m"] = head.opt.m
            entries[f"{prefix}.adam.v"] = head.opt.v

        add_head("dyn.transition", self.dynamics.transition)
        add_head("dyn.reward", self.dynamics.reward)
        add_head("dyn.term", self.dynamics.term)
        add_head("blocker", self.blocker)
        entries["policy"] = self.agent.policy
        entries["policy.adam.m"] = self.agent.policy_opt.m
        entries["policy.adam.v"] = self.agent.policy_opt.v
        entries["policy_target"] = self.agent.policy_target
        entries["critic.adam.m"] = self.agent.q_opt.m
        entries["critic.adam.v"] = self.agent.q_opt.v
        for cidx, net in enumerate(self.agent.critics):
            entries[f"critic.{cidx}"] = net
            entries[f"critic_target.{cidx}"] = self.agent.critic_targets[cidx]
        return entries

    def _adam_states(self) -> dict:
        out = {}
        for prefix, opt in (("dyn.transition", self.dynamics.transition.opt),
                            ("dyn.reward", self.dynamics.reward.opt),
                            ("dyn.term", self.dynamics.term.opt),
                            ("blocker", self.blocker.opt),
                            ("critic", self.agent.q_opt),
                            ("policy", self.agent.policy_opt)):
            out[prefix] = {"step": opt.step, "lr": opt.lr}
        return out

    def save(self, ckpt_dir):
        manifest = {
            "version": 1,
            "env": self.cfg.env,
            "mode": self.cfg.mode,
            "step": self.step,
            "episode": self.episode,
            "ep_return": self.ep_return,
            "catastrophes_cum": self.catastrophes_cum,
            "blocked_cum": self.blocked_cum,
            "unsafe_since_refit": self.unsafe_since_refit,
            "episode_returns": self.episode_returns,
            "config": self.cfg.to_dict(),
            "norm_obs": self.norm_obs.state_dict(),
            "norm_act": self.norm_act.state_dict(),
            "density": self.density.state_dict(),
            "exploration": {"lam": self.exploration.lam,
                            "running_max": self.exploration.running_max,
                            "last_sigma": self.exploration.last_sigma},
            "adam": self._adam_states(),
            "rng": {
                "env": self.env.rng.bit_generator.state,
                "noise": self.noise_rng.bit_generator.state,
                "cem": self.cem_rng.bit_generator.state,
                "explore": self.explore_rng.bit_generator.state,
                "dyn_train": self.dynamics.train_rng.bit_generator.state,
                "blocker": self.blocker.rng.bit_generator.state,
            },
            "env_state": {
                "state": self.env.state_to_dict(self.env.state) if self.env.state else None,
                "done": self.env.done,
                "episode_steps": self.env.episode_steps,
            },
        }
        ckpt.save_checkpoint(ckpt_dir, manifest, self._net_entries(), self.buffer)

    def load(self, ckpt_dir):
        manifest, entries = ckpt.load_checkpoint(ckpt_dir)
        if manifest["env"] != self.cfg.env:
            raise ValueError(
                f"checkpoint is for env {manifest['env']!r}, run config says {self.cfg.env!r}")
        self.step = manifest["step"]
        self.episode = manifest["episode"]
        self.ep_return = manifest["ep_return"]
        self.catastrophes_cum = manifest["catastrophes_cum"]
        self.blocked_cum = manifest["blocked_cum"]
        self.unsafe_since_refit = manifest["unsafe_since_refit"]
        self.episode_returns = [tuple(x) for x in manifest["episode_returns"]]
        self.norm_obs.load_state_dict(manifest["norm_obs"])
        self.norm_act.load_state_dict(manifest["norm_act"])
        self.density.load_state_dict(manifest["density"])
        exp = manifest["exploration"]
        self.exploration.lam = exp["lam"]
        self.exploration.running_max = exp["running_max"]
        self.exploration.last_sigma = exp["last_sigma"]

        def load_head(prefix, head):
            for j, net in enumerate(head.nets):
                net.flat[...] = entries[f"{prefix}.{j}"].flat
            head.opt.m[...] = entries[f"{prefix}.adam.m"]
            head.opt.v[...] = entries[f"{prefix}.adam.v"]
            head.opt.step = manifest["adam"][prefix]["step"]

        load_head("dyn.transition", self.dynamics.transition)
        load_head("dyn.reward", self.dynamics.reward)
        load_head("dyn.term", self.dynamics.term)
        load_head("blocker", self.blocker)
        self.agent.policy.flat[...] = entries["policy"].flat
        self.agent.policy_opt.m[...] = entries["policy.adam.m"]
        self.agent.policy_opt.v[...] = entries["policy.adam.v"]
        self.agent.policy_opt.step = manifest["adam"]["policy"]["step"]
        self.agent.policy_target.flat[...] = entries["policy_target"].flat
        self.agent.q_opt.m[...] = entries["critic.adam.m"]
        self.agent.q_opt.v[...] = entries["critic.adam.v"]
        self.agent.q_opt.step = manifest["adam"]["critic"]["step"]
        for cidx, net in enumerate(self.agent.critics):
            net.flat[...] = entries[f"critic.{cidx}"].flat
            self.agent.critic_targets[cidx].flat[...] = entries[f"critic_target.{cidx}"].flat

        self.buffer.load_jsonl(Path(ckpt_dir) / "buffer.jsonl", manifest["buffer"])
        rng = manifest["rng"]
        self.env.rng.bit_generator.state = rng["env"]
        self.noise_rng.bit_generator.state = rng["noise"]
        self.cem_rng.bit_generator.state = rng["cem"]
        self.explore_rng.bit_generator.state = rng["explore"]
        self.dynamics.train_rng.bit_generator.state = rng["dyn_train"]
        self.blocker.rng.bit_generator.state = rng["blocker"]
        env_state = manifest["env_state"]
        if env_state["state"] is not None:
            self.env.state = self.env.state_from_dict(env_state["state"])
        self.env.done = env_state["done"]
        self.env.episode_steps = env_state["episode_steps"]
        return manifest


def run_training(config: RunConfig, out_dir, resume_from=None) -> dict:
    """Build a TrainingRun, execute it, return the summary dict."""
    return TrainingRun(config, out_dir).run(resume_from=resume_from)
