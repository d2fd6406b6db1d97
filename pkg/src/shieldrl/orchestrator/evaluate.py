"""Greedy policy evaluation from a checkpoint."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..envs import Transition
from ..shield import shield_action
from .config import RunConfig
from .training import TrainingRun


def load_run(ckpt_dir) -> TrainingRun:
    """Rebuild a TrainingRun around a checkpoint's own config."""
    manifest = json.loads((Path(ckpt_dir) / "manifest.json").read_text())
    config = RunConfig.from_dict(manifest["config"])
    run = TrainingRun(config, Path(ckpt_dir) / "_eval_scratch")
    run.load(ckpt_dir)
    return run


def evaluate(ckpt_dir, episodes: int = 20, use_shield: bool | None = None,
             trajectories_path=None, seed: int = 1234) -> dict:
    run = load_run(ckpt_dir)
    env = run.env
    env.rng = np.random.default_rng(seed)
    shielded = run.uses_shield if use_shield is None else use_shield
    cem_rng = np.random.default_rng(seed + 1)

    returns = []
    catastrophes = 0
    blocked_total = 0
    traj_fh = open(trajectories_path, "w") if trajectories_path else None
    try:
        for _ in range(episodes):
            env.reset()
            ep_ret = 0.0
            while not env.needs_reset:
                state = env.state.copy()
                obs = env.observation(state)
                if shielded:
                    decision = shield_action(run.dynamics, run.blocker, run.density,
                                             run.agent.policy, obs, run.shield_cfg,
                                             cem_rng)
                    action = decision.action
                    blocked_total += decision.blocked
                else:
                    action = run.agent.act(obs)
                res = env.step(action)
                ep_ret += res.reward
                catastrophes += res.catastrophe
                if traj_fh:
                    tr = Transition(obs, np.asarray(action),
                                    env.observation(res.next_state), res.reward,
                                    res.done, res.catastrophe)
                    traj_fh.write(json.dumps(tr.to_json_dict()) + "\n")
            returns.append(ep_ret)
    finally:
        if traj_fh:
            traj_fh.close()
    return {
        "episodes": episodes,
        "mean_return": float(np.mean(returns)),
        "std_return": float(np.std(returns)),
        "catastrophes": catastrophes,
        "blocked": blocked_total,
        "returns": returns,
    }
