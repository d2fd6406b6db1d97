"""Oversight phase: collect labeled transitions and train the Blocker.

During oversight the -100 catastrophe rewards are masked from what the
learners will ever see, so the collection policy keeps visiting danger; the
exported dataset keeps the raw rewards.  Episodes are short and start near the
obstacle with some probability, both of which concentrate label information.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from ..blocker import BlockerEnsemble, load_labeled_jsonl
from ..envs import Transition, make_env
from ..exploration import CorrelatedRandomPolicy

log = logging.getLogger(__name__)


class OversightError(RuntimeError):
    pass


def oversight_cost(t_human: float, n_all: int) -> float:
    """Total oversight time: per-label cost times number of labeled samples."""
    if t_human < 0 or n_all < 0:
        raise ValueError("oversight cost inputs must be nonnegative")
    return t_human * n_all


def run_oracle_oversight(config, dataset_path, rng: np.random.Generator):
    """Collect config.oversight_samples transitions labeled by the geometry oracle.

    Writes the dataset (raw rewards) to dataset_path and returns the
    transitions with catastrophe rewards masked to 0 for the replay buffer.
    """
    env = make_env(config.env, seed=config.seed + 81,
                   near_obstacle_prob=config.near_obstacle_prob,
                   max_steps=config.oversight_max_episode_steps)
    explore = CorrelatedRandomPolicy(env.act_dim, rng)
    env.reset()
    explore.reset()
    masked: list[Transition] = []
    with open(dataset_path, "w") as fh:
        for _ in range(config.oversight_samples):
            if env.needs_reset:
                env.reset()
                explore.reset()
            state = env.state.copy()
            action = explore()
            res = env.step(action)
            label = env.oracle_label(state, res.next_state)
            tr = Transition(env.observation(state), action,
                            env.observation(res.next_state), res.reward,
                            res.done, label)
            row = tr.to_json_dict()
            row["source"] = "oracle"
            fh.write(json.dumps(row) + "\n")
            masked_r = 0.0 if (label and res.reward < 0) else res.reward
            masked.append(Transition(tr.s, tr.a, tr.s_next, masked_r,
                                     tr.done, label))
    return masked


def replay_imported_log(path) -> list[Transition]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(Transition.from_json_dict(json.loads(line)))
    return out


def train_blocker_on_dataset(blocker: BlockerEnsemble, dataset_path,
                             steps: int, batch_size: int,
                             holdout_fraction: float = 0.1) -> dict:
    """Fit the blocker on a labeled JSONL dataset; refuses single-class data."""
    s, a, s2, c = load_labeled_jsonl(dataset_path)
    n = len(c)
    if n == 0:
        raise OversightError("oversight dataset is empty")
    positives = int(c.sum())
    if positives == 0:
        raise OversightError(
            "oversight dataset contains no catastrophe labels; cannot finalize")
    if positives == n:
        raise OversightError("oversight dataset contains only catastrophe labels")
    # the normalizers may be fresh when training from an imported log
    if blocker.norm_obs.count < 2:
        blocker.norm_obs.update(s)
    if blocker.norm_act.count < 2:
        blocker.norm_act.update(a)
    n_hold = max(int(n * holdout_fraction), 1)
    train_idx = np.arange(n - n_hold)
    hold_idx = np.arange(n - n_hold, n)
    for _ in range(steps):
        blocker.train(s[train_idx], a[train_idx], s2[train_idx], c[train_idx],
                      batch_size=batch_size)
    acc = blocker.accuracy(s[hold_idx], a[hold_idx], s2[hold_idx], c[hold_idx])
    return {"samples": n, "positives": positives,
            "holdout_accuracy": float(acc), "train_steps": steps}
