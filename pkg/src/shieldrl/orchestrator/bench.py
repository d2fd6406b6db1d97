"""Interception benchmark: random shooting vs CEM vs gradient-assisted CEM.

Ten start states are placed uniformly around the obstacle with the puck
heading straight at it at full speed; a scripted aggressor keeps accelerating
inward, and the shield must detect and replace its actions in time.  The
optimizer budgets mirror the evaluation protocol: 3200 one-shot uniform
samples, 25 CEM iterations of 128 candidates, or 5 CEM iterations of 128
candidates refined by 5 gradient steps.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from ..blocker import BlockerEnsemble
from ..dynamics import DynamicsEnsemble
from ..envs import MAX_SPEED, PuckState, make_env
from ..exploration import CorrelatedRandomPolicy
from ..replay import RunningNormalizer, WeightedBatch
from ..shield import ShieldConfig, UnsafeDensity, imagine_safety, plan, warm_start_sequence

log = logging.getLogger(__name__)

METHOD_BUDGETS = {
    "random": dict(cem_iters=1, grad_steps=0, population=3200, sample_uniform=True),
    "cem": dict(cem_iters=25, grad_steps=0, population=128),
    "gradcem": dict(cem_iters=5, grad_steps=5, population=128),
}


def collect_bench_data(n: int, seed: int):
    env = make_env("puckworld-l", seed=seed, near_obstacle_prob=0.5, max_steps=60)
    rng = np.random.default_rng(seed + 1)
    explore = CorrelatedRandomPolicy(env.act_dim, rng)
    s, a, s2, r, d, c = [], [], [], [], [], []
    env.reset()
    explore.reset()
    while len(s) < n:
        if env.needs_reset:
            env.reset()
            explore.reset()
        st = env.state.copy()
        act = explore()
        res = env.step(act)
        s.append(env.observation(st))
        a.append(act)
        s2.append(env.observation(res.next_state))
        r.append(res.reward)
        d.append(res.done)
        c.append(res.catastrophe)
    return tuple(np.asarray(v) for v in (s, a, s2, r, d, c))


def build_bench_models(quality: str, seed: int = 0, n_data: int = 30_000,
                       hidden=(64, 64)):
    """Train a dynamics/blocker/density stack for the protocol.

    quality 'converged' trains the dynamics to plateau; 'brief' stops after a
    few hundred updates, as the robustness comparison requires.
    """
    s, a, s2, r, d, c = collect_bench_data(n_data, seed)
    norm_obs, norm_act = RunningNormalizer(6), RunningNormalizer(2)
    norm_obs.update(s[:4000])
    norm_act.update(a[:4000])
    dyn = DynamicsEnsemble(6, 2, norm_obs, norm_act, hidden=hidden,
                           transition_hidden=hidden, seed=seed + 1)
    blocker = BlockerEnsemble(6, 2, norm_obs, norm_act, hidden=hidden, seed=seed + 2)

    rng = np.random.default_rng(seed + 3)
    n_updates = {"converged": 12_000, "brief": 300}[quality]
    bsz = 256
    for _ in range(n_updates):
        idx = rng.integers(0, len(s), bsz)
        batch = WeightedBatch(s[idx], a[idx], s2[idx], r[idx],
                              d[idx].astype(np.int64), c[idx].astype(np.int64),
                              np.zeros(bsz, np.int64), np.ones(bsz))
        dyn.train(batch)
    for _ in range(2500):
        blocker.train(s, a, s2, c, batch_size=256)
    density = UnsafeDensity(6)
    unsafe_states = s2[c == 1]
    if len(unsafe_states):
        density.fit(unsafe_states)
    return dyn, blocker, density


def protocol_start_states(env, distance: float = 0.3, n: int = 10):
    """n points uniformly around the obstacle, moving inward at full speed."""
    center = env.obstacle_center
    starts = []
    for k in range(n):
        ang = 2.0 * np.pi * k / n
        direction = np.array([np.cos(ang), np.sin(ang)])
        # boundary point of the rectangle along this ray
        scale = min(env.half_w / max(abs(direction[0]), 1e-12),
                    env.half_h / max(abs(direction[1]), 1e-12))
        boundary = center + direction * scale
        pos = np.clip(boundary + direction * distance, 0.02, 0.98)
        vel = -direction * MAX_SPEED
        target = np.clip(center - direction * 0.45, 0.05, 0.95)
        starts.append(PuckState(pos, vel, target))
    return starts


def run_interception_protocol(dyn, blocker, density, method: str,
                              seed: int = 0, n_runs: int = 5,
                              detection_steps: int = 10, horizon: int = 10,
                              max_steps: int = 60, start_distance: float = 0.3):
    """Success rate of one optimizer over n_runs x 10 braking scenarios."""
    base = ShieldConfig(detection_steps=detection_steps, horizon=horizon,
                        **METHOD_BUDGETS[method])
    env = make_env("puckworld-l", seed=seed)
    successes, trials = 0, 0
    for run_idx in range(n_runs):
        rng = np.random.default_rng(seed + 1000 * run_idx + 7)
        for start in protocol_start_states(env, distance=start_distance):
            d_vec = env.obstacle_center - start.pos
            d_vec = d_vec / np.linalg.norm(d_vec)

            def aggressor(obs, d_vec=d_vec):
                return np.clip(d_vec * 4.0, -1.0, 1.0)

            env.set_state(start)
            ok = True
            for _ in range(max_steps):
                obs = env.observation()
                p, _ = imagine_safety(dyn, blocker, aggressor, obs, base.detection_steps)
                if p >= base.threshold:
                    warm = warm_start_sequence(dyn, aggressor, obs, base.horizon)
                    action, _ = plan(dyn, blocker, density, obs, base, rng,
                                     warm_seq=warm)
                else:
                    action = aggressor(obs)
                res = env.step(action)
                if res.catastrophe:
                    ok = False
                    break
                if res.done or env.needs_reset:
                    break
            successes += ok
            trials += 1
    return {"method": method, "successes": successes, "trials": trials,
            "success_rate": successes / trials}


def run_benchmark(out_path=None, seed: int = 0, n_runs: int = 5,
                  methods=("random", "cem", "gradcem"),
                  qualities=("converged", "brief")) -> dict:
    results = {}
    for quality in qualities:
        dyn, blocker, density = build_bench_models(quality, seed=seed)
        results[quality] = {}
        for method in methods:
            res = run_interception_protocol(dyn, blocker, density, method,
                                            seed=seed, n_runs=n_runs)
            results[quality][method] = res
            log.info("%s/%s: %.0f%%", quality, method, 100 * res["success_rate"])
    if out_path:
        Path(out_path).write_text(json.dumps(results, indent=1))
    return results
