"""PuckWorld: a puck accelerating on the unit square with a forbidden rectangle.

The low-acceleration variant needs multiple braking steps to stop from full
speed, the high-acceleration variant can cancel its velocity in a single step.
Entering the central rectangle is a catastrophe and ends the episode with -100;
reaching the target area gives +100; every other step is worth 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .base import StepResult
from .geometry import point_in_rect

MAX_SPEED = 0.025
ACCEL_LOW = 0.002
ACCEL_HIGH = 0.025


@dataclass
class PuckState:
    pos: np.ndarray
    vel: np.ndarray
    target: np.ndarray

    def copy(self) -> "PuckState":
        return PuckState(self.pos.copy(), self.vel.copy(), self.target.copy())

    def to_dict(self) -> dict:
        return {"pos": self.pos.tolist(), "vel": self.vel.tolist(), "target": self.target.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PuckState":
        return cls(np.asarray(d["pos"], float), np.asarray(d["vel"], float), np.asarray(d["target"], float))


class PuckWorld:
    """Deterministic integrator: v += a * a_max, speed clip, p += v, wall clip."""

    obs_dim = 6
    act_dim = 2

    def __init__(self, accel: float = ACCEL_LOW, obstacle_center=(0.5, 0.5),
                 obstacle_size=(0.2, 0.4), target_radius: float = 0.05,
                 max_steps: int = 300, near_obstacle_prob: float = 0.3,
                 near_margin: float = 0.1, seed: int = 0):
        self.accel = float(accel)
        self.max_speed = MAX_SPEED
        self.obstacle_center = np.asarray(obstacle_center, dtype=np.float64)
        self.half_w = obstacle_size[0] / 2.0
        self.half_h = obstacle_size[1] / 2.0
        self.target_radius = float(target_radius)
        self.max_steps = int(max_steps)
        self.near_obstacle_prob = float(near_obstacle_prob)
        self.near_margin = float(near_margin)
        self.rng = np.random.default_rng(seed)
        self.state: PuckState | None = None
        self.done = True
        self.episode_steps = 0

    @property
    def name(self) -> str:
        return "puckworld-h" if self.accel >= ACCEL_HIGH else "puckworld-l"

    # ------------------------------------------------------------------
    def _in_obstacle(self, pos) -> bool:
        return point_in_rect(pos, self.obstacle_center, self.half_w, self.half_h)

    def _sample_outside(self, rng) -> np.ndarray:
        while True:
            p = rng.uniform(0.0, 1.0, 2)
            if not self._in_obstacle(p):
                return p

    def _sample_near_obstacle(self, rng) -> np.ndarray:
        cx, cy = self.obstacle_center
        m = self.near_margin
        while True:
            p = np.array([
                rng.uniform(max(0.0, cx - self.half_w - m), min(1.0, cx + self.half_w + m)),
                rng.uniform(max(0.0, cy - self.half_h - m), min(1.0, cy + self.half_h + m)),
            ])
            if not self._in_obstacle(p):
                return p

    def reset(self, seed: int | None = None) -> PuckState:
        rng = np.random.default_rng(seed) if seed is not None else self.rng
        if rng.random() < self.near_obstacle_prob:
            pos = self._sample_near_obstacle(rng)
            ang = rng.uniform(0.0, 2.0 * np.pi)
            speed = rng.uniform(0.0, self.max_speed)
            vel = speed * np.array([np.cos(ang), np.sin(ang)])
        else:
            pos = self._sample_outside(rng)
            vel = np.zeros(2)
        while True:
            target = self._sample_outside(rng)
            if np.linalg.norm(target - pos) > 2.0 * self.target_radius:
                break
        self.state = PuckState(pos, vel, target)
        self.done = False
        self.episode_steps = 0
        return self.state.copy()

    def set_state(self, state: PuckState):
        """Install an externally constructed state (benchmarks, replays)."""
        self.state = state.copy()
        self.done = False
        self.episode_steps = 0

    # ------------------------------------------------------------------
    def step(self, action) -> StepResult:
        if self.done or self.state is None:
            raise RuntimeError("cannot step a finished episode; call reset()")
        a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        st = self.state
        vel = st.vel + a * self.accel
        speed = float(np.linalg.norm(vel))
        if speed > self.max_speed:
            vel = vel * (self.max_speed / speed)
        pos = st.pos + vel
        for axis in range(2):
            if pos[axis] < 0.0:
                pos[axis] = 0.0
                vel[axis] = 0.0
            elif pos[axis] > 1.0:
                pos[axis] = 1.0
                vel[axis] = 0.0
        nxt = PuckState(pos, vel, st.target.copy())

        catastrophe = int(self._in_obstacle(pos))
        reached = np.linalg.norm(pos - st.target) <= self.target_radius
        if catastrophe:
            reward, done = -100.0, 1
        elif reached:
            reward, done = 100.0, 1
        else:
            reward, done = 0.0, 0
        self.state = nxt
        self.episode_steps += 1
        self.done = bool(done)
        return StepResult(nxt.copy(), reward, done, catastrophe)

    @property
    def truncated(self) -> bool:
        return not self.done and self.episode_steps >= self.max_steps

    @property
    def needs_reset(self) -> bool:
        return self.done or self.truncated

    # ------------------------------------------------------------------
    def oracle_label(self, state: PuckState, next_state: PuckState) -> int:
        """Synthetic overseer: 1 iff the successor state violates geometry."""
        return int(self._in_obstacle(next_state.pos))

    def observation(self, state: PuckState | None = None) -> np.ndarray:
        st = state if state is not None else self.state
        return np.concatenate([st.pos, st.vel, st.target])

    def decode(self, obs) -> PuckState:
        obs = np.asarray(obs, dtype=np.float64)
        return PuckState(obs[0:2].copy(), obs[2:4].copy(), obs[4:6].copy())

    def state_to_dict(self, state: PuckState) -> dict:
        return state.to_dict()

    def state_from_dict(self, d: dict) -> PuckState:
        return PuckState.from_dict(d)
