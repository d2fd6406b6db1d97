"""Two-link torque-controlled reacher with a vertical bar obstacle.

Angles wrap to (-pi, pi]; angular velocity is damped each step and clamped.
Touching the bar with either link is a catastrophe (-100, terminal); bringing
the fingertip inside the target radius pays +100.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import StepResult
from .geometry import point_segment_distance, segments_intersect

ANCHOR = np.array([0.5, 0.5])
LINK_LEN = 0.18
TORQUE_SCALE = 0.05
DAMPING = 0.9
ANG_VEL_MAX = 0.2
BAR_X = 0.68
BAR_Y = (0.38, 0.62)


def wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    out = (theta + np.pi) % (2.0 * np.pi) - np.pi
    if out == -np.pi:
        out = np.pi
    return out


@dataclass
class ReacherState:
    angles: np.ndarray
    avel: np.ndarray
    target: np.ndarray

    def copy(self) -> "ReacherState":
        return ReacherState(self.angles.copy(), self.avel.copy(), self.target.copy())

    def to_dict(self) -> dict:
        return {"angles": self.angles.tolist(), "avel": self.avel.tolist(), "target": self.target.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ReacherState":
        return cls(np.asarray(d["angles"], float), np.asarray(d["avel"], float), np.asarray(d["target"], float))


class Reacher:
    obs_dim = 8
    act_dim = 2

    def __init__(self, target_radius: float = 0.05, max_steps: int = 300,
                 near_obstacle_prob: float = 0.3, seed: int = 0):
        self.target_radius = float(target_radius)
        self.max_steps = int(max_steps)
        self.near_obstacle_prob = float(near_obstacle_prob)
        self.rng = np.random.default_rng(seed)
        self.bar_a = np.array([BAR_X, BAR_Y[0]])
        self.bar_b = np.array([BAR_X, BAR_Y[1]])
        self.state: ReacherState | None = None
        self.done = True
        self.episode_steps = 0

    name = "reacher"

    # ------------------------------------------------------------------
    def joint_positions(self, angles) -> tuple[np.ndarray, np.ndarray]:
        """(elbow, tip) workspace positions."""
        t1, t2 = float(angles[0]), float(angles[1])
        elbow = ANCHOR + LINK_LEN * np.array([np.cos(t1), np.sin(t1)])
        tip = elbow + LINK_LEN * np.array([np.cos(t1 + t2), np.sin(t1 + t2)])
        return elbow, tip

    def _arm_hits_bar(self, angles) -> bool:
        elbow, tip = self.joint_positions(angles)
        return (segments_intersect(ANCHOR, elbow, self.bar_a, self.bar_b)
                or segments_intersect(elbow, tip, self.bar_a, self.bar_b))

    def _sample_target(self, rng) -> np.ndarray:
        while True:
            r = rng.uniform(0.3 * LINK_LEN, 1.9 * LINK_LEN)
            ang = rng.uniform(0.0, 2.0 * np.pi)
            t = ANCHOR + r * np.array([np.cos(ang), np.sin(ang)])
            if point_segment_distance(t, self.bar_a, self.bar_b) > self.target_radius:
                return t

    def reset(self, seed: int | None = None) -> ReacherState:
        rng = np.random.default_rng(seed) if seed is not None else self.rng
        near = rng.random() < self.near_obstacle_prob
        while True:
            if near:
                # aim the arm roughly at the bar so episodes start in danger
                angles = np.array([rng.uniform(-0.6, 0.6), rng.uniform(-0.8, 0.8)])
            else:
                angles = rng.uniform(-np.pi, np.pi, 2)
            if not self._arm_hits_bar(angles):
                break
        avel = rng.uniform(-0.05, 0.05, 2) if near else np.zeros(2)
        target = self._sample_target(rng)
        self.state = ReacherState(angles, avel, target)
        self.done = False
        self.episode_steps = 0
        return self.state.copy()

    def set_state(self, state: ReacherState):
        self.state = state.copy()
        self.done = False
        self.episode_steps = 0

    # ------------------------------------------------------------------
    def step(self, action) -> StepResult:
        if self.done or self.state is None:
            raise RuntimeError("cannot step a finished episode; call reset()")
        a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        st = self.state
        avel = np.clip(st.avel * DAMPING + a * TORQUE_SCALE, -ANG_VEL_MAX, ANG_VEL_MAX)
        angles = np.array([wrap_angle(st.angles[0] + avel[0]),
                           wrap_angle(st.angles[1] + avel[1])])
        nxt = ReacherState(angles, avel, st.target.copy())

        catastrophe = int(self._arm_hits_bar(angles))
        _, tip = self.joint_positions(angles)
        reached = np.linalg.norm(tip - st.target) <= self.target_radius
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
    def oracle_label(self, state: ReacherState, next_state: ReacherState) -> int:
        return int(self._arm_hits_bar(next_state.angles))

    def observation(self, state: ReacherState | None = None) -> np.ndarray:
        st = state if state is not None else self.state
        t1, t2 = st.angles
        return np.array([np.sin(t1), np.cos(t1), np.sin(t2), np.cos(t2),
                         st.avel[0], st.avel[1], st.target[0], st.target[1]])

    def decode(self, obs) -> ReacherState:
        obs = np.asarray(obs, dtype=np.float64)
        angles = np.array([np.arctan2(obs[0], obs[1]), np.arctan2(obs[2], obs[3])])
        return ReacherState(angles, obs[4:6].copy(), obs[6:8].copy())

    def state_to_dict(self, state: ReacherState) -> dict:
        return state.to_dict()

    def state_from_dict(self, d: dict) -> ReacherState:
        return ReacherState.from_dict(d)
