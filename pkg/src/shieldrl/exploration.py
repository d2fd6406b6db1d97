"""Random exploration policies for data collection."""

from __future__ import annotations

import numpy as np


class CorrelatedRandomPolicy:
    """Ornstein-Uhlenbeck-style temporally correlated random actions.

    Sustained headings reach the environments' speed limits, which iid
    per-step noise almost never does, so collected data covers straight
    approaches and near-misses around the obstacles.
    """

    def __init__(self, act_dim: int, rng: np.random.Generator,
                 theta: float = 0.2, sigma: float = 0.4):
        self.act_dim = act_dim
        self.rng = rng
        self.theta = theta
        self.sigma = sigma
        self.action = np.zeros(act_dim)

    def reset(self):
        self.action = self.rng.uniform(-1.0, 1.0, self.act_dim)

    def __call__(self, obs=None) -> np.ndarray:
        self.action = np.clip(
            self.action - self.theta * self.action
            + self.sigma * self.rng.normal(size=self.act_dim), -1.0, 1.0)
        return self.action.copy()
