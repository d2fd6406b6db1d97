"""Shared environment records."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class StepResult:
    """Outcome of one environment step; catastrophe always terminates."""

    next_state: object
    reward: float
    done: int
    catastrophe: int

    def __post_init__(self):
        if self.catastrophe and not self.done:
            raise ValueError("catastrophe steps must terminate the episode")


@dataclass
class Transition:
    """One environment step record: the unit of replay and supervised data."""

    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    r: float
    done: int
    c: int
    blocked: int = 0

    def to_json_dict(self) -> dict:
        return {
            "s": [float(v) for v in self.s],
            "a": [float(v) for v in self.a],
            "s_next": [float(v) for v in self.s_next],
            "r": float(self.r),
            "done": int(self.done),
            "c": int(self.c),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Transition":
        return cls(
            s=np.asarray(d["s"], dtype=np.float64),
            a=np.asarray(d["a"], dtype=np.float64),
            s_next=np.asarray(d["s_next"], dtype=np.float64),
            r=float(d["r"]),
            done=int(d["done"]),
            c=int(d["c"]),
            blocked=int(d.get("blocked", 0)),
        )
