from .base import StepResult, Transition
from .puckworld import ACCEL_HIGH, ACCEL_LOW, MAX_SPEED, PuckState, PuckWorld
from .reacher import Reacher, ReacherState, wrap_angle

ENV_IDS = ("puckworld-l", "puckworld-h", "reacher")


def make_env(env_id: str, seed: int = 0, near_obstacle_prob: float = 0.3, **kw):
    if env_id == "puckworld-l":
        return PuckWorld(accel=ACCEL_LOW, seed=seed, near_obstacle_prob=near_obstacle_prob, **kw)
    if env_id == "puckworld-h":
        return PuckWorld(accel=ACCEL_HIGH, seed=seed, near_obstacle_prob=near_obstacle_prob, **kw)
    if env_id == "reacher":
        return Reacher(seed=seed, near_obstacle_prob=near_obstacle_prob, **kw)
    raise ValueError(f"unknown environment id {env_id!r}; known: {ENV_IDS}")


__all__ = [
    "StepResult", "Transition", "PuckWorld", "PuckState", "Reacher", "ReacherState",
    "MAX_SPEED", "ACCEL_LOW", "ACCEL_HIGH", "wrap_angle", "make_env", "ENV_IDS",
]
