"""Run configuration: every named experiment scalar plus module defaults.

Config files are flat ``key = value`` text; keys are exactly the dataclass
field names (the experiment table's names in snake_case plus module knobs)
and unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

MODES = ("mbhi", "hirl", "steve-unshielded")
OVERSIGHT_SOURCES = ("oracle", "human", "imported-log")

# per-environment experiment defaults
ENV_DEFAULTS = {
    "puckworld-l": dict(safety_detection_length=10, mpc_horizon=10, safety_weight=1.0,
                        active_learning_coefficient=5e4, safe_threshold=0.96,
                        intrinsic_reward_bound=0.92, scaling_factor_cl=1.0,
                        scaling_factor_ch=100.0),
    "puckworld-h": dict(safety_detection_length=1, mpc_horizon=10, safety_weight=1.0,
                        active_learning_coefficient=10.0, safe_threshold=0.96,
                        intrinsic_reward_bound=0.92, scaling_factor_cl=1.0,
                        scaling_factor_ch=100.0),
    "reacher": dict(safety_detection_length=8, mpc_horizon=10, safety_weight=1.0,
                    active_learning_coefficient=1e3, safe_threshold=0.96,
                    intrinsic_reward_bound=0.92, scaling_factor_cl=1.0,
                    scaling_factor_ch=100.0),
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # run identity
    env: str = "puckworld-l"
    mode: str = "mbhi"
    seed: int = 0
    total_steps: int = 200_000

    # experiment table names (per-environment defaults applied by for_env)
    safety_detection_length: int = 10
    mpc_horizon: int = 10
    safety_weight: float = 1.0
    active_learning_coefficient: float = 5e4
    safe_threshold: float = 0.96
    intrinsic_reward_bound: float = 0.92
    scaling_factor_cl: float = 1.0
    scaling_factor_ch: float = 100.0

    # data collection
    n0: int = 2000
    pretrain_updates: int = 10_000     # 0: pretrain n0 times (the strict coupling)
    oversight_samples: int = 30_000
    oversight_source: str = "oracle"
    oversight_log: str = ""
    oversight_max_episode_steps: int = 60
    blocker_train_steps: int = 4000
    blocker_batch_size: int = 256
    near_obstacle_prob: float = 0.3
    max_episode_steps: int = 300

    # learner
    gamma: float = 0.99
    tau: float = 0.005
    lr: float = 3e-4
    batch_size: int = 64
    hidden: tuple = (64, 64)
    transition_hidden: tuple = (64, 64)
    ve_horizon: int = 2
    n_transition: int = 4
    n_reward: int = 4
    n_term: int = 4
    n_blocker: int = 4
    n_critics: int = 4
    noise_start: float = 0.1
    noise_end: float = 0.02
    noise_decay_steps: int = 50_000
    masking_alpha: float = 2.0
    blocker_continuous_training: bool = False
    literal_blocker_sign: bool = False

    # replay
    buffer_capacity: int = 300_000
    unsafe_fraction: float = 0.1
    route_blocked: bool = True

    # planner
    cem_iters: int = 5
    cem_grad_steps: int = 5
    cem_population: int = 128
    cem_elite_frac: float = 0.1
    cem_grad_step_size: float = 0.05
    cem_grad_top_k: int = 32           # 0: gradient-refine the whole population
    cem_init_std: float = 0.5
    cem_std_floor: float = 0.05
    loo_weight: float = 1.0
    loo_ceiling: float = 10.0
    density_refit_every: int = 50
    hirl_block_penalty: float = -100.0

    # bookkeeping
    checkpoint_every: int = 0          # 0: final checkpoint only
    export_trajectories: bool = False
    fidelity: bool = False             # paper-scale budgets and network sizes

    def __post_init__(self):
        if self.env not in ENV_DEFAULTS:
            raise ConfigError(f"unknown env {self.env!r}; known: {sorted(ENV_DEFAULTS)}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; known: {MODES}")
        if self.oversight_source not in OVERSIGHT_SOURCES:
            raise ConfigError(
                f"unknown oversight source {self.oversight_source!r}; known: {OVERSIGHT_SOURCES}")
        self.hidden = tuple(int(v) for v in self.hidden)
        self.transition_hidden = tuple(int(v) for v in self.transition_hidden)
        if self.fidelity:
            # paper-scale budgets: 1e5 random frames, 512 batch, full nets
            self.n0 = 100_000
            self.pretrain_updates = 100_000
            self.oversight_samples = 100_000
            self.batch_size = 512
            self.hidden = (128, 128, 128)
            self.transition_hidden = (512,) * 4
            self.buffer_capacity = 1_000_000
            self.cem_grad_top_k = 0

    # ------------------------------------------------------------------
    @classmethod
    def for_env(cls, env: str, **overrides) -> "RunConfig":
        """Defaults for an environment, with the experiment-table values."""
        if env not in ENV_DEFAULTS:
            raise ConfigError(f"unknown env {env!r}; known: {sorted(ENV_DEFAULTS)}")
        params = dict(ENV_DEFAULTS[env])
        params.update(overrides)
        return cls(env=env, **params)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        d["transition_hidden"] = list(self.transition_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(d)
        for key in ("hidden", "transition_hidden"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)

    # ------------------------------------------------------------------
    def save(self, path):
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        Path(path).write_text("\n".join(lines) + "\n")


def _parse_value(field_obj: dataclasses.Field, raw: str):
    raw = raw.strip()
    typ = field_obj.type
    if typ in ("int", int):
        return int(raw)
    if typ in ("float", float):
        return float(raw)
    if typ in ("bool", bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean from {raw!r}")
    if typ in ("tuple", tuple):
        if not raw:
            return ()
        return tuple(int(v) for v in raw.split(","))
    return raw


def parse_config_file(path) -> RunConfig:
    """Flat key = value text; '#' comments; unknown keys rejected."""
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in fields:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _parse_value(fields[key], raw)

    env = values.get("env", "puckworld-l")
    if env not in ENV_DEFAULTS:
        raise ConfigError(f"unknown env {env!r}; known: {sorted(ENV_DEFAULTS)}")
    merged = dict(ENV_DEFAULTS[env])
    merged.update(values)
    merged["env"] = env
    return RunConfig(**merged)
