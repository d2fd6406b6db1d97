"""Split safe/unsafe experience store with importance-weighted sampling.

Transitions route to the unsafe partition when they carry a catastrophe label
(or, optionally, a shield-blocked flag); sampling draws from both partitions in
equal proportions, and each sample carries the importance weight f_P / q_P
(true buffer frequency over sampling probability), max-normalized to 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .envs.base import Transition


@dataclass
class WeightedBatch:
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    r: np.ndarray
    done: np.ndarray
    c: np.ndarray
    blocked: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return self.s.shape[0]


class _Ring:
    """Fixed-capacity ring of transitions stored as parallel arrays."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        self.capacity = int(capacity)
        self.s = np.zeros((capacity, obs_dim))
        self.a = np.zeros((capacity, act_dim))
        self.s_next = np.zeros((capacity, obs_dim))
        self.r = np.zeros(capacity)
        self.done = np.zeros(capacity, dtype=np.int64)
        self.c = np.zeros(capacity, dtype=np.int64)
        self.blocked = np.zeros(capacity, dtype=np.int64)
        self.size = 0
        self.pos = 0

    def push(self, t: Transition):
        i = self.pos
        self.s[i] = t.s
        self.a[i] = t.a
        self.s_next[i] = t.s_next
        self.r[i] = t.r
        self.done[i] = t.done
        self.c[i] = t.c
        self.blocked[i] = t.blocked
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def gather(self, idx: np.ndarray) -> tuple:
        return (self.s[idx], self.a[idx], self.s_next[idx], self.r[idx],
                self.done[idx], self.c[idx], self.blocked[idx])

    def rows(self):
        for i in range(self.size):
            yield {
                "s": self.s[i].tolist(), "a": self.a[i].tolist(),
                "s_next": self.s_next[i].tolist(), "r": float(self.r[i]),
                "done": int(self.done[i]), "c": int(self.c[i]),
                "blocked": int(self.blocked[i]),
            }


class SplitBuffer:
    """Safe + unsafe ring buffers sampled in equal proportions."""

    def __init__(self, obs_dim: int, act_dim: int, capacity: int = 1_000_000,
                 unsafe_fraction: float = 0.1, route_blocked: bool = True,
                 seed: int = 0):
        unsafe_cap = max(1, int(capacity * unsafe_fraction))
        safe_cap = max(1, capacity - unsafe_cap)
        self.safe = _Ring(safe_cap, obs_dim, act_dim)
        self.unsafe = _Ring(unsafe_cap, obs_dim, act_dim)
        self.route_blocked = bool(route_blocked)
        self.rng = np.random.default_rng(seed)
        self.total_pushed = 0

    def __len__(self):
        return self.safe.size + self.unsafe.size

    def is_unsafe(self, t: Transition) -> bool:
        return bool(t.c) or (self.route_blocked and bool(t.blocked))

    def push(self, t: Transition):
        (self.unsafe if self.is_unsafe(t) else self.safe).push(t)
        self.total_pushed += 1

    def sample(self, n: int) -> WeightedBatch:
        if n < 2:
            raise ValueError("batch size must be at least 2")
        total = len(self)
        if total == 0:
            raise ValueError("cannot sample from an empty buffer")
        if self.safe.size and self.unsafe.size:
            n_unsafe = n // 2
            n_safe = n - n_unsafe
        elif self.safe.size:
            n_safe, n_unsafe = n, 0
        else:
            n_safe, n_unsafe = 0, n

        parts = []
        weights = []
        for ring, count in ((self.safe, n_safe), (self.unsafe, n_unsafe)):
            if count == 0:
                continue
            idx = self.rng.integers(0, ring.size, size=count)
            parts.append(ring.gather(idx))
            f_p = ring.size / total
            q_p = count / n
            weights.append(np.full(count, f_p / q_p))
        cols = [np.concatenate([p[k] for p in parts]) for k in range(7)]
        w = np.concatenate(weights)
        w = w / w.max()
        return WeightedBatch(*cols, weights=w)

    # ------------------------------------------------------------------
    def unsafe_next_states(self) -> np.ndarray:
        """Successor observations of the unsafe partition (LOO density data)."""
        return self.unsafe.s_next[:self.unsafe.size].copy()

    def all_rows(self):
        for ring, part in ((self.safe, "safe"), (self.unsafe, "unsafe")):
            for row in ring.rows():
                row["part"] = part
                yield row

    def save_jsonl(self, path):
        with open(path, "w") as fh:
            for row in self.all_rows():
                fh.write(json.dumps(row) + "\n")

    def meta(self) -> dict:
        return {
            "safe_pos": self.safe.pos, "safe_size": self.safe.size,
            "unsafe_pos": self.unsafe.pos, "unsafe_size": self.unsafe.size,
            "total_pushed": self.total_pushed,
            "rng": self.rng.bit_generator.state,
        }

    def load_jsonl(self, path, meta: dict):
        with open(path) as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
        fills = {"safe": 0, "unsafe": 0}
        for row in rows:
            ring = self.safe if row["part"] == "safe" else self.unsafe
            i = fills[row["part"]]
            ring.s[i] = row["s"]
            ring.a[i] = row["a"]
            ring.s_next[i] = row["s_next"]
            ring.r[i] = row["r"]
            ring.done[i] = row["done"]
            ring.c[i] = row["c"]
            ring.blocked[i] = row["blocked"]
            fills[row["part"]] += 1
        self.safe.size = meta["safe_size"]
        self.safe.pos = meta["safe_pos"]
        self.unsafe.size = meta["unsafe_size"]
        self.unsafe.pos = meta["unsafe_pos"]
        self.total_pushed = meta["total_pushed"]
        self.rng.bit_generator.state = meta["rng"]
        if fills["safe"] != self.safe.size or fills["unsafe"] != self.unsafe.size:
            raise ValueError("buffer snapshot row counts do not match metadata")


class RunningNormalizer:
    """Per-dimension running mean/std (Welford) with a std floor."""

    def __init__(self, dim: int, floor: float = 1e-6):
        self.dim = dim
        self.floor = floor
        self.count = 0.0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def update(self, x: np.ndarray):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        for row in x:
            self.count += 1.0
            delta = row - self.mean
            self.mean += delta / self.count
            self.m2 += delta * (row - self.mean)

    @property
    def std(self) -> np.ndarray:
        if self.count < 2:
            return np.ones(self.dim)
        return np.maximum(np.sqrt(self.m2 / self.count), self.floor)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def state_dict(self) -> dict:
        return {"count": self.count, "mean": self.mean.tolist(), "m2": self.m2.tolist()}

    def load_state_dict(self, d: dict):
        self.count = float(d["count"])
        self.mean = np.asarray(d["mean"], dtype=np.float64)
        self.m2 = np.asarray(d["m2"], dtype=np.float64)
