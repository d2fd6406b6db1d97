"""Ensemble catastrophe predictor imitating the overseer's blocking decisions.

Maps (s, a, s') to a catastrophe probability via the mean of independently
initialized sigmoid MLPs; the member variance is the uncertainty signal.
Training balances classes by oversampling positives, which are rare.
"""

from __future__ import annotations

import json
import logging

import numpy as np

from . import kernels
from .dynamics import NanLossError
from .nn import AdamState, Mlp, adam_step, param_count
from .replay import RunningNormalizer

log = logging.getLogger(__name__)


class BlockerEnsemble:
    def __init__(self, obs_dim: int, act_dim: int, normalizer_obs: RunningNormalizer,
                 normalizer_act: RunningNormalizer, n_members: int = 4,
                 hidden=(64, 64), lr: float = 3e-4, seed: int = 0):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.norm_obs = normalizer_obs
        self.norm_act = normalizer_act
        layer_sizes = [2 * obs_dim + act_dim, *hidden, 1]
        p = param_count(layer_sizes)
        self.stack = np.zeros((n_members, p))
        self.nets = [
            Mlp.create(layer_sizes, out_act="sigmoid", seed=seed * 1000 + 500 + j,
                       flat=self.stack[j])
            for j in range(n_members)
        ]
        self.opt = AdamState.for_params(self.stack, lr=lr)
        self.grad = np.zeros_like(self.stack)
        self.sizes = self.nets[0].sizes
        self.acts = self.nets[0].acts
        self.rng = np.random.default_rng(seed * 1000 + 600)

    def __len__(self):
        return len(self.nets)

    # ------------------------------------------------------------------
    def _inputs(self, s, a, s_next) -> np.ndarray:
        sn = self.norm_obs.normalize(np.atleast_2d(s))
        an = self.norm_act.normalize(np.atleast_2d(a))
        s2n = self.norm_obs.normalize(np.atleast_2d(s_next))
        return np.concatenate([sn, an, s2n], axis=1)

    def train(self, s, a, s_next, labels, batch_size: int | None = None) -> list[float]:
        """One class-balanced Adam step per member; returns per-member losses.

        Each member draws its own batch from the provided dataset: half
        positives (oversampled with replacement, they are rare) and half
        negatives.  batch_size defaults to the dataset size.
        """
        labels = np.asarray(labels, dtype=np.float64)
        n = labels.shape[0]
        if n == 0:
            raise ValueError("empty batch")
        bsz = n if batch_size is None else min(batch_size, max(n, 2))
        pos = np.flatnonzero(labels > 0.5)
        neg = np.flatnonzero(labels <= 0.5)
        if len(pos) == 0 or len(neg) == 0:
            log.warning("blocker batch is single-class (%d positives of %d)", len(pos), n)
        x = self._inputs(s, a, s_next)
        losses = []
        for j, net in enumerate(self.nets):
            if len(pos) and len(neg):
                half = bsz // 2
                idx = np.concatenate([
                    self.rng.choice(pos, size=half, replace=True),
                    self.rng.choice(neg, size=bsz - half, replace=True),
                ])
            else:
                idx = self.rng.integers(0, n, size=bsz)
            xb, yb = x[idx], labels[idx, None]
            cache = np.empty(bsz * net.cache_width)
            p = kernels.net_forward_cached(net.flat, net.sizes, net.acts, xb, cache)
            loss = float(np.mean(-(yb * np.log(np.clip(p, 1e-7, None))
                                   + (1.0 - yb) * np.log(np.clip(1.0 - p, 1e-7, None)))))
            if not np.isfinite(loss):
                raise NanLossError(f"non-finite blocker loss {loss}")
            dz = (p - yb) / p.size
            kernels.net_backward(net.flat, net.sizes, net.acts, cache, bsz, dz, 1,
                                 self.grad[j])
            losses.append(loss)
        adam_step(self.stack, self.grad, self.opt)
        return losses

    # ------------------------------------------------------------------
    def member_probs(self, s, a, s_next) -> np.ndarray:
        """(N, B) member probabilities."""
        x = self._inputs(s, a, s_next)
        return kernels.ensemble_forward(self.stack, self.sizes, self.acts, x)[:, :, 0]

    def catastrophe_prob(self, s, a, s_next):
        """Arithmetic mean of member sigmoids; scalar for 1-D inputs."""
        probs = self.member_probs(s, a, s_next).mean(axis=0)
        return float(probs[0]) if np.asarray(s).ndim == 1 else probs

    def disagreement(self, s, a, s_next):
        """Population variance of member probabilities."""
        var = self.member_probs(s, a, s_next).var(axis=0)
        return float(var[0]) if np.asarray(s).ndim == 1 else var

    def accuracy(self, s, a, s_next, labels) -> float:
        pred = self.catastrophe_prob(np.atleast_2d(s), np.atleast_2d(a), np.atleast_2d(s_next))
        return float(np.mean((pred >= 0.5).astype(int) == np.asarray(labels)))


def load_labeled_jsonl(path):
    """Read a labeled-transition JSONL file -> (s, a, s_next, c) arrays."""
    s, a, s2, c = [], [], [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            s.append(row["s"])
            a.append(row["a"])
            s2.append(row["s_next"])
            c.append(row["c"])
    return (np.asarray(s, dtype=np.float64), np.asarray(a, dtype=np.float64),
            np.asarray(s2, dtype=np.float64), np.asarray(c, dtype=np.int64))
