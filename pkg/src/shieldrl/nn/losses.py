"""Scalar training losses, as plain numpy and as tape ops."""

from __future__ import annotations

import numpy as np

from .tensor import Tape, Tensor

# Probability clamp inside the cross-entropy; keeps log() finite.
PROB_EPS = 1e-7


def binary_cross_entropy(pred, label) -> float:
    """-[y ln p + (1-y) ln(1-p)], averaged over elements.

    Predictions must already be probabilities; values outside [0, 1] are
    rejected, values inside are clamped to (PROB_EPS, 1 - PROB_EPS).
    """
    p = np.asarray(pred, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("predictions must lie in [0, 1] before clamping")
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def mse(pred, target) -> float:
    """Mean squared elementwise difference."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs target {t.shape}")
    d = p - t
    return float(np.mean(d * d))


def binary_cross_entropy_tape(tape: Tape, pred: Tensor, label) -> Tensor:
    y = np.asarray(label, dtype=np.float64)
    p = pred.clip(PROB_EPS, 1.0 - PROB_EPS)
    term = Tensor(y, tape=tape) * p.log() + Tensor(1.0 - y, tape=tape) * (1.0 - p).log()
    return -term.mean()


def mse_tape(tape: Tape, pred: Tensor, target) -> Tensor:
    t = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=np.float64), tape=tape)
    if pred.data.shape != t.data.shape:
        raise ValueError(f"shape mismatch: pred {pred.data.shape} vs target {t.data.shape}")
    d = pred - t
    return (d * d).mean()
