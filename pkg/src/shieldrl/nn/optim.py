"""Adam optimizer over packed parameter vectors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import kernels


@dataclass
class AdamState:
    """First/second moment accumulators plus hyperparameters for one net."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: np.ndarray, lr: float = 3e-4, **kw) -> "AdamState":
        return cls(m=np.zeros_like(params), v=np.zeros_like(params), lr=lr, **kw)

    def state_dict(self) -> dict:
        return {
            "m": self.m.tolist(), "v": self.v.tolist(), "step": self.step,
            "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
        }

    def load_state_dict(self, d: dict):
        self.m[...] = np.asarray(d["m"], dtype=np.float64)
        self.v[...] = np.asarray(d["v"], dtype=np.float64)
        self.step = int(d["step"])
        self.lr = float(d["lr"])
        self.beta1 = float(d["beta1"])
        self.beta2 = float(d["beta2"])
        self.eps = float(d["eps"])


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState):
    """Standard bias-corrected Adam update, applied in place.

    Returns (params, state) so the functional call style also works.
    """
    if params.shape != grads.shape:
        raise ValueError(
            f"gradient shape {grads.shape} does not match parameter shape {params.shape}"
        )
    if state.m.shape != params.shape:
        raise ValueError(
            f"optimizer moment shape {state.m.shape} does not match parameters {params.shape}"
        )
    state.step += 1
    kernels.adam_update(params, grads, state.m, state.v,
                        state.step, state.lr, state.beta1, state.beta2, state.eps)
    return params, state
