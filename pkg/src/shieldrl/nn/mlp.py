"""Fully connected networks over packed flat parameter vectors.

Parameters live in a single float64 vector (per layer: row-major W then b) so
the same storage feeds the fast kernels, the tape autodiff, the Adam state and
serialization without copies.
"""

from __future__ import annotations

import numpy as np

from .. import kernels
from .tensor import Tape, Tensor, concat_cols

_ACT_CODES = {
    "linear": kernels.ACT_LINEAR,
    "relu": kernels.ACT_RELU,
    "tanh": kernels.ACT_TANH,
    "sigmoid": kernels.ACT_SIGMOID,
}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


def param_count(layer_sizes) -> int:
    sizes = np.asarray(layer_sizes, dtype=np.int64)
    return int(kernels.net_param_count(sizes))


class Mlp:
    """A multilayer perceptron with packed parameters.

    Forward passes are deterministic functions of (parameters, input); the
    hidden activation applies to every layer but the last, which uses
    ``out_act``.
    """

    def __init__(self, layer_sizes, hidden_act="relu", out_act="linear",
                 flat: np.ndarray | None = None):
        self.sizes = np.asarray(layer_sizes, dtype=np.int64)
        if self.sizes.ndim != 1 or self.sizes.shape[0] < 2:
            raise ValueError(f"need at least [in, out] layer sizes, got {layer_sizes}")
        n_layers = self.sizes.shape[0] - 1
        codes = [_ACT_CODES[hidden_act]] * (n_layers - 1) + [_ACT_CODES[out_act]]
        self.acts = np.asarray(codes, dtype=np.int64)
        n = param_count(self.sizes)
        if flat is None:
            flat = np.zeros(n, dtype=np.float64)
        if flat.shape != (n,):
            raise ValueError(f"flat buffer has shape {flat.shape}, expected ({n},)")
        self.flat = flat

    # ------------------------------------------------------------------
    @classmethod
    def create(cls, layer_sizes, hidden_act="relu", out_act="linear", seed=0,
               flat: np.ndarray | None = None) -> "Mlp":
        """Build and initialize with uniform fan-in scaling, seeded."""
        net = cls(layer_sizes, hidden_act, out_act, flat=flat)
        net.initialize(seed)
        return net

    def initialize(self, seed: int):
        rng = np.random.default_rng(seed)
        off = 0
        for li in range(self.n_layers):
            n_in = int(self.sizes[li])
            n_out = int(self.sizes[li + 1])
            bound = 1.0 / np.sqrt(n_in)
            self.flat[off:off + n_in * n_out] = rng.uniform(-bound, bound, n_in * n_out)
            off += n_in * n_out
            self.flat[off:off + n_out] = rng.uniform(-bound, bound, n_out)
            off += n_out

    # ------------------------------------------------------------------
    @property
    def n_layers(self) -> int:
        return self.sizes.shape[0] - 1

    @property
    def cache_width(self) -> int:
        """Per-row scratch width for kernels.net_forward_cached."""
        return int(kernels.net_cache_width(self.sizes))

    @property
    def in_dim(self) -> int:
        return int(self.sizes[0])

    @property
    def out_dim(self) -> int:
        return int(self.sizes[-1])

    def layer(self, li: int):
        """(W, b) views into the flat vector for layer li."""
        off = 0
        for i in range(li):
            off += int(self.sizes[i]) * int(self.sizes[i + 1]) + int(self.sizes[i + 1])
        n_in = int(self.sizes[li])
        n_out = int(self.sizes[li + 1])
        w = self.flat[off:off + n_in * n_out].reshape(n_in, n_out)
        b = self.flat[off + n_in * n_out:off + n_in * n_out + n_out]
        return w, b

    def set_layer(self, li: int, w: np.ndarray, b: np.ndarray):
        wv, bv = self.layer(li)
        wv[...] = w
        bv[...] = b

    def copy(self) -> "Mlp":
        clone = Mlp(self.sizes.copy(), flat=self.flat.copy())
        clone.acts = self.acts.copy()
        return clone

    # ------------------------------------------------------------------
    def forward(self, x: np.ndarray) -> np.ndarray:
        """Fast (non-recorded) forward pass; accepts (B, in) or (in,)."""
        arr = np.asarray(x, dtype=np.float64)
        squeeze = arr.ndim == 1
        if squeeze:
            arr = arr[None, :]
        if arr.shape[1] != self.in_dim:
            raise ValueError(
                f"input width {arr.shape[1]} does not match network input width {self.in_dim}"
            )
        out = kernels.net_forward(self.flat, self.sizes, self.acts, np.ascontiguousarray(arr))
        return out[0] if squeeze else out

    __call__ = forward

    def forward_tape(self, tape: Tape, x, params: list[Tensor] | None = None) -> Tensor:
        """Forward pass recorded on `tape`.

        `params`, when given, is the list returned by `param_tensors(tape)`;
        otherwise parameters are treated as constants and only the input is
        differentiated through.
        """
        h = x if isinstance(x, Tensor) else Tensor(np.atleast_2d(np.asarray(x, dtype=np.float64)), tape=tape)
        if h.data.shape[1] != self.in_dim:
            raise ValueError(
                f"input width {h.data.shape[1]} does not match network input width {self.in_dim}"
            )
        for li in range(self.n_layers):
            if params is not None:
                w, b = params[2 * li], params[2 * li + 1]
            else:
                wv, bv = self.layer(li)
                w, b = Tensor(wv, tape=tape), Tensor(bv, tape=tape)
            z = h @ w + b
            code = int(self.acts[li])
            if code == kernels.ACT_RELU:
                z = z.relu()
            elif code == kernels.ACT_TANH:
                z = z.tanh()
            elif code == kernels.ACT_SIGMOID:
                z = z.sigmoid()
            h = z
        return h

    def param_tensors(self, tape: Tape) -> list[Tensor]:
        """Watched tensors viewing each layer's W and b."""
        out = []
        for li in range(self.n_layers):
            w, b = self.layer(li)
            out.append(Tensor(w, tape=tape, watch=True))
            out.append(Tensor(b, tape=tape, watch=True))
        return out

    @staticmethod
    def pack_grads(params: list[Tensor]) -> np.ndarray:
        """Pack per-layer gradient tensors back into flat layout."""
        return np.concatenate([p.grad.ravel() for p in params])


def build_input(*parts: np.ndarray) -> np.ndarray:
    """Concatenate 1-D or 2-D pieces column-wise into a 2-D batch."""
    arrs = [np.atleast_2d(np.asarray(p, dtype=np.float64)) for p in parts]
    return np.concatenate(arrs, axis=1)


def build_input_tape(tape: Tape, *parts) -> Tensor:
    tensors = [p if isinstance(p, Tensor) else Tensor(np.atleast_2d(np.asarray(p, dtype=np.float64)), tape=tape)
               for p in parts]
    return concat_cols(tensors)
