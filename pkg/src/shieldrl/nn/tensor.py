"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tape`` records primitive operations in execution order; replaying the
recorded adjoint closures in reverse order is a reverse-topological walk of the
graph.  Leaves that an output does not depend on keep a zero gradient.
"""

from __future__ import annotations

import numpy as np


class Tape:
    """Ordered record of operations, sufficient to replay adjoints."""

    def __init__(self):
        self._nodes: list[tuple[Tensor, object]] = []
        self._watched: list[Tensor] = []

    def __len__(self):
        return len(self._nodes)

    def watch(self, tensor: "Tensor"):
        """Register a leaf whose gradient should accumulate on backward."""
        tensor.grad = np.zeros_like(tensor.data)
        self._watched.append(tensor)
        return tensor

    def _record(self, out: "Tensor", backward_fn):
        self._nodes.append((out, backward_fn))

    def backward(self, output: "Tensor"):
        """Accumulate d(output)/d(leaf) into every watched leaf's .grad."""
        if output.data.size != 1:
            raise ValueError(
                f"backward requires a scalar output, got shape {output.data.shape}"
            )
        for node, _ in self._nodes:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            else:
                node.grad[...] = 0.0
        for leaf in self._watched:
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)
        output.grad = np.ones_like(output.data)
        for out, fn in reversed(self._nodes):
            if fn is not None:
                fn(out.grad)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape` to undo numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Dense float64 array plus an adjoint slot.

    Operations take an explicit tape; passing ``tape=None`` evaluates without
    recording.  Value count always equals the product of the shape.
    """

    __slots__ = ("data", "grad", "tape")

    def __init__(self, data, tape: Tape | None = None, watch: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.tape = tape
        if tape is not None and watch:
            tape.watch(self)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, tape={self.tape is not None})"

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += _unbroadcast(g, self.data.shape)

    def _wrap(self, data) -> "Tensor":
        return Tensor(data, tape=self.tape)

    @staticmethod
    def _coerce(other, tape) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=np.float64), tape=tape)

    # ------------------------------------------------------------------
    # primitive ops
    # ------------------------------------------------------------------
    def __add__(self, other):
        other = Tensor._coerce(other, self.tape)
        out = self._wrap(self.data + other.data)
        if self.tape is not None:
            def bw(g, a=self, b=other):
                a._accum(g)
                b._accum(g)
            self.tape._record(out, bw)
        return out

    __radd__ = __add__

    def __neg__(self):
        out = self._wrap(-self.data)
        if self.tape is not None:
            def bw(g, a=self):
                a._accum(-g)
            self.tape._record(out, bw)
        return out

    def __sub__(self, other):
        other = Tensor._coerce(other, self.tape)
        out = self._wrap(self.data - other.data)
        if self.tape is not None:
            def bw(g, a=self, b=other):
                a._accum(g)
                b._accum(-g)
            self.tape._record(out, bw)
        return out

    def __rsub__(self, other):
        return Tensor._coerce(other, self.tape).__sub__(self)

    def __mul__(self, other):
        other = Tensor._coerce(other, self.tape)
        out = self._wrap(self.data * other.data)
        if self.tape is not None:
            def bw(g, a=self, b=other):
                a._accum(g * b.data)
                b._accum(g * a.data)
            self.tape._record(out, bw)
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._coerce(other, self.tape)
        out = self._wrap(self.data / other.data)
        if self.tape is not None:
            def bw(g, a=self, b=other):
                a._accum(g / b.data)
                b._accum(-g * a.data / (b.data * b.data))
            self.tape._record(out, bw)
        return out

    def __pow__(self, exponent: float):
        out = self._wrap(self.data ** exponent)
        if self.tape is not None:
            def bw(g, a=self, e=exponent):
                a._accum(g * e * a.data ** (e - 1.0))
            self.tape._record(out, bw)
        return out

    def matmul(self, other: "Tensor") -> "Tensor":
        other = Tensor._coerce(other, self.tape)
        out = self._wrap(self.data @ other.data)
        if self.tape is not None:
            def bw(g, a=self, b=other):
                a._accum(g @ b.data.T)
                b._accum(a.data.T @ g)
            self.tape._record(out, bw)
        return out

    __matmul__ = matmul

    def relu(self) -> "Tensor":
        out = self._wrap(np.maximum(self.data, 0.0))
        if self.tape is not None:
            def bw(g, a=self, o=out):
                a._accum(np.where(o.data > 0.0, g, 0.0))
            self.tape._record(out, bw)
        return out

    def tanh(self) -> "Tensor":
        out = self._wrap(np.tanh(self.data))
        if self.tape is not None:
            def bw(g, a=self, o=out):
                a._accum(g * (1.0 - o.data * o.data))
            self.tape._record(out, bw)
        return out

    def sigmoid(self) -> "Tensor":
        out = self._wrap(1.0 / (1.0 + np.exp(-self.data)))
        if self.tape is not None:
            def bw(g, a=self, o=out):
                a._accum(g * o.data * (1.0 - o.data))
            self.tape._record(out, bw)
        return out

    def log(self) -> "Tensor":
        out = self._wrap(np.log(self.data))
        if self.tape is not None:
            def bw(g, a=self):
                a._accum(g / a.data)
            self.tape._record(out, bw)
        return out

    def clip(self, lo: float, hi: float) -> "Tensor":
        out = self._wrap(np.clip(self.data, lo, hi))
        if self.tape is not None:
            def bw(g, a=self, lo=lo, hi=hi):
                inside = (a.data > lo) & (a.data < hi)
                a._accum(np.where(inside, g, 0.0))
            self.tape._record(out, bw)
        return out

    def sum(self) -> "Tensor":
        out = self._wrap(np.sum(self.data))
        if self.tape is not None:
            def bw(g, a=self):
                a._accum(np.broadcast_to(g, a.data.shape))
            self.tape._record(out, bw)
        return out

    def mean(self) -> "Tensor":
        n = self.data.size
        out = self._wrap(np.mean(self.data))
        if self.tape is not None:
            def bw(g, a=self, n=n):
                a._accum(np.broadcast_to(g / n, a.data.shape))
            self.tape._record(out, bw)
        return out

    def slice_cols(self, start: int, stop: int) -> "Tensor":
        out = self._wrap(self.data[:, start:stop])
        if self.tape is not None:
            def bw(g, a=self, s=start, e=stop):
                full = np.zeros_like(a.data)
                full[:, s:e] = g
                a._accum(full)
            self.tape._record(out, bw)
        return out


def concat_cols(tensors: list[Tensor]) -> Tensor:
    """Column-wise concatenation of 2-D tensors on a shared tape."""
    tape = tensors[0].tape
    out = Tensor(np.concatenate([t.data for t in tensors], axis=1), tape=tape)
    if tape is not None:
        widths = [t.data.shape[1] for t in tensors]

        def bw(g, parts=tensors, widths=widths):
            off = 0
            for t, w in zip(parts, widths):
                t._accum(g[:, off:off + w])
                off += w
        tape._record(out, bw)
    return out


def backward(tape: Tape, output: Tensor) -> None:
    """Replay the tape's adjoints from a scalar output (see Tape.backward)."""
    tape.backward(output)
