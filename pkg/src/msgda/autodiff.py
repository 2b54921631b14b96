"""Reverse-mode automatic differentiation over dense rank-2 double tensors.

A :class:`Tape` records every primitive it executes; :meth:`Tape.backward`
replays the record in reverse, accumulating into each tensor's gradient slot.
All values are float64 and shaped (rows, cols); scalars are (1, 1). The only
broadcasting allowed is adding a (1, m) bias row to an (n, m) matrix.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import NumericError


class Tensor:
    """Value plus a same-shaped gradient slot (allocated on first use)."""

    __slots__ = ("value", "_grad")

    def __init__(self, value):
        self.value = np.atleast_2d(np.asarray(value, dtype=np.float64))
        if self.value.ndim != 2:
            raise ValueError(f"tensors are rank <= 2, got shape {self.value.shape}")
        self._grad = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        self._grad = value

    def zero_grad(self):
        if self._grad is not None:
            self._grad[:] = 0.0

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


class Recorded:
    """One executed primitive: its name, input tensors, output, backward rule."""

    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of executed primitives; execution order is topological."""

    def __init__(self, check_numerics: bool = True):
        self._ops: list = []
        self.check_numerics = check_numerics

    # -- plumbing ----------------------------------------------------------

    def _emit(self, op: str, value: np.ndarray, backward, inputs=()) -> Tensor:
        if self.check_numerics and not np.all(np.isfinite(value)):
            raise NumericError(f"{op}: produced non-finite values")
        out = Tensor(value)
        self._ops.append(Recorded(op, inputs, out, backward))
        return out

    def operations(self):
        """The recorded primitives, in execution (topological) order."""
        return list(self._ops)

    def constant(self, value) -> Tensor:
        return Tensor(value)

    def backward(self, loss: Tensor) -> None:
        if loss.shape != (1, 1):
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad[:] = 1.0
        for record in reversed(self._ops):
            if record.backward is not None:
                record.backward(record.output.grad)

    # -- primitives --------------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape[1] != b.shape[0]:
            raise ValueError(f"matmul shapes {a.shape} x {b.shape} incompatible")
        av, bv = a.value, b.value

        def rule(g):
            a.grad += g @ bv.T
            b.grad += av.T @ g

        return self._emit("matmul", av @ bv, rule, (a, b))

    def spmm(self, adj, x: Tensor) -> Tensor:
        """Sparse adjacency (non-differentiable) times dense tensor."""
        if not sp.issparse(adj):
            raise ValueError("spmm expects a scipy sparse matrix")
        if adj.shape[1] != x.shape[0]:
            raise ValueError(f"spmm shapes {adj.shape} x {x.shape} incompatible")
        adj_t = adj.T.tocsr()

        def rule(g):
            x.grad += adj_t @ g

        return self._emit("spmm", adj @ x.value, rule, (x,))

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape == b.shape:
            def rule(g):
                a.grad += g
                b.grad += g
        elif b.shape == (1, a.shape[1]):
            def rule(g):
                a.grad += g
                b.grad += g.sum(axis=0, keepdims=True)
        else:
            raise ValueError(f"add shapes {a.shape} + {b.shape} incompatible")
        return self._emit("add", a.value + b.value, rule, (a, b))

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ValueError(f"sub shapes {a.shape} - {b.shape} incompatible")

        def rule(g):
            a.grad += g
            b.grad -= g

        return self._emit("sub", a.value - b.value, rule, (a, b))

    def scalar_mul(self, a: Tensor, c: float) -> Tensor:
        c = float(c)

        def rule(g):
            a.grad += c * g

        return self._emit("scalar_mul", c * a.value, rule, (a,))

    def hadamard(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ValueError(f"hadamard shapes {a.shape} * {b.shape} incompatible")
        av, bv = a.value, b.value

        def rule(g):
            a.grad += bv * g
            b.grad += av * g

        return self._emit("hadamard", av * bv, rule, (a, b))

    def relu(self, a: Tensor) -> Tensor:
        mask = a.value > 0

        def rule(g):
            a.grad += mask * g

        return self._emit("relu", np.where(mask, a.value, 0.0), rule, (a,))

    def leaky_relu(self, a: Tensor, slope: float = 0.2) -> Tensor:
        scale = np.where(a.value > 0, 1.0, slope)

        def rule(g):
            a.grad += scale * g

        return self._emit("leaky_relu", scale * a.value, rule, (a,))

    def exp(self, a: Tensor) -> Tensor:
        with np.errstate(over="ignore"):
            out_v = np.exp(a.value)

        def rule(g):
            a.grad += out_v * g

        return self._emit("exp", out_v, rule, (a,))

    def log(self, a: Tensor) -> Tensor:
        av = a.value

        def rule(g):
            a.grad += g / av

        with np.errstate(invalid="ignore", divide="ignore"):
            out_v = np.log(av)
        return self._emit("log", out_v, rule, (a,))

    def abs(self, a: Tensor) -> Tensor:
        sign = np.sign(a.value)

        def rule(g):
            a.grad += sign * g

        return self._emit("abs", np.abs(a.value), rule, (a,))

    def sigmoid(self, a: Tensor) -> Tensor:
        out_v = 1.0 / (1.0 + np.exp(-a.value))

        def rule(g):
            a.grad += out_v * (1.0 - out_v) * g

        return self._emit("sigmoid", out_v, rule, (a,))

    def row_softmax(self, a: Tensor) -> Tensor:
        shifted = a.value - a.value.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        out_v = e / e.sum(axis=1, keepdims=True)

        def rule(g):
            inner = (g * out_v).sum(axis=1, keepdims=True)
            a.grad += out_v * (g - inner)

        return self._emit("row_softmax", out_v, rule, (a,))

    def concat_cols(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape[0] != b.shape[0]:
            raise ValueError(f"concat_cols row counts {a.shape} | {b.shape} differ")
        ka = a.shape[1]

        def rule(g):
            a.grad += g[:, :ka]
            b.grad += g[:, ka:]

        return self._emit("concat_cols", np.hstack([a.value, b.value]), rule, (a, b))

    def reduce_mean(self, a: Tensor) -> Tensor:
        size = a.value.size

        def rule(g):
            a.grad += g[0, 0] / size

        return self._emit("reduce_mean", np.array([[a.value.mean()]]), rule, (a,))

    def reduce_sum(self, a: Tensor) -> Tensor:
        def rule(g):
            a.grad += g[0, 0]

        return self._emit("reduce_sum", np.array([[a.value.sum()]]), rule, (a,))

    def gather_rows(self, a: Tensor, index) -> Tensor:
        index = np.asarray(index, dtype=np.intp)
        if index.ndim != 1:
            raise ValueError("gather_rows index must be 1-d")
        if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
            raise ValueError("gather_rows index out of range")

        def rule(g):
            np.add.at(a.grad, index, g)

        return self._emit("gather_rows", a.value[index], rule, (a,))

    def transpose(self, a: Tensor) -> Tensor:
        def rule(g):
            a.grad += g.T

        return self._emit("transpose", a.value.T.copy(), rule, (a,))


def grad_check(fn, inputs, h: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``fn(tape, *tensors)`` must return a scalar tensor. ``inputs`` is a list
    of numpy arrays; each is treated as differentiable.
    """
    arrays = [np.atleast_2d(np.asarray(x, dtype=np.float64)).copy() for x in inputs]

    tape = Tape()
    tensors = [Tensor(x) for x in arrays]
    out = fn(tape, *tensors)
    if out.shape != (1, 1):
        raise ValueError("grad_check requires a scalar-valued function")
    tape.backward(out)
    analytic = [t.grad.copy() for t in tensors]

    def eval_at(xs) -> float:
        t = Tape()
        return float(fn(t, *[Tensor(x) for x in xs]).value[0, 0])

    worst = 0.0
    for k, x in enumerate(arrays):
        for idx in np.ndindex(*x.shape):
            orig = x[idx]
            x[idx] = orig + h
            up = eval_at(arrays)
            x[idx] = orig - h
            down = eval_at(arrays)
            x[idx] = orig
            numeric = (up - down) / (2.0 * h)
            a = analytic[k][idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
