"""Reverse-mode automatic differentiation over numpy arrays.

A fixed vocabulary of differentiable operations, sufficient for the model in
this package: matmul, broadcasted add/multiply, tanh/relu/sigmoid/log-sigmoid,
softmax and layer norm over the last axis, concat, reductions, dropout,
masked fill, embedding-row gather, and reshape/transpose plumbing.

Ops record onto the innermost active `Tape`; with no active tape they run as
plain forward evaluation. Gradients accumulate additively on fan-out, and the
reverse pass visits operations in exact reverse execution order.

Training arithmetic is float32; gradient checking runs the same graph in
float64 (see `strats.optim.grad_check`).
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteError, ShapeError

# Every forward op validates that its output is finite; NaN/Inf is a bug in
# the caller (bad data or diverged training) and must surface immediately.
FINITE_CHECKS = True

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """A dense array plus participation flag for the differentiable graph.

    `data` is mutated only by the optimizer between steps; ops never write
    into their inputs.
    """

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


def as_tensor(x, dtype=None) -> Tensor:
    """Wrap arrays/scalars as constant (non-differentiable) tensors."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=False, dtype=dtype)


# stack of active tapes, one per thread (tapes are worker-confined)
_TAPES = threading.local()


def _tape_stack() -> list["Tape"]:
    if not hasattr(_TAPES, "stack"):
        _TAPES.stack = []
    return _TAPES.stack


class Tape:
    """Ordered record of executed ops, enough to run the reverse pass.

    Use as a context manager around the forward computation, then call
    `backward(loss)` to get gradients for every tensor on the path.
    """

    def __init__(self):
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _tape_stack().pop()
        assert popped is self, "tapes must nest"

    def record(self, inputs: tuple[Tensor, ...], output: Tensor,
               backward_fn: Callable) -> None:
        self._entries.append((output, inputs, backward_fn))

    def __len__(self) -> int:
        return len(self._entries)

    def op_names(self) -> list[str]:
        return [fn.__qualname__.split(".")[0] for _, _, fn in self._entries]

    def outputs_of(self, op_name: str) -> list[Tensor]:
        """Recorded outputs of one op kind, in execution order (for tests
        and inspection of intermediate quantities such as attention rows)."""
        return [out for out, _, fn in self._entries
                if fn.__qualname__.split(".")[0] == op_name]

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Accumulate d(loss)/d(tensor) for every tensor reachable from loss.

        Tensors not on the path to the loss are absent from the result;
        callers that need explicit zeros fill them in (see
        `ParameterStore.gradients`).
        """
        if loss.data.shape != ():
            raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")
        grads: dict[Tensor, np.ndarray] = {
            loss: np.ones((), dtype=loss.data.dtype)
        }
        for output, inputs, backward_fn in reversed(self._entries):
            g = grads.get(output)
            if g is None:
                continue
            input_grads = backward_fn(g)
            for tensor, ig in zip(inputs, input_grads):
                if ig is None:
                    continue
                acc = grads.get(tensor)
                grads[tensor] = ig if acc is None else acc + ig
        return grads


def _active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _check_finite(out_data: np.ndarray, op: str) -> None:
    # cheap single-pass screen; the sum is non-finite iff the array holds a
    # NaN/Inf or the sum itself overflowed, so confirm before raising
    if np.isfinite(out_data.sum()):
        return
    if not np.all(np.isfinite(out_data)):
        raise NonFiniteError(f"op '{op}' produced non-finite values")


def _make(out_data: np.ndarray, inputs: tuple[Tensor, ...],
          backward_fn: Callable, op: str) -> Tensor:
    if FINITE_CHECKS:
        _check_finite(out_data, op)
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires, dtype=out_data.dtype)
    tape = _active_tape()
    if tape is not None and requires:
        tape.record(inputs, out, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` over the axes numpy broadcast to reach `grad.shape`."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(out, (a, b), bwd, "add")


def subtract(a: Tensor, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(out, (a, b), bwd, "subtract")


def multiply(a: Tensor, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def bwd(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), bwd, "multiply")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = x.data * c

    def bwd(g):
        return (g * c,)

    return _make(out, (x,), bwd, "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy's batched-matmul semantics (operands >= 2-D)."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul operands must be at least 2-D")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data
    need_a, need_b = a.requires_grad, b.requires_grad

    def bwd(g):
        ga = gb = None
        if need_a:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)
        if need_b:
            if b.data.ndim == 2 and a.data.ndim > 2:
                # grad to a broadcast 2-D right operand: fold the batch axes
                # into one GEMM instead of reducing a batched product
                gb = (a.data.reshape(-1, a.data.shape[-1]).T
                      @ g.reshape(-1, g.shape[-1]))
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g,
                                  b.data.shape)
        return ga, gb

    return _make(out, (a, b), bwd, "matmul")


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def bwd(g):
        return (g * (1.0 - out * out),)

    return _make(out, (x,), bwd, "tanh")


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def bwd(g):
        return (g * (x.data > 0),)

    return _make(out, (x,), bwd, "relu")


def sigmoid(x: Tensor) -> Tensor:
    # stable two-branch evaluation; never exponentiates a large positive arg
    out = np.where(x.data >= 0,
                   1.0 / (1.0 + np.exp(-np.abs(x.data))),
                   np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))))
    out = out.astype(x.data.dtype)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return _make(out, (x,), bwd, "sigmoid")


def log_sigmoid(x: Tensor) -> Tensor:
    """log(sigmoid(x)) = -softplus(-x), computed without overflow."""
    out = np.where(x.data >= 0,
                   -np.log1p(np.exp(-np.abs(x.data))),
                   x.data - np.log1p(np.exp(-np.abs(x.data))))
    out = out.astype(x.data.dtype)

    def bwd(g):
        # d/dx log sigmoid(x) = sigmoid(-x)
        s = np.where(x.data >= 0,
                     np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))),
                     1.0 / (1.0 + np.exp(-np.abs(x.data))))
        return (g * s,)

    return _make(out, (x,), bwd, "log_sigmoid")


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, max-shifted for stability."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (x,), bwd, "softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Layer normalization over the last axis with learnable gain and bias."""
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(f"layer_norm gain/bias must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bwd(g):
        dgain = _unbroadcast(g * xhat, gain.data.shape)
        dbias = _unbroadcast(g, bias.data.shape)
        dxhat = g * gain.data
        mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
        mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
        return dx, dgain, dbias

    return _make(out, (x, gain, bias), bwd, "layer_norm")


# ---------------------------------------------------------------------------
# shape & gather
# ---------------------------------------------------------------------------

def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    tensors = tuple(as_tensor(t) for t in tensors)
    out = np.concatenate([t.data for t in tensors], axis=-1)
    widths = [t.data.shape[-1] for t in tensors]
    splits = np.cumsum(widths)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=-1))

    return _make(out, tensors, bwd, "concat")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = x.data.reshape(shape)

    def bwd(g):
        return (g.reshape(x.data.shape),)

    return _make(out, (x,), bwd, "reshape")


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    out = x.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def bwd(g):
        return (g.transpose(inverse),)

    return _make(out, (x,), bwd, "transpose")


def gather_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Row lookup `table[indices]`; gradient scatters back into the table."""
    indices = np.asarray(indices)
    if indices.min(initial=0) < 0 or indices.max(initial=-1) >= table.data.shape[0]:
        raise ShapeError(
            f"gather index out of range for table with {table.data.shape[0]} rows")
    out = table.data[indices]

    def bwd(g):
        rows, width = table.data.shape
        # bincount-based scatter-add (much faster than np.add.at)
        flat = (indices.reshape(-1, 1) * width + np.arange(width)).ravel()
        dt = np.bincount(flat, weights=g.reshape(-1).astype(np.float64),
                         minlength=rows * width)
        return (dt.reshape(rows, width).astype(table.data.dtype),)

    return _make(out, (table,), bwd, "gather_rows")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def reduce_sum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        ge = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(ge, x.data.shape).copy(),)

    return _make(np.asarray(out), (x,), bwd, "reduce_sum")


def reduce_mean(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else x.data.shape[axis]
    out = x.data.mean(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy() / count,)
        ge = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(ge, x.data.shape).copy() / count,)

    return _make(np.asarray(out), (x,), bwd, "reduce_mean")


# ---------------------------------------------------------------------------
# stochastic / masking
# ---------------------------------------------------------------------------

def dropout(x: Tensor, rate: float, training: bool,
            rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: kept entries scaled by 1/(1-rate); identity at eval."""
    if not 0.0 <= rate < 1.0:
        raise ShapeError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode requires an rng")
    keep = (rng.random(x.data.shape, dtype=np.float32) >= rate)
    factor = keep.astype(x.data.dtype) / (1.0 - rate)
    out = x.data * factor

    def bwd(g):
        return (g * factor,)

    return _make(out, (x,), bwd, "dropout")


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where `mask` is truthy by `value`; gradient is zero there."""
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, np.asarray(value, dtype=x.data.dtype), x.data)

    def bwd(g):
        return (np.where(mask, 0.0, g),)

    return _make(out, (x,), bwd, "masked_fill")
