"""
Differentiable ops over ``Tensor``.

Shapes are explicit: the only implicit expansion is bias-add, where a length-n
vector (or a 1×n row) is added to every row of an m×n matrix.
"""

from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..errors import LabelRangeError, ShapeError
from .tensor import VJP, Node, Tensor, grad_enabled


def _result(data: np.ndarray, inputs: Tuple[Tensor, ...], vjp: VJP, op: str) -> Tensor:
    requires = grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor.wrap(data, requires_grad=requires)
    if requires:
        out._node = Node(op, inputs, vjp)
    return out


def _is_bias(a: Tensor, b: Tensor) -> bool:
    if a.ndim != 2:
        return False
    n = a.shape[1]
    return b.shape == (n,) or b.shape == (1, n)


def _reduce_like(g: np.ndarray, like: Tensor) -> np.ndarray:
    if g.shape == like.shape:
        return g
    return g.sum(axis=0).reshape(like.shape)


def _check_elementwise(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and not _is_bias(a, b):
        raise ShapeError(f"{op}: operand shapes differ", op=op, left=a.shape, right=b.shape)


# Elementwise arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise("add", a, b)

    def vjp(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return g, _reduce_like(g, b)

    return _result(a.data + b.data, (a, b), vjp, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise("sub", a, b)

    def vjp(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return g, -_reduce_like(g, b)

    return _result(a.data - b.data, (a, b), vjp, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise("mul", a, b)
    a_data, b_data = a.data, b.data

    def vjp(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return g * b_data, _reduce_like(g * a_data, b)

    return _result(a_data * b_data, (a, b), vjp, "mul")


def scale(a: Tensor, factor: float) -> Tensor:
    def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
        return (g * factor,)

    return _result(a.data * a.data.dtype.type(factor), (a,), vjp, "scale")


def add_scalars(terms: Sequence[Tensor]) -> Tensor:
    """Sum of scalar tensors"""
    if not terms:
        raise ShapeError("add_scalars: no terms", op="add_scalars")
    total = terms[0]
    for term in terms[1:]:
        total = add(total, term)
    return total


# Linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul: inner dimensions differ", op="matmul", left=a.shape, right=b.shape)
    a_data, b_data = a.data, b.data

    def vjp(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return g @ b_data.T, a_data.T @ g

    return _result(a_data @ b_data, (a, b), vjp, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError("transpose: expects a matrix", op="transpose", shape=a.shape)

    def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
        return (g.T,)

    return _result(np.ascontiguousarray(a.data.T), (a,), vjp, "transpose")


# Nonlinearities

def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
        return (g * mask,)

    return _result(np.where(mask, a.data, 0).astype(a.data.dtype), (a,), vjp, "relu")


def sigmoid(a: Tensor) -> Tensor:
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    e = np.exp(a.data[~pos])
    out[~pos] = e / (1.0 + e)

    def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
        return (g * out * (1.0 - out),)

    return _result(out, (a,), vjp, "sigmoid")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
        return (g * (1.0 - out * out),)

    return _result(out, (a,), vjp, "tanh")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
        return (g * out,)

    return _result(out, (a,), vjp, "exp")


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)

    def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
        return (g * sign,)

    return _result(np.abs(a.data), (a,), vjp, "abs")


def clamp_max(a: Tensor, limit: float) -> Tensor:
    """min(a, limit); the gradient is zero wherever the limit is reached"""
    keep = a.data < limit

    def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
        return (g * keep,)

    return _result(np.minimum(a.data, a.data.dtype.type(limit)), (a,), vjp, "clamp_max")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (a,), vjp, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    probs = np.exp(out)

    def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _result(out, (a,), vjp, "log_softmax")


# Reductions

def sum_all(a: Tensor) -> Tensor:
    shape = a.shape

    def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
        return (np.broadcast_to(g.reshape(()), shape).copy(),)

    return _result(np.asarray(a.data.sum(), dtype=a.data.dtype), (a,), vjp, "sum")


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / max(a.size, 1))


def nll(logp: Tensor, labels: np.ndarray) -> Tensor:
    """
    Cross-entropy from log-probabilities: -(1/T) * sum_t logp[t, labels[t]]
    """
    labels = np.asarray(labels, dtype=np.int64)
    if logp.ndim != 2 or labels.shape != (logp.shape[0],):
        raise ShapeError("nll: labels must match rows", op="nll", logp=logp.shape, labels=labels.shape)
    n_rows, n_classes = logp.shape
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelRangeError("nll: label out of range", classes=n_classes,
                              low=int(labels.min()), high=int(labels.max()))
    rows = np.arange(n_rows)
    value = -logp.data[rows, labels].sum() / n_rows

    def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
        grad = np.zeros_like(logp.data)
        grad[rows, labels] = -g.reshape(()) / n_rows
        return (grad,)

    return _result(np.asarray(value, dtype=logp.data.dtype), (logp,), vjp, "nll")


# Structural

def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat: nothing to join", op="concat")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        other = [d for i, d in enumerate(t.shape) if i != axis]
        first = [d for i, d in enumerate(tensors[0].shape) if i != axis]
        if t.ndim != ndim or other != first:
            raise ShapeError("concat: shapes differ off the join axis", op="concat",
                             shapes=[x.shape for x in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def vjp(g: np.ndarray) -> List[np.ndarray]:
        return [np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))]

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp, "concat")


def slice_axis(a: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    axis = axis % a.ndim
    if not 0 <= start <= stop <= a.shape[axis]:
        raise ShapeError("slice: bounds outside the axis", op="slice", shape=a.shape, start=start, stop=stop)
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    key = tuple(index)

    def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
        grad = np.zeros_like(a.data)
        grad[key] = g
        return (grad,)

    return _result(a.data[key].copy(), (a,), vjp, "slice")


def take_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Gather rows of a matrix (embedding lookup)"""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2 or (ids.size and (ids.min() < 0 or ids.max() >= table.shape[0])):
        raise ShapeError("take_rows: index outside the table", op="take_rows", shape=table.shape)

    def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids, g)
        return (grad,)

    return _result(table.data[ids], (table,), vjp, "take_rows")


# Temporal ops

def conv1d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, dilation: int = 1) -> Tensor:
    """
    Non-causal dilated convolution along time.

    x: T×C_in, weight: k×C_in×C_out, bias: C_out. Symmetric zero padding of
    dilation·(k−1)/2 frames keeps the output length at T (k odd).
    """
    if x.ndim != 2 or weight.ndim != 3 or weight.shape[1] != x.shape[1]:
        raise ShapeError("conv1d: channel mismatch", op="conv1d", x=x.shape, weight=weight.shape)
    k, c_in, c_out = weight.shape
    if k % 2 != 1:
        raise ShapeError("conv1d: kernel size must be odd", op="conv1d", kernel=k)
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError("conv1d: bias size", op="conv1d", bias=bias.shape, channels=c_out)

    n_frames = x.shape[0]
    pad = dilation * (k - 1) // 2
    padded = np.zeros((n_frames + 2 * pad, c_in), dtype=x.data.dtype)
    padded[pad:pad + n_frames] = x.data
    # columns[t, j, :] = x[t + j*dilation - pad]
    columns = np.stack([padded[j * dilation:j * dilation + n_frames] for j in range(k)], axis=1)
    flat_cols = columns.reshape(n_frames, k * c_in)
    flat_w = weight.data.reshape(k * c_in, c_out)
    out = flat_cols @ flat_w
    if bias is not None:
        out = out + bias.data

    def vjp(g: np.ndarray) -> List[Optional[np.ndarray]]:
        grad_w = (flat_cols.T @ g).reshape(weight.shape)
        grad_cols = (g @ flat_w.T).reshape(n_frames, k, c_in)
        grad_padded = np.zeros_like(padded)
        for j in range(k):
            grad_padded[j * dilation:j * dilation + n_frames] += grad_cols[:, j, :]
        grads: List[Optional[np.ndarray]] = [grad_padded[pad:pad + n_frames], grad_w]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, inputs, vjp, "conv1d")


def segment_max(x: Tensor, bounds: Sequence[Tuple[int, int]]) -> Tensor:
    """Per-column max over each [start, stop) row window; one output row per window"""
    if x.ndim != 2:
        raise ShapeError("segment_max: expects T×C", op="segment_max", shape=x.shape)
    for start, stop in bounds:
        if not 0 <= start < stop <= x.shape[0]:
            raise ShapeError("segment_max: empty or out-of-range window", op="segment_max",
                             window=(start, stop), frames=x.shape[0])
    cols = np.arange(x.shape[1])
    arg = np.stack([start + x.data[start:stop].argmax(axis=0) for start, stop in bounds])
    out = x.data[arg, cols]

    def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
        grad = np.zeros_like(x.data)
        for row in range(len(bounds)):
            grad[arg[row], cols] += g[row]
        return (grad,)

    return _result(out, (x,), vjp, "segment_max")


def detach(a: Tensor) -> Tensor:
    return a.detach()
