"""Differentiable operations on ``Tensor``.

Tensors are rank 2 ``[L x d]`` or rank 3 ``[B x L x d]``. A binary operand
may omit leading dimensions (a bias row, a shared weight); its gradient is
summed over those axes. Every other shape mismatch is a ``ShapeError``.
"""

import math
from collections.abc import Sequence

import numpy as np

from src.autodiff.tensor import ContractError, NumericError, ShapeError, Tensor, record

_GELU_C = math.sqrt(2.0 / math.pi)


def as_tensor(value) -> Tensor:
    """Wrap arrays and floats as constant tensors."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    return grad


def _check_trailing(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape:
        return
    small, big = (a, b) if a.ndim < b.ndim else (b, a)
    if small.ndim == 0 or big.shape[-small.ndim :] != small.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are incompatible")


def _check_finite(x: Tensor, op: str) -> None:
    if not np.isfinite(x.data).all():
        raise NumericError(f"{op}: input of shape {x.shape} contains non-finite values")


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_trailing(a, b, "add")
    _check_finite(a, "add")
    _check_finite(b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record(a.data + b.data, (a, b), "add", backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_trailing(a, b, "sub")
    _check_finite(a, "sub")
    _check_finite(b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record(a.data - b.data, (a, b), "sub", backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_trailing(a, b, "mul")
    _check_finite(a, "mul")
    _check_finite(b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record(a.data * b.data, (a, b), "mul", backward)


def scale(a: Tensor, factor: float) -> Tensor:
    _check_finite(a, "scale")

    def backward(g):
        return (g * factor,)

    return record(a.data * factor, (a,), "scale", backward)


def square(a: Tensor) -> Tensor:
    _check_finite(a, "square")

    def backward(g):
        return (2.0 * a.data * g,)

    return record(a.data * a.data, (a,), "square", backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, with an optional shared operand."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    lead_a, lead_b = a.shape[:-2], b.shape[:-2]
    if lead_a and lead_b and lead_a != lead_b:
        raise ShapeError(f"matmul: batch dimensions differ in {a.shape} and {b.shape}")
    _check_finite(a, "matmul")
    _check_finite(b, "matmul")

    def backward(g):
        grad_a = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        grad_b = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return grad_a, grad_b

    return record(a.data @ b.data, (a, b), "matmul", backward)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise ShapeError(f"transpose: needs rank >= 2, got {a.shape}")

    def backward(g):
        return (np.swapaxes(g, -1, -2),)

    return record(np.swapaxes(a.data, -1, -2), (a,), "transpose", backward)


def sum(a: Tensor) -> Tensor:  # noqa: A001
    def backward(g):
        return (np.broadcast_to(g, a.shape).copy(),)

    return record(np.asarray(a.data.sum()), (a,), "sum", backward)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    """Mean over one axis (dropped) or over everything (scalar)."""
    if axis is None:
        n = a.data.size

        def backward_all(g):
            return (np.full(a.shape, float(g) / n),)

        return record(np.asarray(a.data.mean()), (a,), "mean", backward_all)

    axis = axis % a.ndim
    n = a.shape[axis]

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, a.shape).copy(),)

    return record(a.data.mean(axis=axis), (a,), "mean", backward)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    _check_finite(x, "gelu")
    v = x.data
    inner = _GELU_C * (v + 0.044715 * v**3)
    t = np.tanh(inner)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3.0 * 0.044715 * v**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * d_inner),)

    return record(0.5 * v * (1.0 + t), (x,), "gelu", backward)


def layernorm(x: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean and unit variance (no affine)."""
    if eps <= 0:
        raise ContractError(f"layernorm: eps must be > 0, got {eps}")
    _check_finite(x, "layernorm")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    normed = centered * inv_std

    def backward(g):
        g_mean = g.mean(axis=-1, keepdims=True)
        proj = (g * normed).mean(axis=-1, keepdims=True)
        return (inv_std * (g - g_mean - normed * proj),)

    return record(normed, (x,), "layernorm", backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    _check_finite(x, "softmax")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record(y, (x,), "softmax", backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    _check_finite(x, "log_softmax")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - log_z
    probs = np.exp(y)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return record(y, (x,), "log_softmax", backward)


def l2_normalize(x: Tensor) -> Tensor:
    """Scale every row (last axis) to unit Euclidean norm."""
    _check_finite(x, "l2_normalize")
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    if (norm == 0).any():
        raise NumericError("l2_normalize: zero-norm row")
    y = x.data / norm

    def backward(g):
        return ((g - y * (g * y).sum(axis=-1, keepdims=True)) / norm,)

    return record(y, (x,), "l2_normalize", backward)


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Select rows along the sequence axis.

    ``x [L x d]`` takes ``index [K]``; ``x [B x L x d]`` takes per-instance
    ``index [B x K]``.
    """
    index = np.asarray(index, dtype=np.int64)
    seq_axis = x.ndim - 2
    length = x.shape[seq_axis]
    if index.ndim != x.ndim - 1 or (x.ndim == 3 and index.shape[0] != x.shape[0]):
        raise ShapeError(f"gather_rows: index shape {index.shape} does not fit {x.shape}")
    if index.size and (index.min() < 0 or index.max() >= length):
        raise ShapeError(f"gather_rows: index out of range for {length} rows")

    if x.ndim == 2:
        out = x.data[index]
    else:
        out = np.take_along_axis(x.data, index[:, :, None], axis=1)

    def backward(g):
        grad = np.zeros_like(x.data)
        if x.ndim == 2:
            np.add.at(grad, index, g)
        else:
            batch = np.arange(x.shape[0])[:, None]
            np.add.at(grad, (batch, index), g)
        return (grad,)

    return record(out, (x,), "gather_rows", backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        other = t.shape[:axis] + t.shape[axis + 1 :]
        first = tensors[0].shape[:axis] + tensors[0].shape[axis + 1 :]
        if t.ndim != ndim or other != first:
            raise ShapeError(f"concat: shapes {tensors[0].shape} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return record(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat", backward)


def slice(x: Tensor, axis: int, start: int, stop: int) -> Tensor:  # noqa: A001
    axis = axis % x.ndim
    if not 0 <= start < stop <= x.shape[axis]:
        raise ShapeError(f"slice: [{start}:{stop}] out of range for axis {axis} of {x.shape}")
    selector = tuple(np.s_[start:stop] if i == axis else np.s_[:] for i in range(x.ndim))

    def backward(g):
        grad = np.zeros_like(x.data)
        grad[selector] = g
        return (grad,)

    return record(x.data[selector], (x,), "slice", backward)
