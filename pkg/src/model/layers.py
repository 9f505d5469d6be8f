"""Pre-norm transformer building blocks on ``src.autodiff`` tensors."""

import math

import numpy as np

from src.autodiff import ContractError, Module, Parameter, Tensor, ops, trunc_normal, xavier_uniform


def _seq_axis(x: Tensor) -> int:
    return x.ndim - 2


def _take_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """``gather_rows`` with one shared index for every instance of a batch."""
    if x.ndim == 3:
        index = np.broadcast_to(index, (x.shape[0], index.shape[0]))
    return ops.gather_rows(x, index)


class Linear(Module):
    """``x @ W + b`` with ``W`` stored as ``[in x out]``."""

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        rng: np.random.Generator,
        bias: bool = True,
        std: float = 0.02,
        init: str = "trunc_normal",
    ):
        if init == "xavier_uniform":
            weight = xavier_uniform(rng, in_dim, out_dim)
        elif init == "trunc_normal":
            weight = trunc_normal(rng, (in_dim, out_dim), std)
        else:
            raise ContractError(f"unknown weight init '{init}'")
        self.weight = Parameter(weight)
        self.bias = Parameter(np.zeros(out_dim)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = ops.matmul(x, self.weight)
        return y if self.bias is None else ops.add(y, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        self.weight = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.add(ops.mul(ops.layernorm(x, self.eps), self.weight), self.bias)


class Mlp(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator, std: float = 0.02):
        self.fc1 = Linear(dim, hidden, rng, std=std)
        self.fc2 = Linear(hidden, dim, rng, std=std)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(ops.gelu(self.fc1(x)))


class MultiHeadAttention(Module):
    """Scaled dot-product attention with separate query, key and value projections.

    The softmax weights of the most recent call are kept in ``last_weights``
    (one array per head, and per window for local attention).
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, std: float = 0.02):
        if dim % heads != 0:
            raise ContractError(f"dim {dim} is not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = dim // heads
        self.query = Linear(dim, dim, rng, std=std)
        self.key = Linear(dim, dim, rng, std=std)
        self.value = Linear(dim, dim, rng, std=std)
        self.proj = Linear(dim, dim, rng, std=std)
        self.last_weights: list[np.ndarray] = []

    def _attend(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        outputs = []
        scale = 1.0 / math.sqrt(self.head_dim)
        for h in range(self.heads):
            lo, hi = h * self.head_dim, (h + 1) * self.head_dim
            qh, kh, vh = (ops.slice(t, -1, lo, hi) for t in (q, k, v))
            weights = ops.softmax(ops.scale(ops.matmul(qh, ops.transpose(kh)), scale), axis=-1)
            self.last_weights.append(weights.data)
            outputs.append(ops.matmul(weights, vh))
        return outputs[0] if len(outputs) == 1 else ops.concat(outputs, axis=-1)

    def forward(self, x: Tensor, context: Tensor | None = None) -> Tensor:
        """Self-attention over ``x``, or ``x`` attending to ``context``."""
        self.last_weights = []
        source = x if context is None else context
        out = self._attend(self.query(x), self.key(source), self.value(source))
        return self.proj(out)

    def local(self, x: Tensor, window: int, shift: int = 0) -> Tensor:
        """Self-attention restricted to contiguous windows of ``window`` rows.

        A trailing partial window attends among its own rows only, which is
        zero-padding to a whole window with the padded keys masked out. A
        nonzero ``shift`` rolls the sequence left before windowing and back
        afterwards.
        """
        if window < 1:
            raise ContractError(f"window must be >= 1, got {window}")
        self.last_weights = []
        length = x.shape[_seq_axis(x)]
        if shift:
            roll = (np.arange(length) + shift) % length
            x = _take_rows(x, roll)
        q, k, v = self.query(x), self.key(x), self.value(x)
        axis = _seq_axis(x)
        pieces = []
        for start in range(0, length, window):
            stop = min(start + window, length)
            pieces.append(
                self._attend(
                    ops.slice(q, axis, start, stop),
                    ops.slice(k, axis, start, stop),
                    ops.slice(v, axis, start, stop),
                )
            )
        out = pieces[0] if len(pieces) == 1 else ops.concat(pieces, axis=axis)
        if shift:
            out = _take_rows(out, np.argsort(roll))
        return self.proj(out)


class TransformerBlock(Module):
    """LayerNorm, attention, residual, LayerNorm, 4x MLP, residual.

    ``kind`` selects what the attention sees: ``"self"`` the whole sequence,
    ``"cross"`` a separately normalized context sequence, ``"local"``
    contiguous windows of the sequence.
    """

    def __init__(
        self,
        dim: int,
        heads: int,
        rng: np.random.Generator,
        kind: str = "self",
        mlp_ratio: int = 4,
        eps: float = 1e-6,
        window: int | None = None,
        shift: int = 0,
        std: float = 0.02,
    ):
        if kind not in ("self", "cross", "local"):
            raise ContractError(f"unknown attention kind '{kind}'")
        if kind == "local" and window is None:
            raise ContractError("local attention needs a window")
        self.kind = kind
        self.window = window
        self.shift = shift
        self.norm1 = LayerNorm(dim, eps)
        self.norm_context = LayerNorm(dim, eps) if kind == "cross" else None
        self.attn = MultiHeadAttention(dim, heads, rng, std=std)
        self.norm2 = LayerNorm(dim, eps)
        self.mlp = Mlp(dim, mlp_ratio * dim, rng, std=std)

    def _feed_forward(self, x: Tensor) -> Tensor:
        return ops.add(x, self.mlp(self.norm2(x)))

    def self_attend(self, x: Tensor) -> Tensor:
        return self._feed_forward(ops.add(x, self.attn(self.norm1(x))))

    def cross_attend(self, x: Tensor, context: Tensor) -> Tensor:
        if self.norm_context is None:
            raise ContractError("cross attention needs a block built with kind='cross'")
        attended = self.attn(self.norm1(x), self.norm_context(context))
        return self._feed_forward(ops.add(x, attended))

    def local_attend(self, x: Tensor, window: int, shift: int = 0) -> Tensor:
        return self._feed_forward(ops.add(x, self.attn.local(self.norm1(x), window, shift)))

    def forward(self, x: Tensor, context: Tensor | None = None) -> Tensor:
        if self.kind == "cross":
            if context is None:
                raise ContractError("cross attention block called without a context")
            return self.cross_attend(x, context)
        if self.kind == "local":
            return self.local_attend(x, self.window, self.shift)
        return self.self_attend(x)


def cross_attention_block(block: TransformerBlock, queries: Tensor, keys_values: Tensor) -> Tensor:
    """Queries attend only to ``keys_values``; output has the query length."""
    return block.cross_attend(queries, keys_values)


def local_window_attention_block(block: TransformerBlock, x: Tensor, window: int, shift: int = 0) -> Tensor:
    """Block-diagonal attention over contiguous windows of ``x``."""
    return block.local_attend(x, window, shift)
