"""Dense fp64 tensor with reverse-mode automatic differentiation."""

from collections.abc import Callable, Iterator
from contextlib import contextmanager
from contextvars import ContextVar

import numpy as np

BackwardFn = Callable[[np.ndarray], tuple[np.ndarray | None, ...]]

_GRAD_ENABLED: ContextVar[bool] = ContextVar("grad_enabled", default=True)


class ShapeError(Exception):
    """Operand shapes are incompatible for an operation."""

    pass


class NumericError(Exception):
    """Non-finite input or a numerically undefined operation."""

    pass


class ContractError(Exception):
    """An operation was called outside its contract."""

    pass


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable recording of operations inside the block."""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


def grad_enabled() -> bool:
    """Whether operations are currently being recorded."""
    return _GRAD_ENABLED.get()


class Tensor:
    """Row-major fp64 array that remembers how it was computed.

    Leaves created by the user carry ``requires_grad``; every operation whose
    inputs require grad produces a non-leaf holding references to its parents
    and a closure mapping the output gradient to parent gradients.
    """

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        *,
        _parents: tuple["Tensor", ...] = (),
        _op: str = "leaf",
        _backward: BackwardFn | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.op = _op
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        """Return the value of a single-element tensor."""
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """Return a copy of the underlying data."""
        return self.data.copy()

    def detach(self) -> "Tensor":
        """Return a constant tensor sharing no history with this one."""
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Populate ``grad`` on every leaf this scalar depends on."""
        backward(self)

    def __add__(self, other: "Tensor") -> "Tensor":
        from src.autodiff.ops import add

        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        from src.autodiff.ops import sub

        return sub(self, other)

    def __mul__(self, other: "Tensor | float") -> "Tensor":
        from src.autodiff.ops import mul, scale

        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        from src.autodiff.ops import scale

        return scale(self, -1.0)

    def __truediv__(self, other: float) -> "Tensor":
        from src.autodiff.ops import scale

        return scale(self, 1.0 / float(other))

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from src.autodiff.ops import matmul

        return matmul(self, other)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"


def record(
    data: np.ndarray,
    parents: tuple[Tensor, ...],
    op: str,
    backward_fn: BackwardFn,
) -> Tensor:
    """Wrap an op result, attaching history only when a parent needs grad."""
    needs_grad = grad_enabled() and any(p.requires_grad for p in parents)
    if not needs_grad:
        return Tensor(data, _op=op)
    return Tensor(data, requires_grad=True, _parents=parents, _op=op, _backward=backward_fn)


class ComputationTape:
    """Operations reachable from a root, in topological order.

    Every entry appears after all of its parents, so walking the tape in
    reverse visits each node only once all of its consumers are done.
    """

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "ComputationTape":
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    @property
    def operations(self) -> list[Tensor]:
        """Recorded (non-leaf) entries."""
        return [n for n in self.nodes if not n.is_leaf]

    def __len__(self) -> int:
        return len(self.operations)


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss.

    Leaf gradients accumulate into existing ``grad`` buffers, which is what
    micro-batch gradient accumulation relies on.
    """
    if loss.data.size != 1 or loss.ndim > 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor with requires_grad")

    tape = ComputationTape.from_root(loss)
    if len(tape) == 0:
        raise ContractError("computation tape is empty: loss is a leaf")

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        grad = pending.pop(id(node), None)
        if grad is None:
            continue
        if node.is_leaf:
            node.grad = grad.copy() if node.grad is None else node.grad + grad
            continue
        parent_grads = node._backward(grad)
        for parent, parent_grad in zip(node._parents, parent_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = parent_grad if key not in pending else pending[key] + parent_grad
