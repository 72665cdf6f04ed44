"""Dense tensors with reverse-mode differentiation.

Every differentiable operation records one node: the op name, its parent
tensors and a context object. Backward rules live in ``GRAD_RULES`` keyed by
op name, so a rule can be inspected or swapped (the gradcheck negative control
relies on that).
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Any, Callable, Iterator, Sequence

import numpy as np

GradRule = Callable[[Any, np.ndarray], Sequence["np.ndarray | None"]]

GRAD_RULES: dict[str, GradRule] = {}


class DimensionError(ValueError):
    """Operand extents are incompatible."""


class ContractError(RuntimeError):
    """An operation was called outside its contract."""


def register(name: str) -> Callable[[GradRule], GradRule]:
    def deco(fn: GradRule) -> GradRule:
        GRAD_RULES[name] = fn
        return fn

    return deco


def _as_array(data: Any, dtype: Any = None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if dtype is None and not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """Row-major dense array that can take part in a differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_op", "_parents", "_ctx")

    def __init__(self, data: Any, requires_grad: bool = False, dtype: Any = None, name: str | None = None):
        self.data = np.asarray(_as_array(data, dtype), order="C")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._op: str | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._ctx: Any = None

    # -- construction -----------------------------------------------------

    @classmethod
    def _from_op(cls, data: np.ndarray, op: str, parents: Sequence["Tensor"], ctx: Any = None) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.asarray(data, order="C")
        out.grad = None
        out.name = None
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._op = op
            out._parents = tuple(parents)
            out._ctx = ctx
        else:
            out._op = None
            out._parents = ()
            out._ctx = None
        return out

    # -- basic properties -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._op is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    # -- backward ---------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every leaf that requires grad.

        Without an explicit ``grad`` the tensor must hold a single element.
        Gradients add onto whatever is already stored in ``.grad``.
        """
        if grad is None:
            if self.data.size != 1:
                raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.dtype)
            if grad.shape != self.shape:
                raise DimensionError(f"seed gradient shape {grad.shape} != tensor shape {self.shape}")
        if not self.requires_grad:
            return

        order = _topological_order(self)
        pending: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._op is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = GRAD_RULES[node._op](node._ctx, g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise DimensionError(
                        f"rule {node._op!r} produced grad {pg.shape} for parent {parent.shape}"
                    )
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg

    # -- operator sugar (implemented in ops) ------------------------------

    def __add__(self, other: Any) -> "Tensor":
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other: Any) -> "Tensor":
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other: Any) -> "Tensor":
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other: Any) -> "Tensor":
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: Any) -> "Tensor":
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other: Any) -> "Tensor":
        from . import ops
        return ops.div(other, self)

    def __neg__(self) -> "Tensor":
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, key: Any) -> "Tensor":
        from . import ops
        return ops.getitem(self, key)

    def reshape(self, *shape: Any) -> "Tensor":
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        from . import ops
        return ops.transpose(self, axes or None)

    def sum(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        from . import ops
        return ops.sum(self, axis, keepdims)

    def mean(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        from . import ops
        return ops.mean(self, axis, keepdims)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def as_tensor(x: Any, dtype: Any = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


@contextmanager
def corrupted_rule(name: str, factor: float = 1.5) -> Iterator[None]:
    """Temporarily scale the output of one backward rule (test hook)."""
    original = GRAD_RULES[name]

    def bad(ctx: Any, g: np.ndarray) -> list:
        return [None if pg is None else pg * factor for pg in original(ctx, g)]

    GRAD_RULES[name] = bad
    try:
        yield
    finally:
        GRAD_RULES[name] = original
