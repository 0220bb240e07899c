"""Tensor carrier, precision switch and the recording tape.

Ops only record onto a :class:`Graph` when one is active (``with Graph() as g``)
and at least one input requires a gradient; outside a graph everything runs
as plain numpy with no bookkeeping.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, GraphStateError, NumericError

_PRECISIONS = {"f32": np.float32, "f64": np.float64}
_state = threading.local()


def _get(name, default):
    return getattr(_state, name, default)


def default_dtype():
    return _PRECISIONS[_get("precision", "f32")]


def get_precision() -> str:
    return _get("precision", "f32")


def set_precision(name: str) -> None:
    if name not in _PRECISIONS:
        raise ContractError(f"precision must be one of {sorted(_PRECISIONS)}, got {name!r}")
    _state.precision = name


@contextlib.contextmanager
def precision(name: str):
    old = get_precision()
    set_precision(name)
    try:
        yield
    finally:
        set_precision(old)


class Tensor:
    """Dense array with an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_graph")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype or default_dtype())
        if arr.ndim and 0 in arr.shape:
            raise ContractError(f"tensor extents must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._graph: Graph | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._graph is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    # arithmetic sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.mul(self, 1.0 / other)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Graph:
    """Append-only op tape for a single forward/backward pass."""

    nodes: list[Node] = field(default_factory=list)
    consumed: bool = False
    leaves: dict[int, Tensor] = field(default_factory=dict)

    def __enter__(self) -> "Graph":
        stack = _get("graphs", None)
        if stack is None:
            stack = _state.graphs = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.graphs.pop()
        return False

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward) -> None:
        if self.consumed:
            raise GraphStateError("graph already consumed by backward(); run a fresh forward pass")
        for t in inputs:
            if t.requires_grad and t._graph is None:
                self.leaves.setdefault(id(t), t)
        output.requires_grad = True
        output._graph = self
        self.nodes.append(Node(op, tuple(inputs), output, backward))

    def backward(self, loss: Tensor, leaves: Sequence[Tensor] | None = None) -> dict[int, np.ndarray]:
        """Reverse sweep from a scalar ``loss``.

        Every leaf seen by the graph (plus any passed in ``leaves``) ends up
        with ``.grad`` set, zeros if it did not influence the loss. Returns a
        map from ``id(leaf)`` to its gradient.
        """
        if self.consumed:
            raise GraphStateError("backward() already ran on this graph")
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._graph is not self:
            raise ContractError("loss was not produced by this graph")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                check_finite(gi, f"{node.op} backward")
                prev = grads.get(id(t))
                grads[id(t)] = gi if prev is None else prev + gi
        self.consumed = True
        self.nodes.clear()
        targets = dict(self.leaves)
        for t in leaves or ():
            targets.setdefault(id(t), t)
        out = {}
        for key, t in targets.items():
            g = grads.get(key)
            g = np.zeros_like(t.data) if g is None else g.astype(t.data.dtype, copy=False)
            t.grad = g if t.grad is None else t.grad + g
            out[key] = t.grad
        return out


def active_graph() -> Graph | None:
    stack = _get("graphs", None)
    return stack[-1] if stack else None


def backward(graph: Graph, loss: Tensor, leaves: Sequence[Tensor] | None = None) -> dict[int, np.ndarray]:
    return graph.backward(loss, leaves)


def check_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced by {where}")
