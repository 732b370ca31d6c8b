"""
Dense tensors with reverse-mode automatic differentiation.

Ops in ``segsemi.nn.functional`` run eagerly on numpy arrays and record a
``Node`` (op name, inputs, vector-Jacobian product) on their output whenever
an input requires a gradient. ``backward`` orders the recorded nodes
topologically and visits each one exactly once in reverse.
"""

import threading
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..config import get_settings
from ..errors import NonScalarLossError

VJP = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_precision_override: ContextVar[Optional[int]] = ContextVar("precision_override", default=None)
_grad_state = threading.local()


def default_dtype() -> np.dtype:
    bits = _precision_override.get() or get_settings().precision
    return np.dtype(np.float64 if bits == 64 else np.float32)


@contextmanager
def use_precision(bits: int) -> Iterator[None]:
    """Select 32- or 64-bit floats for tensors created inside the block"""
    if bits not in (32, 64):
        raise ValueError("precision must be 32 or 64")
    token = _precision_override.set(bits)
    try:
        yield
    finally:
        _precision_override.reset(token)


def grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording them (decoding, evaluation)"""
    previous = grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


@dataclass(eq=False)
class Node:
    """Record of one executed op"""
    op: str
    inputs: Tuple["Tensor", ...]
    vjp: VJP


class Tensor:
    """A dense array that can take part in gradient computation"""

    __slots__ = ("data", "requires_grad", "grad", "name", "_node")

    def __init__(self, data: object, requires_grad: bool = False, name: Optional[str] = None,
                 dtype: Optional[np.dtype] = None):
        self.data: np.ndarray = np.array(data, dtype=dtype or default_dtype())
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._node: Optional[Node] = None

    @classmethod
    def wrap(cls, data: np.ndarray, requires_grad: bool = False) -> "Tensor":
        """Wrap an op result without copying or casting"""
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        t._node = None
        return t

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def node(self) -> Optional[Node]:
        return self._node

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor.wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> "Graph":
        return backward(self)

    def __add__(self, other: "Tensor") -> "Tensor":
        from . import functional as F
        return F.add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        from . import functional as F
        return F.sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        from . import functional as F
        return F.mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from . import functional as F
        return F.matmul(self, other)

    def __neg__(self) -> "Tensor":
        from . import functional as F
        return F.scale(self, -1.0)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        label = f"{self.name}: " if self.name else ""
        return f"Tensor({label}shape={self.shape}, dtype={self.data.dtype}{flag})"


@dataclass
class Graph:
    """Topologically ordered op records reachable from one output"""
    nodes: List[Tensor] = field(default_factory=list)
    parameters: Dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def trace(cls, output: Tensor, parameters: Optional[Mapping[str, Tensor]] = None) -> "Graph":
        return cls(nodes=topological_order(output), parameters=dict(parameters or {}))

    @property
    def ops(self) -> List[str]:
        return [t._node.op for t in self.nodes if t._node is not None]


def topological_order(output: Tensor) -> List[Tensor]:
    """Tensors reachable from ``output``, inputs before the ops that consume them"""
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(output, False)]

    while stack:
        tensor, expanded = stack.pop()
        if expanded:
            order.append(tensor)
            continue
        if id(tensor) in visited:
            continue
        visited.add(id(tensor))
        stack.append((tensor, True))
        if tensor._node is not None:
            for parent in reversed(tensor._node.inputs):
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor, parameters: Optional[Mapping[str, Tensor]] = None) -> Graph:
    """
    Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf that requires
    a gradient. Gradients from several use sites are summed.
    """
    if loss.size != 1:
        raise NonScalarLossError("backward() needs a scalar loss", shape=loss.shape)

    graph = Graph.trace(loss, parameters)
    if not loss.requires_grad:
        return graph

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    for tensor in reversed(graph.nodes):
        g = grads.pop(id(tensor), None)
        if g is None:
            continue
        node = tensor._node
        if node is None:
            tensor.grad = g.copy() if tensor.grad is None else tensor.grad + g
            continue
        for parent, parent_grad in zip(node.inputs, node.vjp(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + parent_grad
            else:
                grads[key] = parent_grad
    return graph


def gradients(loss: Tensor, parameters: Mapping[str, Tensor]) -> Dict[str, np.ndarray]:
    """Fresh gradients of ``loss`` for the named parameters (zeros when unused)"""
    for p in parameters.values():
        p.grad = None
    backward(loss, parameters)
    return {name: (p.grad if p.grad is not None else np.zeros_like(p.data)) for name, p in parameters.items()}
