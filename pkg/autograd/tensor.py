"""
Dense tensors with reverse-mode automatic differentiation.

Every differentiable op appends one Node to the module-level Graph (the tape)
in execution order, so tape order is a valid topological order. backward()
walks the nodes reachable from a scalar loss in reverse tape order,
accumulates (+=) into the .grad of requires_grad leaves, and releases each
visited node. Graph listeners see every stash/release; the memory ledger
uses them to account activation bytes.
"""

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from utils.error_manager import ContractError
from utils.logger import setup_logger

logger = setup_logger(__name__)

# Ledger semantics: every element is counted as 4 bytes regardless of the
# working precision.
BYTES_PER_ELEMENT = 4

class _RuntimeState:
    grad_enabled: bool = True
    dtype: type = np.float32

_state = _RuntimeState()

def get_dtype():
    """Current working dtype (float32 unless inside precision())."""
    return _state.dtype

def is_grad_enabled() -> bool:
    return _state.grad_enabled

@contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording them on the tape."""
    previous = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous

@contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily switch the working dtype. Used by the gradient checker."""
    previous = _state.dtype
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = previous

def element_bytes(shape: Sequence[int]) -> int:
    """Ledger size of a buffer with this shape."""
    return int(np.prod(shape, dtype=np.int64)) * BYTES_PER_ELEMENT

# ============================================================================
# Tensor
# ============================================================================

class Tensor:
    """Row-major dense array plus an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data: np.ndarray = np.ascontiguousarray(data, dtype=_state.dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node: Optional["Node"] = None
        self.name = name

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
    def nbytes(self) -> int:
        return element_bytes(self.data.shape)

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __add__(self, other: "Tensor") -> "Tensor":
        from autograd import ops
        return ops.add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        from autograd import ops
        return ops.mul(self, other)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        grad = " requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}{label}{grad})"

def parameter(data, name: Optional[str] = None) -> Tensor:
    """Leaf tensor that collects gradients."""
    return Tensor(data, requires_grad=True, name=name)

# ============================================================================
# Graph
# ============================================================================

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

@dataclass(eq=False)
class Node:
    """One executed op: operands, output shape and the rule mapping the
    output gradient to one gradient (or None) per operand."""
    op: str
    parents: Tuple[Tensor, ...]
    backward_fn: Optional[BackwardFn]
    out_shape: Tuple[int, ...]
    index: int = -1

    @property
    def nbytes(self) -> int:
        return element_bytes(self.out_shape)

GraphListener = Callable[[str, Node], None]

class Graph:
    """Ordered record of executed operations."""

    def __init__(self):
        self.nodes: Dict[int, Node] = {}
        self.listeners: List[GraphListener] = []
        self._counter = 0

    def __len__(self) -> int:
        return len(self.nodes)

    def add_listener(self, listener: GraphListener) -> None:
        self.listeners.append(listener)

    def remove_listener(self, listener: GraphListener) -> None:
        if listener in self.listeners:
            self.listeners.remove(listener)

    def record(self, node: Node) -> None:
        """Append a node. A listener that raises leaves the node off the tape."""
        node.index = self._counter
        self._counter += 1
        for listener in self.listeners:
            listener("stash", node)
        self.nodes[node.index] = node

    def release(self, node: Node) -> None:
        if self.nodes.pop(node.index, None) is None:
            return
        node.backward_fn = None
        for listener in self.listeners:
            listener("release", node)

    def clear(self) -> None:
        """Release every node still on the tape, newest first."""
        for index in sorted(self.nodes, reverse=True):
            self.release(self.nodes[index])

_graph = Graph()

def get_graph() -> Graph:
    return _graph

def make_result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn,
                op: str) -> Tensor:
    """Wrap an op's output; record a node when any operand needs gradients."""
    out = Tensor(data)
    if _state.grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = Node(op=op, parents=tuple(parents), backward_fn=backward_fn,
                        out_shape=out.shape)
        _graph.record(out.node)
    return out

# ============================================================================
# Backward
# ============================================================================

def backward(loss: Tensor) -> None:
    """
    Accumulate d(loss)/d(leaf) into every requires_grad leaf reachable from loss.

    Raises:
        ContractError: loss is not a single-element tensor
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {list(loss.shape)}")

    seed = np.ones(loss.shape, dtype=loss.data.dtype)
    if loss.node is None:
        if loss.requires_grad:
            _accumulate_leaf(loss, seed)
        return

    reachable: Dict[int, Node] = {}
    stack = [loss.node]
    while stack:
        node = stack.pop()
        if node.index in reachable:
            continue
        reachable[node.index] = node
        for parent in node.parents:
            if parent.node is not None and parent.node.index not in reachable:
                stack.append(parent.node)

    grads: Dict[int, np.ndarray] = {loss.node.index: seed}
    for index in sorted(reachable, reverse=True):
        node = reachable[index]
        grad = grads.pop(index, None)
        if grad is not None and node.backward_fn is not None:
            parent_grads = node.backward_fn(grad)
            for parent, parent_grad in zip(node.parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if parent.node is not None:
                    key = parent.node.index
                    if key in grads:
                        grads[key] = grads[key] + parent_grad
                    else:
                        grads[key] = parent_grad
                else:
                    _accumulate_leaf(parent, parent_grad)
        _graph.release(node)

def _accumulate_leaf(leaf: Tensor, grad: np.ndarray) -> None:
    if leaf.grad is None:
        leaf.grad = np.zeros(leaf.shape, dtype=leaf.data.dtype)
    leaf.grad += grad.reshape(leaf.shape).astype(leaf.grad.dtype, copy=False)
