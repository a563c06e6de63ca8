"""Tape-style reverse-mode differentiation over dense 2-D float64 arrays.

Every op returns a new :class:`Node` that remembers its parents and a closure
that pushes the output gradient back onto them.  A graph is built per forward
pass and released by :func:`backward`.
"""

from __future__ import annotations

from typing import Callable, Optional, Union

import numpy as np

from rocket.errors import ContractError, DimensionError, NonFiniteError

ArrayLike = Union["Node", np.ndarray, float, int]


def as_tensor(values, name: str = "tensor") -> np.ndarray:
    """Validate and copy ``values`` into a finite 2-D float64 array."""
    arr = np.array(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionError(f"{name}: expected a 2-D array, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{name}: non-finite values on construction")
    return arr


class Node:
    """A value recorded on the tape.

    ``grad`` stays ``None`` until :func:`backward` reaches the node.
    """

    __slots__ = ("value", "op", "parents", "grad", "requires_grad", "_backward", "name")

    def __init__(
        self,
        value: np.ndarray,
        op: str = "leaf",
        parents: tuple["Node", ...] = (),
        backward_fn: Optional[Callable[[np.ndarray], None]] = None,
        requires_grad: bool = True,
        name: str = "",
    ):
        self.value = value
        self.op = op
        self.parents = parents
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._backward = backward_fn
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Node({self.op}{label}, shape={self.shape})"

    def __add__(self, other: ArrayLike) -> "Node":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other: ArrayLike) -> "Node":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Node":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Node":
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> "Node":
        return scale(self, -1.0)


def leaf(values, name: str = "", requires_grad: bool = True) -> Node:
    return Node(as_tensor(values, name or "leaf"), name=name, requires_grad=requires_grad)


def constant(values, name: str = "") -> Node:
    return leaf(values, name=name, requires_grad=False)


def _wrap(x: ArrayLike) -> Node:
    if isinstance(x, Node):
        return x
    return constant(x)


def _checked(value: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(value).all():
        raise NonFiniteError(f"{op}: produced non-finite values")
    return value


def _make(value, op, parents, backward_fn) -> Node:
    value = _checked(value, op)
    live = tuple(p for p in parents if p.requires_grad)
    if not live:
        return Node(value, op=op, requires_grad=False)
    return Node(value, op=op, parents=parents, backward_fn=backward_fn)


def _accumulate(node: Node, g: np.ndarray) -> None:
    if not node.requires_grad:
        return
    if node.grad is None:
        node.grad = g.copy()
    else:
        node.grad = node.grad + g


def _same_shape(a: Node, b: Node, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: operand shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# primitives


def linear(x: ArrayLike, W: ArrayLike, b: ArrayLike) -> Node:
    """``x @ W + b`` with ``b`` a single bias row."""
    x, W, b = _wrap(x), _wrap(W), _wrap(b)
    if x.shape[1] != W.shape[0]:
        raise DimensionError(
            f"linear: x {x.shape} and W {W.shape} inner dimensions disagree"
        )
    if b.shape != (1, W.shape[1]):
        raise DimensionError(f"linear: bias {b.shape} must be (1, {W.shape[1]})")

    def backward_fn(g):
        _accumulate(x, g @ W.value.T)
        _accumulate(W, x.value.T @ g)
        _accumulate(b, g.sum(axis=0, keepdims=True))

    return _make(x.value @ W.value + b.value, "linear", (x, W, b), backward_fn)


def add(a: ArrayLike, b: ArrayLike) -> Node:
    a, b = _wrap(a), _wrap(b)
    if b.shape == (1, 1) and a.shape != (1, 1):
        return add_scalar(a, b)
    if a.shape == (1, 1) and b.shape != (1, 1):
        return add_scalar(b, a)
    _same_shape(a, b, "add")

    def backward_fn(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _make(a.value + b.value, "add", (a, b), backward_fn)


def add_scalar(a: Node, s: Node) -> Node:
    def backward_fn(g):
        _accumulate(a, g)
        _accumulate(s, g.sum().reshape(1, 1))

    return _make(a.value + s.value, "add_scalar", (a, s), backward_fn)


def sub(a: ArrayLike, b: ArrayLike) -> Node:
    a, b = _wrap(a), _wrap(b)
    _same_shape(a, b, "sub")

    def backward_fn(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _make(a.value - b.value, "sub", (a, b), backward_fn)


def mul(a: ArrayLike, b: ArrayLike) -> Node:
    """Elementwise product."""
    a, b = _wrap(a), _wrap(b)
    _same_shape(a, b, "mul")

    def backward_fn(g):
        _accumulate(a, g * b.value)
        _accumulate(b, g * a.value)

    return _make(a.value * b.value, "mul", (a, b), backward_fn)


def scale(a: ArrayLike, c: float) -> Node:
    a = _wrap(a)
    c = float(c)

    def backward_fn(g):
        _accumulate(a, g * c)

    return _make(a.value * c, "scale", (a,), backward_fn)


def square(a: ArrayLike) -> Node:
    a = _wrap(a)

    def backward_fn(g):
        _accumulate(a, 2.0 * a.value * g)

    return _make(a.value * a.value, "square", (a,), backward_fn)


def log(a: ArrayLike, eps: float = 0.0) -> Node:
    """``log(a + eps)``; ``eps`` floors the argument away from zero."""
    a = _wrap(a)
    shifted = a.value + eps
    if (shifted <= 0).any():
        raise NonFiniteError("log: non-positive argument")

    def backward_fn(g):
        _accumulate(a, g / shifted)

    return _make(np.log(shifted), "log", (a,), backward_fn)


def relu(x: ArrayLike) -> Node:
    x = _wrap(x)
    mask = x.value > 0

    def backward_fn(g):
        _accumulate(x, g * mask)

    return _make(np.where(mask, x.value, 0.0), "relu", (x,), backward_fn)


def softmax(x: ArrayLike) -> Node:
    """Row-wise softmax with row-max subtraction."""
    x = _wrap(x)
    if x.shape[1] < 1:
        raise DimensionError("softmax: need at least one column")
    shifted = x.value - x.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def backward_fn(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        _accumulate(x, out * (g - dot))

    return _make(out, "softmax", (x,), backward_fn)


def stop_gradient(x: ArrayLike) -> Node:
    """Identity on the forward pass; the edge to ``x`` carries no gradient."""
    x = _wrap(x)
    return Node(x.value, op="stop_gradient", requires_grad=False)


def sum_all(a: ArrayLike) -> Node:
    a = _wrap(a)

    def backward_fn(g):
        _accumulate(a, np.full(a.shape, g[0, 0]))

    return _make(np.array([[a.value.sum()]]), "sum", (a,), backward_fn)


def row_sum(a: ArrayLike) -> Node:
    a = _wrap(a)

    def backward_fn(g):
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _make(a.value.sum(axis=1, keepdims=True), "row_sum", (a,), backward_fn)


def mean_all(a: ArrayLike) -> Node:
    a = _wrap(a)
    n = a.value.size
    return scale(sum_all(a), 1.0 / n) if n else constant([[0.0]])


# ---------------------------------------------------------------------------
# driving the tape


def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node, retain_graph: bool = False) -> dict[Node, np.ndarray]:
    """Propagate d(loss)/d(node) to every reachable node.

    Returns a map from each reached node to its gradient.  Unless
    ``retain_graph`` is set the tape closures are dropped afterwards.
    """
    if loss.shape != (1, 1):
        raise ContractError(f"backward: loss must be 1x1, got {loss.shape}")
    order = _topo_order(loss)
    if loss.requires_grad:
        _accumulate(loss, np.ones((1, 1)))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
        if not retain_graph and node.parents:
            node._backward = None
    return {node: node.grad for node in order if node.grad is not None}


def grad_or_zeros(node: Node) -> np.ndarray:
    return np.zeros(node.shape) if node.grad is None else node.grad


def finite_diff_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central differences of a scalar function, one coordinate at a time."""
    if h <= 0:
        raise ContractError("finite_diff_grad: step must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"finite_diff_grad: f non-finite at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Largest ``|a-b| / max(|a|, |b|, floor)`` over all entries."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"max_rel_error: shapes {a.shape} and {b.shape} differ")
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max())

