"""Small define-by-run reverse-mode autodiff over dense numpy arrays.

Every op returns a new :class:`Tensor` that remembers its inputs and a local
gradient rule. Calling :func:`backward` on a scalar walks the recorded graph in
reverse topological order.

Reset rule: the graph is rebuilt on every forward pass. Gradients accumulate
into ``Tensor.grad`` across backward calls, so call :func:`zero_grad` (or
build fresh leaf tensors) before reusing leaves.
"""
from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

_ids = itertools.count()


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(RuntimeError):
    """An op was called outside its contract (non-scalar backward etc.)."""


class NumericError(FloatingPointError):
    """Non-finite values where finite ones are required."""


class Tensor:
    __slots__ = ("data", "grad", "node_id", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float64):
        self.data = np.array(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.node_id = next(_ids)
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, id={self.node_id})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    @property
    def T(self):
        return transpose(self)

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__


def _node(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.node_id = next(_ids)
    out.requires_grad = any(p.requires_grad for p in parents)
    out._parents = tuple(parents)
    out._backward = backward
    out.op = op
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Nodes of one graph in topological order (inputs before consumers)."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for p in node._parents:
            if p.node_id not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> Tape:
    """Populate ``.grad`` on every tensor reachable from scalar ``loss``."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = Tape(_toposort(loss))
    for node in tape.nodes:
        if node.grad is None:
            node.grad = np.zeros_like(node.data)
    loss.grad = loss.grad + np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        if node._backward is not None:
            node._backward(node.grad)
    return tape


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


# --------------------------------------------------------------------- ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def _bw(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return _node(a.data @ b.data, (a, b), _bw, "matmul")


def transpose(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"transpose: need a matrix, got {x.shape}")

    def _bw(g):
        x._accumulate(g.T)

    return _node(x.data.T, (x,), _bw, "transpose")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; ``b`` may also be a row vector broadcast over rows of ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        def _bw(g):
            a._accumulate(g)
            b._accumulate(g)
        return _node(a.data + b.data, (a, b), _bw, "add")
    if a.data.ndim == 2 and b.data.ndim == 1 and b.shape[0] == a.shape[1]:
        def _bw(g):
            a._accumulate(g)
            b._accumulate(g.sum(axis=0))
        return _node(a.data + b.data, (a, b), _bw, "add_bias")
    raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")


def scale(x: Tensor, c: float) -> Tensor:
    x = as_tensor(x)

    def _bw(g):
        x._accumulate(g * c)

    return _node(x.data * c, (x,), _bw, "scale")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; a single-element ``b`` acts as a scalar factor."""
    a, b = as_tensor(a), as_tensor(b)
    if b.data.size == 1 and a.data.size != 1:
        s = b.data.reshape(())

        def _bw(g):
            a._accumulate(g * s)
            b._accumulate(np.reshape(np.sum(g * a.data), b.shape))

        return _node(a.data * s, (a, b), _bw, "mul_scalar")
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")

    def _bw(g):
        a._accumulate(g * b.data)
        b._accumulate(g * a.data)

    return _node(a.data * b.data, (a, b), _bw, "mul")


def mul_const(x: Tensor, c: np.ndarray) -> Tensor:
    """Elementwise product with a constant (non-differentiable) array."""
    x = as_tensor(x)
    c = np.asarray(c, dtype=x.data.dtype)
    if c.shape != x.shape:
        raise ShapeError(f"mul_const: incompatible shapes {x.shape} and {c.shape}")

    def _bw(g):
        x._accumulate(g * c)

    return _node(x.data * c, (x,), _bw, "mul_const")


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)

    def _bw(g):
        x._accumulate(g * out)

    return _node(out, (x,), _bw, "exp")


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0

    def _bw(g):
        x._accumulate(g * pos)

    return _node(np.where(pos, x.data, 0.0), (x,), _bw, "relu")


def softplus(x: Tensor) -> Tensor:
    """Smooth ramp log(1 + e^x); used where finite differences must not hit kinks."""
    x = as_tensor(x)
    out = np.logaddexp(0.0, x.data)

    def _bw(g):
        x._accumulate(g / (1.0 + np.exp(-x.data)))

    return _node(out, (x,), _bw, "softplus")


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)

    def _bw(g):
        x._accumulate(np.broadcast_to(g, x.shape))

    return _node(np.asarray(x.data.sum()), (x,), _bw, "sum")


def mean(x: Tensor) -> Tensor:
    return scale(sum(x), 1.0 / x.data.size)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols: incompatible shapes {a.shape} and {b.shape}")
    k = a.shape[1]

    def _bw(g):
        a._accumulate(g[:, :k])
        b._accumulate(g[:, k:])

    return _node(np.concatenate([a.data, b.data], axis=1), (a, b), _bw, "concat_cols")


def take_rows(table: Tensor, idx) -> Tensor:
    """Row lookup ``table[idx]``; repeated indices accumulate gradient."""
    table = as_tensor(table)
    idx = np.asarray(idx, dtype=np.intp)

    def _bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        table._accumulate(full)

    return _node(table.data[idx], (table,), _bw, "take_rows")


def l2_normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Divide each row by ``max(||row||, eps)``."""
    x = as_tensor(x)
    if x.data.ndim != 2 or x.shape[1] < 1:
        raise ShapeError(f"l2_normalize_rows: need a B×D matrix with D ≥ 1, got {x.shape}")
    norms = np.sqrt(np.einsum("ij,ij->i", x.data, x.data))
    clipped = norms > eps
    denom = np.where(clipped, norms, eps)[:, None]
    y = x.data / denom

    def _bw(g):
        # below eps the denominator is constant
        radial = np.einsum("ij,ij->i", g, y)[:, None] * y
        gx = np.where(clipped[:, None], (g - radial) / denom, g / denom)
        x._accumulate(gx)

    return _node(y, (x,), _bw, "l2_normalize_rows")


def log_softmax_rows(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if not np.all(np.isfinite(x.data)):
        raise NumericError("log_softmax_rows: input contains non-finite values")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    probs = np.exp(out)

    def _bw(g):
        x._accumulate(g - probs * g.sum(axis=1, keepdims=True))

    return _node(out, (x,), _bw, "log_softmax_rows")
