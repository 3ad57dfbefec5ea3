"""Reverse-mode autodiff over numpy arrays.

A :class:`Tensor` wraps an ``ndarray`` and, when it was produced by a
differentiable operation, remembers its parents and a closure mapping the
output gradient to one gradient per parent.  :class:`GradTape` linearises the
graph reachable from a loss into topological order; :func:`backward` walks it
in reverse and accumulates gradients.

Arithmetic follows numpy broadcasting; gradients are summed back down to the
operand shapes.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import CycleError, ShapeError

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, optimizer updates)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")
    __array_ufunc__ = None  # make ndarray <op> Tensor defer to Tensor's reflected ops

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self.op = "leaf"
        self.name = name

    # -- construction -------------------------------------------------
    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn, op: str) -> "Tensor":
        out = cls(data)
        if grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out.op = op
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, op={self.op})"

    # -- elementwise arithmetic ----------------------------------------
    def __add__(self, other):
        other = as_tensor(other, self.dtype)
        a_shape, b_shape = self.shape, other.shape
        return Tensor.from_op(
            self.data + other.data, (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)), "add")

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other, self.dtype)
        a_shape, b_shape = self.shape, other.shape
        return Tensor.from_op(
            self.data - other.data, (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)), "sub")

    def __rsub__(self, other):
        return as_tensor(other, self.dtype) - self

    def __neg__(self):
        return Tensor.from_op(-self.data, (self,), lambda g: (-g,), "neg")

    def __mul__(self, other):
        other = as_tensor(other, self.dtype)
        a, b = self.data, other.data
        return Tensor.from_op(
            a * b, (self, other),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)), "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other, self.dtype)
        a, b = self.data, other.data
        out = a / b
        return Tensor.from_op(
            out, (self, other),
            lambda g: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * out / b, b.shape)), "div")

    def __rtruediv__(self, other):
        return as_tensor(other, self.dtype) / self

    # -- reductions and shape ------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        shape = self.shape
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).astype(g.dtype, copy=True),)

        return Tensor.from_op(np.asarray(out), (self,), back, "sum")

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else int(np.prod([self.shape[a] for a in np.atleast_1d(axis)]))
        return self.sum(axis=axis, keepdims=keepdims) / float(n)

    def reshape(self, *shape):
        src = self.shape
        return Tensor.from_op(self.data.reshape(*shape), (self,), lambda g: (g.reshape(src),), "reshape")

    def swapaxes(self, a: int, b: int):
        return Tensor.from_op(np.swapaxes(self.data, a, b), (self,),
                              lambda g: (np.swapaxes(g, a, b),), "swapaxes")

    def flip(self, axis: int):
        return Tensor.from_op(np.flip(self.data, axis), (self,), lambda g: (np.flip(g, axis),), "flip")

    def astype(self, dtype):
        src = self.dtype
        return Tensor.from_op(self.data.astype(dtype), (self,), lambda g: (g.astype(src),), "astype")

    def __getitem__(self, idx):
        src_shape, dtype = self.shape, self.dtype

        def back(g):
            full = np.zeros(src_shape, dtype=dtype)
            np.add.at(full, idx, g) if _fancy(idx) else full.__setitem__(idx, g)
            return (full,)

        return Tensor.from_op(self.data[idx], (self,), back, "slice")

    # -- pointwise nonlinearities --------------------------------------
    def sigmoid(self):
        out = _sigmoid(self.data)
        return Tensor.from_op(out, (self,), lambda g: (g * out * (1 - out),), "sigmoid")

    def tanh(self):
        out = np.tanh(self.data)
        return Tensor.from_op(out, (self,), lambda g: (g * (1 - out * out),), "tanh")

    def exp(self):
        out = np.exp(self.data)
        return Tensor.from_op(out, (self,), lambda g: (g * out,), "exp")

    def log(self):
        x = self.data
        return Tensor.from_op(np.log(x), (self,), lambda g: (g / x,), "log")


def _fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1 / (1 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1 + e)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype) if dtype is not None and np.ndim(x) == 0 else np.asarray(x)
    return Tensor(arr)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor.from_op(np.concatenate([x.data for x in xs], axis=axis), xs, back, "concat")


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(xs)))

    return Tensor.from_op(np.stack([x.data for x in xs], axis=axis), xs, back, "stack")


@dataclass
class GradTape:
    """Topologically ordered record of the graph that produced ``root``.

    Every node appears after all of its inputs.  Building the tape fails with
    :class:`CycleError` if the parent links form a cycle.
    """

    root: Tensor
    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def from_loss(cls, root: Tensor) -> "GradTape":
        order: list[Tensor] = []
        state: dict[int, int] = {}  # 1 = on stack, 2 = done
        stack_: list[tuple[Tensor, Iterable[Tensor]]] = [(root, iter(root._parents))]
        state[id(root)] = 1
        while stack_:
            node, parents = stack_[-1]
            advanced = False
            for p in parents:
                s = state.get(id(p))
                if s == 1:
                    raise CycleError(f"autodiff graph has a cycle through {p!r}")
                if s is None and p.requires_grad:
                    state[id(p)] = 1
                    stack_.append((p, iter(p._parents)))
                    advanced = True
                    break
            if not advanced:
                stack_.pop()
                state[id(node)] = 2
                order.append(node)
        return cls(root, order)


def backward(loss: Tensor, tape: GradTape | None = None) -> dict[int, np.ndarray]:
    """Accumulate d(loss)/d(node) for every node on the tape.

    Returns a map ``id(node) -> gradient``; leaves that require grad also get
    their ``.grad`` attribute set (added to any existing gradient).
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}", dim="loss")
    tape = tape or GradTape.from_loss(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.get(id(node))
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                raise ShapeError(f"gradient shape {pg.shape} != {parent.shape} in {node.op}", dim=node.op)
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg
    return grads
