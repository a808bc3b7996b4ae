"""Reverse-mode automatic differentiation over float64 numpy arrays.

A small define-by-run tape: each operation returns a new ``Tensor`` holding
the forward value plus a closure that maps the output gradient to gradients
of the inputs. ``backward()`` runs the closures in reverse topological
order. Everything is 64-bit; shapes follow numpy broadcasting rules.
"""
from __future__ import annotations

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward_fn = backward_fn if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # ---- graph traversal ------------------------------------------------

    def backward(self):
        """Accumulate gradients of this scalar into every reachable leaf."""
        if self.data.size != 1:
            raise DimensionError("backward() requires a scalar loss")
        order: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in seen:
                continue
            if expanded:
                seen.add(id(node))
                order.append(node)
            else:
                stack.append((node, True))
                for p in node._parents:
                    if id(p) not in seen and p.requires_grad:
                        stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward_fn is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward_fn(node.grad)):
                if not parent.requires_grad or g is None:
                    continue
                g = _unbroadcast(np.asarray(g, dtype=np.float64), parent.data.shape)
                parent.grad = g if parent.grad is None else parent.grad + g

    # ---- arithmetic ------------------------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def __add__(self, other):
        other = self._lift(other)
        return Tensor(self.data + other.data, parents=(self, other),
                      backward_fn=lambda g: (g, g))

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.data, parents=(self,), backward_fn=lambda g: (-g,))

    def __sub__(self, other):
        other = self._lift(other)
        return Tensor(self.data - other.data, parents=(self, other),
                      backward_fn=lambda g: (g, -g))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        other = self._lift(other)
        a, b = self.data, other.data
        return Tensor(a * b, parents=(self, other),
                      backward_fn=lambda g: (g * b, g * a))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        a, b = self.data, other.data
        return Tensor(a / b, parents=(self, other),
                      backward_fn=lambda g: (g / b, -g * a / (b * b)))

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __matmul__(self, other):
        other = self._lift(other)
        a, b = self.data, other.data
        if a.ndim == 0 or b.ndim == 0:
            raise DimensionError("matmul requires at least 1-d operands")

        def bw(g):
            g = np.asarray(g)
            if a.ndim == 1 and b.ndim == 1:
                return g * b, g * a
            if b.ndim == 1:
                return g[..., None] * b, (np.swapaxes(a, -1, -2) @ g[..., None])[..., 0]
            if a.ndim == 1:
                return (b @ g[..., None])[..., 0], a[:, None] * g[..., None, :]
            return g @ np.swapaxes(b, -1, -2), np.swapaxes(a, -1, -2) @ g

        return Tensor(a @ b, parents=(self, other), backward_fn=bw)

    def pow_const(self, p: float):
        d = self.data

        def bw(g):
            return (g * p * d ** (p - 1),)

        return Tensor(d ** p, parents=(self,), backward_fn=bw)

    def square(self):
        return self.pow_const(2.0)

    # ---- shape ops -------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        return Tensor(self.data.reshape(shape), parents=(self,),
                      backward_fn=lambda g: (g.reshape(old),))

    def swapaxes(self, a: int, b: int):
        return Tensor(np.swapaxes(self.data, a, b), parents=(self,),
                      backward_fn=lambda g: (np.swapaxes(g, a, b),))

    def __getitem__(self, idx):
        shape = self.data.shape

        def bw(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return (out,)

        return Tensor(self.data[idx], parents=(self,), backward_fn=bw)

    # ---- reductions & nonlinearities --------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        shape = self.data.shape

        def bw(g):
            if axis is None:
                return (np.broadcast_to(g, shape).copy(),)
            g2 = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(g2, shape).copy(),)

        return Tensor(self.data.sum(axis=axis, keepdims=keepdims), parents=(self,), backward_fn=bw)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.data.size
        elif isinstance(axis, tuple):
            n = int(np.prod([self.data.shape[a] for a in axis]))
        else:
            n = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def tanh(self):
        y = np.tanh(self.data)
        return Tensor(y, parents=(self,), backward_fn=lambda g: (g * (1.0 - y * y),))

    def exp(self):
        y = np.exp(self.data)
        return Tensor(y, parents=(self,), backward_fn=lambda g: (g * y,))

    def log(self):
        d = self.data
        return Tensor(np.log(d), parents=(self,), backward_fn=lambda g: (g / d,))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax along `axis` (max subtraction)."""
    d = x.data
    if d.size == 0:
        raise DimensionError("softmax of empty input")
    if not np.all(np.isfinite(d)):
        raise NumericError("softmax requires finite logits")
    z = d - d.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return Tensor(y, parents=(x,), backward_fn=bw)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [Tensor._lift(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                  parents=tuple(tensors), backward_fn=bw)


def take_rows(table: Tensor, ids) -> Tensor:
    """Embedding lookup: rows of `table` at integer `ids` (any id shape)."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ValueError("token id outside table")
    shape = table.data.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, ids, g)
        return (out,)

    return Tensor(table.data[ids], parents=(table,), backward_fn=bw)


class ParamSet:
    """Named parameter tensors with a stable (insertion) order.

    Names are unique and shapes are fixed once a parameter is added;
    ``from_vector`` refuses any size change.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, array) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.array(array, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    @property
    def n_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def to_vector(self) -> np.ndarray:
        if not self._params:
            return np.zeros(0)
        return np.concatenate([t.data.ravel() for t in self._params.values()])

    def grad_vector(self) -> np.ndarray:
        parts = []
        for t in self._params.values():
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            parts.append(g.ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    def from_vector(self, vec: np.ndarray):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.n_values:
            raise DimensionError("vector length does not match parameter count")
        i = 0
        for t in self._params.values():
            n = t.data.size
            t.data = vec[i:i + n].reshape(t.data.shape).copy()
            i += n

    def copy(self) -> "ParamSet":
        out = ParamSet()
        for name, t in self._params.items():
            out.add(name, t.data.copy())
        return out
