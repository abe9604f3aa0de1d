"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

A Tensor records its parents and a backward closure on a tape; backward()
walks the tape in reverse topological order.  Only the operations the
relational model needs are provided, each with a broadcasting-aware adjoint.
Everything runs in double precision so analytic gradients can be held to
finite-difference oracles at tight tolerance.
"""

from __future__ import annotations

import numpy as np


class NumericalError(RuntimeError):
    """Raised when a forward pass produces non-finite values."""


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (the adjoint of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.data.shape

    # -- graph traversal ----------------------------------------------------

    def backward(self, seed: np.ndarray | None = None) -> None:
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            seed = np.ones_like(self.data)
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited or not node.requires_grad:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.asarray(seed, dtype=np.float64)
        for node in reversed(topo):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                g = _unbroadcast(g, parent.data.shape)
                parent.grad = g if parent.grad is None else parent.grad + g

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    # -- arithmetic ----------------------------------------------------------

    @staticmethod
    def _lift(other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other):
        other = self._lift(other)
        return Tensor(self.data + other.data, parents=(self, other),
                      backward=lambda g: (g, g))

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.data, parents=(self,), backward=lambda g: (-g,))

    def __sub__(self, other):
        other = self._lift(other)
        return Tensor(self.data - other.data, parents=(self, other),
                      backward=lambda g: (g, -g))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        other = self._lift(other)
        return Tensor(self.data * other.data, parents=(self, other),
                      backward=lambda g: (g * other.data, g * self.data))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        return Tensor(self.data / other.data, parents=(self, other),
                      backward=lambda g: (g / other.data,
                                          -g * self.data / other.data**2))

    def __pow__(self, exponent: float):
        e = float(exponent)
        return Tensor(self.data**e, parents=(self,),
                      backward=lambda g: (g * e * self.data**(e - 1.0),))

    def __matmul__(self, other):
        other = self._lift(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError("matmul supports 2D operands only")
        return Tensor(self.data @ other.data, parents=(self, other),
                      backward=lambda g: (g @ other.data.T, self.data.T @ g))

    def __getitem__(self, key):
        def back(g):
            out = np.zeros_like(self.data)
            np.add.at(out, key, g)
            return (out,)
        return Tensor(self.data[key], parents=(self,), backward=back)

    def reshape(self, *shape):
        orig = self.data.shape
        return Tensor(self.data.reshape(*shape), parents=(self,),
                      backward=lambda g: (g.reshape(orig),))

    def sum(self, axis=None, keepdims=False):
        def back(g):
            if axis is None:
                return (np.broadcast_to(g, self.data.shape).copy(),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, self.data.shape).copy(),)
        return Tensor(self.data.sum(axis=axis, keepdims=keepdims),
                      parents=(self,), backward=back)

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)


# -- nonlinearities and reductions -------------------------------------------

def exp(t: Tensor) -> Tensor:
    out = np.exp(t.data)
    return Tensor(out, parents=(t,), backward=lambda g: (g * out,))


def log(t: Tensor) -> Tensor:
    return Tensor(np.log(t.data), parents=(t,),
                  backward=lambda g: (g / t.data,))


def elu(t: Tensor) -> Tensor:
    out = np.where(t.data > 0, t.data, np.expm1(t.data))
    deriv = np.where(t.data > 0, 1.0, np.exp(t.data))
    return Tensor(out, parents=(t,), backward=lambda g: (g * deriv,))


def sigmoid(t: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-np.abs(t.data)))
    out = np.where(t.data >= 0, out, 1.0 - out)
    return Tensor(out, parents=(t,), backward=lambda g: (g * out * (1.0 - out),))


def softplus(t: Tensor) -> Tensor:
    """log(1 + e^x), computed stably for large |x|."""
    out = np.maximum(t.data, 0.0) + np.log1p(np.exp(-np.abs(t.data)))
    sig = 1.0 / (1.0 + np.exp(-np.abs(t.data)))
    sig = np.where(t.data >= 0, sig, 1.0 - sig)
    return Tensor(out, parents=(t,), backward=lambda g: (g * sig,))


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    shifted = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return Tensor(out, parents=(t,), backward=back)


def log_softmax(t: Tensor, axis: int = -1) -> Tensor:
    shifted = t.data - t.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def back(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return Tensor(out, parents=(t,), backward=back)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    datas = [t.data for t in tensors]
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(np.concatenate(datas, axis=axis), parents=tuple(tensors), backward=back)


def segment_sum(t: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """out[k] = sum of rows i of `t` with segment_ids[i] == k (rows on axis 0)."""
    out = np.zeros((num_segments,) + t.data.shape[1:], dtype=np.float64)
    if t.data.shape[0]:
        np.add.at(out, segment_ids, t.data)
    return Tensor(out, parents=(t,), backward=lambda g: (g[segment_ids],))


def where_const(condition: np.ndarray, t: Tensor, fill: float = 0.0) -> Tensor:
    """Elementwise select between `t` and a constant; gradient flows where chosen."""
    cond = np.asarray(condition, dtype=bool)
    return Tensor(np.where(cond, t.data, fill), parents=(t,),
                  backward=lambda g: (np.where(cond, g, 0.0),))


def check_finite(t: Tensor, label: str) -> Tensor:
    if not np.isfinite(t.data).all():
        raise NumericalError(f"non-finite values in {label}")
    return t
