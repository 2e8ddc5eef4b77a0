"""Minimal reverse-mode automatic differentiation over numpy arrays.

Only the operations needed by the forecaster are implemented: elementwise
arithmetic with broadcasting, matmul, reductions, log/exp/sigmoid/softmax,
abs/sqrt/clipping, concatenation, and the boundary-clipped radius-1 mass
shift. Gradients are accumulated on leaf nodes after ``backward`` on a
scalar output.
"""
from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Var:
    """A node in the computation tape."""

    __slots__ = ("data", "grad", "parents", "_backward", "requires_grad")

    # make numpy defer to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, data, parents=(), backward=None, requires_grad=True):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    # -- graph construction helpers -------------------------------------

    @staticmethod
    def lift(x) -> "Var":
        return x if isinstance(x, Var) else Var(x, requires_grad=False)

    def __add__(self, other):
        other = Var.lift(other)
        out = Var(self.data + other.data, (self, other))

        def back(g):
            return _unbroadcast(g, self.shape), _unbroadcast(g, other.shape)

        out._backward = back
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Var(-self.data, (self,))
        out._backward = lambda g: (-g,)
        return out

    def __sub__(self, other):
        return self + (-Var.lift(other))

    def __rsub__(self, other):
        return Var.lift(other) + (-self)

    def __mul__(self, other):
        other = Var.lift(other)
        out = Var(self.data * other.data, (self, other))

        def back(g):
            return (
                _unbroadcast(g * other.data, self.shape),
                _unbroadcast(g * self.data, other.shape),
            )

        out._backward = back
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Var.lift(other)
        out = Var(self.data / other.data, (self, other))

        def back(g):
            return (
                _unbroadcast(g / other.data, self.shape),
                _unbroadcast(-g * self.data / other.data**2, other.shape),
            )

        out._backward = back
        return out

    def __rtruediv__(self, other):
        return Var.lift(other) / self

    def __matmul__(self, other):
        other = Var.lift(other)
        out = Var(self.data @ other.data, (self, other))
        a, b = self.data, other.data

        def back(g):
            g = np.asarray(g)
            if a.ndim == 1 and b.ndim == 1:  # dot -> scalar
                return g * b, g * a
            if a.ndim == 2 and b.ndim == 1:  # (m,n)@(n,) -> (m,)
                return np.outer(g, b), a.T @ g
            if a.ndim == 1 and b.ndim == 2:  # (m,)@(m,n) -> (n,)
                return b @ g, np.outer(a, g)
            return g @ b.T, a.T @ g

        out._backward = back
        return out

    def __rmatmul__(self, other):
        return Var.lift(other) @ self

    def __getitem__(self, idx):
        out = Var(self.data[idx], (self,))

        def back(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            return (full,)

        out._backward = back
        return out

    def sum(self, axis=None):
        out = Var(self.data.sum(axis=axis), (self,))

        def back(g):
            if axis is None:
                return (np.broadcast_to(g, self.shape).copy(),)
            return (np.broadcast_to(np.expand_dims(g, axis), self.shape).copy(),)

        out._backward = back
        return out

    def mean(self):
        return self.sum() / self.data.size

    def exp(self):
        e = np.exp(self.data)
        out = Var(e, (self,))
        out._backward = lambda g: (g * e,)
        return out

    def log(self):
        out = Var(np.log(self.data), (self,))
        out._backward = lambda g: (g / self.data,)
        return out

    def sqrt(self):
        r = np.sqrt(self.data)
        out = Var(r, (self,))
        out._backward = lambda g: (g / (2.0 * r),)
        return out

    def abs(self):
        out = Var(np.abs(self.data), (self,))
        out._backward = lambda g: (g * np.sign(self.data),)
        return out

    def sigmoid(self):
        s = 1.0 / (1.0 + np.exp(-self.data))
        out = Var(s, (self,))
        out._backward = lambda g: (g * s * (1.0 - s),)
        return out

    def softmax(self, axis=-1):
        x = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(x)
        s = e / e.sum(axis=axis, keepdims=True)
        out = Var(s, (self,))

        def back(g):
            dot = (g * s).sum(axis=axis, keepdims=True)
            return (s * (g - dot),)

        out._backward = back
        return out

    def clip_max(self, hi: float):
        """min(x, hi); zero gradient where clipped."""
        mask = self.data < hi
        out = Var(np.where(mask, self.data, hi), (self,))
        out._backward = lambda g: (g * mask,)
        return out

    # -- backward pass --------------------------------------------------

    def backward(self):
        if self.data.ndim != 0:
            raise ValueError("backward requires a scalar output")
        topo: list[Var] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if p.requires_grad:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node.parents, node._backward(node.grad)):
                if not parent.requires_grad:
                    continue
                if parent.grad is None:
                    # first contribution: take g as-is (never mutated in
                    # place, so aliasing a child's buffer is safe)
                    parent.grad = np.broadcast_to(g, parent.data.shape)
                else:
                    parent.grad = parent.grad + g


def concat(vars_or_arrays) -> Var:
    parts = [Var.lift(v) for v in vars_or_arrays]
    sizes = [p.data.size for p in parts]
    out = Var(np.concatenate([p.data.ravel() for p in parts]), tuple(parts))

    def back(g):
        grads = []
        off = 0
        for p, n in zip(parts, sizes):
            grads.append(g[off : off + n].reshape(p.shape))
            off += n
        return tuple(grads)

    out._backward = back
    return out


def shift_mass_var(left: Var, stay: Var, right: Var) -> Var:
    """Differentiable boundary-clipped radius-1 mass accumulation, matching
    transport.shift_mass."""
    from .transport import shift_mass

    out_data = shift_mass(left.data, stay.data, right.data)
    out = Var(out_data, (left, stay, right))

    def back(g):
        gl = np.empty_like(g)
        gl[0] = g[0]
        gl[1:] = g[:-1]
        gr = np.empty_like(g)
        gr[-1] = g[-1]
        gr[:-1] = g[1:]
        return gl, g.copy(), gr

    out._backward = back
    return out
