"""Minimal fp64 reverse-mode autodiff on numpy arrays.

A DiffTensor wraps an ndarray value, a gradient accumulator, and links to
the nodes it was computed from.  Calling ``backward()`` on a scalar node
fills ``grad`` on every reachable node; repeated backward passes without
``zero_grad`` accumulate additively.

Reductions with ``min``/``max`` route the gradient to the first argmin /
argmax element (deterministic tie-break).  Binary ops broadcast like
numpy; the backward pass sums gradients over broadcast dimensions.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class DiffTensor:
    __slots__ = ("value", "grad", "_parents", "_backward")

    # keep numpy from hijacking mixed ndarray (op) DiffTensor expressions
    __array_ufunc__ = None

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = tuple(parents)
        self._backward = backward

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"DiffTensor(shape={self.shape}, value={self.value!r})"

    def item(self) -> float:
        return float(self.value)

    def __float__(self) -> float:
        return float(self.value)

    def detach(self) -> "DiffTensor":
        return DiffTensor(self.value)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def backward(self):
        if self.size != 1:
            raise ValueError("backward() requires a scalar node")
        topo, visited = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.value))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- elementwise arithmetic -------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = DiffTensor(self.value + other.value, (self, other))

        def back(g):
            self._accumulate(_unbroadcast(g, self.shape))
            other._accumulate(_unbroadcast(g, other.shape))

        out._backward = back
        return out

    __radd__ = __add__

    def __neg__(self):
        out = DiffTensor(-self.value, (self,))
        out._backward = lambda g: self._accumulate(-g)
        return out

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out = DiffTensor(self.value * other.value, (self, other))

        def back(g):
            self._accumulate(_unbroadcast(g * other.value, self.shape))
            other._accumulate(_unbroadcast(g * self.value, other.shape))

        out._backward = back
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out = DiffTensor(self.value / other.value, (self, other))

        def back(g):
            self._accumulate(_unbroadcast(g / other.value, self.shape))
            other._accumulate(
                _unbroadcast(-g * self.value / (other.value * other.value), other.shape)
            )

        out._backward = back
        return out

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out = DiffTensor(self.value**exponent, (self,))
        out._backward = lambda g: self._accumulate(
            g * exponent * self.value ** (exponent - 1)
        )
        return out

    def __matmul__(self, other):
        other = as_tensor(other)
        out = DiffTensor(self.value @ other.value, (self, other))

        def back(g):
            self._accumulate(_unbroadcast(g @ other.value.swapaxes(-1, -2), self.shape))
            other._accumulate(_unbroadcast(self.value.swapaxes(-1, -2) @ g, other.shape))

        out._backward = back
        return out

    def __rmatmul__(self, other):
        return as_tensor(other) @ self

    # -- elementwise functions ---------------------------------------------

    def exp(self):
        out = DiffTensor(np.exp(self.value), (self,))
        out._backward = lambda g: self._accumulate(g * out.value)
        return out

    def log(self):
        out = DiffTensor(np.log(self.value), (self,))
        out._backward = lambda g: self._accumulate(g / self.value)
        return out

    def sqrt(self):
        out = DiffTensor(np.sqrt(self.value), (self,))
        out._backward = lambda g: self._accumulate(g * 0.5 / out.value)
        return out

    def abs(self):
        out = DiffTensor(np.abs(self.value), (self,))
        out._backward = lambda g: self._accumulate(g * np.sign(self.value))
        return out

    def relu(self):
        out = DiffTensor(np.maximum(self.value, 0.0), (self,))
        out._backward = lambda g: self._accumulate(g * (self.value > 0.0))
        return out

    def softplus(self):
        out = DiffTensor(np.logaddexp(0.0, self.value), (self,))
        out._backward = lambda g: self._accumulate(g * _sigmoid(self.value))
        return out

    def sigmoid(self):
        s = _sigmoid(self.value)
        out = DiffTensor(s, (self,))
        out._backward = lambda g: self._accumulate(g * s * (1.0 - s))
        return out

    def tanh(self):
        t = np.tanh(self.value)
        out = DiffTensor(t, (self,))
        out._backward = lambda g: self._accumulate(g * (1.0 - t * t))
        return out

    # -- shape manipulation -------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = DiffTensor(self.value.reshape(shape), (self,))
        out._backward = lambda g: self._accumulate(g.reshape(self.shape))
        return out

    def swapaxes(self, a, b):
        out = DiffTensor(self.value.swapaxes(a, b), (self,))
        out._backward = lambda g: self._accumulate(g.swapaxes(a, b))
        return out

    def __getitem__(self, idx):
        out = DiffTensor(self.value[idx], (self,))

        def back(g):
            full = np.zeros_like(self.value)
            np.add.at(full, idx, g)
            self._accumulate(full)

        out._backward = back
        return out

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = DiffTensor(self.value.sum(axis=axis, keepdims=keepdims), (self,))

        def back(g):
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.shape).copy())
                return
            if not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape).copy())

        out._backward = back
        return out

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            count = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def _extremum(self, axis, argfn):
        if axis is None:
            flat_idx = argfn(self.value)
            out = DiffTensor(self.value.reshape(-1)[flat_idx], (self,))

            def back(g):
                full = np.zeros(self.size)
                full[flat_idx] = g
                self._accumulate(full.reshape(self.shape))

            out._backward = back
            return out
        idx = argfn(self.value, axis=axis)
        picked = np.take_along_axis(self.value, np.expand_dims(idx, axis), axis=axis)
        out = DiffTensor(np.squeeze(picked, axis=axis), (self,))

        def back(g):
            full = np.zeros_like(self.value)
            np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
            self._accumulate(full)

        out._backward = back
        return out

    def min(self, axis=None):
        return self._extremum(axis, np.argmin)

    def max(self, axis=None):
        return self._extremum(axis, np.argmax)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def as_tensor(x) -> DiffTensor:
    return x if isinstance(x, DiffTensor) else DiffTensor(x)


def is_tensor(x) -> bool:
    return isinstance(x, DiffTensor)


def stack(tensors, axis: int = 0) -> DiffTensor:
    tensors = [as_tensor(t) for t in tensors]
    out = DiffTensor(np.stack([t.value for t in tensors], axis=axis), tuple(tensors))

    def back(g):
        for i, t in enumerate(tensors):
            t._accumulate(np.take(g, i, axis=axis))

    out._backward = back
    return out


def concatenate(tensors, axis: int = 0) -> DiffTensor:
    tensors = [as_tensor(t) for t in tensors]
    out = DiffTensor(np.concatenate([t.value for t in tensors], axis=axis), tuple(tensors))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            t._accumulate(g[tuple(sl)])

    out._backward = back
    return out


def logsumexp(t: DiffTensor, axis: int = -1, keepdims: bool = False) -> DiffTensor:
    """Numerically stable log-sum-exp along an axis (gradient = softmax)."""
    t = as_tensor(t)
    shift = np.max(t.value, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)  # all -inf slice guard
    z = (t - shift).exp().sum(axis=axis, keepdims=keepdims)
    out = z.log()
    if not keepdims:
        shift = np.squeeze(shift, axis=axis)
    return out + shift


def softmax(t: DiffTensor, axis: int = -1) -> DiffTensor:
    t = as_tensor(t)
    return (t - logsumexp(t, axis=axis, keepdims=True)).exp()


def log_softmax(t: DiffTensor, axis: int = -1) -> DiffTensor:
    t = as_tensor(t)
    return t - logsumexp(t, axis=axis, keepdims=True)
