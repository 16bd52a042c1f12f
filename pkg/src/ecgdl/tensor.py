"""Reverse-mode automatic differentiation over numpy arrays.

The engine is a plain tape: every operation produces a new :class:`Tensor`
holding the result, references to its parents, and a closure that maps the
output gradient to parent gradients.  ``backward()`` walks the graph in
reverse topological order.  Sequence data follows the (batch, time, channel)
layout throughout the package, but the engine itself is shape-agnostic.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import NumericalError, ShapeError

__all__ = [
    "Tensor",
    "no_grad",
    "grad_enabled",
    "set_finite_checks",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "absolute",
    "power",
    "matmul",
    "relu",
    "sigmoid",
    "tanh_act",
    "sum_",
    "mean_",
    "reshape",
    "getitem",
    "concat",
]

_GRAD_ENABLED = True
_FINITE_CHECKS = True


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference/oracles)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def set_finite_checks(enabled: bool) -> None:
    """Toggle the NaN/Inf guard applied to every op output."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


class Tensor:
    """A numpy array with an optional gradient and graph linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_as_float_dtype(data))
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- convenience ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- graph ------------------------------------------------------------

    def backward(self, grad=None) -> None:
        """Accumulate gradients of this tensor w.r.t. every graph leaf.

        Iterative topological sort; safe for long unrolled recurrences.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without an explicit gradient requires a scalar output")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)

        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited and parent.requires_grad:
                    stack.append((parent, False))

        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            parent_grads = node._backward(node.grad)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = pg
                else:
                    parent.grad = parent.grad + pg

    # -- operators ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _as_float_dtype(data) -> np.dtype:
    dt = np.asarray(data).dtype
    if dt == np.float32:
        return np.dtype(np.float32)
    return np.dtype(np.float64)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def make_op(name, out_data, parents, backward_fn) -> Tensor:
    """Wrap an op result: finite-check it and link it into the graph."""
    if _FINITE_CHECKS and not np.all(np.isfinite(out_data)):
        raise NumericalError(f"{name} produced non-finite values")
    requires = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=requires)
    if requires:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def sum_to_shape(grad: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the parent's shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise arithmetic -------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return sum_to_shape(g, a.shape), sum_to_shape(g, b.shape)

    return make_op("add", a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return sum_to_shape(g, a.shape), sum_to_shape(-g, b.shape)

    return make_op("sub", a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return sum_to_shape(g * b.data, a.shape), sum_to_shape(g * a.data, b.shape)

    return make_op("mul", a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = sum_to_shape(g / b.data, a.shape)
        gb = sum_to_shape(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    return make_op("div", out, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_op("neg", -a.data, (a,), lambda g: (-g,))


def absolute(a) -> Tensor:
    """|x| with subgradient sign(x) (0 at x == 0)."""
    a = as_tensor(a)
    return make_op("abs", np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    exponent = float(exponent)
    out = a.data ** exponent

    def backward(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return make_op("pow", out, (a,), backward)


# -- linear algebra ----------------------------------------------------------


def matmul(a, b) -> Tensor:
    """``a[..., F] @ b[F, G]``; batch axes on the left operand only."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2:
        raise ShapeError(f"matmul expects a 2-D right operand, got {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return make_op("matmul", out, (a, b), backward)


# -- activations -------------------------------------------------------------


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.data, 0.0)
    return make_op("relu", out, (x,), lambda g: (g * (x.data > 0),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # Evaluated piecewise to avoid exp overflow for large |x|.
    d = x.data
    out = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    return make_op("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh_act(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return make_op("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


# -- reductions / reshaping --------------------------------------------------


def sum_(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy() if g.ndim == 0 else g.reshape(x.shape),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_op("sum", out, (x,), backward)


def mean_(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))
    return sum_(x, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(shape)
    return make_op("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def getitem(x, index) -> Tensor:
    """Basic indexing (ints/slices); gradient scatters back into place."""
    x = as_tensor(x)
    out = x.data[index]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[index] += g
        return (gx,)

    return make_op("getitem", out, (x,), backward)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_op("concat", out, tuple(tensors), backward)
