"""Reverse-mode differentiable tensors over numpy arrays.

Only the operator set the extrapolation and fusion networks need is
provided. Graph construction is skipped inside :func:`no_grad` and
whenever no input requires a gradient.
"""

import contextlib

import numpy as np

from .. import kernels

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _check_finite(arr, op):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {op} output")
    return arr


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def as_tensor(value, like=None):
    if isinstance(value, Tensor):
        return value
    if like is not None and isinstance(value, (int, float)):
        # python scalars stay weakly typed, as in numpy
        return Tensor(np.asarray(value, dtype=like.dtype))
    return Tensor(value)


class Tensor:
    """N-dimensional array with an optional gradient.

    Parameters
    ----------
    data : array_like
        Values; floating arrays keep their dtype, anything else becomes float64.
    requires_grad : bool
        Whether :meth:`backward` should populate ``grad`` for this tensor.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = _parents
        self._backward = _backward

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # -- graph -----------------------------------------------------------
    @staticmethod
    def _make(out, parents, backward, op):
        _check_finite(out, op)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            return Tensor(out, requires_grad=True, _parents=parents, _backward=backward)
        return Tensor(out)

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("grad must be given for non-scalar tensors")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        grads = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    def zero_grad(self):
        self.grad = None

    # -- elementwise ---------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other, like=self)
        a, b = self, other
        return Tensor._make(
            a.data + b.data,
            (a, b),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
            "add",
        )

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other, like=self)
        a, b = self, other
        return Tensor._make(
            a.data - b.data,
            (a, b),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
            "sub",
        )

    def __rsub__(self, other):
        return as_tensor(other, like=self) - self

    def __mul__(self, other):
        other = as_tensor(other, like=self)
        a, b = self, other
        return Tensor._make(
            a.data * b.data,
            (a, b),
            lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
            "mul",
        )

    __rmul__ = __mul__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,), "neg")

    def abs(self):
        x = self
        # np.sign is 0 at 0: subgradient 0 at ties
        return Tensor._make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")

    def relu(self):
        x = self
        mask = x.data > 0
        return Tensor._make(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")

    # -- reductions and shape ------------------------------------------
    def sum(self, axis=None, keepdims=False):
        x = self
        out = x.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=True),)

        return Tensor._make(np.asarray(out, dtype=x.dtype), (x,), backward, "sum")

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            count = self.data.size
        else:
            axes = (axis,) if np.isscalar(axis) else axis
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        x = self
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Tensor._make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")

    def transpose(self, *axes):
        x = self
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = np.argsort(axes)
        return Tensor._make(
            np.ascontiguousarray(x.data.transpose(axes)),
            (x,),
            lambda g: (g.transpose(inverse),),
            "transpose",
        )

    def __getitem__(self, index):
        x = self

        def backward(g):
            full = np.zeros(x.shape, dtype=x.dtype)
            full[index] += g
            return (full,)

        return Tensor._make(np.ascontiguousarray(x.data[index]), (x,), backward, "getitem")


def concat(tensors, axis=-1):
    """Concatenate along ``axis``; the gradient is split back to each input."""
    tensors = [as_tensor(t) for t in tensors]
    if len(tensors) == 1:
        return tensors[0]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != ax
        ):
            raise ValueError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    return Tensor._make(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=ax)), "concat")


def softmax(x, axis=-1):
    """Max-stabilised softmax along ``axis``."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._make(y, (x,), backward, "softmax")


def shift_x(x, shifts, boundary="clamp"):
    """Differentiable linear resampling along the width axis of ``[N, H, W, V]``.

    ``out[n, h, w, v] = x[n, h, w + shifts[n, v], v]`` with linear weights.
    """
    code = kernels.boundary_code(boundary)
    shifts = np.ascontiguousarray(shifts, dtype=np.float64)
    src = np.ascontiguousarray(x.data)
    out = kernels.shift_x(src, shifts, code)
    return Tensor._make(
        out,
        (x,),
        lambda g: (kernels.shift_x_adjoint(np.ascontiguousarray(g), shifts, code),),
        "shift_x",
    )
