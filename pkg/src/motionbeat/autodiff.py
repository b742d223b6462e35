"""Minimal reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps a float64 ndarray and records the operation that
produced it. Calling :meth:`Tensor.backward` on a scalar result walks the
graph in reverse topological order and accumulates ``.grad`` on every
tensor created with ``requires_grad=True``. Everything runs single-threaded
on the CPU; that is the reference path for bit-exact reproducibility.

Only the operations the encoder stacks and losses actually need are
implemented. All activations used in trainable paths are smooth, so
central finite differences are a valid oracle for the whole graph.
"""

from contextlib import contextmanager

import numpy as np

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording, e.g. for negative-sample encoding."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, (gdim, sdim) in enumerate(zip(grad.shape, shape)):
        if sdim == 1 and gdim != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """An ndarray plus the closure that routes gradients to its parents."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad) and _GRAD_ENABLED
        self.grad = None
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    def detach(self):
        return Tensor(self.data)

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def _result(data, parents, backward):
    """Build an op output; record the graph only when it can matter."""
    live = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=live)
    if live:
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
    return out


# -- arithmetic ---------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.data.shape))

    return _result(data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _result(data, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _result(data, (a, b), backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul requires ndim >= 2 on both operands")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a.accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b.accumulate(_unbroadcast(gb, b.data.shape))

    return _result(data, (a, b), backward)


# -- elementwise nonlinearities ------------------------------------------


def exp(x):
    x = as_tensor(x)
    data = np.exp(x.data)

    def backward(g):
        x.accumulate(g * data)

    return _result(data, (x,), backward)


def log(x):
    x = as_tensor(x)
    data = np.log(x.data)

    def backward(g):
        x.accumulate(g / x.data)

    return _result(data, (x,), backward)


def sqrt(x):
    x = as_tensor(x)
    data = np.sqrt(x.data)

    def backward(g):
        x.accumulate(g * 0.5 / data)

    return _result(data, (x,), backward)


def tanh(x):
    x = as_tensor(x)
    data = np.tanh(x.data)

    def backward(g):
        x.accumulate(g * (1.0 - data * data))

    return _result(data, (x,), backward)


def _sigmoid_arr(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x):
    x = as_tensor(x)
    data = _sigmoid_arr(np.atleast_1d(x.data)).reshape(x.data.shape)

    def backward(g):
        x.accumulate(g * data * (1.0 - data))

    return _result(data, (x,), backward)


def softplus(x):
    x = as_tensor(x)
    data = np.logaddexp(0.0, x.data)

    def backward(g):
        x.accumulate(g * _sigmoid_arr(np.atleast_1d(x.data)).reshape(x.data.shape))

    return _result(data, (x,), backward)


def gelu(x):
    """Smooth tanh-approximation GELU; composed so backward is automatic."""
    x = as_tensor(x)
    c = np.sqrt(2.0 / np.pi)
    inner = mul(add(x, mul(mul(mul(x, x), x), 0.044715)), c)
    return mul(mul(x, add(tanh(inner), 1.0)), 0.5)


# -- reductions and shaping ----------------------------------------------


def tsum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        x.accumulate(np.broadcast_to(g, x.data.shape).copy())

    return _result(data, (x,), backward)


def tmean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    if axis is None:
        count = x.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.data.shape[a] for a in axes]))
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x, shape):
    x = as_tensor(x)
    data = x.data.reshape(shape)

    def backward(g):
        x.accumulate(g.reshape(x.data.shape))

    return _result(data, (x,), backward)


def swapaxes(x, a, b):
    x = as_tensor(x)
    data = np.swapaxes(x.data, a, b)

    def backward(g):
        x.accumulate(np.swapaxes(g, a, b))

    return _result(data, (x,), backward)


def _is_basic_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(
        isinstance(it, (int, np.integer, slice, type(Ellipsis), type(None)))
        for it in items
    )


def getitem(x, idx):
    x = as_tensor(x)
    data = x.data[idx]

    def backward(g):
        buf = np.zeros_like(x.data)
        if _is_basic_index(idx):
            buf[idx] += g
        else:
            np.add.at(buf, idx, g)
        x.accumulate(buf)

    return _result(data, (x,), backward)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t.accumulate(np.take(g, i, axis=axis))

    return _result(data, tuple(tensors), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)

    def backward(g):
        offsets = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]
        for t, piece in zip(tensors, np.split(g, offsets, axis=axis)):
            if t.requires_grad:
                t.accumulate(piece)

    return _result(data, tuple(tensors), backward)


def custom_op(data, parents, grad_fns):
    """Insert an externally differentiated node into the graph.

    `grad_fns[i](g)` must return the gradient contribution for `parents[i]`
    given the output gradient `g`. Used to splice the alignment kernels
    (whose gradients come from their own backward recursions) into the
    model graph.
    """
    parents = tuple(as_tensor(p) for p in parents)

    def backward(g):
        for p, fn in zip(parents, grad_fns):
            if p.requires_grad:
                p.accumulate(fn(g))

    return _result(np.asarray(data, dtype=np.float64), parents, backward)


# -- composite helpers ----------------------------------------------------


def softmax_last(x):
    """Softmax over the trailing axis, stabilized with a detached max."""
    x = as_tensor(x)
    shift = np.max(x.data, axis=-1, keepdims=True)
    e = exp(add(x, -shift))
    return div(e, tsum(e, axis=-1, keepdims=True))


def logsumexp_last(x):
    x = as_tensor(x)
    shift = np.max(x.data, axis=-1, keepdims=True)
    s = tsum(exp(add(x, -shift)), axis=-1, keepdims=True)
    return add(log(s), shift)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the trailing axis to zero mean / unit variance, then affine."""
    mu = tmean(x, axis=-1, keepdims=True)
    centered = add(x, mul(mu, -1.0))
    var = tmean(mul(centered, centered), axis=-1, keepdims=True)
    normed = div(centered, sqrt(add(var, eps)))
    return add(mul(normed, gain), bias)


def l2_normalize(x, eps=1e-12):
    norm = sqrt(add(tsum(mul(x, x)), eps))
    return div(x, norm)
