"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps an ``ndarray`` and remembers the operation that
produced it. Calling :meth:`Tensor.backward` on a scalar walks the recorded
graph in reverse topological order and accumulates ``.grad`` on every leaf
created with ``requires_grad=True``.
"""

from __future__ import annotations

import contextlib

import numpy as np
import scipy.sparse as sp

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- basic properties ------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- graph machinery -------------------------------------------------
    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operators -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

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

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return max_(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _lift(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _result(data, parents, backward):
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# -- elementwise binary -----------------------------------------------------
def add(a, b):
    a, b = (a, _lift(b, a)) if isinstance(a, Tensor) else (_lift(a, b), b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = (a, _lift(b, a)) if isinstance(a, Tensor) else (_lift(a, b), b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = (a, _lift(b, a)) if isinstance(a, Tensor) else (_lift(a, b), b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, (a, b), backward)


def div(a, b):
    a, b = (a, _lift(b, a)) if isinstance(a, Tensor) else (_lift(a, b), b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward)


def neg(a):
    return _result(-a.data, (a,), lambda g: (-g,))


def power(a, exponent):
    exponent = float(exponent)
    out = a.data**exponent

    def backward(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return _result(out, (a,), backward)


def matmul(a, b):
    a, b = (a, _lift(b, a)) if isinstance(a, Tensor) else (_lift(a, b), b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                k, m = b.shape
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, m)
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _result(a.data @ b.data, (a, b), backward)


def where(cond, a, b):
    """Select from ``a`` where ``cond`` holds, else from ``b``."""
    cond = np.asarray(cond, dtype=bool)
    like = a if isinstance(a, Tensor) else b
    a, b = _lift(a, like), _lift(b, like)

    def backward(g):
        ga = _unbroadcast(np.where(cond, g, 0.0), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.where(cond, 0.0, g), b.shape) if b.requires_grad else None
        return ga, gb

    return _result(np.where(cond, a.data, b.data), (a, b), backward)


# -- elementwise unary --------------------------------------------------------
def exp(a):
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a):
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a):
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a):
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0).astype(a.dtype), (a,), lambda g: (g * mask,))


def leaky_relu(a, slope=0.01):
    mask = a.data > 0
    out = np.where(mask, a.data, slope * a.data).astype(a.dtype)
    return _result(out, (a,), lambda g: (np.where(mask, g, slope * g),))


def elu(a, alpha=1.0):
    mask = a.data > 0
    neg_part = alpha * np.expm1(np.minimum(a.data, 0.0))
    out = np.where(mask, a.data, neg_part).astype(a.dtype)
    return _result(out, (a,), lambda g: (np.where(mask, g, g * (neg_part + alpha)),))


def abs_(a):
    return _result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def sin(a):
    return _result(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a):
    return _result(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def tan(a):
    out = np.tan(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 + out * out),))


# -- reductions -----------------------------------------------------------------
def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims=False):
    def backward(g):
        return (np.array(_expand_reduced(g, a.shape, axis, keepdims)),)

    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims=False):
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size // max(out.size, 1)

    def backward(g):
        return (np.array(_expand_reduced(g, a.shape, axis, keepdims)) / count,)

    return _result(out, (a,), backward)


def max_(a, axis=None, keepdims=False):
    out_k = a.data.max(axis=axis, keepdims=True)
    out = out_k if keepdims else (out_k.reshape(()) if axis is None else np.squeeze(out_k, axis))

    def backward(g):
        mask = a.data == out_k
        share = mask / mask.sum(axis=axis, keepdims=True)
        gk = g if keepdims or axis is None else np.expand_dims(g, axis)
        if axis is None:
            gk = np.reshape(g, (1,) * a.ndim)
        return (share * gk,)

    return _result(out, (a,), backward)


# -- shape manipulation ------------------------------------------------------
def reshape(a, shape):
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _result(out, (a,), lambda g: (np.transpose(g, inv),))


def _is_advanced(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def getitem(a, idx):
    advanced = _is_advanced(idx)

    def backward(g):
        full = np.zeros_like(a.data)
        if advanced:
            np.add.at(full, idx, g)
        else:
            full[idx] += g
        return (full,)

    return _result(a.data[idx], (a,), backward)


def take_rows(a, index):
    """Gather rows ``a[index]`` along axis 0 (repeats allowed)."""
    index = np.asarray(index, dtype=np.int64)

    def backward(g):
        return (segment_sum_array(g, index, a.shape[0]),)

    return _result(a.data[index], (a,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _result(np.stack([t.data for t in tensors], axis=axis), tensors, backward)


# -- softmax family ------------------------------------------------------------
def softmax(a, axis=-1):
    """Numerically stable softmax; ``-inf`` logits get exactly zero weight."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (a,), backward)


def log_softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _result(out, (a,), backward)


# -- segment operations -------------------------------------------------------
def _incidence(segment_ids, num_segments):
    n = len(segment_ids)
    return sp.csr_matrix(
        (np.ones(n), (segment_ids, np.arange(n))), shape=(num_segments, n)
    )


def segment_sum_array(values, segment_ids, num_segments):
    """Sum rows of ``values`` into ``num_segments`` buckets (numpy only)."""
    flat = values.reshape(len(values), -1)
    inc = _incidence(segment_ids, num_segments).astype(values.dtype)
    out = np.asarray(inc @ flat)
    return out.reshape((num_segments,) + values.shape[1:])


def segment_sum(a, segment_ids, num_segments):
    """Differentiable scatter-add of rows; summation order follows row order."""
    segment_ids = np.asarray(segment_ids, dtype=np.int64)

    def backward(g):
        return (g[segment_ids],)

    return _result(segment_sum_array(a.data, segment_ids, num_segments), (a,), backward)


def segment_max(a, starts):
    """Row-wise maximum over contiguous segments beginning at ``starts``."""
    starts = np.asarray(starts, dtype=np.int64)
    out = np.maximum.reduceat(a.data, starts, axis=0)
    lengths = np.diff(np.append(starts, a.shape[0]))
    seg = np.repeat(np.arange(len(starts)), lengths)

    def backward(g):
        mask = (a.data == out[seg]).astype(a.dtype)
        counts = segment_sum_array(mask, seg, len(starts))
        return (mask * (g / counts)[seg],)

    return _result(out, (a,), backward)


# -- convolution -------------------------------------------------------------
def conv1d(x, weight, bias=None, stride=1, padding=0):
    """1-D cross-correlation. ``x``: (B, C_in, T); ``weight``: (C_out, C_in, K)."""
    bsz, c_in, _ = x.shape
    c_out, c_in_w, k = weight.shape
    if c_in != c_in_w:
        raise ValueError(f"conv1d expects {c_in_w} input channels, got {c_in}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding)))
    t_pad = xp.shape[2]
    t_out = (t_pad - k) // stride + 1
    if t_out < 1:
        raise ValueError("conv1d input shorter than kernel")
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)[:, :, ::stride]
    cols = np.ascontiguousarray(windows.transpose(0, 2, 1, 3)).reshape(bsz, t_out, c_in * k)
    w2 = weight.data.reshape(c_out, c_in * k)
    out = (cols @ w2.T).transpose(0, 2, 1)
    parents = [x, weight]
    if bias is not None:
        out = out + bias.data[None, :, None]
        parents.append(bias)

    def backward(g):
        g2 = g.transpose(0, 2, 1)
        gx = gw = gb = None
        if x.requires_grad:
            gcols = (g2 @ w2).reshape(bsz, t_out, c_in, k).transpose(0, 2, 1, 3)
            gxp = np.zeros_like(xp)
            span = stride * (t_out - 1) + 1
            for j in range(k):
                gxp[:, :, j : j + span : stride] += gcols[:, :, :, j]
            gx = gxp[:, :, padding : t_pad - padding] if padding else gxp
        if weight.requires_grad:
            gw = (g2.reshape(-1, c_out).T @ cols.reshape(-1, c_in * k)).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        return (gx, gw, gb)[: len(parents)]

    return _result(np.ascontiguousarray(out), parents, backward)
