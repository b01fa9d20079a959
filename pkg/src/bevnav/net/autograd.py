"""A small reverse-mode differentiation engine over numpy arrays.

Every op returns a new ``Tensor`` holding its parents and a closure that
pushes the output gradient back to them. ``Tensor.backward`` walks the graph
in reverse topological order. Convolutions use NCHW layout.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward", "name")

    def __init__(self, data, requires_grad=False, _prev=(), name=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._prev = _prev
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, name={self.name})"

    def _acc(self, g):
        # grads are never updated in place, so aliasing g is safe
        self.grad = g if self.grad is None else self.grad + g

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None, retain_grads=False):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf that needs it.

        Intermediate gradients are dropped once used unless ``retain_grads``.
        """
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=self.data.dtype)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._prev and not retain_grads:
                    node.grad = None

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(as_tensor(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _out(data, parents, backward):
    req = any(p.requires_grad for p in parents)
    t = Tensor(data, requires_grad=req, _prev=tuple(parents) if req else ())
    if req:
        t._backward = backward
    return t


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# elementwise ----------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b, a.dtype if isinstance(a, Tensor) else None)

    def bw(g):
        if a.requires_grad:
            a._acc(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._acc(_unbroadcast(g, b.shape))

    return _out(a.data + b.data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _out(-a.data, (a,), lambda g: a._acc(-g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b, a.dtype if isinstance(a, Tensor) else None)

    def bw(g):
        if a.requires_grad:
            a._acc(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._acc(_unbroadcast(g * a.data, b.shape))

    return _out(a.data * b.data, (a, b), bw)


def sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = sigmoid_np(a.data)
    return _out(s, (a,), lambda g: a._acc(g * s * (1.0 - s)))


def silu(a: Tensor) -> Tensor:
    s = sigmoid_np(a.data)
    y = a.data * s
    return _out(y, (a,), lambda g: a._acc(g * (s + y * (1.0 - s))))


def relu(a: Tensor) -> Tensor:
    m = a.data > 0
    return _out(a.data * m, (a,), lambda g: a._acc(g * m))


# shape ----------------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    return _out(a.data.reshape(shape), (a,), lambda g: a._acc(g.reshape(a.shape)))


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _out(a.data.transpose(axes), (a,), lambda g: a._acc(g.transpose(inv)))


def concat(ts, axis=0) -> Tensor:
    ts = [as_tensor(t) for t in ts]
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        for t, piece in zip(ts, np.split(g, sizes, axis=axis)):
            if t.requires_grad:
                t._acc(piece)

    return _out(np.concatenate([t.data for t in ts], axis=axis), ts, bw)


def take_rows(a: Tensor, idx) -> Tensor:
    """``a[idx]`` along axis 0 (an embedding lookup when ``a`` is a table)."""
    idx = np.asarray(idx)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._acc(full)

    return _out(a.data[idx], (a,), bw)


def upsample_nearest(a: Tensor, factor: int) -> Tensor:
    """Repeat each pixel ``factor`` times along H and W (NCHW)."""
    y = a.data.repeat(factor, axis=2).repeat(factor, axis=3)

    def bw(g):
        n, c, h, w = a.shape
        a._acc(g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)))

    return _out(y, (a,), bw)


# reductions / linear algebra ------------------------------------------------


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._acc(np.broadcast_to(g, a.shape).astype(a.dtype, copy=True))

    return _out(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis, keepdims), np.asarray(1.0 / n, dtype=a.dtype))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2) if b.data.ndim > 1 else np.outer(g, b.data)
            a._acc(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            if a.data.ndim == 1:
                gb = np.outer(a.data, g)
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
            b._acc(_unbroadcast(gb, b.shape))

    return _out(a.data @ b.data, (a, b), bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add(y, b)


def softmax(a: Tensor, axis=-1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        a._acc(s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return _out(s, (a,), bw)


def scatter_mean(x: Tensor, index, n_segments: int) -> Tensor:
    """Per-segment mean of the rows of ``x`` (P, C); empty segments are zero."""
    index = np.asarray(index)
    counts = np.bincount(index, minlength=n_segments).astype(x.dtype)
    scale = 1.0 / np.maximum(counts, 1.0)
    out = np.zeros((n_segments, x.shape[1]), dtype=x.dtype)
    np.add.at(out, index, x.data)
    out *= scale[:, None]

    def bw(g):
        x._acc((g * scale[:, None])[index])

    return _out(out, (x,), bw)


# losses ---------------------------------------------------------------------


def bce_with_logits(logits: Tensor, target, pos_weight: float = 1.0) -> Tensor:
    """Mean binary cross-entropy, computed stably from logits."""
    x = logits.data
    y = np.asarray(target, dtype=x.dtype)
    # -[w*y*log s(x) + (1-y)*log(1-s(x))], with log s(x) = -softplus(-x)
    sp_neg = np.logaddexp(0.0, -x)
    sp_pos = np.logaddexp(0.0, x)
    loss = pos_weight * y * sp_neg + (1.0 - y) * sp_pos
    n = x.size

    def bw(g):
        s = sigmoid_np(x)
        logits._acc(g * (pos_weight * y * (s - 1.0) + (1.0 - y) * s) / n)

    return _out(np.asarray(loss.mean(), dtype=x.dtype), (logits,), bw)


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """Cross-entropy of one logit vector against a class index."""
    z = logits.data
    lse = np.logaddexp.reduce(z)
    loss = lse - z[label]

    def bw(g):
        p = np.exp(z - lse)
        p[label] -= 1.0
        logits._acc(g * p)

    return _out(np.asarray(loss, dtype=z.dtype), (logits,), bw)


# convolutions -----------------------------------------------------------------


def _im2col(x, k, stride, pad, dilation):
    """(N, C, H, W) -> cols (N, Ho, Wo, C, k, k) as a copy."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    span = dilation * (k - 1) + 1
    win = sliding_window_view(x, (span, span), axis=(2, 3))
    win = win[:, :, ::stride, ::stride, ::dilation, ::dilation]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))


def _col2im(cols, shape, k, stride, pad, dilation):
    """Adjoint of ``_im2col``: scatter-add cols (N, Ho, Wo, C, k, k) into (N, C, H, W)."""
    n, c, h, w = shape
    ho, wo = cols.shape[1], cols.shape[2]
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            r0, c0 = i * dilation, j * dilation
            out[:, :, r0:r0 + stride * ho:stride, c0:c0 + stride * wo:stride] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return out


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, pad=0, dilation=1) -> Tensor:
    n, c, h, wd = x.shape
    o, c2, k, _ = w.shape
    if c != c2:
        raise ValueError(f"conv2d expects {c2} input channels, got {c}")
    cols = _im2col(x.data, k, stride, pad, dilation)
    _, ho, wo = cols.shape[:3]
    flat = cols.reshape(n * ho * wo, c * k * k)
    wm = w.data.reshape(o, c * k * k)
    y = flat @ wm.T
    if b is not None:
        y += b.data
    out = y.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        gm = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        if w.requires_grad:
            w._acc((gm.T @ flat).reshape(w.shape))
        if b is not None and b.requires_grad:
            b._acc(gm.sum(axis=0))
        if x.requires_grad:
            full = dilation * (k - 1) - pad
            if stride == 1 and full >= 0:
                # input gradient as a correlation with the flipped kernel
                wf = np.ascontiguousarray(w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)).reshape(c, o * k * k)
                gc = _im2col(np.ascontiguousarray(g), k, 1, full, dilation).reshape(n * h * wd, o * k * k)
                x._acc((gc @ wf.T).reshape(n, h, wd, c).transpose(0, 3, 1, 2))
            else:
                gcols = (gm @ wm).reshape(n, ho, wo, c, k, k)
                x._acc(_col2im(gcols, x.shape, k, stride, pad, dilation))

    return _out(np.ascontiguousarray(out), parents, bw)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, pad=0) -> Tensor:
    """Transposed convolution; ``w`` has shape (C_in, C_out, k, k)."""
    n, c, h, wd = x.shape
    c2, o, k, _ = w.shape
    if c != c2:
        raise ValueError(f"conv_transpose2d expects {c2} input channels, got {c}")
    ho = (h - 1) * stride + k - 2 * pad
    wo = (wd - 1) * stride + k - 2 * pad
    xm = x.data.transpose(0, 2, 3, 1).reshape(n * h * wd, c)
    wm = w.data.reshape(c, o * k * k)
    cols = (xm @ wm).reshape(n, h, wd, o, k, k)
    full_shape = (n, o, (h - 1) * stride + k, (wd - 1) * stride + k)
    full = np.zeros(full_shape, dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            full[:, :, i:i + stride * h:stride, j:j + stride * wd:stride] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    out = full[:, :, pad:pad + ho, pad:pad + wo]
    if b is not None:
        out = out + b.data[None, :, None, None]
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        gfull = np.zeros(full_shape, dtype=g.dtype)
        gfull[:, :, pad:pad + ho, pad:pad + wo] = g
        gcols = np.empty((n, h, wd, o, k, k), dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                gcols[:, :, :, :, i, j] = gfull[:, :, i:i + stride * h:stride, j:j + stride * wd:stride].transpose(0, 2, 3, 1)
        gm = gcols.reshape(n * h * wd, o * k * k)
        if w.requires_grad:
            w._acc((xm.T @ gm).reshape(w.shape))
        if x.requires_grad:
            x._acc((gm @ wm.T).reshape(n, h, wd, c).transpose(0, 3, 1, 2))
        if b is not None and b.requires_grad:
            b._acc(g.sum(axis=(0, 2, 3)))

    return _out(np.ascontiguousarray(out), parents, bw)
