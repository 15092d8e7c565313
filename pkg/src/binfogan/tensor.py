"""Dense float64 tensors with tape-based reverse-mode differentiation.

A :class:`Tape` records every operation whose inputs include a watched
tensor. Operations on tensors not attached to a tape are plain numpy
computations and record nothing, which is how frozen networks are run.

    tape = Tape()
    w = tape.watch(np.ones((3, 2)))
    loss = mean(matmul(x, w))
    grads = tape.backward(loss)
    grads[w.node]
"""
from __future__ import annotations

import numpy as np

from . import _kernels
from .errors import ShapeError, TapeError


class Tensor:
    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape=None, node=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        tag = f", node={self.node}" if self.node is not None else ""
        return f"Tensor(shape={self.shape}{tag})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


class Tape:
    """Ordered record of operations; node ids are positions in the record."""

    def __init__(self):
        self._shapes = []
        self._ops = []  # (output id, input ids, vjp)

    def __len__(self):
        return len(self._shapes)

    def _new_node(self, shape):
        self._shapes.append(tuple(shape))
        return len(self._shapes) - 1

    def watch(self, value):
        """Register a leaf whose gradient is wanted."""
        data = value.data if isinstance(value, Tensor) else value
        t = Tensor(np.array(data, dtype=np.float64, copy=True))
        t.tape = self
        t.node = self._new_node(t.shape)
        return t

    def record(self, data, inputs, vjp):
        out = Tensor(data)
        out.tape = self
        out.node = self._new_node(out.shape)
        self._ops.append((out.node, tuple(inputs), vjp))
        return out

    def backward(self, loss):
        """Gradients of scalar ``loss`` for every node on this tape.

        Nodes the loss does not depend on map to zeros.
        """
        if loss.tape is not self:
            raise TapeError("loss was not produced on this tape")
        if loss.data.size != 1 or loss.ndim != 0:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}", loss.shape)
        grads = {loss.node: np.ones((), dtype=np.float64)}
        for out_id, in_ids, vjp in reversed(self._ops):
            g = grads.get(out_id)
            if g is None:
                continue
            needs = tuple(i is not None for i in in_ids)
            for i, gi in zip(in_ids, vjp(g, needs)):
                if i is None or gi is None:
                    continue
                if i in grads:
                    grads[i] = grads[i] + gi
                else:
                    grads[i] = gi
        return {
            node: grads[node] if node in grads else np.zeros(shape)
            for node, shape in enumerate(self._shapes)
        }

    def gradient(self, loss, tensors):
        grads = self.backward(loss)
        return [grads[t.node] for t in tensors]


def backward(loss, tape=None):
    tape = tape if tape is not None else loss.tape
    if tape is None:
        raise TapeError("loss is not attached to any tape")
    return tape.backward(loss)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(data, parents, vjp):
    """Wrap ``data``; record on the parents' tape if any parent is attached."""
    tape = None
    for p in parents:
        if p.tape is not None:
            if tape is not None and p.tape is not tape:
                raise TapeError("operands belong to different tapes")
            tape = p.tape
    if tape is None:
        return Tensor(data)
    return tape.record(data, [p.node if p.tape is tape else None for p in parents], vjp)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# elementwise arithmetic ----------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def vjp(g, needs):
        return (_unbroadcast(g, sa) if needs[0] else None,
                _unbroadcast(g, sb) if needs[1] else None)

    return _emit(a.data + b.data, (a, b), vjp)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def vjp(g, needs):
        return (_unbroadcast(g, sa) if needs[0] else None,
                _unbroadcast(-g, sb) if needs[1] else None)

    return _emit(a.data - b.data, (a, b), vjp)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def vjp(g, needs):
        return (_unbroadcast(g * bd, ad.shape) if needs[0] else None,
                _unbroadcast(g * ad, bd.shape) if needs[1] else None)

    return _emit(ad * bd, (a, b), vjp)


def neg(a):
    a = as_tensor(a)
    return _emit(-a.data, (a,), lambda g, needs: (-g,))


def square(a):
    a = as_tensor(a)
    ad = a.data
    return _emit(ad * ad, (a,), lambda g, needs: (2.0 * ad * g,))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _emit(out, (a,), lambda g, needs: (g * out,))


def log(a, floor=None):
    """Natural log; with ``floor`` the argument is clamped below first.

    Clamped entries get zero gradient.
    """
    a = as_tensor(a)
    x = a.data
    if floor is not None:
        clamped = x < floor
        x = np.where(clamped, floor, x)

        def vjp(g, needs):
            return (np.where(clamped, 0.0, g / x),)
    else:
        def vjp(g, needs):
            return (g / x,)

    return _emit(np.log(x), (a,), vjp)


# linear algebra and shape -------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}", a.shape, b.shape)
    ad, bd = a.data, b.data

    def vjp(g, needs):
        return (g @ bd.T if needs[0] else None, ad.T @ g if needs[1] else None)

    return _emit(ad @ bd, (a, b), vjp)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    return _emit(a.data.reshape(shape), (a,), lambda g, needs: (g.reshape(old),))


def transpose(a, axes=None):
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _emit(a.data.transpose(axes), (a,), lambda g, needs: (g.transpose(inverse),))


def broadcast_to(a, shape):
    a = as_tensor(a)
    old = a.shape
    out = np.broadcast_to(a.data, shape).copy()
    return _emit(out, (a,), lambda g, needs: (_unbroadcast(g, old),))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def vjp(g, needs):
        parts = np.split(g, bounds, axis=axis)
        return tuple(p if n else None for p, n in zip(parts, needs))

    return _emit(np.concatenate([t.data for t in tensors], axis=axis), tensors, vjp)


def getitem(a, index):
    a = as_tensor(a)
    shape = a.shape

    def vjp(g, needs):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _emit(a.data[index], (a,), vjp)


def sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    shape = a.shape

    def vjp(g, needs):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# nonlinearities --------------------------------------------------------------

def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def leaky_relu(a, alpha=0.1):
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"leaky_relu alpha must lie in (0, 1), got {alpha}")
    a = as_tensor(a)
    slope = np.where(a.data > 0, 1.0, alpha)
    return _emit(a.data * slope, (a,), lambda g, needs: (g * slope,))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _emit(out, (a,), lambda g, needs: (g * (1.0 - out * out),))


def sigmoid(a):
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _emit(out, (a,), lambda g, needs: (g * out * (1.0 - out),))


def activation(a, kind, alpha=0.1):
    if kind == "leaky_relu":
        return leaky_relu(a, alpha)
    if kind == "tanh":
        return tanh(a)
    if kind == "sigmoid":
        return sigmoid(a)
    if kind in ("linear", "identity", None):
        return as_tensor(a)
    raise ValueError(f"unknown activation {kind!r}")


def softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g, needs):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _emit(out, (a,), vjp)


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    probs = np.exp(out)

    def vjp(g, needs):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _emit(out, (a,), vjp)


# convolution ---------------------------------------------------------------

def _conv_out(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def conv2d(x, kernel, stride=1, pad=0):
    """Cross-correlation of ``(N, C, H, W)`` input with ``(F, C, kH, kW)`` kernel."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4 or x.shape[1] != kernel.shape[1]:
        raise ShapeError(f"conv2d shape mismatch: input {x.shape}, kernel {kernel.shape}",
                         x.shape, kernel.shape)
    if stride < 1 or pad < 0:
        raise ValueError(f"invalid stride/pad ({stride}, {pad})")
    n, c, h, w = x.shape
    f, _, kh, kw = kernel.shape
    hp, wp = h + 2 * pad, w + 2 * pad
    if hp < kh or wp < kw:
        raise ShapeError(f"conv2d kernel {kernel.shape[2:]} larger than padded input ({hp}, {wp})",
                         x.shape, kernel.shape)
    oh, ow = _conv_out(h, kh, stride, pad), _conv_out(w, kw, stride, pad)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _kernels.im2col(xp, kh, kw, stride, oh, ow)
    wmat = kernel.data.reshape(f, -1)
    out = np.matmul(wmat, cols).reshape(n, f, oh, ow)

    def vjp(g, needs):
        g = g.reshape(n, f, oh * ow)
        gx = gk = None
        if needs[0]:
            dcols = np.matmul(wmat.T, g)
            gx = _kernels.col2im(dcols, c, hp, wp, kh, kw, stride, oh, ow)
            if pad:
                gx = gx[:, :, pad:pad + h, pad:pad + w]
        if needs[1]:
            gk = np.tensordot(g, cols, axes=([0, 2], [0, 2])).reshape(kernel.shape)
        return gx, gk

    return _emit(out, (x, kernel), vjp)


def conv2d_transpose(x, kernel, stride=1, pad=0):
    """Adjoint of :func:`conv2d` w.r.t. its input, for the same kernel/stride/pad.

    ``x`` is ``(N, F, H, W)`` and ``kernel`` is ``(F, C, kH, kW)``; the output
    is ``(N, C, (H-1)*stride - 2*pad + kH, ...)``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4 or x.shape[1] != kernel.shape[0]:
        raise ShapeError(f"conv2d_transpose shape mismatch: input {x.shape}, kernel {kernel.shape}",
                         x.shape, kernel.shape)
    if stride < 1 or pad < 0:
        raise ValueError(f"invalid stride/pad ({stride}, {pad})")
    n, f, h, w = x.shape
    _, c, kh, kw = kernel.shape
    oh_full = (h - 1) * stride + kh
    ow_full = (w - 1) * stride + kw
    out_h, out_w = oh_full - 2 * pad, ow_full - 2 * pad
    if out_h <= 0 or out_w <= 0:
        raise ShapeError(f"conv2d_transpose output extent ({out_h}, {out_w}) is not positive",
                         x.shape, kernel.shape)
    wmat = kernel.data.reshape(f, -1)
    xflat = x.data.reshape(n, f, h * w)
    cols = np.matmul(wmat.T, xflat)
    full = _kernels.col2im(cols, c, oh_full, ow_full, kh, kw, stride, h, w)
    out = full[:, :, pad:pad + out_h, pad:pad + out_w] if pad else full

    def vjp(g, needs):
        gp = np.pad(g, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else g
        gcols = _kernels.im2col(gp, kh, kw, stride, h, w)
        gx = gk = None
        if needs[0]:
            gx = np.matmul(wmat, gcols).reshape(x.shape)
        if needs[1]:
            gk = np.tensordot(xflat, gcols, axes=([0, 2], [0, 2])).reshape(kernel.shape)
        return gx, gk

    return _emit(np.ascontiguousarray(out), (x, kernel), vjp)


# numerical differentiation ---------------------------------------------------

def finite_difference_gradient(f, x, h=1e-5):
    """Central-difference gradient of scalar ``f`` at ``x``, one coordinate at a time."""
    x = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64, copy=True)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a, b):
    """Norm-wise relative discrepancy ``|a-b| / max(|a|, |b|)``."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)
