"""Dense float64 arrays with reverse-mode differentiation.

Every operation on a :class:`Tensor` that has a differentiable input records
its parents and an adjoint closure on the output.  :func:`backward` linearises
that graph into a :class:`Tape` (topological order, each op once) and replays
it in reverse.  Graphs are built fresh on every forward pass; nothing is
shared between passes except the leaf parameters, whose ``grad`` accumulates
until cleared with :func:`zero_grad`.

Spatial operations work on single images laid out as ``C x H x W``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import BackwardError, DimensionError, WindowError

__all__ = [
    "Tensor",
    "Tape",
    "tensor",
    "backward",
    "zero_grad",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "transpose",
    "reshape",
    "relu",
    "sigmoid",
    "exp",
    "log",
    "sqrt",
    "clip",
    "sum",
    "mean",
    "softmax_lastdim",
    "conv2d",
    "extract_patches",
    "pack",
    "global_avg_pool",
    "instance_norm",
    "getrow",
    "concat",
]


class Tensor:
    """A float64 array that may take part in a recorded computation."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_adjoint", "op", "_tape")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._adjoint = None
        self.op = "leaf"
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

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

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

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
        return transpose(self)


def tensor(data, requires_grad=False):
    return data if isinstance(data, Tensor) else Tensor(data, requires_grad)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, adjoint, op):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._adjoint = adjoint
        out.op = op
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Tape:
    """Topologically ordered record of the ops that produced ``output``."""

    def __init__(self, output):
        self.output = output
        self.nodes = self._linearise(output)
        self.consumed = False

    @staticmethod
    def _linearise(output):
        order, seen = [], set()
        stack = [(output, False)]
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

    def backward(self):
        if self.consumed:
            raise BackwardError("backward already ran on this graph; call reset() first")
        grads = {id(self.output): np.ones_like(self.output.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._adjoint is None:
                continue
            for parent, pg in zip(node._parents, node._adjoint(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
        self.consumed = True

    def reset(self):
        """Clear every recorded gradient and allow another reverse pass."""
        for node in self.nodes:
            node.grad = None
        self.consumed = False


def backward(loss):
    """Populate ``grad`` on every differentiable tensor that produced ``loss``."""
    if not isinstance(loss, Tensor):
        raise BackwardError("backward expects a Tensor")
    if loss.size != 1:
        raise BackwardError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise BackwardError("loss does not depend on any tensor with requires_grad")
    if loss._tape is None:
        loss._tape = Tape(loss)
    loss._tape.backward()
    return loss._tape


def zero_grad(tensors):
    for t in tensors:
        t.grad = None


# elementwise ---------------------------------------------------------------

def add(a, b):
    a, b = _lift(a), _lift(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b):
    a, b = _lift(a), _lift(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b):
    a, b = _lift(a), _lift(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b):
    a, b = _lift(a), _lift(b)
    out = a.data / b.data
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
        "div",
    )


def neg(a):
    a = _lift(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def relu(a):
    a = _lift(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def sigmoid(a):
    a = _lift(a)
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def exp(a):
    a = _lift(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = _lift(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a):
    a = _lift(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def clip(a, lo, hi):
    """Clamp to ``[lo, hi]``; the gradient is zero where clamping is active."""
    a = _lift(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


# shape ---------------------------------------------------------------------

def reshape(a, shape):
    a = _lift(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    a = _lift(a)
    inv = None if axes is None else tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def getrow(a, i):
    """Slice ``a[:, i, :]`` out of a ``C x H x W`` map."""
    a = _lift(a)

    def adjoint(g):
        full = np.zeros_like(a.data)
        full[:, i, :] = g
        return (full,)

    return _make(a.data[:, i, :], (a,), adjoint, "getrow")


def concat(tensors, axis=0):
    tensors = [_lift(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.split(g, sizes, axis=axis)),
        "concat",
    )


# reductions ----------------------------------------------------------------

def sum(a, axis=None, keepdims=False):
    a = _lift(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def adjoint(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), adjoint, "sum")


def mean(a, axis=None, keepdims=False):
    a = _lift(a)
    n = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def adjoint(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return _make(out, (a,), adjoint, "mean")


def global_avg_pool(x):
    """Per-channel spatial mean of a ``C x H x W`` map."""
    x = _lift(x)
    if x.ndim != 3:
        raise DimensionError(f"global_avg_pool expects C x H x W, got {x.shape}")
    c, h, w = x.shape
    return _make(
        x.data.mean(axis=(1, 2)),
        (x,),
        lambda g: (np.broadcast_to(g[:, None, None] / (h * w), x.shape).copy(),),
        "global_avg_pool",
    )


# linear algebra --------------------------------------------------------------

def matmul(a, b):
    """Matrix product; 3-D operands are treated as stacks of matrices."""
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    if a.ndim == 3 and b.ndim == 3 and a.shape[0] != b.shape[0]:
        raise DimensionError(f"matmul batch sizes disagree: {a.shape} @ {b.shape}")

    def adjoint(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _make(a.data @ b.data, (a, b), adjoint, "matmul")


def softmax_lastdim(x):
    """Softmax over the trailing axis, computed after max subtraction."""
    x = _lift(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def adjoint(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (x,), adjoint, "softmax")


# spatial -------------------------------------------------------------------

def _windows(padded, k, stride):
    # (C, Hp, Wp) -> (C, H', W', k, k) view
    view = sliding_window_view(padded, (k, k), axis=(1, 2))
    return view[:, ::stride, ::stride]


def _scatter_windows(gwin, padded_shape, k, stride):
    # adjoint of _windows: gwin is (C, H', W', k, k)
    out = np.zeros(padded_shape)
    ho, wo = gwin.shape[1], gwin.shape[2]
    for di in range(k):
        for dj in range(k):
            out[:, di:di + stride * (ho - 1) + 1:stride, dj:dj + stride * (wo - 1) + 1:stride] += gwin[:, :, :, di, dj]
    return out


def conv2d(x, kernels, bias=None, stride=1, pad=0):
    """Zero-padded 2-D cross-correlation of a ``C_in x H x W`` image."""
    x, kernels = _lift(x), _lift(kernels)
    if x.ndim != 3 or kernels.ndim != 4:
        raise DimensionError(f"conv2d expects C x H x W input and 4-D kernels, got {x.shape}, {kernels.shape}")
    c_out, c_in, k, k2 = kernels.shape
    if k != k2:
        raise DimensionError(f"conv2d kernels must be square, got {k} x {k2}")
    if x.shape[0] != c_in:
        raise DimensionError(f"conv2d channel mismatch: input has {x.shape[0]}, kernels expect {c_in}")
    if stride < 1 or pad < 0:
        raise DimensionError(f"conv2d needs stride >= 1 and pad >= 0, got stride={stride}, pad={pad}")
    _, h, w = x.shape
    if h + 2 * pad < k or w + 2 * pad < k:
        raise DimensionError(f"conv2d kernel {k} larger than padded input {h + 2 * pad} x {w + 2 * pad}")
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    kmat = kernels.data.reshape(c_out, c_in * k * k)

    if k == 1 and pad == 0:
        xs = x.data[:, ::stride, ::stride]
        cols = xs.reshape(c_in, ho * wo)
    else:
        padded = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad))) if pad else x.data
        win = _windows(padded, k, stride)  # C, ho, wo, k, k
        cols = win.transpose(0, 3, 4, 1, 2).reshape(c_in * k * k, ho * wo)
    out = (kmat @ cols).reshape(c_out, ho, wo)
    parents = (x, kernels)
    if bias is not None:
        bias = _lift(bias)
        if bias.shape != (c_out,):
            raise DimensionError(f"conv2d bias shape {bias.shape} != ({c_out},)")
        out = out + bias.data[:, None, None]
        parents = parents + (bias,)

    def adjoint(g):
        g2 = g.reshape(c_out, ho * wo)
        gk = (g2 @ cols.T).reshape(kernels.shape) if kernels.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = kmat.T @ g2
            if k == 1 and pad == 0:
                gx = np.zeros(x.shape)
                gx[:, ::stride, ::stride] = gcols.reshape(c_in, ho, wo)
            else:
                gwin = gcols.reshape(c_in, k, k, ho, wo).transpose(0, 3, 4, 1, 2)
                gp = _scatter_windows(gwin, (c_in, h + 2 * pad, w + 2 * pad), k, stride)
                gx = gp[:, pad:pad + h, pad:pad + w] if pad else gp
        grads = (gx, gk)
        if bias is not None:
            grads = grads + (g.sum(axis=(1, 2)),)
        return grads

    return _make(out, parents, adjoint, "conv2d")


def extract_patches(x, win_h, win_w):
    """Sliding-window patches of a ``C x H x W`` map.

    Two geometries are supported.  A centred odd ``k x k`` window yields one
    zero-padded patch per pixel, shape ``(H*W) x C x k*k`` in row-major pixel
    order.  A ``1 x W`` window yields one unpadded patch per row, shape
    ``H x C x W``.
    """
    x = _lift(x)
    if x.ndim != 3:
        raise DimensionError(f"extract_patches expects C x H x W, got {x.shape}")
    c, h, w = x.shape
    if win_h == 1 and win_w == w:
        return transpose(x, (1, 0, 2))
    if win_h != win_w or win_h < 1 or win_h % 2 == 0:
        raise WindowError(f"unsupported window {win_h} x {win_w} for a {h} x {w} map")
    k = win_h
    r = k // 2
    padded = np.pad(x.data, ((0, 0), (r, r), (r, r))) if r else x.data
    win = _windows(padded, k, 1)  # C, H, W, k, k
    out = win.transpose(1, 2, 0, 3, 4).reshape(h * w, c, k * k)

    def adjoint(g):
        gwin = g.reshape(h, w, c, k, k).transpose(2, 0, 1, 3, 4)
        gp = _scatter_windows(gwin, padded.shape, k, 1)
        return (gp[:, r:r + h, r:r + w] if r else gp,)

    return _make(out, (x,), adjoint, "extract_patches")


def pack(vectors, h, w):
    """Reassemble per-position features into a ``C x H x W`` map.

    Accepts ``(H*W) x C`` per-pixel vectors or ``H x C x W`` per-row blocks.
    """
    vectors = _lift(vectors)
    if vectors.ndim == 2 and vectors.shape[0] == h * w:
        c = vectors.shape[1]
        return transpose(reshape(vectors, (h, w, c)), (2, 0, 1))
    if vectors.ndim == 3 and vectors.shape[0] == h and vectors.shape[2] == w:
        return transpose(vectors, (1, 0, 2))
    raise DimensionError(f"cannot pack {vectors.shape} into a map of {h} x {w}")


def instance_norm(x, scale, offset, eps=1e-5):
    """Normalise each channel over its spatial positions, then scale and shift."""
    x, scale, offset = _lift(x), _lift(scale), _lift(offset)
    c = x.shape[0]
    if scale.shape != (c,) or offset.shape != (c,):
        raise DimensionError(f"instance_norm parameters must have shape ({c},)")
    n = x.shape[1] * x.shape[2]
    mu = x.data.mean(axis=(1, 2), keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=(1, 2), keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * scale.data[:, None, None] + offset.data[:, None, None]

    def adjoint(g):
        gs = (g * xhat).sum(axis=(1, 2))
        go = g.sum(axis=(1, 2))
        gx = None
        if x.requires_grad:
            gh = g * scale.data[:, None, None]
            gx = inv * (gh - gh.mean(axis=(1, 2), keepdims=True)
                        - xhat * (gh * xhat).sum(axis=(1, 2), keepdims=True) / n)
        return (gx, gs, go)

    return _make(out, (x, scale, offset), adjoint, "instance_norm")
