"""Minimal reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray plus a backward closure; ops build a DAG and
``backward()`` replays it in reverse topological order, accumulating
vector-Jacobian products into ``.grad``. Only the primitives the separation
network actually needs are implemented; anything linear that numpy can
express as gather/scatter (unfold/fold, padding, slicing) keeps its adjoint
hand-written so the whole stack stays dependency-free.

Custom ops with hand-derived gradients (the selective scan, the iSTFT
synthesis) are registered by their owning modules via ``Tensor`` with an
explicit parents/backward pair; this module stays generic.
"""

from __future__ import annotations

import contextlib

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad, shape):
    """Reduce ``grad`` back to ``shape`` (the reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """ndarray with reverse-mode gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        if not _grad_enabled:
            requires_grad, parents, backward = False, (), None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    # -- graph traversal ----------------------------------------------------

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable ``.grad``."""
        if grad is None:
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise ValueError(
                    f"seed gradient shape {grad.shape} != value shape {self.data.shape}"
                )
        topo, seen, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def zero_grad(self):
        self.grad = None

    # -- conveniences --------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


def parameter(data):
    """Leaf tensor that collects gradients."""
    return Tensor(np.asarray(data), requires_grad=True)


# -- arithmetic ---------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.grad = _acc(b.grad, _unbroadcast(g, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=bwd)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.grad = _acc(b.grad, _unbroadcast(-g, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=bwd)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.grad = _acc(b.grad, _unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=bwd)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, _unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b.grad = _acc(b.grad, _unbroadcast(-g * out_data / b.data, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=bwd)


def power(a, p):
    a = as_tensor(a)
    p = float(p)
    out_data = a.data**p

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, g * p * a.data ** (p - 1.0))

    return Tensor(out_data, parents=(a,), backward=bwd)


def exp(a):
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, g * out_data)

    return Tensor(out_data, parents=(a,), backward=bwd)


def log(a):
    a = as_tensor(a)
    out_data = np.log(a.data)

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, g / a.data)

    return Tensor(out_data, parents=(a,), backward=bwd)


def sqrt(a):
    a = as_tensor(a)
    out_data = np.sqrt(a.data)

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, g * (0.5 / out_data))

    return Tensor(out_data, parents=(a,), backward=bwd)


def tanh(a):
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, g * (1.0 - out_data * out_data))

    return Tensor(out_data, parents=(a,), backward=bwd)


def sigmoid(a):
    a = as_tensor(a)
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out_data = out_data.astype(x.dtype, copy=False)

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, g * out_data * (1.0 - out_data))

    return Tensor(out_data, parents=(a,), backward=bwd)


def silu(a):
    a = as_tensor(a)
    x = a.data
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    s = s.astype(x.dtype, copy=False)
    out_data = x * s

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, g * (s + x * s * (1.0 - s)))

    return Tensor(out_data, parents=(a,), backward=bwd)


def softplus(a):
    a = as_tensor(a)
    x = a.data
    out_data = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    out_data = out_data.astype(x.dtype, copy=False)

    def bwd(g):
        if a.requires_grad:
            s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
            a.grad = _acc(a.grad, g * s.astype(x.dtype, copy=False))

    return Tensor(out_data, parents=(a,), backward=bwd)


def clip(a, lo, hi):
    """Clamp with pass-through gradient strictly inside (lo, hi)."""
    a = as_tensor(a)
    out_data = np.clip(a.data, lo, hi)

    def bwd(g):
        if a.requires_grad:
            mask = (a.data > lo) & (a.data < hi)
            a.grad = _acc(a.grad, g * mask)

    return Tensor(out_data, parents=(a,), backward=bwd)


def softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        if a.requires_grad:
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            a.grad = _acc(a.grad, (g - dot) * out_data)

    return Tensor(out_data, parents=(a,), backward=bwd)


# -- linear algebra / shape -----------------------------------------------


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul requires operands with ndim >= 2")
    out_data = np.matmul(a.data, b.data)

    def bwd(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a.grad = _acc(a.grad, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b.grad = _acc(b.grad, _unbroadcast(gb, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=bwd)


def reshape(a, shape):
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, g.reshape(a.data.shape))

    return Tensor(out_data, parents=(a,), backward=bwd)


def transpose(a, axes):
    a = as_tensor(a)
    out_data = np.transpose(a.data, axes)
    inv = np.argsort(axes)

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, np.transpose(g, inv))

    return Tensor(out_data, parents=(a,), backward=bwd)


def flip(a, axis):
    a = as_tensor(a)
    out_data = np.flip(a.data, axis=axis)

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, np.flip(g, axis=axis))

    return Tensor(out_data, parents=(a,), backward=bwd)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t.grad = _acc(t.grad, g[tuple(sl)])

    return Tensor(out_data, parents=tuple(tensors), backward=bwd)


def getitem(a, idx):
    a = as_tensor(a)
    out_data = a.data[idx]

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a.grad = _acc(a.grad, full)

    return Tensor(out_data, parents=(a,), backward=bwd)


def pad(a, pad_width):
    """Zero padding; pad_width follows np.pad convention."""
    a = as_tensor(a)
    out_data = np.pad(a.data, pad_width)
    slices = tuple(slice(p[0], p[0] + s) for p, s in zip(pad_width, a.data.shape))

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, g[slices])

    return Tensor(out_data, parents=(a,), backward=bwd)


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if a.requires_grad:
            gg = g
            if not keepdims and axis is not None:
                gg = np.expand_dims(gg, axis)
            a.grad = _acc(a.grad, np.broadcast_to(gg, a.data.shape).copy())

    return Tensor(out_data, parents=(a,), backward=bwd)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.data.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


# -- structured gather/scatter pairs ----------------------------------------


def _unfold1d_fwd(x, kernel, stride):
    b, c, length = x.shape
    n_win = (length - kernel) // stride + 1
    s0, s1, s2 = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x, shape=(b, c, n_win, kernel), strides=(s0, s1, s2 * stride, s2)
    )
    return windows.transpose(0, 1, 3, 2).reshape(b, c * kernel, n_win)


def _fold1d_fwd(y, length, kernel, stride):
    b, ck, n_win = y.shape
    c = ck // kernel
    win = y.reshape(b, c, kernel, n_win)
    out = np.zeros((b, c, length), dtype=y.dtype)
    for k in range(kernel):
        seg = out[:, :, k : k + (n_win - 1) * stride + 1 : stride]
        seg += win[:, :, k, :]
    return out


def unfold1d(a, kernel, stride):
    """[B, C, L] -> [B, C*K, nW] sliding windows; (L - K) must divide by S."""
    a = as_tensor(a)
    b, c, length = a.data.shape
    if (length - kernel) % stride != 0 or length < kernel:
        raise ValueError(f"unfold1d geometry invalid: L={length}, K={kernel}, S={stride}")
    out_data = _unfold1d_fwd(a.data, kernel, stride)

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, _fold1d_fwd(g, length, kernel, stride))

    return Tensor(out_data, parents=(a,), backward=bwd)


def fold1d(a, length, kernel, stride):
    """Adjoint of unfold1d: overlap-add windows back to [B, C, L]."""
    a = as_tensor(a)
    out_data = _fold1d_fwd(a.data, length, kernel, stride)

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, _unfold1d_fwd(g, kernel, stride))

    return Tensor(out_data, parents=(a,), backward=bwd)


def _unfold2d_fwd(x, kh, kw):
    b, c, h, w = x.shape
    oh, ow = h - kh + 1, w - kw + 1
    s0, s1, s2, s3 = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x, shape=(b, c, kh, kw, oh, ow), strides=(s0, s1, s2, s3, s2, s3)
    )
    return windows.reshape(b, c * kh * kw, oh * ow)


def _fold2d_fwd(y, h, w, kh, kw):
    b = y.shape[0]
    c = y.shape[1] // (kh * kw)
    oh, ow = h - kh + 1, w - kw + 1
    win = y.reshape(b, c, kh, kw, oh, ow)
    out = np.zeros((b, c, h, w), dtype=y.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + oh, j : j + ow] += win[:, :, i, j]
    return out


def unfold2d(a, kh, kw):
    """[B, C, H, W] -> [B, C*kh*kw, oh*ow] patches, stride 1, no padding."""
    a = as_tensor(a)
    b, c, h, w = a.data.shape
    out_data = _unfold2d_fwd(a.data, kh, kw)

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, _fold2d_fwd(g, h, w, kh, kw))

    return Tensor(out_data, parents=(a,), backward=bwd)


def _acc(current, update):
    return update if current is None else current + update
