"""Minimal reverse-mode autodiff over numpy arrays.

`Var` wraps an ndarray and records parents plus a backward closure whenever
an input requires gradients; `Var.backward()` walks the tape in reverse
topological order. Spatial primitives (conv patches, resizing, pooling)
delegate to `hyperfake.kernels`, which picks the compiled or numpy backend
at import. Dtypes are preserved end to end: build float64 graphs for
finite-difference checks, float32 for training.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import ShapeError


def _tracked(v: "Var") -> bool:
    return v.requires_grad or bool(v._parents)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (the inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Var:
    """A node in the autodiff graph. Leaf `Var`s with requires_grad=True are
    trainable parameters; everything else is tape-internal."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Var, ...] = ()
        self._backward = None

    # -- graph plumbing ---------------------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: Sequence["Var"], backward) -> "Var":
        tracked = tuple(p for p in parents if p.requires_grad or p._parents)
        out = Var(data)
        if tracked:
            out.requires_grad = True
            out._parents = tracked
            out._backward = backward
        return out

    def _accumulate(self, grad: np.ndarray) -> None:
        grad = np.asarray(grad, dtype=self.data.dtype)
        if self.grad is None:
            self.grad = grad.copy() if grad.base is not None else grad
        else:
            self.grad = self.grad + grad

    def backward(self, seed: np.ndarray | None = None) -> None:
        if seed is None:
            if self.data.size != 1:
                raise ShapeError("backward() without seed requires a scalar output")
            seed = np.ones_like(self.data)
        # iterative topo sort (graphs can be deep)
        order: list[Var] = []
        seen: set[int] = set()
        stack: list[tuple[Var, bool]] = [(self, False)]
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
                if id(parent) not in seen:
                    stack.append((parent, False))
        self._accumulate(np.asarray(seed, dtype=self.data.dtype))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def detach(self) -> "Var":
        return Var(self.data)

    def item(self) -> float:
        return float(self.data)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Var(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # -- arithmetic --------------------------------------------------------

    def _coerce(self, other) -> "Var":
        if isinstance(other, Var):
            return other
        return Var(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def bwd(g):
            if _tracked(a):
                a._accumulate(_unbroadcast(g, a.data.shape))
            if _tracked(b):
                b._accumulate(_unbroadcast(g, b.data.shape))

        return Var._result(a.data + b.data, (a, b), bwd)

    __radd__ = __add__

    def __neg__(self):
        a = self
        return Var._result(-a.data, (a,), lambda g: a._accumulate(-g))

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def bwd(g):
            if _tracked(a):
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if _tracked(b):
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))

        return Var._result(a.data * b.data, (a, b), bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def bwd(g):
            if _tracked(a):
                a._accumulate(_unbroadcast(g / b.data, a.data.shape))
            if _tracked(b):
                b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

        return Var._result(a.data / b.data, (a, b), bwd)

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __pow__(self, exponent: float):
        a = self
        e = float(exponent)

        def bwd(g):
            a._accumulate(g * e * a.data ** (e - 1.0))

        return Var._result(a.data**e, (a,), bwd)

    def __matmul__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def bwd(g):
            if _tracked(a):
                ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
                a._accumulate(_unbroadcast(ga, a.data.shape))
            if _tracked(b):
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
                b._accumulate(_unbroadcast(gb, b.data.shape))

        return Var._result(np.matmul(a.data, b.data), (a, b), bwd)

    # -- pointwise ---------------------------------------------------------

    def exp(self):
        a = self
        out_data = np.exp(a.data)
        return Var._result(out_data, (a,), lambda g: a._accumulate(g * out_data))

    def log(self):
        a = self
        return Var._result(np.log(a.data), (a,), lambda g: a._accumulate(g / a.data))

    def log1p(self):
        a = self
        return Var._result(np.log1p(a.data), (a,), lambda g: a._accumulate(g / (1.0 + a.data)))

    def sqrt(self):
        a = self
        out_data = np.sqrt(a.data)
        return Var._result(out_data, (a,), lambda g: a._accumulate(g * 0.5 / out_data))

    def tanh(self):
        a = self
        out_data = np.tanh(a.data)
        return Var._result(out_data, (a,), lambda g: a._accumulate(g * (1.0 - out_data * out_data)))

    def sigmoid(self):
        a = self
        with np.errstate(over="ignore"):
            out_data = 1.0 / (1.0 + np.exp(-a.data))
        return Var._result(
            out_data, (a,), lambda g: a._accumulate(g * out_data * (1.0 - out_data))
        )

    def relu(self):
        a = self
        mask = a.data > 0
        return Var._result(np.where(mask, a.data, 0.0), (a,), lambda g: a._accumulate(g * mask))

    def abs(self):
        a = self
        sign = np.sign(a.data)
        return Var._result(np.abs(a.data), (a,), lambda g: a._accumulate(g * sign))

    def silu(self):
        """x * sigmoid(x), the smooth nonlinearity used by the backbones."""
        return self * self.sigmoid()

    # -- reductions / shape ------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self
        if axis is None:
            axes = None
        else:
            raw = axis if isinstance(axis, tuple) else (axis,)
            axes = tuple(ax % a.data.ndim for ax in raw)

        def bwd(g):
            if axes is not None and not keepdims:
                g = np.expand_dims(g, axes)
            a._accumulate(np.broadcast_to(g, a.data.shape))

        return Var._result(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.data.shape[ax] for ax in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        return Var._result(
            a.data.reshape(shape), (a,), lambda g: a._accumulate(g.reshape(a.data.shape))
        )

    def transpose(self, axes: Sequence[int]):
        a = self
        axes = tuple(axes)
        inverse = tuple(np.argsort(axes))
        return Var._result(
            a.data.transpose(axes), (a,), lambda g: a._accumulate(g.transpose(inverse))
        )

    def swapaxes(self, ax1: int, ax2: int):
        a = self
        return Var._result(
            np.swapaxes(a.data, ax1, ax2), (a,), lambda g: a._accumulate(np.swapaxes(g, ax1, ax2))
        )

    def __getitem__(self, idx):
        a = self

        def bwd(g):
            buf = np.zeros_like(a.data)
            buf[idx] += g
            a._accumulate(buf)

        return Var._result(a.data[idx], (a,), bwd)

    def softmax(self, axis: int = -1):
        a = self
        shifted = a.data - a.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out_data = e / e.sum(axis=axis, keepdims=True)

        def bwd(g):
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            a._accumulate(out_data * (g - dot))

        return Var._result(out_data, (a,), bwd)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(np.asarray(x))


def concat(parts: Iterable[Var], axis: int = 0) -> Var:
    parts = [as_var(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if _tracked(p):
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                p._accumulate(g[tuple(index)])

    return Var._result(np.concatenate([p.data for p in parts], axis=axis), parts, bwd)


# -- spatial primitives (kernel-backed) -------------------------------------


def im2col(x: Var, kh: int, kw: int, stride: int, pad: int) -> Var:
    a = as_var(x)
    b, c, h, w = a.data.shape

    def bwd(g):
        a._accumulate(kernels.col2im(np.ascontiguousarray(g), b, c, h, w, kh, kw, stride, pad))

    return Var._result(kernels.im2col(np.ascontiguousarray(a.data), kh, kw, stride, pad), (a,), bwd)


def resize_bilinear(x: Var, oh: int, ow: int) -> Var:
    a = as_var(x)
    _, _, h, w = a.data.shape

    def bwd(g):
        a._accumulate(kernels.resize_bilinear_adjoint(np.ascontiguousarray(g), h, w))

    return Var._result(kernels.resize_bilinear(np.ascontiguousarray(a.data), oh, ow), (a,), bwd)


def pool_mean(x: Var, factor: int) -> Var:
    a = as_var(x)
    _, _, h, w = a.data.shape
    if h % factor or w % factor:
        raise ShapeError(f"pool factor {factor} does not divide {h}x{w}")

    def bwd(g):
        a._accumulate(kernels.pool_mean_adjoint(np.ascontiguousarray(g), factor))

    return Var._result(kernels.pool_mean(np.ascontiguousarray(a.data), factor), (a,), bwd)


def adaptive_avg_pool(x: Var, ph: int, pw: int) -> Var:
    a = as_var(x)
    _, _, h, w = a.data.shape
    if ph > h or pw > w:
        raise ShapeError(f"pool size {ph}x{pw} exceeds spatial dims {h}x{w}")

    def bwd(g):
        a._accumulate(kernels.adaptive_pool_adjoint(np.ascontiguousarray(g), h, w))

    return Var._result(kernels.adaptive_pool(np.ascontiguousarray(a.data), ph, pw), (a,), bwd)


def conv2d(x: Var, weight: Var, bias: Var | None, stride: int = 1, pad: int = 0) -> Var:
    """weight: (cout, cin, kh, kw); x: (B, cin, H, W)."""
    cout, cin, kh, kw = weight.data.shape
    b, c, h, w = x.data.shape
    if c != cin:
        raise ShapeError(f"conv2d expects {cin} input channels, got {c}")
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    cols = im2col(x, kh, kw, stride, pad)
    wmat = weight.reshape(cout, cin * kh * kw)
    out = wmat @ cols  # (B, cout, oh*ow) via broadcasting
    out = out.reshape(b, cout, oh, ow)
    if bias is not None:
        out = out + bias.reshape(1, cout, 1, 1)
    return out
