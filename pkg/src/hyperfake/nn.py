"""Layers built on the autodiff engine: conv, batch norm, linear, attention.

Modules hold `Var` parameters (and plain-ndarray buffers for running
statistics) and expose them as flat dot-named dicts for the optimizer and
the checkpoint archives.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import ConfigError, ShapeError


class Buffer:
    """Non-trainable named state (e.g. batch-norm running statistics)."""

    __slots__ = ("value",)

    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value)


class Module:
    def named_params(self, prefix: str = "") -> dict[str, Var]:
        out: dict[str, Var] = {}
        for key, attr in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(attr, Var):
                out[name] = attr
            elif isinstance(attr, Module):
                out.update(attr.named_params(f"{name}."))
            elif isinstance(attr, (list, tuple)):
                for i, item in enumerate(attr):
                    if isinstance(item, Module):
                        out.update(item.named_params(f"{name}.{i}."))
        return out

    def named_buffers(self, prefix: str = "") -> dict[str, Buffer]:
        out: dict[str, Buffer] = {}
        for key, attr in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(attr, Buffer):
                out[name] = attr
            elif isinstance(attr, Module):
                out.update(attr.named_buffers(f"{name}."))
            elif isinstance(attr, (list, tuple)):
                for i, item in enumerate(attr):
                    if isinstance(item, Module):
                        out.update(item.named_buffers(f"{name}.{i}."))
        return out

    def load_arrays(self, params: dict[str, np.ndarray], buffers: dict[str, np.ndarray]) -> None:
        own_params = self.named_params()
        own_buffers = self.named_buffers()
        for name, var in own_params.items():
            if name not in params:
                raise ShapeError(f"missing parameter {name!r} in archive")
            arr = np.asarray(params[name], dtype=var.data.dtype)
            if arr.shape != var.data.shape:
                raise ShapeError(f"parameter {name!r}: shape {arr.shape} != {var.data.shape}")
            var.data = arr.copy()
        for name, buf in own_buffers.items():
            if name not in buffers:
                raise ShapeError(f"missing buffer {name!r} in archive")
            buf.value = np.asarray(buffers[name], dtype=buf.value.dtype).copy()


def init_normal(rng: np.random.Generator, shape, fan_in: int, dtype, gain: float = 1.0) -> Var:
    scale = gain / np.sqrt(fan_in)
    return Var((rng.standard_normal(shape) * scale).astype(dtype), requires_grad=True)


class Conv2d(Module):
    def __init__(self, cin, cout, k, rng, stride=1, pad=None, dtype=np.float32, gain=1.0):
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        self.weight = init_normal(rng, (cout, cin, k, k), cin * k * k, dtype, gain=gain)
        self.bias = Var(np.zeros(cout, dtype=dtype), requires_grad=True)

    def __call__(self, x: Var) -> Var:
        return ad.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class Linear(Module):
    def __init__(self, fin, fout, rng, dtype=np.float32, zero_init=False):
        if zero_init:
            self.weight = Var(np.zeros((fin, fout), dtype=dtype), requires_grad=True)
        else:
            self.weight = init_normal(rng, (fin, fout), fin, dtype)
        self.bias = Var(np.zeros(fout, dtype=dtype), requires_grad=True)

    def __call__(self, x: Var) -> Var:
        return x @ self.weight + self.bias


class BatchNorm2d(Module):
    """Batch statistics in training, running statistics at eval.

    Running update: new = momentum * old + (1 - momentum) * batch.
    """

    def __init__(self, channels, dtype=np.float32, momentum=0.9, eps=1e-5):
        self.momentum = momentum
        self.eps = eps
        self.gamma = Var(np.ones((1, channels, 1, 1), dtype=dtype), requires_grad=True)
        self.beta = Var(np.zeros((1, channels, 1, 1), dtype=dtype), requires_grad=True)
        self.running_mean = Buffer(np.zeros((1, channels, 1, 1), dtype=dtype))
        self.running_var = Buffer(np.ones((1, channels, 1, 1), dtype=dtype))

    def __call__(self, x: Var, train: bool) -> Var:
        if train:
            mu = x.mean(axis=(0, 2, 3), keepdims=True)
            centered = x - mu
            var = (centered * centered).mean(axis=(0, 2, 3), keepdims=True)
            m = x.data.dtype.type(self.momentum)
            one_minus = x.data.dtype.type(1.0 - self.momentum)
            self.running_mean.value = m * self.running_mean.value + one_minus * mu.data
            self.running_var.value = m * self.running_var.value + one_minus * var.data
            norm = centered / (var + self.eps).sqrt()
        else:
            norm = (x - Var(self.running_mean.value)) / Var(
                np.sqrt(self.running_var.value + x.data.dtype.type(self.eps))
            )
        return norm * self.gamma + self.beta


def multihead_attention(q: Var, k: Var, v: Var, heads: int) -> tuple[Var, Var]:
    """Attention over the second-to-last axis (tokens), heads split the last
    (feature) axis. q,k,v: (..., T, D). Returns (output (...,T,D), attention
    (..., heads, T, T)); softmax rows are normalized over keys, logits scaled
    by 1/sqrt(head_dim)."""
    *lead, t, d = q.shape
    if d % heads:
        raise ConfigError(f"feature dim {d} not divisible by {heads} heads")
    hd = d // heads

    def split(x: Var) -> Var:
        x = x.reshape(*lead, t, heads, hd)
        axes = list(range(x.ndim))
        axes[-3], axes[-2] = axes[-2], axes[-3]
        return x.transpose(axes)  # (..., heads, T, hd)

    qh, kh, vh = split(q), split(k), split(v)
    logits = (qh @ kh.swapaxes(-1, -2)) * (1.0 / np.sqrt(hd))
    attn = logits.softmax(axis=-1)
    out = attn @ vh  # (..., heads, T, hd)
    axes = list(range(out.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    out = out.transpose(axes).reshape(*lead, t, d)
    return out, attn
