"""Real/fake decision head over the 3-channel reduced representation.

A channel-recalibration gate (squeeze-excitation style, the spec'd reading
of "spectral recalibration") feeds a small conv backbone; the loss is the
numerically stable logits form of binary cross-entropy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import ConfigError, DomainError, NumericError, ShapeError, ValidationError
from .nn import BatchNorm2d, Conv2d, Linear, Module, init_normal
from .util import derive_rng

COMPACT_WIDTHS = (16, 32, 64, 128)
# EfficientNet-B0 layout: stem 32, stage widths / strides, 1280-wide head
B0_STEM = 32
B0_WIDTHS = (16, 24, 40, 80, 112, 192, 320)
B0_STRIDES = (1, 2, 2, 2, 1, 2, 1)
B0_HEAD = 1280


@dataclass(frozen=True)
class ClassifierConfig:
    backbone: str = "compact"
    recalib_reduction: int = 4
    input_resolution: tuple[int, int] = (64, 64)

    def validate(self) -> "ClassifierConfig":
        if self.backbone not in ("compact", "effnet_b0_shape"):
            raise ConfigError(f"unknown backbone {self.backbone!r}")
        first_width = COMPACT_WIDTHS[0] if self.backbone == "compact" else B0_STEM
        if not 1 <= self.recalib_reduction <= first_width:
            raise ConfigError(
                f"recalib_reduction must be in [1, {first_width}], got {self.recalib_reduction}"
            )
        h, w = self.input_resolution
        if h < 16 or w < 16:
            raise ConfigError("input resolution must be at least 16x16")
        return self


class RecalibrateParams(Module):
    """Gate MLP: g = sigmoid(M2 @ relu(M1 @ channel_means + b1) + b2)."""

    def __init__(self, channels: int, reduction: int, rng, dtype=np.float32):
        mid = max(channels // reduction, 1)
        self.m1 = init_normal(rng, (channels, mid), channels, dtype)
        self.b1 = Var(np.zeros(mid, dtype=dtype), requires_grad=True)
        self.m2 = init_normal(rng, (mid, channels), mid, dtype)
        self.b2 = Var(np.zeros(channels, dtype=dtype), requires_grad=True)


def recalibrate(features, params: RecalibrateParams):
    """Scale each channel by its learned sigmoid gate; gates lie in (0, 1).

    Accepts (C,H,W) or (B,C,H,W); ndarray in -> ndarray out, Var in -> Var.
    """
    was_var = isinstance(features, Var)
    x = features if was_var else Var(np.asarray(features))
    if not np.all(np.isfinite(x.data)):
        raise NumericError("recalibrate: non-finite input")
    squeeze = x.ndim == 3
    if squeeze:
        x = x.reshape(1, *x.shape)
    means = x.mean(axis=(2, 3))  # (B, C)
    gates = (((means @ params.m1 + params.b1).relu()) @ params.m2 + params.b2).sigmoid()
    b, c = gates.shape
    out = x * gates.reshape(b, c, 1, 1)
    if squeeze:
        out = out.reshape(*out.shape[1:])
    return out if was_var else out.data


class _ConvBlock(Module):
    def __init__(self, cin, cout, stride, rng, dtype):
        self.conv = Conv2d(cin, cout, 3, rng, stride=stride, dtype=dtype)
        self.norm = BatchNorm2d(cout, dtype=dtype)

    def __call__(self, x: Var, train: bool) -> Var:
        return self.norm(self.conv(x), train).silu()


class ClassifierModel(Module):
    def __init__(self, config: ClassifierConfig, rng=None, dtype=np.float32):
        self.config = config.validate()
        rng = rng if rng is not None else derive_rng(0, "classifier-init")
        self.recalib = RecalibrateParams(3, config.recalib_reduction, rng, dtype)
        blocks: list[_ConvBlock] = []
        if config.backbone == "compact":
            cin = 3
            for width in COMPACT_WIDTHS:
                blocks.append(_ConvBlock(cin, width, 2, rng, dtype))
                cin = width
        else:
            blocks.append(_ConvBlock(3, B0_STEM, 2, rng, dtype))
            cin = B0_STEM
            for width, stride in zip(B0_WIDTHS, B0_STRIDES):
                blocks.append(_ConvBlock(cin, width, stride, rng, dtype))
                cin = width
            blocks.append(_ConvBlock(cin, B0_HEAD, 1, rng, dtype))
            cin = B0_HEAD
        self.blocks = blocks
        self.head = Linear(cin, 1, rng, dtype=dtype)

    def stage_shapes(self, x: np.ndarray) -> list[tuple[int, ...]]:
        """Output shape of every backbone stage (contract-tested for the
        effnet_b0_shape layout)."""
        shapes = []
        v = Var(np.asarray(x)[None] if np.asarray(x).ndim == 3 else np.asarray(x))
        for block in self.blocks:
            v = block(v, train=False)
            shapes.append(v.shape[1:])
        return shapes

    def forward(self, x: Var, train: bool) -> Var:
        h, w = self.config.input_resolution
        if x.shape[1:] != (3, h, w):
            raise ShapeError(f"classifier expects (B,3,{h},{w}), got {x.shape}")
        v = recalibrate(x, self.recalib)
        for block in self.blocks:
            v = block(v, train)
        pooled = v.mean(axis=(2, 3))  # global average pool
        return self.head(pooled).reshape(x.shape[0])


def classify(reduced, model: ClassifierModel, train: bool = False):
    """Single (3,H,W) input -> scalar logit; batched (B,3,H,W) -> (B,) array.

    Var in -> Var out (differentiable); ndarray in -> float / ndarray.
    """
    was_var = isinstance(reduced, Var)
    x = reduced if was_var else Var(np.asarray(reduced))
    single = x.ndim == 3
    if single:
        x = x.reshape(1, *x.shape)
    logits = model.forward(x, train)
    if was_var:
        return logits
    out = logits.data
    return float(out[0]) if single else out


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_loss_var(logits: Var, labels) -> Var:
    """Stable mean BCE-with-logits: max(z,0) - z*y + log1p(exp(-|z|)).

    Implemented as a primitive whose backward is the exact analytic
    derivative sigmoid(z) - y (valid everywhere, including z = 0 where the
    relu/abs decomposition has an ill-defined subgradient)."""
    y = np.asarray(labels)
    if y.size == 0:
        raise DomainError("empty batch")
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("labels must be 0 or 1")
    z = logits
    zd = z.data
    yd = y.astype(zd.dtype)
    data = np.maximum(zd, 0.0) - zd * yd + np.log1p(np.exp(-np.abs(zd)))
    grad_factor = _stable_sigmoid(zd) - yd
    terms = Var._result(data, (z,), lambda g: z._accumulate(g * grad_factor))
    return terms.mean()


def bce_with_logits(logits, labels) -> float:
    logits = np.atleast_1d(np.asarray(logits, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels))
    if logits.shape != labels.shape:
        raise ValidationError("logits and labels must have equal length")
    return float(bce_loss_var(Var(logits), labels).data)


class Prediction(NamedTuple):
    label: int
    probability: float


def predict(logit: float, threshold: float = 0.5) -> Prediction:
    """Sigmoid probability with the documented >= tie rule (tie => fake)."""
    if not 0.0 < threshold < 1.0:
        raise ValidationError(f"threshold must be in (0,1), got {threshold}")
    if not np.isfinite(logit):
        raise NumericError("logit must be finite")
    z = float(logit)
    probability = 1.0 / (1.0 + np.exp(-z)) if z >= 0 else np.exp(z) / (1.0 + np.exp(z))
    return Prediction(int(probability >= threshold), float(probability))
