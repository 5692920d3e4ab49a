"""Band attention over the 31 reconstructed channels and the 31 -> 3 mixing.

Data flow: pooled band descriptors -> scaled dot-product self-attention
across the 31 band tokens -> a small mixing head scores each band for the
three output channels -> per-column softmax yields a nonnegative,
column-stochastic 31x3 weight matrix -> the output channels are convex
combinations of the bands.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .datamodel import BANDS
from .errors import ConfigError, NumericError, ShapeError, ValidationError
from .nn import Module, init_normal, multihead_attention

OUT_CHANNELS = 3


@dataclass(frozen=True)
class SpectralConfig:
    pool_size: int = 8     # p: descriptors are p*p block means per band
    attn_dim: int = 16     # d: attention dimension
    head_count: int = 1    # single head matches the written attention form

    def validate(self) -> "SpectralConfig":
        if self.pool_size < 1:
            raise ConfigError("pool_size must be >= 1")
        if self.attn_dim % self.head_count:
            raise ConfigError(
                f"attn_dim {self.attn_dim} not divisible by head_count {self.head_count}"
            )
        return self


class SpectralAttentionParams(Module):
    """W_Q/W_K/W_V map p^2-dim descriptors to the attention dim; the mixing
    head maps attention values to one score per output channel."""

    def __init__(self, config: SpectralConfig, rng, dtype=np.float32):
        config = config.validate()
        self.config = config
        p2 = config.pool_size * config.pool_size
        self.wq = init_normal(rng, (p2, config.attn_dim), p2, dtype)
        self.wk = init_normal(rng, (p2, config.attn_dim), p2, dtype)
        self.wv = init_normal(rng, (p2, config.attn_dim), p2, dtype)
        self.mixing_head = init_normal(rng, (config.attn_dim, OUT_CHANNELS), config.attn_dim, dtype)

    @property
    def head_count(self) -> int:
        return self.config.head_count

    @property
    def pool_size(self) -> int:
        return self.config.pool_size


@dataclass(frozen=True)
class BandMixing:
    """Nonnegative 31x3 weights; each column sums to 1 (softmax over bands)."""

    alpha: np.ndarray

    def __post_init__(self):
        alpha = np.asarray(self.alpha)
        if alpha.shape != (BANDS, OUT_CHANNELS):
            raise ShapeError(f"alpha must be {BANDS}x{OUT_CHANNELS}, got {alpha.shape}")
        if alpha.min() < 0.0:
            raise ValidationError("alpha entries must be nonnegative")
        if not np.allclose(alpha.sum(axis=0), 1.0, atol=1e-6):
            raise ValidationError("alpha columns must sum to 1 within 1e-6")
        object.__setattr__(self, "alpha", alpha)


def band_descriptors(cube, p: int):
    """Summarize each band as its adaptively pooled p x p block means,
    flattened to a row: (..., 31, H, W) -> (..., 31, p*p)."""
    was_var = isinstance(cube, Var)
    x = cube if was_var else Var(np.asarray(cube))
    single = x.ndim == 3
    if single:
        x = x.reshape(1, *x.shape)
    _, c, h, w = x.shape
    if p > min(h, w):
        raise ShapeError(f"pool size {p} exceeds spatial dims {h}x{w}")
    pooled = ad.adaptive_avg_pool(x, p, p).reshape(x.shape[0], c, p * p)
    if single:
        pooled = pooled.reshape(c, p * p)
    return pooled if was_var else pooled.data


def spectral_attention(tokens, params: SpectralAttentionParams):
    """softmax((X Wq)(X Wk)^T / sqrt(d)) (X Wv) across the 31 band tokens.

    Returns (values, attention); values (..., 31, d), attention rows sum
    to 1 over the key axis, one 31x31 map per head.
    """
    was_var = isinstance(tokens, Var)
    x = tokens if was_var else Var(np.asarray(tokens))
    if not np.all(np.isfinite(x.data)):
        raise NumericError("spectral_attention: non-finite input")
    if x.shape[-2] != BANDS:
        raise ShapeError(f"expected {BANDS} band tokens, got {x.shape}")
    q, k, v = x @ params.wq, x @ params.wk, x @ params.wv
    values, attn = multihead_attention(q, k, v, params.head_count)
    if was_var:
        return values, attn
    return values.data, attn.data


def mixing_scores(values, params: SpectralAttentionParams):
    """Per-band scores for each output channel: values @ mixing_head."""
    was_var = isinstance(values, Var)
    v = values if was_var else Var(np.asarray(values))
    scores = v @ params.mixing_head
    alpha = scores.softmax(axis=-2)  # softmax over the 31 bands, per column
    return alpha if was_var else alpha.data


def compute_mixing(values, params: SpectralAttentionParams) -> BandMixing:
    if isinstance(values, Var):
        values = values.data
    if not np.all(np.isfinite(values)):
        raise NumericError("compute_mixing: non-finite values")
    return BandMixing(np.asarray(mixing_scores(values, params), dtype=np.float64))


def reduce_bands(cube, mixing):
    """Output channel c = sum_i alpha[i, c] * band_i (exactly linear)."""
    alpha = mixing.alpha if isinstance(mixing, BandMixing) else mixing
    was_var = isinstance(cube, Var) or isinstance(alpha, Var)
    x = cube if isinstance(cube, Var) else Var(np.asarray(cube))
    a = alpha if isinstance(alpha, Var) else Var(np.asarray(alpha, dtype=x.data.dtype))
    single = x.ndim == 3
    if single:
        x = x.reshape(1, *x.shape)
        if a.ndim != 2:
            raise ShapeError("per-sample mixing requires a batched cube")
    b, c, h, w = x.shape
    if c != BANDS or a.shape[-2:] != (BANDS, OUT_CHANNELS):
        raise ShapeError(f"shape mismatch: cube {x.shape}, alpha {a.shape}")
    flat = x.reshape(b, c, h * w)
    if a.ndim == 2:
        at = a.transpose((1, 0))  # (3, 31)
    else:
        at = a.transpose((0, 2, 1))  # (B, 3, 31)
    out = (at @ flat).reshape(b, OUT_CHANNELS, h, w)
    if single:
        out = out.reshape(OUT_CHANNELS, h, w)
    return out if was_var else out.data


def export_band_weights(mixing: BandMixing, attention_maps: np.ndarray, path: str | Path) -> None:
    """Write the interpretability JSON: alpha, per-head mean attention, and
    the top-5 bands per output channel (0-based indices, ties broken by
    ascending band index)."""
    attn = np.asarray(attention_maps, dtype=np.float64)
    if attn.ndim == 3:
        attn = attn[None]
    if attn.ndim != 4 or attn.shape[-2:] != (BANDS, BANDS):
        raise ShapeError(f"attention maps must be (..., heads, {BANDS}, {BANDS}), got {attn.shape}")
    mean_maps = attn.mean(axis=0)  # (heads, 31, 31)
    top = {}
    for ch in range(OUT_CHANNELS):
        weights = mixing.alpha[:, ch]
        order = np.lexsort((np.arange(BANDS), -weights))
        top[str(ch)] = [int(i) for i in order[:5]]
    payload = {
        "alpha": [[float(x) for x in row] for row in mixing.alpha],
        "attention_mean": [[[float(x) for x in row] for row in head] for head in mean_maps],
        "top_bands": top,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
