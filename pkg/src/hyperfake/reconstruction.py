"""RGB -> 31-band reconstruction: a multi-stage spectral-wise transformer.

Topology per stage: channel-token attention block at full scale, stride-2
conv down, another attention block plus the downsample-attend-upsample
("flexi") branch in the bottleneck, bilinear up with skip fusion, and a
closing attention block. A learned 1x1 expansion of the RGB input forms a
global residual onto the 31-band output, so even a random-init model is
information-preserving.

Weights live in a deterministic zip archive (see `util.write_array_archive`)
with a JSON header {config, resolution, frozen}; a human-readable sidecar
`<path>.json` mirrors the header.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .datamodel import BANDS
from .errors import CheckpointError, ConfigError, NumericError, ShapeError
from .nn import Conv2d, Module, init_normal, multihead_attention
from .util import derive_rng, read_array_archive, stable_json, write_array_archive

WEIGHTS_KIND = "hyperfake-recon-weights"
WEIGHTS_VERSION = 1


@dataclass(frozen=True)
class ReconConfig:
    n_stages: int = 3
    feature_channels: int = 32
    n_heads: int = 4
    flexi_downsample: int = 2
    out_bands: int = BANDS

    def validate(self, resolution: tuple[int, int] | None = None) -> "ReconConfig":
        if self.n_stages < 1:
            raise ConfigError("n_stages must be >= 1")
        if self.feature_channels % self.n_heads:
            raise ConfigError(
                f"feature_channels {self.feature_channels} not divisible by "
                f"n_heads {self.n_heads}"
            )
        if self.flexi_downsample not in (2, 4):
            raise ConfigError("flexi_downsample must be 2 or 4")
        if self.out_bands != BANDS:
            raise ConfigError(f"out_bands is fixed at {BANDS}")
        if resolution is not None:
            h, w = resolution
            need = 2 * self.flexi_downsample
            if h % need or w % need:
                raise ConfigError(
                    f"working resolution {h}x{w} must be divisible by {need} "
                    f"(one encoder halving times flexi_downsample)"
                )
        return self


# Residual-branch output projections start small so stacked residual blocks
# stay near-isometric at random init (activations would otherwise double in
# variance per block, drowning the input signal in frozen random features).
RESIDUAL_GAIN = 0.1


class SmsaParams(Module):
    """Token-space multi-head self-attention: learned DxD q/k/v maps, heads
    split the feature dim, concatenated heads are linearly projected."""

    def __init__(self, dim: int, heads: int, rng, dtype=np.float32):
        if dim % heads:
            raise ConfigError(f"token dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.wq = init_normal(rng, (dim, dim), dim, dtype)
        self.wk = init_normal(rng, (dim, dim), dim, dtype)
        self.wv = init_normal(rng, (dim, dim), dim, dtype)
        self.wo = init_normal(rng, (dim, dim), dim, dtype)


def smsa(tokens, params: SmsaParams, return_attention: bool = False):
    """Self-attention across channel tokens: (..., C, D) -> (..., C, D).

    Attention is a CxC matrix per head (softmax over keys, scale
    1/sqrt(D/heads)); it never mixes spatial positions.
    """
    was_var = isinstance(tokens, Var)
    x = tokens if was_var else Var(np.asarray(tokens))
    if not np.all(np.isfinite(x.data)):
        raise NumericError("smsa: non-finite input")
    if x.shape[-1] != params.wq.shape[0]:
        raise ShapeError(f"token dim {x.shape[-1]} != parameter dim {params.wq.shape[0]}")
    q, k, v = x @ params.wq, x @ params.wk, x @ params.wv
    heads_out, attn = multihead_attention(q, k, v, params.heads)
    out = heads_out @ params.wo
    if not was_var:
        out, attn = out.data, attn.data
    return (out, attn) if return_attention else out


class ChannelAttention(Module):
    """Spectral-token attention over (B, C, M) maps: q/k/v/out are channel
    mixing matrices, heads split the channels, logits are spatial inner
    products scaled by 1/sqrt(M)."""

    def __init__(self, channels: int, heads: int, rng, dtype=np.float32):
        if channels % heads:
            raise ConfigError(f"channels {channels} not divisible by {heads} heads")
        self.heads = heads
        self.wq = init_normal(rng, (channels, channels), channels, dtype)
        self.wk = init_normal(rng, (channels, channels), channels, dtype)
        self.wv = init_normal(rng, (channels, channels), channels, dtype)
        self.wo = init_normal(rng, (channels, channels), channels, dtype, gain=RESIDUAL_GAIN)

    def __call__(self, x: Var) -> Var:  # x: (B, C, M)
        b, c, m = x.shape
        h = self.heads
        q, k, v = self.wq @ x, self.wk @ x, self.wv @ x
        split = lambda t: t.reshape(b, h, c // h, m)
        qh, kh, vh = split(q), split(k), split(v)
        logits = (qh @ kh.swapaxes(-1, -2)) * (1.0 / math.sqrt(m))
        attn = logits.softmax(axis=-1)
        out = (attn @ vh).reshape(b, c, m)
        return self.wo @ out


class Sab(Module):
    """Attention + feed-forward, both residual (spectral-wise attention block)."""

    def __init__(self, channels: int, heads: int, rng, dtype=np.float32):
        self.attn = ChannelAttention(channels, heads, rng, dtype)
        self.ffn_in = init_normal(rng, (2 * channels, channels), channels, dtype)
        self.ffn_in_bias = Var(np.zeros((2 * channels, 1), dtype=dtype), requires_grad=True)
        self.ffn_out = init_normal(rng, (channels, 2 * channels), 2 * channels, dtype,
                                   gain=RESIDUAL_GAIN)
        self.ffn_out_bias = Var(np.zeros((channels, 1), dtype=dtype), requires_grad=True)

    def __call__(self, x: Var) -> Var:  # x: (B, C, H, W)
        b, c, h, w = x.shape
        t = x.reshape(b, c, h * w)
        t = t + self.attn(t)
        hidden = (self.ffn_in @ t + self.ffn_in_bias).silu()
        t = t + (self.ffn_out @ hidden + self.ffn_out_bias)
        return t.reshape(b, c, h, w)


class FlexiAttention(Module):
    """Pool by `factor`, project per-channel spatial tokens to the attention
    dim, attend across channels, project back, bilinear-upsample, residual."""

    def __init__(self, m_tokens: int, attn_dim: int, heads: int, factor: int, rng,
                 dtype=np.float32):
        self.factor = factor
        self.proj_in = init_normal(rng, (m_tokens, attn_dim), m_tokens, dtype)
        self.proj_out = init_normal(rng, (attn_dim, m_tokens), attn_dim, dtype,
                                    gain=RESIDUAL_GAIN)
        self.attn = SmsaParams(attn_dim, heads, rng, dtype)


def flexi_attention(features, params: FlexiAttention):
    """(..., C, H, W) -> same shape; output projection zeroed => identity."""
    was_var = isinstance(features, Var)
    x = features if was_var else Var(np.asarray(features))
    single = x.ndim == 3
    if single:
        x = x.reshape(1, *x.shape)
    b, c, h, w = x.shape
    s = params.factor
    if h % s or w % s:
        raise ShapeError(f"flexi downsample {s} does not divide {h}x{w}")
    pooled = ad.pool_mean(x, s)
    m = (h // s) * (w // s)
    if m != params.proj_in.shape[0]:
        raise ShapeError(
            f"flexi token length {m} does not match built projection "
            f"{params.proj_in.shape[0]} (model resolution mismatch)"
        )
    tokens = pooled.reshape(b, c, m) @ params.proj_in
    attended = smsa(tokens, params.attn)
    back = (attended @ params.proj_out).reshape(b, c, h // s, w // s)
    out = x + ad.resize_bilinear(back, h, w)
    if single:
        out = out.reshape(*out.shape[1:])
    return out if was_var else out.data


class SstStage(Module):
    """Encoder - bottleneck (with flexi attention) - decoder over one halving."""

    def __init__(self, f: int, heads: int, factor: int, bottleneck_tokens: int, rng,
                 dtype=np.float32):
        self.sab_in = Sab(f, heads, rng, dtype)
        self.down = Conv2d(f, 2 * f, 3, rng, stride=2, dtype=dtype)
        self.sab_mid = Sab(2 * f, heads, rng, dtype)
        self.flexi = FlexiAttention(bottleneck_tokens, f, heads, factor, rng, dtype)
        self.up = Conv2d(2 * f, f, 3, rng, dtype=dtype)
        self.fuse = Conv2d(2 * f, f, 1, rng, dtype=dtype)
        self.sab_out = Sab(f, heads, rng, dtype)

    def __call__(self, x: Var) -> Var:
        _, _, h, w = x.shape
        skip = self.sab_in(x)
        mid = self.sab_mid(self.down(skip))
        mid = flexi_attention(mid, self.flexi)
        up = self.up(ad.resize_bilinear(mid, h, w))
        fused = self.fuse(ad.concat([up, skip], axis=1))
        return self.sab_out(fused)


class ReconstructionModel(Module):
    def __init__(self, config: ReconConfig, resolution: tuple[int, int], rng,
                 dtype=np.float32):
        config.validate(resolution)
        self.config = config
        self.resolution = tuple(resolution)
        self.frozen = False
        f, heads, s = config.feature_channels, config.n_heads, config.flexi_downsample
        h, w = resolution
        tokens = (h // (2 * s)) * (w // (2 * s))
        self.embed = Conv2d(3, f, 3, rng, dtype=dtype)
        self.stages = [SstStage(f, heads, s, tokens, rng, dtype) for _ in range(config.n_stages)]
        # damped head: at random init the cube is the learned RGB expansion
        # plus a small nonlinear refinement, which is what makes frozen
        # random-init weights a usable operating mode downstream
        self.head = Conv2d(f, config.out_bands, 3, rng, dtype=dtype, gain=RESIDUAL_GAIN)
        self.expand = Conv2d(3, config.out_bands, 1, rng, dtype=dtype)

    def forward_var(self, x: Var) -> Var:
        """Differentiable forward over (B, 3, H, W)."""

        def ensure_finite(v: Var, where: str) -> Var:
            if not np.all(np.isfinite(v.data)):
                raise NumericError(f"non-finite activations in {where}")
            return v

        feats = ensure_finite(self.embed(x), "embedding")
        for i, stage in enumerate(self.stages):
            feats = ensure_finite(stage(feats), f"stage {i}")
        return ensure_finite(self.head(feats) + self.expand(x), "output head")


def init_reconstruction(config: ReconConfig, resolution: tuple[int, int], seed: int,
                        dtype=np.float32) -> ReconstructionModel:
    return ReconstructionModel(config, resolution, derive_rng(seed, "recon-init"), dtype=dtype)


def reconstruct(rgb, model: ReconstructionModel) -> np.ndarray:
    """(3,H,W) -> (31,H,W) cube (or batched). Deterministic in (params, input)."""
    x = np.asarray(rgb)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"expected (B,3,H,W) or (3,H,W), got {np.asarray(rgb).shape}")
    if not np.all(np.isfinite(x)):
        raise NumericError("reconstruct: non-finite input")
    out = model.forward_var(Var(x.astype(model.embed.weight.dtype, copy=False))).data
    return out[0] if single else out


def psnr(pred: np.ndarray, ref: np.ndarray, peak: float = 1.0) -> float:
    """20*log10(peak/RMSE) in dB; +inf sentinel when the cubes are identical."""
    pred, ref = np.asarray(pred), np.asarray(ref)
    if pred.shape != ref.shape:
        raise ShapeError(f"shape mismatch {pred.shape} vs {ref.shape}")
    if peak <= 0:
        raise ConfigError("peak must be positive")
    diff = pred.astype(np.float64) - ref.astype(np.float64)
    rmse = math.sqrt(float(np.mean(diff * diff)))
    if rmse == 0.0:
        return math.inf
    return 20.0 * math.log10(peak / rmse)


def freeze(model: ReconstructionModel) -> ReconstructionModel:
    """Mark all reconstruction parameters non-trainable (in place)."""
    model.frozen = True
    for param in model.named_params().values():
        param.requires_grad = False
    return model


def recon_header(model: ReconstructionModel) -> dict:
    return {
        "kind": WEIGHTS_KIND,
        "format_version": WEIGHTS_VERSION,
        "config": asdict(model.config),
        "resolution": list(model.resolution),
        "frozen": model.frozen,
    }


def save_recon_weights(model: ReconstructionModel, path: str | Path) -> None:
    header = recon_header(model)
    arrays = {name: var.data.astype(np.float32) for name, var in model.named_params().items()}
    write_array_archive(path, arrays, header)
    Path(str(path) + ".json").write_text(stable_json(header) + "\n", encoding="utf-8")


def load_recon_weights(path: str | Path, expected: ReconConfig | None = None) -> ReconstructionModel:
    arrays, header = read_array_archive(path)
    if header.get("kind") != WEIGHTS_KIND:
        raise CheckpointError(f"{path}: not a reconstruction weights archive")
    if header.get("format_version") != WEIGHTS_VERSION:
        raise CheckpointError(
            f"{path}: format version {header.get('format_version')} != {WEIGHTS_VERSION}"
        )
    config = ReconConfig(**header["config"])
    if expected is not None and config != expected:
        raise CheckpointError(f"checkpoint config {config} does not match expected {expected}")
    model = ReconstructionModel(config, tuple(header["resolution"]),
                                derive_rng(0, "recon-load"), dtype=np.float32)
    model.load_arrays(arrays, {})
    if header.get("frozen"):
        freeze(model)
    return model
