"""Numpy implementations of the spatial kernels.

This is the fallback backend used when the compiled extension is not built.
Each function mirrors the contract of its compiled twin in `_spatial.pyx`;
tap/accumulation orders are kept identical where bit parity is cheap to get
(im2col, col2im, pool_mean).
"""

from __future__ import annotations

import numpy as np


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """(B,C,H,W) -> (B, C*kh*kw, oh*ow) patch matrix for 3x3/1x1 convs."""
    b, c, h, w = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    if pad:
        xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        xp[:, :, pad : pad + h, pad : pad + w] = x
    else:
        xp = x
    sb, sc, sh, sw = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(b, c, kh, kw, oh, ow),
        strides=(sb, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    return np.ascontiguousarray(view).reshape(b, c * kh * kw, oh * ow)


def col2im(
    cols: np.ndarray, b: int, c: int, h: int, w: int, kh: int, kw: int, stride: int, pad: int
) -> np.ndarray:
    """Adjoint of im2col: scatter-add patches back onto the (B,C,H,W) grid."""
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    blocks = cols.reshape(b, c, kh, kw, oh, ow)
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for ki in range(kh):
        for kj in range(kw):
            xp[:, :, ki : ki + oh * stride : stride, kj : kj + ow * stride : stride] += blocks[
                :, :, ki, kj
            ]
    if pad:
        return np.ascontiguousarray(xp[:, :, pad : pad + h, pad : pad + w])
    return xp


def _line_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Half-pixel-centered source taps for a 1-D bilinear resize."""
    pos = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1.0)
    i0 = np.floor(pos).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = pos - i0
    return i0, i1, frac


def _line_matrix(n_in: int, n_out: int) -> np.ndarray:
    i0, i1, frac = _line_weights(n_in, n_out)
    a = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    a[rows, i0] += 1.0 - frac
    a[rows, i1] += frac
    return a


def resize_bilinear(x: np.ndarray, oh: int, ow: int) -> np.ndarray:
    """(B,C,H,W) -> (B,C,oh,ow), half-pixel-centered separable bilinear."""
    _, _, h, w = x.shape
    ar = _line_matrix(h, oh)
    ac = _line_matrix(w, ow)
    y = np.matmul(np.matmul(ar, x.astype(np.float64)), ac.T)
    return y.astype(x.dtype)


def resize_bilinear_adjoint(gy: np.ndarray, ih: int, iw: int) -> np.ndarray:
    """Exact adjoint of resize_bilinear with input size (ih, iw)."""
    _, _, oh, ow = gy.shape
    ar = _line_matrix(ih, oh)
    ac = _line_matrix(iw, ow)
    gx = np.matmul(np.matmul(ar.T, gy.astype(np.float64)), ac)
    return gx.astype(gy.dtype)


def pool_mean(x: np.ndarray, factor: int) -> np.ndarray:
    """Block mean over non-overlapping factor x factor windows."""
    b, c, h, w = x.shape
    oh, ow = h // factor, w // factor
    acc = np.zeros((b, c, oh, ow), dtype=x.dtype)
    for ki in range(factor):
        for kj in range(factor):
            acc += x[:, :, ki::factor, kj::factor]
    return acc * x.dtype.type(1.0 / (factor * factor))


def pool_mean_adjoint(gy: np.ndarray, factor: int) -> np.ndarray:
    scaled = gy * gy.dtype.type(1.0 / (factor * factor))
    return np.repeat(np.repeat(scaled, factor, axis=2), factor, axis=3)


def _bin_edges(n_in: int, n_out: int) -> list[tuple[int, int]]:
    return [((i * n_in) // n_out, -(-((i + 1) * n_in) // n_out)) for i in range(n_out)]


def adaptive_pool(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    """Adaptive average pool to (ph, pw); bins may overlap when the size
    does not divide evenly (floor/ceil bin edges)."""
    b, c, h, w = x.shape
    out = np.empty((b, c, ph, pw), dtype=x.dtype)
    for i, (r0, r1) in enumerate(_bin_edges(h, ph)):
        for j, (c0, c1) in enumerate(_bin_edges(w, pw)):
            block = x[:, :, r0:r1, c0:c1]
            out[:, :, i, j] = block.sum(axis=(2, 3)) * x.dtype.type(
                1.0 / ((r1 - r0) * (c1 - c0))
            )
    return out


def adaptive_pool_adjoint(gy: np.ndarray, ih: int, iw: int) -> np.ndarray:
    b, c, ph, pw = gy.shape
    gx = np.zeros((b, c, ih, iw), dtype=gy.dtype)
    for i, (r0, r1) in enumerate(_bin_edges(ih, ph)):
        for j, (c0, c1) in enumerate(_bin_edges(iw, pw)):
            inv = gy.dtype.type(1.0 / ((r1 - r0) * (c1 - c0)))
            gx[:, :, r0:r1, c0:c1] += (gy[:, :, i, j] * inv)[:, :, None, None]
    return gx
