# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled spatial kernels. Contracts and tap orders mirror `pybackend`
so the two backends stay interchangeable (bit-identical for the gather /
fixed-order-scatter kernels, tolerance-level for the rest)."""

import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()

ctypedef fused floating:
    float
    double


def im2col(floating[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((b, c * kh * kw, oh * ow), dtype=dtype)
    cdef floating[:, :, ::1] out = out_arr
    cdef Py_ssize_t bi, ci, ki, kj, oi, oj, row, ii, base, oj_lo, oj_hi
    # per-tap valid output-column range, so the inner copy loop is branch-free
    for bi in range(b):
        for ci in range(c):
            for ki in range(kh):
                for kj in range(kw):
                    row = (ci * kh + ki) * kw + kj
                    oj_lo = 0
                    if pad > kj:
                        oj_lo = (pad - kj + stride - 1) // stride
                    oj_hi = (w - 1 + pad - kj) // stride
                    if oj_hi > ow - 1:
                        oj_hi = ow - 1
                    for oi in range(oh):
                        ii = oi * stride + ki - pad
                        if ii < 0 or ii >= h:
                            continue
                        base = oi * ow
                        for oj in range(oj_lo, oj_hi + 1):
                            out[bi, row, base + oj] = x[bi, ci, ii, oj * stride + kj - pad]
    return out_arr


def col2im(floating[:, :, ::1] cols, Py_ssize_t b, Py_ssize_t c, Py_ssize_t h, Py_ssize_t w,
           int kh, int kw, int stride, int pad):
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((b, c, h, w), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t bi, ci, ki, kj, oi, oj, row, ii, jj
    # tap order (ki, kj) outermost matches the fallback's slice-add order,
    # keeping per-element accumulation order (and therefore bits) identical
    for ki in range(kh):
        for kj in range(kw):
            for bi in range(b):
                for ci in range(c):
                    row = (ci * kh + ki) * kw + kj
                    for oi in range(oh):
                        ii = oi * stride + ki - pad
                        if ii < 0 or ii >= h:
                            continue
                        for oj in range(ow):
                            jj = oj * stride + kj - pad
                            if 0 <= jj < w:
                                out[bi, ci, ii, jj] += cols[bi, row, oi * ow + oj]
    return out_arr


cdef void _line_taps(Py_ssize_t n_in, Py_ssize_t n_out, Py_ssize_t[::1] i0,
                     Py_ssize_t[::1] i1, double[::1] frac):
    cdef Py_ssize_t i
    cdef double pos, scale = (<double> n_in) / (<double> n_out)
    for i in range(n_out):
        pos = (i + 0.5) * scale - 0.5
        if pos < 0.0:
            pos = 0.0
        if pos > n_in - 1.0:
            pos = n_in - 1.0
        i0[i] = <Py_ssize_t> pos
        i1[i] = i0[i] + 1 if i0[i] + 1 < n_in else n_in - 1
        frac[i] = pos - <double> i0[i]


def resize_bilinear(floating[:, :, :, ::1] x, Py_ssize_t oh, Py_ssize_t ow):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((b, c, oh, ow), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    r0_arr = np.empty(oh, dtype=np.intp); r1_arr = np.empty(oh, dtype=np.intp)
    c0_arr = np.empty(ow, dtype=np.intp); c1_arr = np.empty(ow, dtype=np.intp)
    rf_arr = np.empty(oh, dtype=np.float64); cf_arr = np.empty(ow, dtype=np.float64)
    cdef Py_ssize_t[::1] r0 = r0_arr, r1 = r1_arr, c0 = c0_arr, c1 = c1_arr
    cdef double[::1] rf = rf_arr, cf = cf_arr
    _line_taps(h, oh, r0, r1, rf)
    _line_taps(w, ow, c0, c1, cf)
    cdef Py_ssize_t bi, ci, oi, oj
    cdef double t0, t1
    for bi in range(b):
        for ci in range(c):
            for oi in range(oh):
                for oj in range(ow):
                    # row interpolation first, then column: matches the
                    # fallback's separable matmul associativity
                    t0 = (1.0 - rf[oi]) * <double> x[bi, ci, r0[oi], c0[oj]] \
                        + rf[oi] * <double> x[bi, ci, r1[oi], c0[oj]]
                    t1 = (1.0 - rf[oi]) * <double> x[bi, ci, r0[oi], c1[oj]] \
                        + rf[oi] * <double> x[bi, ci, r1[oi], c1[oj]]
                    out[bi, ci, oi, oj] = <floating> ((1.0 - cf[oj]) * t0 + cf[oj] * t1)
    return out_arr


def resize_bilinear_adjoint(floating[:, :, :, ::1] gy, Py_ssize_t ih, Py_ssize_t iw):
    # separable two-pass scatter: columns first (contiguous writes), then rows
    cdef Py_ssize_t b = gy.shape[0], c = gy.shape[1], oh = gy.shape[2], ow = gy.shape[3]
    dtype = np.float32 if floating is float else np.float64
    mid_arr = np.zeros((b, c, oh, iw), dtype=np.float64)
    acc_arr = np.zeros((b, c, ih, iw), dtype=np.float64)
    cdef double[:, :, :, ::1] mid = mid_arr
    cdef double[:, :, :, ::1] acc = acc_arr
    r0_arr = np.empty(oh, dtype=np.intp); r1_arr = np.empty(oh, dtype=np.intp)
    c0_arr = np.empty(ow, dtype=np.intp); c1_arr = np.empty(ow, dtype=np.intp)
    rf_arr = np.empty(oh, dtype=np.float64); cf_arr = np.empty(ow, dtype=np.float64)
    cdef Py_ssize_t[::1] r0 = r0_arr, r1 = r1_arr, c0 = c0_arr, c1 = c1_arr
    cdef double[::1] rf = rf_arr, cf = cf_arr
    _line_taps(ih, oh, r0, r1, rf)
    _line_taps(iw, ow, c0, c1, cf)
    cdef Py_ssize_t bi, ci, oi, oj, ii
    cdef double g
    for bi in range(b):
        for ci in range(c):
            for oi in range(oh):
                for oj in range(ow):
                    g = <double> gy[bi, ci, oi, oj]
                    mid[bi, ci, oi, c0[oj]] += (1.0 - cf[oj]) * g
                    mid[bi, ci, oi, c1[oj]] += cf[oj] * g
            for oi in range(oh):
                for ii in range(iw):
                    acc[bi, ci, r0[oi], ii] += (1.0 - rf[oi]) * mid[bi, ci, oi, ii]
                    acc[bi, ci, r1[oi], ii] += rf[oi] * mid[bi, ci, oi, ii]
    return acc_arr.astype(dtype)


def pool_mean(floating[:, :, :, ::1] x, int factor):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = h // factor, ow = w // factor
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((b, c, oh, ow), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef floating scale = <floating> (1.0 / (factor * factor))
    cdef Py_ssize_t bi, ci, ki, kj, oi, oj
    for ki in range(factor):
        for kj in range(factor):
            for bi in range(b):
                for ci in range(c):
                    for oi in range(oh):
                        for oj in range(ow):
                            out[bi, ci, oi, oj] += x[bi, ci, oi * factor + ki, oj * factor + kj]
    for bi in range(b):
        for ci in range(c):
            for oi in range(oh):
                for oj in range(ow):
                    out[bi, ci, oi, oj] *= scale
    return out_arr


def pool_mean_adjoint(floating[:, :, :, ::1] gy, int factor):
    cdef Py_ssize_t b = gy.shape[0], c = gy.shape[1], oh = gy.shape[2], ow = gy.shape[3]
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((b, c, oh * factor, ow * factor), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef floating scale = <floating> (1.0 / (factor * factor))
    cdef floating val
    cdef Py_ssize_t bi, ci, oi, oj, ki, kj
    for bi in range(b):
        for ci in range(c):
            for oi in range(oh):
                for oj in range(ow):
                    val = gy[bi, ci, oi, oj] * scale
                    for ki in range(factor):
                        for kj in range(factor):
                            out[bi, ci, oi * factor + ki, oj * factor + kj] = val
    return out_arr


def adaptive_pool(floating[:, :, :, ::1] x, Py_ssize_t ph, Py_ssize_t pw):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((b, c, ph, pw), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t bi, ci, i, j, r0, r1, c0, c1, ii, jj
    cdef double acc
    for bi in range(b):
        for ci in range(c):
            for i in range(ph):
                r0 = (i * h) // ph
                r1 = ((i + 1) * h + ph - 1) // ph
                for j in range(pw):
                    c0 = (j * w) // pw
                    c1 = ((j + 1) * w + pw - 1) // pw
                    acc = 0.0
                    for ii in range(r0, r1):
                        for jj in range(c0, c1):
                            acc += <double> x[bi, ci, ii, jj]
                    out[bi, ci, i, j] = <floating> (acc * (1.0 / ((r1 - r0) * (c1 - c0))))
    return out_arr


def adaptive_pool_adjoint(floating[:, :, :, ::1] gy, Py_ssize_t ih, Py_ssize_t iw):
    cdef Py_ssize_t b = gy.shape[0], c = gy.shape[1], ph = gy.shape[2], pw = gy.shape[3]
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((b, c, ih, iw), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t bi, ci, i, j, r0, r1, c0, c1, ii, jj
    cdef floating val, inv
    for bi in range(b):
        for ci in range(c):
            for i in range(ph):
                r0 = (i * ih) // ph
                r1 = ((i + 1) * ih + ph - 1) // ph
                for j in range(pw):
                    c0 = (j * iw) // pw
                    c1 = ((j + 1) * iw + pw - 1) // pw
                    inv = <floating> (1.0 / ((r1 - r0) * (c1 - c0)))
                    val = gy[bi, ci, i, j] * inv
                    for ii in range(r0, r1):
                        for jj in range(c0, c1):
                            out[bi, ci, ii, jj] += val
    return out_arr
