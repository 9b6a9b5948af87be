"""Numba-compiled convolution kernels.

The forward pass gathers each input patch into a contiguous buffer once and
dots it against every output channel's (contiguous) flattened filter, so the
inner loops vectorize. Each output element is produced by exactly one prange
iteration; results are bit-deterministic regardless of thread count.
"""

from __future__ import annotations

import warnings

import numpy as np

from numba import njit, prange
from numba.core.errors import NumbaWarning

# TBB version probe warns at first parallel launch on some hosts
warnings.filterwarnings("ignore", message=".*TBB.*", category=NumbaWarning)

from ._numpy_backend import conv_out_size


@njit(cache=True, parallel=True)
def _forward(x, w2, kh, kw, sh, sw, ph, pw, zero, y):  # pragma: no cover - compiled
    n, c, h, wd = x.shape
    k = w2.shape[0]
    oh, ow = y.shape[2], y.shape[3]
    ckk = c * kh * kw
    for i in prange(n):
        patch = np.full(ckk, zero)
        for a in range(oh):
            ih0 = a * sh - ph
            for b in range(ow):
                iw0 = b * sw - pw
                idx = 0
                for cc in range(c):
                    for u in range(kh):
                        ih = ih0 + u
                        if 0 <= ih < h:
                            for v in range(kw):
                                iw = iw0 + v
                                patch[idx] = x[i, cc, ih, iw] if 0 <= iw < wd else zero
                                idx += 1
                        else:
                            for _ in range(kw):
                                patch[idx] = zero
                                idx += 1
                for q in range(k):
                    row = w2[q]
                    # 8 independent accumulator chains: fixed summation order,
                    # but enough ILP for the compiler to vectorize
                    a0 = zero
                    a1 = zero
                    a2 = zero
                    a3 = zero
                    a4 = zero
                    a5 = zero
                    a6 = zero
                    a7 = zero
                    j = 0
                    while j + 8 <= ckk:
                        a0 += patch[j] * row[j]
                        a1 += patch[j + 1] * row[j + 1]
                        a2 += patch[j + 2] * row[j + 2]
                        a3 += patch[j + 3] * row[j + 3]
                        a4 += patch[j + 4] * row[j + 4]
                        a5 += patch[j + 5] * row[j + 5]
                        a6 += patch[j + 6] * row[j + 6]
                        a7 += patch[j + 7] * row[j + 7]
                        j += 8
                    acc = ((a0 + a1) + (a2 + a3)) + ((a4 + a5) + (a6 + a7))
                    while j < ckk:
                        acc += patch[j] * row[j]
                        j += 1
                    y[i, q, a, b] = acc


@njit(cache=True, parallel=True)
def _backward_input(gy, w2, c, kh, kw, sh, sw, ph, pw, zero, gx):  # pragma: no cover
    n = gy.shape[0]
    k = gy.shape[1]
    oh, ow = gy.shape[2], gy.shape[3]
    h, wd = gx.shape[2], gx.shape[3]
    ckk = c * kh * kw
    for i in prange(n):
        gpatch = np.full(ckk, zero)
        for a in range(oh):
            ih0 = a * sh - ph
            for b in range(ow):
                iw0 = b * sw - pw
                for j in range(ckk):
                    gpatch[j] = zero
                for q in range(k):
                    g = gy[i, q, a, b]
                    if g != zero:
                        row = w2[q]
                        for j in range(ckk):
                            gpatch[j] += g * row[j]
                idx = 0
                for cc in range(c):
                    for u in range(kh):
                        ih = ih0 + u
                        if 0 <= ih < h:
                            for v in range(kw):
                                iw = iw0 + v
                                if 0 <= iw < wd:
                                    gx[i, cc, ih, iw] += gpatch[idx]
                                idx += 1
                        else:
                            idx += kw


@njit(cache=True, parallel=True)
def _backward_weight(x, gy, sh, sw, ph, pw, zero, gw):  # pragma: no cover - compiled
    n, c, h, wd = x.shape
    k = gy.shape[1]
    kh, kw = gw.shape[2], gw.shape[3]
    oh, ow = gy.shape[2], gy.shape[3]
    for q in prange(k):
        for i in range(n):
            for a in range(oh):
                ih0 = a * sh - ph
                for b in range(ow):
                    g = gy[i, q, a, b]
                    if g == zero:
                        continue
                    iw0 = b * sw - pw
                    for cc in range(c):
                        for u in range(kh):
                            ih = ih0 + u
                            if 0 <= ih < h:
                                for v in range(kw):
                                    iw = iw0 + v
                                    if 0 <= iw < wd:
                                        gw[q, cc, u, v] += g * x[i, cc, ih, iw]


def conv2d_forward(x, w, stride, pad):
    sh, sw = stride
    ph, pw = pad
    k, c, kh, kw = w.shape
    oh = conv_out_size(x.shape[2], kh, sh, ph)
    ow = conv_out_size(x.shape[3], kw, sw, pw)
    y = np.empty((x.shape[0], k, oh, ow), dtype=x.dtype)
    w2 = np.ascontiguousarray(w).reshape(k, c * kh * kw)
    _forward(np.ascontiguousarray(x), w2, kh, kw, sh, sw, ph, pw, x.dtype.type(0), y)
    return y


def conv2d_backward_input(gy, w, stride, pad, in_shape):
    sh, sw = stride
    ph, pw = pad
    k, c, kh, kw = w.shape
    gx = np.zeros(in_shape, dtype=gy.dtype)
    w2 = np.ascontiguousarray(w).reshape(k, c * kh * kw)
    _backward_input(
        np.ascontiguousarray(gy), w2, c, kh, kw, sh, sw, ph, pw, gy.dtype.type(0), gx
    )
    return gx


def conv2d_backward_weight(x, gy, stride, pad, kernel):
    sh, sw = stride
    ph, pw = pad
    kh, kw = kernel
    gw = np.zeros((gy.shape[1], x.shape[1], kh, kw), dtype=x.dtype)
    _backward_weight(
        np.ascontiguousarray(x), np.ascontiguousarray(gy), sh, sw, ph, pw, x.dtype.type(0), gw
    )
    return gw
