"""Pure-numpy convolution kernels (im2col + BLAS matmul).

Fallback path used when numba is unavailable or FPM_SPOOF_BACKEND=numpy.
Per-sample GEMMs keep the column buffer small enough for full-size inputs.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _windows(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    # (N, C, OH, OW, kh, kw) view over the padded input
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::sh, ::sw]


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: tuple[int, int], pad: tuple[int, int]) -> np.ndarray:
    n, c, h, wd = x.shape
    k, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = pad
    oh = conv_out_size(h, kh, sh, ph)
    ow = conv_out_size(wd, kw, sw, pw)
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
    win = _windows(xp, kh, kw, sh, sw)
    w2 = w.reshape(k, -1)
    y = np.empty((n, k, oh, ow), dtype=x.dtype)
    for i in range(n):
        cols = win[i].transpose(1, 2, 0, 3, 4).reshape(oh * ow, c * kh * kw)
        y[i] = (cols @ w2.T).T.reshape(k, oh, ow)
    return y


def conv2d_backward_input(
    gy: np.ndarray,
    w: np.ndarray,
    stride: tuple[int, int],
    pad: tuple[int, int],
    in_shape: tuple[int, int, int, int],
) -> np.ndarray:
    n, c, h, wd = in_shape
    k, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = pad
    oh, ow = gy.shape[2], gy.shape[3]
    w2 = w.reshape(k, -1)
    gxp = np.zeros((n, c, h + 2 * ph, wd + 2 * pw), dtype=gy.dtype)
    for i in range(n):
        gcols = gy[i].reshape(k, oh * ow).T @ w2  # (OH*OW, C*kh*kw)
        gcols = gcols.reshape(oh, ow, c, kh, kw).transpose(2, 3, 4, 0, 1)
        for a in range(kh):
            for b in range(kw):
                gxp[i, :, a : a + sh * oh : sh, b : b + sw * ow : sw] += gcols[:, a, b]
    if ph or pw:
        return gxp[:, :, ph : ph + h, pw : pw + wd]
    return gxp


def conv2d_backward_weight(
    x: np.ndarray,
    gy: np.ndarray,
    stride: tuple[int, int],
    pad: tuple[int, int],
    kernel: tuple[int, int],
) -> np.ndarray:
    n, c, h, wd = x.shape
    kh, kw = kernel
    k = gy.shape[1]
    sh, sw = stride
    ph, pw = pad
    oh, ow = gy.shape[2], gy.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
    win = _windows(xp, kh, kw, sh, sw)
    gw = np.zeros((k, c * kh * kw), dtype=x.dtype)
    for i in range(n):
        cols = win[i].transpose(1, 2, 0, 3, 4).reshape(oh * ow, c * kh * kw)
        gw += gy[i].reshape(k, oh * ow) @ cols
    return gw.reshape(k, c, kh, kw)
