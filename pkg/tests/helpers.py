"""Shared test utilities: finite differences and tiny reference oracles."""

from __future__ import annotations

import numpy as np


def numerical_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function of an array."""
    x = x.astype(np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return float(np.abs(a - b).max() / denom)


def fpm_loss_triple_loop(t_maps, s_maps) -> float:
    """Scalar reference: explicit loops over layers, positions, channels."""
    layer_losses = []
    for t, s in zip(t_maps, s_maps):
        if t.ndim == 3:
            t = t[None]
            s = s[None]
        n, c, h, w = t.shape
        total = 0.0
        for ni in range(n):
            for hi in range(h):
                for wi in range(w):
                    tv = t[ni, :, hi, wi]
                    sv = s[ni, :, hi, wi]
                    tn = np.linalg.norm(tv)
                    sn = np.linalg.norm(sv)
                    tv = tv / tn if tn > 0 else np.zeros_like(tv)
                    sv = sv / sn if sn > 0 else np.zeros_like(sv)
                    total += 0.5 * float(((tv - sv) ** 2).sum())
        layer_losses.append(total / (n * h * w))
    return float(np.mean(layer_losses))
