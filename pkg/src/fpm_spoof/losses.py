"""Training losses: speaker-ID cross-entropy and the feature-matching loss.

The feature-matching loss compares teacher/student activations after
channel-wise L2 normalization. At each spatial position (h, w) of layer l:

    d(h, w) = 0.5 * || t_hat(h, w) - s_hat(h, w) ||^2        in [0, 2]

Layer loss is the mean of d over positions (and batch); the total loss is
the unweighted mean over the three tapped layers. Zero-norm channel vectors
normalize to the zero vector and get zero gradient.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch; returns (loss, dloss/dlogits)."""
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=1, keepdims=True)
    eps = np.finfo(p.dtype).tiny
    loss = float(-np.log(np.maximum(p[np.arange(n), labels], eps)).mean())
    grad = p.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


def _as_batched(m: np.ndarray) -> np.ndarray:
    if m.ndim == 3:
        return m[None]
    if m.ndim == 4:
        return m
    raise ShapeError(f"feature map must be (C,H,W) or (N,C,H,W), got shape {m.shape}")


def normalize_channels(m: np.ndarray) -> np.ndarray:
    """Unit L2 norm across the channel axis per (n, h, w); zero stays zero."""
    x = _as_batched(m)
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    out = np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)
    return out if m.ndim == 4 else out[0]


def layer_discrepancy(t_map: np.ndarray, s_map: np.ndarray) -> np.ndarray:
    """Per-position discrepancy 0.5*||t_hat - s_hat||^2, shape (N,H,W) or (H,W)."""
    t = _as_batched(t_map)
    s = _as_batched(s_map)
    if t.shape != s.shape:
        raise ShapeError(f"teacher/student maps differ in shape: {t.shape} vs {s.shape}")
    diff = normalize_channels(t) - normalize_channels(s)
    d = 0.5 * (diff * diff).sum(axis=1)
    return d if t_map.ndim == 4 else d[0]


def fpm_loss_value(t_maps: list[np.ndarray], s_maps: list[np.ndarray]) -> float:
    if len(t_maps) != len(s_maps):
        raise ShapeError(f"pyramid depth mismatch: {len(t_maps)} vs {len(s_maps)}")
    layer_means = [float(layer_discrepancy(t, s).mean()) for t, s in zip(t_maps, s_maps)]
    return float(np.mean(layer_means))


def fpm_loss_and_grad(
    t_maps: list[np.ndarray], s_maps: list[np.ndarray]
) -> tuple[float, list[np.ndarray]]:
    """Loss plus analytic gradient with respect to each raw student map.

    With u = s/||s|| (per position), the per-position gradient is
    (u * (u . t_hat) - t_hat) / ||s||, scaled by the averaging weights.
    """
    if len(t_maps) != len(s_maps):
        raise ShapeError(f"pyramid depth mismatch: {len(t_maps)} vs {len(s_maps)}")
    n_layers = len(s_maps)
    layer_means = []
    grads = []
    for t_map, s_map in zip(t_maps, s_maps):
        t = _as_batched(t_map)
        s = _as_batched(s_map)
        if t.shape != s.shape:
            raise ShapeError(f"teacher/student maps differ in shape: {t.shape} vs {s.shape}")
        n, _, h, w = s.shape
        t_hat = normalize_channels(t)
        s_norm = np.sqrt((s * s).sum(axis=1, keepdims=True))
        u = np.divide(s, s_norm, out=np.zeros_like(s), where=s_norm > 0)
        diff = t_hat - u
        layer_means.append(float(0.5 * (diff * diff).sum(axis=1).mean()))
        dot = (u * t_hat).sum(axis=1, keepdims=True)
        g = np.divide(u * dot - t_hat, s_norm, out=np.zeros_like(s), where=s_norm > 0)
        g *= 1.0 / (n_layers * n * h * w)
        grads.append(g if s_map.ndim == 4 else g[0])
    return float(np.mean(layer_means)), grads
