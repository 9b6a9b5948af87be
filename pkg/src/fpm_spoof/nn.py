"""Minimal CNN building blocks with explicit forward/backward passes.

Layers cache what their backward pass needs on ``self``, so a layer instance
serves one training process at a time. Inference-mode forwards are pure.
All parameters are float32; convolutions go through the kernels backend.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ShapeError


class Param:
    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)


class Layer:
    def params(self) -> list[Param]:
        return []

    def state_arrays(self) -> dict[str, np.ndarray]:
        """All arrays that must persist in a checkpoint (params + buffers)."""
        return {p.name: p.value for p in self.params()}


class Conv2d(Layer):
    def __init__(self, name, c_in, c_out, kernel, stride, pad, rng):
        self.kernel = (kernel, kernel) if isinstance(kernel, int) else tuple(kernel)
        self.stride = (stride, stride) if isinstance(stride, int) else tuple(stride)
        self.pad = (pad, pad) if isinstance(pad, int) else tuple(pad)
        fan_in = c_in * self.kernel[0] * self.kernel[1]
        std = np.sqrt(2.0 / fan_in)
        w = rng.normal(0.0, std, size=(c_out, c_in, *self.kernel)).astype(np.float32)
        self.weight = Param(f"{name}.weight", w)
        self._x = None

    def forward(self, x, training=False):
        if training:
            self._x = x
        return kernels.conv2d_forward(x, self.weight.value, self.stride, self.pad)

    def backward(self, gy):
        x = self._x
        self.weight.grad += kernels.conv2d_backward_weight(x, gy, self.stride, self.pad, self.kernel)
        return kernels.conv2d_backward_input(gy, self.weight.value, self.stride, self.pad, x.shape)

    def params(self):
        return [self.weight]

    def out_shape(self, h, w):
        return (
            kernels.conv_out_size(h, self.kernel[0], self.stride[0], self.pad[0]),
            kernels.conv_out_size(w, self.kernel[1], self.stride[1], self.pad[1]),
        )


class BatchNorm2d(Layer):
    def __init__(self, name, c, momentum=0.1, eps=1e-5):
        self.name = name
        self.eps = eps
        self.momentum = momentum
        self.gamma = Param(f"{name}.gamma", np.ones(c, dtype=np.float32))
        self.beta = Param(f"{name}.beta", np.zeros(c, dtype=np.float32))
        self.running_mean = np.zeros(c, dtype=np.float32)
        self.running_var = np.ones(c, dtype=np.float32)
        self._cache = None

    def forward(self, x, training=False):
        g = self.gamma.value[None, :, None, None]
        b = self.beta.value[None, :, None, None]
        if training:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            inv = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
            m = self.momentum
            self.running_mean = ((1 - m) * self.running_mean + m * mean).astype(np.float32)
            self.running_var = ((1 - m) * self.running_var + m * var).astype(np.float32)
            self._cache = (xhat, inv.astype(x.dtype))
            return (g * xhat + b).astype(x.dtype, copy=False)
        inv = 1.0 / np.sqrt(self.running_var + self.eps)
        return (g * inv[None, :, None, None] * (x - self.running_mean[None, :, None, None]) + b).astype(
            x.dtype, copy=False
        )

    def backward(self, gy):
        xhat, inv = self._cache
        g = self.gamma.value[None, :, None, None]
        m = gy.shape[0] * gy.shape[2] * gy.shape[3]
        self.gamma.grad += (gy * xhat).sum(axis=(0, 2, 3)).astype(np.float32)
        self.beta.grad += gy.sum(axis=(0, 2, 3)).astype(np.float32)
        gxhat = gy * g
        s1 = gxhat.sum(axis=(0, 2, 3), keepdims=True)
        s2 = (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        return (inv[None, :, None, None] * (gxhat - s1 / m - xhat * s2 / m)).astype(gy.dtype, copy=False)

    def params(self):
        return [self.gamma, self.beta]

    def state_arrays(self):
        return {
            self.gamma.name: self.gamma.value,
            self.beta.name: self.beta.value,
            f"{self.name}.running_mean": self.running_mean,
            f"{self.name}.running_var": self.running_var,
        }


class ReLU(Layer):
    def __init__(self):
        self._mask = None

    def forward(self, x, training=False):
        if training:
            self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, gy):
        return gy * self._mask


class Linear(Layer):
    def __init__(self, name, n_in, n_out, rng, relu_follows=False):
        std = np.sqrt((2.0 if relu_follows else 1.0) / n_in)
        self.weight = Param(f"{name}.weight", rng.normal(0.0, std, size=(n_out, n_in)).astype(np.float32))
        self.bias = Param(f"{name}.bias", np.zeros(n_out, dtype=np.float32))
        self._x = None

    def forward(self, x, training=False):
        if training:
            self._x = x
        return x @ self.weight.value.T + self.bias.value

    def backward(self, gy):
        self.weight.grad += gy.T @ self._x
        self.bias.grad += gy.sum(axis=0)
        return gy @ self.weight.value

    def params(self):
        return [self.weight, self.bias]


class Dropout(Layer):
    def __init__(self, p):
        if not (0.0 <= p < 1.0):
            raise ShapeError(f"dropout probability must be in [0,1), got {p}")
        self.p = p
        self._mask = None

    def forward(self, x, training=False, rng=None):
        if not training or self.p == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ShapeError("dropout in training mode requires an rng")
        keep = (rng.random(x.shape) >= self.p).astype(x.dtype)
        self._mask = keep / (1.0 - self.p)
        return x * self._mask

    def backward(self, gy):
        if self._mask is None:
            return gy
        return gy * self._mask


class GlobalAvgPool(Layer):
    def __init__(self):
        self._shape = None

    def forward(self, x, training=False):
        if training:
            self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, gy):
        n, c, h, w = self._shape
        return np.broadcast_to(gy[:, :, None, None], (n, c, h, w)).astype(gy.dtype) / (h * w)
