"""Backend dispatch for the hot convolution kernels.

Two interchangeable implementations exist: a pure-numpy im2col+GEMM one and a
numba @njit one. Selection:

  FPM_SPOOF_BACKEND=numpy   the im2col+BLAS path (default: BLAS GEMM wins on
                            typical hosts, see benchmarks/bench_backends.py)
  FPM_SPOOF_BACKEND=numba   the JIT loop kernels (no im2col buffer; useful
                            where BLAS is weak or memory is tight)
  unset / auto              numpy

Both are bit-deterministic for a fixed host and thread count.
"""

from __future__ import annotations

import os

from ..errors import ConfigError
from . import _numpy_backend
from ._numpy_backend import conv_out_size

_backends = {"numpy": _numpy_backend}
try:
    from . import _numba_backend

    _backends["numba"] = _numba_backend
except ImportError:  # numba genuinely absent
    _numba_backend = None


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_backends))


def _resolve(name: str) -> str:
    if name == "auto":
        return "numpy"
    if name not in _backends:
        raise ConfigError(
            f"unknown kernel backend {name!r} (available: {', '.join(available_backends())})"
        )
    return name


_active = _resolve(os.environ.get("FPM_SPOOF_BACKEND", "auto").strip().lower() or "auto")


def get_backend() -> str:
    return _active


def set_backend(name: str) -> str:
    """Switch kernel backend; returns the previous one (for try/finally)."""
    global _active
    prev = _active
    _active = _resolve(name.strip().lower())
    return prev


def conv2d_forward(x, w, stride=(1, 1), pad=(0, 0)):
    return _backends[_active].conv2d_forward(x, w, stride, pad)


def conv2d_backward_input(gy, w, stride, pad, in_shape):
    return _backends[_active].conv2d_backward_input(gy, w, stride, pad, in_shape)


def conv2d_backward_weight(x, gy, stride, pad, kernel):
    return _backends[_active].conv2d_backward_weight(x, gy, stride, pad, kernel)


__all__ = [
    "available_backends",
    "conv_out_size",
    "conv2d_forward",
    "conv2d_backward_input",
    "conv2d_backward_weight",
    "get_backend",
    "set_backend",
]
