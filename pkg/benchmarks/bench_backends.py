"""Benchmark the numba kernels against the pure-numpy fallback.

Times the conv2d forward/backward kernels on shapes taken from the default
backbone on an 80x400 log-mel input, plus one full no-head forward pass.

Usage:
    python benchmarks/bench_backends.py [--repeats 3] [--batch 4]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from fpm_spoof import kernels
from fpm_spoof.audio import FrontendConfig
from fpm_spoof.backbone import BackboneConfig, build_backbone

# (label, N, C_in, H, W, C_out, kernel, stride)
CONV_SHAPES = [
    ("stem 1->64 /2", 1, 1, 80, 400, 64, 3, 2),
    ("stage1 64x40x200", 1, 64, 40, 200, 64, 3, 1),
    ("stage2 64->128 /2", 1, 64, 40, 200, 128, 3, 2),
    ("stage3 128->256 /2", 1, 128, 20, 100, 256, 3, 2),
    ("stage4 256->512 /2", 1, 256, 10, 50, 512, 3, 2),
]


def _time(fn, repeats: int) -> float:
    fn()  # warm-up (JIT compile on the numba path)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_convs(batch: int, repeats: int) -> dict[str, dict[str, tuple[float, float]]]:
    rng = np.random.default_rng(0)
    results: dict[str, dict[str, tuple[float, float]]] = {}
    for label, n, c, h, w, k, ksz, stride in CONV_SHAPES:
        n = max(n, batch)
        x = rng.normal(size=(n, c, h, w)).astype(np.float32)
        wt = rng.normal(size=(k, c, ksz, ksz)).astype(np.float32)
        y = kernels.conv2d_forward(x, wt, (stride, stride), (1, 1))
        gy = np.ones_like(y)
        per_backend = {}
        for name in kernels.available_backends():
            prev = kernels.set_backend(name)
            try:
                fwd = _time(lambda: kernels.conv2d_forward(x, wt, (stride, stride), (1, 1)), repeats)
                bwd = _time(
                    lambda: (
                        kernels.conv2d_backward_input(gy, wt, (stride, stride), (1, 1), x.shape),
                        kernels.conv2d_backward_weight(x, gy, (stride, stride), (1, 1), (ksz, ksz)),
                    ),
                    repeats,
                )
            finally:
                kernels.set_backend(prev)
            per_backend[name] = (fwd, bwd)
        results[label] = per_backend
    return results


def bench_full_forward(batch: int, repeats: int) -> dict[str, float]:
    frontend = FrontendConfig()
    model = build_backbone(BackboneConfig(), seed=0, frontend=frontend)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(batch, 1, frontend.n_mels, frontend.frames_per_segment)).astype(np.float32)
    out = {}
    for name in kernels.available_backends():
        prev = kernels.set_backend(name)
        try:
            out[name] = _time(
                lambda: model.forward_batch(x, training=False, need_head=False), max(repeats // 2, 1)
            )
        finally:
            kernels.set_backend(prev)
    return out


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--batch", type=int, default=4)
    args = parser.parse_args()

    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)} (active default: {kernels.get_backend()})")
    print(f"batch={args.batch} repeats={args.repeats}\n")

    header = f"{'conv shape':<24}" + "".join(f"{b + ' fwd':>14}{b + ' bwd':>14}" for b in backends)
    print(header)
    print("-" * len(header))
    for label, per_backend in bench_convs(args.batch, args.repeats).items():
        row = f"{label:<24}"
        for b in backends:
            fwd, bwd = per_backend[b]
            row += f"{fwd * 1e3:>12.1f}ms{bwd * 1e3:>12.1f}ms"
        print(row)

    print()
    full = bench_full_forward(args.batch, args.repeats)
    for b, dt in full.items():
        print(f"full 80x400 forward ({b:>5}): {dt * 1e3:8.1f} ms/batch")
    if len(full) == 2:
        ratio = full["numpy"] / full["numba"]
        faster = "numba" if ratio > 1 else "numpy"
        print(f"\n{faster} is {max(ratio, 1 / ratio):.2f}x faster end-to-end on this host")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
