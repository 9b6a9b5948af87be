"""Clip-level feature extraction with an optional on-disk cache.

The cache directory comes from the FPM_SPOOF_CACHE environment variable (or an
explicit argument); entries are keyed by file identity (path, size, mtime) and
the frontend fingerprint, so a config change never reuses stale features.
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .audio import FrontendConfig, MelSpectrogram, clip_to_mels, load_audio
from .tensorio import read_tensor, write_tensor

CACHE_ENV = "FPM_SPOOF_CACHE"


def cache_dir_from_env() -> Path | None:
    value = os.environ.get(CACHE_ENV, "").strip()
    return Path(value) if value else None


def _cache_key(path: Path, config: FrontendConfig) -> str:
    st = path.stat()
    raw = f"{path.resolve()}|{st.st_size}|{st.st_mtime_ns}|{config.fingerprint()}"
    return hashlib.sha256(raw.encode()).hexdigest()[:32]


def clip_mel_stack(path, config: FrontendConfig, cache_dir: Path | None = None) -> np.ndarray:
    """All segment mels of one clip as an (S, F, T) float64 array."""
    path = Path(path)
    if cache_dir is not None:
        stem = Path(cache_dir) / _cache_key(path, config)
        if stem.with_suffix(".json").is_file():
            arr, _ = read_tensor(stem)
            return arr
    mels = clip_to_mels(load_audio(path, config.sample_rate), config)
    stack = np.stack([m.values for m in mels])
    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        write_tensor(stem, stack, kind="mel_stack")
    return stack


def mel_stacks(
    paths: list, config: FrontendConfig, cache_dir: Path | None = None, workers: int = 1
) -> list[np.ndarray]:
    """Mel stacks for many clips, in input order; workers cap I/O parallelism."""
    if workers <= 1 or len(paths) <= 1:
        return [clip_mel_stack(p, config, cache_dir) for p in paths]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda p: clip_mel_stack(p, config, cache_dir), paths))


def stack_to_mels(stack: np.ndarray, config: FrontendConfig) -> list[MelSpectrogram]:
    return [MelSpectrogram(values=stack[i], config=config) for i in range(stack.shape[0])]
