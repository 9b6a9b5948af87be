"""Portable on-disk tensor formats.

Single tensors are stored as a raw little-endian row-major binary file next to
a JSON header: ``name.f32`` + ``name.json``. Checkpoints use the same idea with
a multi-tensor bundle: one binary blob plus a directory of (name, dtype, shape,
offset) records embedded in the checkpoint sidecar.

All writers produce byte-identical output for identical input, so
write -> read -> write round-trips can be compared with plain file hashes.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ValidationError

FORMAT_VERSION = 1

_DTYPES = {
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
    "i64": np.dtype("<i8"),
}
_DTYPE_NAMES = {v: k for k, v in _DTYPES.items()}


def dtype_name(arr: np.ndarray) -> str:
    dt = arr.dtype.newbyteorder("<")
    if dt not in _DTYPE_NAMES:
        raise ValidationError(f"unsupported tensor dtype {arr.dtype}")
    return _DTYPE_NAMES[dt]


def json_dumps(obj) -> str:
    """Canonical JSON used for headers/sidecars (stable key order)."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def jsonl_line(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def write_json(path: Path, obj) -> None:
    Path(path).write_text(json_dumps(obj), encoding="utf-8")


def read_json(path: Path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _binary_path(stem: Path, dtype: str) -> Path:
    return stem.with_suffix("." + dtype)


def write_tensor(stem, values: np.ndarray, kind: str, header_extra: dict | None = None) -> Path:
    """Write one tensor as <stem>.<dtype> + <stem>.json; returns binary path."""
    stem = Path(stem)
    arr = np.ascontiguousarray(values)
    name = dtype_name(arr)
    header = {
        "format_version": FORMAT_VERSION,
        "shape": list(arr.shape),
        "dtype": name,
        "kind": kind,
    }
    if header_extra:
        header.update(header_extra)
    bin_path = _binary_path(stem, name)
    bin_path.write_bytes(arr.astype(_DTYPES[name], copy=False).tobytes())
    write_json(stem.with_suffix(".json"), header)
    return bin_path


def read_tensor(stem) -> tuple[np.ndarray, dict]:
    """Read a tensor written by write_tensor. Accepts the stem, .json, or binary path."""
    stem = Path(stem)
    if stem.suffix in {".json"} or stem.suffix.lstrip(".") in _DTYPES:
        stem = stem.with_suffix("")
    header = read_json(stem.with_suffix(".json"))
    dtype = header["dtype"]
    if dtype not in _DTYPES:
        raise ValidationError(f"unknown tensor dtype {dtype!r} in {stem}.json")
    raw = _binary_path(stem, dtype).read_bytes()
    arr = np.frombuffer(raw, dtype=_DTYPES[dtype]).reshape(header["shape"])
    return arr.copy(), header


def pack_bundle(tensors: dict[str, np.ndarray]) -> tuple[bytes, list[dict]]:
    """Concatenate named tensors into one blob + directory (insertion order)."""
    blobs = []
    directory = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        dname = dtype_name(arr)
        data = arr.astype(_DTYPES[dname], copy=False).tobytes()
        directory.append(
            {
                "name": name,
                "dtype": dname,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(data),
            }
        )
        blobs.append(data)
        offset += len(data)
    return b"".join(blobs), directory


def unpack_bundle(blob: bytes, directory: list[dict]) -> dict[str, np.ndarray]:
    out = {}
    for rec in directory:
        dt = _DTYPES[rec["dtype"]]
        start, n = rec["offset"], rec["nbytes"]
        arr = np.frombuffer(blob[start : start + n], dtype=dt).reshape(rec["shape"])
        out[rec["name"]] = arr.copy()
    return out


# -- minimal grayscale PNG writer (no plotting dependency for heatmaps) ------


def _png_chunk(tag: bytes, payload: bytes) -> bytes:
    return (
        struct.pack(">I", len(payload))
        + tag
        + payload
        + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
    )


def write_png_gray(path, matrix: np.ndarray, lo: float | None = None, hi: float | None = None) -> dict:
    """Render a 2-D matrix as an 8-bit grayscale PNG, min-max scaled.

    Returns the scaling actually used so callers can record it in a header.
    Row 0 of the matrix is the bottom of the image (frequency axis upward).
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ValidationError(f"PNG rendering expects a 2-D matrix, got shape {m.shape}")
    lo = float(np.min(m)) if lo is None else float(lo)
    hi = float(np.max(m)) if hi is None else float(hi)
    span = hi - lo
    if span <= 0:
        scaled = np.zeros_like(m)
    else:
        scaled = np.clip((m - lo) / span, 0.0, 1.0)
    img = np.round(scaled * 255.0).astype(np.uint8)[::-1]  # flip so low freq at bottom
    h, w = img.shape
    raw = b"".join(b"\x00" + img[r].tobytes() for r in range(h))
    png = b"".join(
        [
            b"\x89PNG\r\n\x1a\n",
            _png_chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0)),
            _png_chunk(b"IDAT", zlib.compress(raw, 6)),
            _png_chunk(b"IEND", b""),
        ]
    )
    Path(path).write_bytes(png)
    return {"png_min": lo, "png_max": hi}
