"""Dataset manifests: line-delimited JSON records of audio clips.

One clip per line: {"path","label","speaker_id","split","duration_s"?}.
Paths are stored relative to the manifest file when possible and resolved to
absolute paths on load, so corpora stay relocatable.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from pathlib import Path, PurePosixPath
from typing import Iterator

import numpy as np

from .errors import (
    InsufficientDataError,
    ManifestParseError,
    OneClassViolationError,
    ValidationError,
)
from .tensorio import jsonl_line

LABELS = ("real", "fake")
SPLITS = ("train", "dev", "eval", "calib")


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: str
    speaker_id: str
    split: str
    duration_s: float | None = None

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValidationError(f"unknown label {self.label!r} (expected one of {LABELS})")
        if self.split not in SPLITS:
            raise ValidationError(f"unknown split {self.split!r} (expected one of {SPLITS})")
        if not self.path:
            raise ValidationError("entry path must be non-empty")
        if not self.speaker_id:
            raise ValidationError("speaker_id must be non-empty")
        if self.duration_s is not None and not (float(self.duration_s) >= 0):
            raise ValidationError(f"duration_s must be >= 0, got {self.duration_s}")

    def to_record(self) -> dict:
        rec = {
            "path": self.path,
            "label": self.label,
            "speaker_id": self.speaker_id,
            "split": self.split,
        }
        if self.duration_s is not None:
            rec["duration_s"] = float(self.duration_s)
        return rec


@dataclass(frozen=True)
class Manifest:
    entries: tuple[ManifestEntry, ...]
    source_name: str = ""

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.path in seen:
                raise ValidationError(f"duplicate path in manifest: {e.path}")
            seen.add(e.path)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[ManifestEntry]:
        return iter(self.entries)

    def filter_split(self, split: str) -> "Manifest":
        if split not in SPLITS:
            raise ValidationError(f"unknown split {split!r}")
        return Manifest(tuple(e for e in self.entries if e.split == split), self.source_name)

    def filter_label(self, label: str) -> "Manifest":
        if label not in LABELS:
            raise ValidationError(f"unknown label {label!r}")
        return Manifest(tuple(e for e in self.entries if e.label == label), self.source_name)

    def real_entries(self) -> tuple[ManifestEntry, ...]:
        return tuple(e for e in self.entries if e.label == "real")

    def speakers(self) -> tuple[str, ...]:
        return tuple(sorted({e.speaker_id for e in self.entries}))


def _parse_record(rec: dict) -> ManifestEntry:
    known = {"path", "label", "speaker_id", "split", "duration_s"}
    missing = {"path", "label", "speaker_id", "split"} - rec.keys()
    if missing:
        raise ValidationError(f"missing keys {sorted(missing)}")
    extra = rec.keys() - known
    if extra:
        raise ValidationError(f"unknown keys {sorted(extra)}")
    return ManifestEntry(
        path=str(rec["path"]),
        label=rec["label"],
        speaker_id=str(rec["speaker_id"]),
        split=rec["split"],
        duration_s=None if rec.get("duration_s") is None else float(rec["duration_s"]),
    )


def load_manifest(path) -> Manifest:
    """Load a line-delimited JSON manifest; relative paths resolve against it."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    base = path.parent.resolve()
    entries = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestParseError(line_no, f"invalid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise ManifestParseError(line_no, "expected a JSON object")
            try:
                entry = _parse_record(rec)
            except ValidationError as exc:
                raise ManifestParseError(line_no, str(exc)) from exc
            p = PurePosixPath(entry.path)
            if not Path(entry.path).is_absolute():
                entry = replace(entry, path=str((base / Path(*p.parts)).resolve()))
            entries.append(entry)
    try:
        return Manifest(tuple(entries), source_name=path.stem)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def write_manifest(manifest: Manifest, path) -> Path:
    """Write entries in order, one JSON object per line, relativizing paths."""
    path = Path(path)
    base = path.parent.resolve()
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for e in manifest.entries:
            rec = e.to_record()
            p = Path(e.path)
            if p.is_absolute():
                try:
                    rec["path"] = PurePosixPath(p.resolve().relative_to(base)).as_posix()
                except ValueError:
                    rec["path"] = p.as_posix()
            else:
                rec["path"] = PurePosixPath(p).as_posix()
            fh.write(jsonl_line(rec))
    return path


def ensure_real_only(manifest: Manifest, consumer: str) -> Manifest:
    """Guard for one-class consumers (training, calibration): reject fakes."""
    for e in manifest.entries:
        if e.label != "real":
            raise OneClassViolationError(
                f"{consumer} consumes real speech only, got label={e.label!r} for {e.path}"
            )
    if len(manifest) == 0:
        raise InsufficientDataError(f"{consumer} received an empty manifest")
    return manifest


def select_calibration(manifest: Manifest, n: int, seed: int) -> Manifest:
    """Sample n real entries without replacement, deterministically per seed."""
    if n < 1:
        raise ValidationError(f"calibration size must be >= 1, got {n}")
    reals = manifest.real_entries()
    if len(reals) < n:
        raise InsufficientDataError(
            f"need {n} real entries for calibration, manifest has {len(reals)}"
        )
    rng = np.random.Generator(np.random.PCG64(seed))
    idx = np.sort(rng.permutation(len(reals))[:n])
    chosen = tuple(replace(reals[i], split="calib") for i in idx)
    return Manifest(chosen, source_name=manifest.source_name)


# -- sidecar files -----------------------------------------------------------


@dataclass(frozen=True)
class AnomalyRegion:
    """Injected time-frequency region, half-open frame/mel-bin intervals."""

    path: str
    parent: str
    kind: str
    t0: int
    t1: int
    f0: int
    f1: int

    def __post_init__(self):
        if not (self.t1 > self.t0 >= 0 and self.f1 > self.f0 >= 0):
            raise ValidationError(
                f"degenerate anomaly region t=[{self.t0},{self.t1}) f=[{self.f0},{self.f1})"
            )

    def to_record(self) -> dict:
        return {
            "path": self.path,
            "parent": self.parent,
            "kind": self.kind,
            "t0": self.t0,
            "t1": self.t1,
            "f0": self.f0,
            "f1": self.f1,
        }


def write_regions(regions: list[AnomalyRegion], path, base_dir=None) -> Path:
    path = Path(path)
    base = Path(base_dir).resolve() if base_dir else path.parent.resolve()
    with path.open("w", encoding="utf-8") as fh:
        for r in regions:
            rec = r.to_record()
            for key in ("path", "parent"):
                p = Path(rec[key])
                if p.is_absolute():
                    try:
                        rec[key] = PurePosixPath(p.resolve().relative_to(base)).as_posix()
                    except ValueError:
                        rec[key] = p.as_posix()
            fh.write(jsonl_line(rec))
    return path


def load_regions(path) -> list[AnomalyRegion]:
    path = Path(path)
    base = path.parent.resolve()
    out = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestParseError(line_no, f"invalid JSON ({exc.msg})") from exc
            for key in ("path", "parent"):
                if not os.path.isabs(rec[key]):
                    rec[key] = str((base / rec[key]).resolve())
            out.append(
                AnomalyRegion(
                    path=rec["path"],
                    parent=rec["parent"],
                    kind=rec["kind"],
                    t0=int(rec["t0"]),
                    t1=int(rec["t1"]),
                    f0=int(rec["f0"]),
                    f1=int(rec["f1"]),
                )
            )
    return out
