"""Anomaly maps, clip scores, and discrepancy-scaling calibration.

Scoring pipeline per clip:
  load -> segment -> mel -> teacher/student pyramids -> per-layer discrepancy
  maps -> (optional per-layer standardization) -> bilinear upsample to the mel
  grid -> element-wise fusion -> per-segment score = map mean; clip score =
  mean over segments. Higher scores mean more likely fake.

Discrepancy scaling (DS) standardizes each layer's discrepancies with mean/std
pooled over all positions of all segments of a real-speech calibration set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backbone import SpoofBackbone
from .errors import (
    CalibrationMismatchError,
    ConfigError,
    InsufficientDataError,
    ShapeError,
    ValidationError,
)
from .features import mel_stacks
from .losses import layer_discrepancy
from .manifest import Manifest, ensure_real_only
from .tensorio import read_json, write_json, write_tensor

DS_SIGMA_EPSILON = 1e-8
FUSION_MODES = ("mean", "product")


@dataclass(frozen=True, eq=False)
class LayerAnomalyMap:
    values: np.ndarray  # (H, W), nonnegative before DS
    layer_index: int

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ShapeError(f"layer anomaly map must be 2-D, got {self.values.shape}")
        if not (0 <= self.layer_index <= 2):
            raise ValidationError(f"layer_index must be 0..2, got {self.layer_index}")
        if not np.all(np.isfinite(self.values)):
            raise ShapeError("non-finite values in layer anomaly map")


@dataclass(frozen=True, eq=False)
class AnomalyMap:
    values: np.ndarray  # (F, T) on the input mel grid
    ds_applied: bool

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ShapeError(f"anomaly map must be 2-D, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ShapeError("non-finite values in anomaly map")


@dataclass(frozen=True)
class CalibrationStats:
    mu: tuple[float, float, float]
    sigma: tuple[float, float, float]
    n_clips: int
    n_positions: tuple[int, int, int]
    sigma_floored: tuple[bool, bool, bool]
    fingerprints: dict = field(default_factory=dict)
    epsilon: float = DS_SIGMA_EPSILON

    def __post_init__(self):
        if any(s <= 0 for s in self.sigma):
            raise ValidationError(f"calibration sigma must be positive, got {self.sigma}")

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "mu": list(self.mu),
            "sigma": list(self.sigma),
            "n_clips": self.n_clips,
            "n_positions": list(self.n_positions),
            "sigma_floored": list(self.sigma_floored),
            "fingerprints": dict(self.fingerprints),
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationStats":
        return cls(
            mu=tuple(float(v) for v in d["mu"]),
            sigma=tuple(float(v) for v in d["sigma"]),
            n_clips=int(d["n_clips"]),
            n_positions=tuple(int(v) for v in d["n_positions"]),
            sigma_floored=tuple(bool(v) for v in d["sigma_floored"]),
            fingerprints=dict(d.get("fingerprints", {})),
            epsilon=float(d.get("epsilon", DS_SIGMA_EPSILON)),
        )

    def save(self, path) -> Path:
        path = Path(path)
        write_json(path, self.to_dict())
        return path

    @classmethod
    def load(cls, path) -> "CalibrationStats":
        return cls.from_dict(read_json(path))


@dataclass(frozen=True, eq=False)
class DetectionScore:
    path: str
    score: float
    n_segments: int
    per_segment_scores: tuple[float, ...]
    ds_applied: bool


def model_fingerprints(teacher: SpoofBackbone, student: SpoofBackbone) -> dict:
    return {
        "teacher": teacher.fingerprint(),
        "student": student.fingerprint(),
        "frontend": teacher.frontend.fingerprint(),
    }


def check_pair(teacher: SpoofBackbone, student: SpoofBackbone):
    if teacher.role != "teacher":
        raise ConfigError(f"first model must be the teacher, got role={teacher.role}")
    if student.config.to_dict() != teacher.config.student_variant().to_dict():
        raise ConfigError("student topology differs from the teacher's")
    if student.frontend != teacher.frontend:
        raise ConfigError("teacher and student use different frontend configs")


# -- map construction ---------------------------------------------------------


def layer_anomaly_map(t_map: np.ndarray, s_map: np.ndarray, layer_index: int = 0) -> LayerAnomalyMap:
    """Per-position discrepancy between one pair of (C, H, W) feature maps."""
    if t_map.shape != s_map.shape:
        raise ShapeError(f"feature map shapes differ: {t_map.shape} vs {s_map.shape}")
    return LayerAnomalyMap(values=layer_discrepancy(t_map, s_map), layer_index=layer_index)


def upsample_map(values: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Bilinear upsample to (F, T), corner alignment off; constants preserved."""
    src = np.asarray(values, dtype=np.float64)
    if src.ndim != 2:
        raise ShapeError(f"upsample expects a 2-D map, got {src.shape}")
    tf, tt = target
    sf, st = src.shape
    if tf < sf or tt < st:
        raise ShapeError(f"target {target} smaller than source {src.shape}")

    def axis_coords(n_src, n_dst):
        pos = (np.arange(n_dst) + 0.5) * (n_src / n_dst) - 0.5
        pos = np.clip(pos, 0.0, n_src - 1.0)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_src - 1)
        return lo, hi, pos - lo

    r0, r1, rw = axis_coords(sf, tf)
    c0, c1, cw = axis_coords(st, tt)
    top = src[np.ix_(r0, c0)] * (1 - cw) + src[np.ix_(r0, c1)] * cw
    bot = src[np.ix_(r1, c0)] * (1 - cw) + src[np.ix_(r1, c1)] * cw
    return top * (1 - rw[:, None]) + bot * rw[:, None]


def fuse_maps(upsampled: list[np.ndarray], ds_applied: bool, mode: str = "mean") -> AnomalyMap:
    """Combine three input-aligned layer maps into one anomaly map."""
    if len(upsampled) != 3:
        raise ShapeError(f"fusion expects 3 maps, got {len(upsampled)}")
    shapes = {m.shape for m in upsampled}
    if len(shapes) != 1:
        raise ShapeError(f"fusion requires equal shapes, got {sorted(shapes)}")
    if mode == "mean":
        fused = np.mean(upsampled, axis=0)
    elif mode == "product":
        fused = np.prod(upsampled, axis=0)
    else:
        raise ConfigError(f"unknown fusion mode {mode!r} (expected one of {FUSION_MODES})")
    return AnomalyMap(values=fused, ds_applied=ds_applied)


def anomaly_score(amap: AnomalyMap) -> float:
    """Clip-level anomaly evidence: the arithmetic mean of the map."""
    return float(amap.values.mean())


def apply_ds(
    layer_values: list[np.ndarray],
    stats: CalibrationStats,
    fingerprints: dict | None = None,
) -> list[np.ndarray]:
    """Standardize each layer map with the calibration statistics."""
    if fingerprints is not None and fingerprints != stats.fingerprints:
        raise CalibrationMismatchError(
            "calibration statistics were computed for different models/frontend"
        )
    if len(layer_values) != 3:
        raise ShapeError(f"expected 3 layer maps, got {len(layer_values)}")
    return [(v - stats.mu[i]) / stats.sigma[i] for i, v in enumerate(layer_values)]


# -- calibration --------------------------------------------------------------


class _Moments:
    """Streaming mean/M2 with the pairwise merge rule (order-stable)."""

    __slots__ = ("n", "mean", "m2")

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0

    def add_array(self, values: np.ndarray):
        other_n = values.size
        if other_n == 0:
            return
        other_mean = float(values.mean())
        other_m2 = float(((values - other_mean) ** 2).sum())
        self.merge(other_n, other_mean, other_m2)

    def merge(self, n2: int, mean2: float, m2_2: float):
        n1 = self.n
        if n1 == 0:
            self.n, self.mean, self.m2 = n2, mean2, m2_2
            return
        delta = mean2 - self.mean
        n = n1 + n2
        self.mean += delta * n2 / n
        self.m2 += m2_2 + delta * delta * n1 * n2 / n
        self.n = n

    def population_std(self) -> float:
        return float(np.sqrt(self.m2 / self.n)) if self.n else 0.0


def _segment_layer_discrepancies(
    teacher: SpoofBackbone, student: SpoofBackbone, mel_values: np.ndarray
) -> list[np.ndarray]:
    """Per-layer (S, H, W) discrepancy stacks for one clip's segment stack."""
    x = mel_values.astype(np.float32)[:, None]
    t_taps, _, _ = teacher.forward_batch(x, training=False, need_head=False)
    s_taps, _, _ = student.forward_batch(x, training=False, need_head=False)
    return [layer_discrepancy(t, s) for t, s in zip(t_taps, s_taps)]


def calibrate_ds(
    teacher: SpoofBackbone,
    student: SpoofBackbone,
    calib_manifest: Manifest,
    cache_dir=None,
    workers: int = 1,
    epsilon: float = DS_SIGMA_EPSILON,
) -> CalibrationStats:
    """Per-layer mean/std of discrepancies over a real-speech calibration set."""
    check_pair(teacher, student)
    ensure_real_only(calib_manifest, "DS calibration")
    if len(calib_manifest) == 0:
        raise InsufficientDataError("DS calibration needs a non-empty manifest")
    moments = [_Moments() for _ in range(3)]
    stacks = mel_stacks([e.path for e in calib_manifest], teacher.frontend, cache_dir, workers)
    for stack in stacks:
        for layer, d in enumerate(_segment_layer_discrepancies(teacher, student, stack)):
            moments[layer].add_array(d.astype(np.float64))
    mu, sigma, floored, n_pos = [], [], [], []
    for m in moments:
        std = m.population_std()
        floored.append(std < epsilon)
        sigma.append(max(std, epsilon))
        mu.append(m.mean)
        n_pos.append(m.n)
    return CalibrationStats(
        mu=tuple(mu),
        sigma=tuple(sigma),
        n_clips=len(calib_manifest),
        n_positions=tuple(n_pos),
        sigma_floored=tuple(floored),
        fingerprints=model_fingerprints(teacher, student),
        epsilon=epsilon,
    )


# -- scoring ------------------------------------------------------------------


def score_mel_stack(
    teacher: SpoofBackbone,
    student: SpoofBackbone,
    mel_values: np.ndarray,
    stats: CalibrationStats | None = None,
    fusion: str = "mean",
) -> tuple[list[AnomalyMap], list[float]]:
    """Anomaly maps and scores for one clip's (S, F, T) mel stack."""
    target = mel_values.shape[1:]
    per_layer = _segment_layer_discrepancies(teacher, student, mel_values)
    maps, scores = [], []
    for s in range(mel_values.shape[0]):
        layers = [d[s] for d in per_layer]
        if stats is not None:
            layers = apply_ds(layers, stats)
        fused = fuse_maps([upsample_map(v, target) for v in layers], ds_applied=stats is not None, mode=fusion)
        maps.append(fused)
        scores.append(anomaly_score(fused))
    return maps, scores


def score_clip(
    teacher: SpoofBackbone,
    student: SpoofBackbone,
    path,
    stats: CalibrationStats | None = None,
    fusion: str = "mean",
    cache_dir=None,
) -> tuple[DetectionScore, list[AnomalyMap]]:
    """Full pipeline for one audio file; clip score = mean of segment scores."""
    check_pair(teacher, student)
    if stats is not None and stats.fingerprints != model_fingerprints(teacher, student):
        raise CalibrationMismatchError(
            "calibration statistics do not match the supplied teacher/student/frontend"
        )
    stack = mel_stacks([path], teacher.frontend, cache_dir)[0]
    maps, seg_scores = score_mel_stack(teacher, student, stack, stats, fusion)
    det = DetectionScore(
        path=str(path),
        score=float(np.mean(seg_scores)),
        n_segments=len(seg_scores),
        per_segment_scores=tuple(seg_scores),
        ds_applied=stats is not None,
    )
    return det, maps


def score_manifest(
    teacher: SpoofBackbone,
    student: SpoofBackbone,
    manifest: Manifest,
    stats: CalibrationStats | None = None,
    fusion: str = "mean",
    cache_dir=None,
    workers: int = 1,
    map_dir=None,
) -> list[dict]:
    """Score every entry; returns scored-set records in manifest order.

    With map_dir set, each segment's fused anomaly map is exported there in
    the portable tensor format as <clip-stem>_seg<k>.{f64,json}.
    """
    check_pair(teacher, student)
    if stats is not None and stats.fingerprints != model_fingerprints(teacher, student):
        raise CalibrationMismatchError(
            "calibration statistics do not match the supplied teacher/student/frontend"
        )
    if map_dir is not None:
        map_dir = Path(map_dir)
        map_dir.mkdir(parents=True, exist_ok=True)
    stacks = mel_stacks([e.path for e in manifest], teacher.frontend, cache_dir, workers)
    rows = []
    for entry, stack in zip(manifest, stacks):
        maps, seg_scores = score_mel_stack(teacher, student, stack, stats, fusion)
        if map_dir is not None:
            for k, amap in enumerate(maps):
                write_tensor(
                    map_dir / f"{Path(entry.path).stem}_seg{k}",
                    amap.values.astype(np.float32),
                    kind="anomaly_map",
                    header_extra={"ds_applied": amap.ds_applied, "source": entry.path},
                )
        rows.append(
            {
                "path": entry.path,
                "label": entry.label,
                "score": float(np.mean(seg_scores)),
                "n_segments": len(seg_scores),
                "ds_applied": stats is not None,
            }
        )
    return rows
