"""Localization harness: ground-truth maps from time-aligned real/fake pairs
and agreement metrics for predicted anomaly maps.

Ground truth is the element-wise absolute difference of the two (raw, not
standardized) log-mel matrices, min-max normalized to [0, 1]. Pairs come from
externally re-synthesized audio or from the synthetic injection corpus.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .anomaly import AnomalyMap, CalibrationStats, check_pair, score_mel_stack
from .audio import compute_mel, load_audio, segment
from .backbone import SpoofBackbone
from .errors import ManifestParseError, ShapeError, ValidationError
from .metrics import auc_arrays
from .tensorio import jsonl_line, write_tensor

PAIR_SOURCES = ("vocoder_resynthesis", "synthetic_injection")


@dataclass(frozen=True)
class PairedClip:
    real_path: str
    fake_path: str
    source: str
    alignment: str = "sample_aligned"

    def __post_init__(self):
        if self.source not in PAIR_SOURCES:
            raise ValidationError(f"unknown pair source {self.source!r} (expected {PAIR_SOURCES})")
        if self.alignment != "sample_aligned":
            raise ValidationError(f"unsupported alignment {self.alignment!r}")


@dataclass(frozen=True, eq=False)
class GroundTruthMap:
    values: np.ndarray  # (F, T) in [0, 1]

    def __post_init__(self):
        v = self.values
        if v.ndim != 2:
            raise ShapeError(f"ground truth map must be 2-D, got {v.shape}")
        if v.size and (v.min() < 0 or v.max() > 1):
            raise ShapeError("ground truth map must lie in [0, 1]")


def load_pairs(path) -> list[PairedClip]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"pairs manifest not found: {path}")
    base = path.parent.resolve()
    pairs = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestParseError(line_no, f"invalid JSON ({exc.msg})") from exc
            try:
                pair = PairedClip(
                    real_path=str(rec["real_path"]),
                    fake_path=str(rec["fake_path"]),
                    source=rec.get("source", "synthetic_injection"),
                )
            except (KeyError, ValidationError) as exc:
                raise ManifestParseError(line_no, f"bad pair record: {exc}") from exc
            resolved = {}
            for key, value in (("real_path", pair.real_path), ("fake_path", pair.fake_path)):
                p = Path(value)
                resolved[key] = str((base / p).resolve()) if not p.is_absolute() else value
            pairs.append(replace(pair, **resolved))
    return pairs


def write_pairs(pairs: list[PairedClip], path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(
                jsonl_line(
                    {"real_path": p.real_path, "fake_path": p.fake_path, "source": p.source}
                )
            )
    return path


def ground_truth_map(real_mel: np.ndarray, fake_mel: np.ndarray) -> GroundTruthMap:
    """|real - fake| on log-mel values, min-max normalized to [0, 1]."""
    real_mel = np.asarray(real_mel, dtype=np.float64)
    fake_mel = np.asarray(fake_mel, dtype=np.float64)
    if real_mel.ndim != 2 or fake_mel.ndim != 2 or real_mel.shape[0] != fake_mel.shape[0]:
        raise ShapeError(
            f"incompatible mel shapes for ground truth: {real_mel.shape} vs {fake_mel.shape}"
        )
    t = min(real_mel.shape[1], fake_mel.shape[1])
    diff = np.abs(real_mel[:, :t] - fake_mel[:, :t])
    span = diff.max() - diff.min()
    if span <= 0:
        return GroundTruthMap(np.zeros_like(diff))
    return GroundTruthMap((diff - diff.min()) / span)


def localization_report(
    pred, gt: GroundTruthMap, positive_threshold: float = 0.5
) -> dict:
    """Agreement between a predicted anomaly map and the ground truth.

    Pixel AUC is invariant to strictly increasing rescaling of the prediction;
    the Pearson correlation is not. Constant inputs flag the correlation null.
    """
    pred_values = pred.values if isinstance(pred, AnomalyMap) else np.asarray(pred, dtype=np.float64)
    if pred_values.shape != gt.values.shape:
        raise ShapeError(f"map shapes differ: {pred_values.shape} vs {gt.values.shape}")
    p = pred_values.ravel().astype(np.float64)
    g = gt.values.ravel()
    report: dict = {"constant_input": False}

    if p.std() == 0 or g.std() == 0:
        report["pearson_r"] = None
        report["constant_input"] = True
    else:
        report["pearson_r"] = float(np.corrcoef(p, g)[0, 1])

    positives = g > positive_threshold
    if positives.any() and (~positives).any():
        report["pixel_auc"] = auc_arrays(positives, p)
    else:
        report["pixel_auc"] = None

    inside = p[positives]
    outside = p[~positives]
    if inside.size and outside.size and outside.mean() != 0:
        report["energy_ratio"] = float(inside.mean() / outside.mean())
    else:
        report["energy_ratio"] = None
    report["gt_positive_fraction"] = float(positives.mean())
    return report


def compare_real_fake_maps(real_map: AnomalyMap, fake_map: AnomalyMap) -> dict:
    """Summary of paired real/fake anomaly maps (means, maxima, differences)."""
    if real_map.values.shape != fake_map.values.shape:
        raise ShapeError(
            f"map shapes differ: {real_map.values.shape} vs {fake_map.values.shape}"
        )
    real_mean = float(real_map.values.mean())
    fake_mean = float(fake_map.values.mean())
    real_max = float(real_map.values.max())
    fake_max = float(fake_map.values.max())
    return {
        "real_mean": real_mean,
        "fake_mean": fake_mean,
        "real_max": real_max,
        "fake_max": fake_max,
        "mean_diff": fake_mean - real_mean,
        "max_diff": fake_max - real_max,
    }


def evaluate_pair(
    teacher: SpoofBackbone,
    student: SpoofBackbone,
    pair: PairedClip,
    stats: CalibrationStats | None = None,
    positive_threshold: float = 0.5,
    map_dir=None,
) -> dict:
    """Per-pair localization metrics, averaged over aligned segments."""
    check_pair(teacher, student)
    frontend = teacher.frontend
    real_wave = load_audio(pair.real_path, frontend.sample_rate)
    fake_wave = load_audio(pair.fake_path, frontend.sample_rate)
    if abs(len(real_wave) - len(fake_wave)) > frontend.hop_length:
        raise ShapeError(
            f"pair not time-aligned: {len(real_wave)} vs {len(fake_wave)} samples"
        )
    n = min(len(real_wave), len(fake_wave))
    real_wave = replace(real_wave, samples=real_wave.samples[:n])
    fake_wave = replace(fake_wave, samples=fake_wave.samples[:n])

    raw_config = replace(frontend, standardize=False)
    real_raw = _segmented_mels(real_wave, raw_config)
    fake_raw = _segmented_mels(fake_wave, raw_config)
    gt_maps = [ground_truth_map(rm.values, fm.values) for rm, fm in zip(real_raw, fake_raw)]

    real_stack = np.stack([m.values for m in _segmented_mels(real_wave, frontend)])
    fake_stack = np.stack([m.values for m in _segmented_mels(fake_wave, frontend)])
    real_maps, _ = score_mel_stack(teacher, student, real_stack, stats)
    fake_maps, _ = score_mel_stack(teacher, student, fake_stack, stats)

    seg_reports = [
        localization_report(fm, gt, positive_threshold) for fm, gt in zip(fake_maps, gt_maps)
    ]
    comparisons = [compare_real_fake_maps(rm, fm) for rm, fm in zip(real_maps, fake_maps)]

    if map_dir is not None:
        map_dir = Path(map_dir)
        map_dir.mkdir(parents=True, exist_ok=True)
        stem = Path(pair.fake_path).stem
        for k, (fm, rm, gt) in enumerate(zip(fake_maps, real_maps, gt_maps)):
            write_tensor(map_dir / f"{stem}_seg{k}_pred", fm.values.astype(np.float32),
                         kind="anomaly_map",
                         header_extra={"ds_applied": fm.ds_applied, "source": pair.fake_path})
            write_tensor(map_dir / f"{stem}_seg{k}_real", rm.values.astype(np.float32),
                         kind="anomaly_map",
                         header_extra={"ds_applied": rm.ds_applied, "source": pair.real_path})
            write_tensor(map_dir / f"{stem}_seg{k}_gt", gt.values.astype(np.float32),
                         kind="ground_truth_map")

    def _mean(key, rows):
        vals = [r[key] for r in rows if r.get(key) is not None]
        return float(np.mean(vals)) if vals else None

    return {
        "real_path": pair.real_path,
        "fake_path": pair.fake_path,
        "source": pair.source,
        "n_segments": len(seg_reports),
        "pearson_r": _mean("pearson_r", seg_reports),
        "pixel_auc": _mean("pixel_auc", seg_reports),
        "energy_ratio": _mean("energy_ratio", seg_reports),
        "real_map_mean": _mean("real_mean", comparisons),
        "fake_map_mean": _mean("fake_mean", comparisons),
    }


def _segmented_mels(waveform, config):
    return [compute_mel(s, config) for s in segment(waveform, config)]


def evaluate_pairs(
    teacher: SpoofBackbone,
    student: SpoofBackbone,
    pairs: list[PairedClip],
    stats: CalibrationStats | None = None,
    positive_threshold: float = 0.5,
    map_dir=None,
) -> tuple[list[dict], dict]:
    """All pairs plus an aggregate summary."""
    reports = [
        evaluate_pair(teacher, student, p, stats, positive_threshold, map_dir) for p in pairs
    ]

    def _mean(key):
        vals = [r[key] for r in reports if r.get(key) is not None]
        return float(np.mean(vals)) if vals else None

    fake_higher = [
        r["fake_map_mean"] > r["real_map_mean"]
        for r in reports
        if r["fake_map_mean"] is not None and r["real_map_mean"] is not None
    ]
    summary = {
        "n_pairs": len(reports),
        "mean_pearson_r": _mean("pearson_r"),
        "mean_pixel_auc": _mean("pixel_auc"),
        "mean_energy_ratio": _mean("energy_ratio"),
        "mean_real_map_mean": _mean("real_map_mean"),
        "mean_fake_map_mean": _mean("fake_map_mean"),
        "fake_mean_exceeds_real_fraction": float(np.mean(fake_higher)) if fake_higher else None,
    }
    return reports, summary
