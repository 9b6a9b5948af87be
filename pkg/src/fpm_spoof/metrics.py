"""Detection metrics: tie-grouped ROC, Mann-Whitney AUC, interpolated EER.

Fake is the positive class everywhere; a clip is classified fake when its
score is >= the threshold. AUC is computed from tie-corrected ranks, which
equals P(score_fake > score_real) + 0.5 * P(equal); the trapezoid over the
tie-grouped ROC gives the same number and doubles as an internal cross-check.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EvaluationError, ManifestParseError, ValidationError
from .manifest import LABELS
from .tensorio import json_dumps, jsonl_line


@dataclass(frozen=True)
class ScoredItem:
    path: str
    label: str
    score: float

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValidationError(f"unknown label {self.label!r}")
        if not np.isfinite(self.score):
            raise ValidationError(f"non-finite score for {self.path}")


@dataclass(frozen=True)
class ScoredSet:
    items: tuple[ScoredItem, ...]

    def __post_init__(self):
        if not self.items:
            raise ValidationError("scored set is empty")

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        labels = np.asarray([it.label == "fake" for it in self.items], dtype=bool)
        scores = np.asarray([it.score for it in self.items], dtype=np.float64)
        return labels, scores

    @property
    def n_fake(self) -> int:
        return sum(it.label == "fake" for it in self.items)

    @property
    def n_real(self) -> int:
        return len(self.items) - self.n_fake


@dataclass(frozen=True)
class EvalReport:
    auc: float
    eer: float
    eer_threshold: float
    roc_points: tuple[tuple[float, float], ...]
    n_real: int
    n_fake: int
    polarity_reversed: bool

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            "eer": self.eer,
            "eer_threshold": self.eer_threshold,
            "roc_points": [list(p) for p in self.roc_points],
            "n_real": self.n_real,
            "n_fake": self.n_fake,
            "polarity_reversed": self.polarity_reversed,
        }


def _check_two_classes(labels: np.ndarray):
    if labels.all() or not labels.any():
        raise EvaluationError("ROC/AUC/EER need at least one real and one fake item")


def roc_points_arrays(labels: np.ndarray, scores: np.ndarray) -> list[tuple[float, float, float]]:
    """(fpr, tpr, threshold) vertices; equal scores collapse into one step."""
    _check_two_classes(labels)
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    pos = labels[order]
    n_pos = int(pos.sum())
    n_neg = len(pos) - n_pos
    points = [(0.0, 0.0, np.inf)]
    tp = fp = 0
    i = 0
    while i < len(s):
        j = i
        while j < len(s) and s[j] == s[i]:
            j += 1
        tp += int(pos[i:j].sum())
        fp += (j - i) - int(pos[i:j].sum())
        points.append((fp / n_neg, tp / n_pos, float(s[i])))
        i = j
    return points


def roc_curve(scored: ScoredSet) -> list[tuple[float, float, float]]:
    labels, scores = scored.arrays()
    return roc_points_arrays(labels, scores)


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    i = 0
    s = scores[order]
    while i < len(s):
        j = i
        while j < len(s) and s[j] == s[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + 1 + j)  # average of ranks i+1..j
        i = j
    return ranks


def auc_arrays(labels: np.ndarray, scores: np.ndarray) -> float:
    """Exact Mann-Whitney AUC with half-credit for ties."""
    _check_two_classes(labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    ranks = _average_ranks(scores)
    r_pos = ranks[labels].sum()
    return float((r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc(scored: ScoredSet) -> float:
    labels, scores = scored.arrays()
    return auc_arrays(labels, scores)


def auc_trapezoid_arrays(labels: np.ndarray, scores: np.ndarray) -> float:
    """Trapezoid area under the tie-grouped ROC (cross-check for auc_arrays)."""
    pts = roc_points_arrays(labels, scores)
    area = 0.0
    for (f0, t0, _), (f1, t1, _) in zip(pts, pts[1:]):
        area += (f1 - f0) * (t0 + t1) / 2.0
    return float(area)


def eer_arrays(labels: np.ndarray, scores: np.ndarray) -> tuple[float, float]:
    """EER where FPR = FNR on the ROC polyline (linear interpolation) and
    the (interpolated) threshold achieving it."""
    pts = roc_points_arrays(labels, scores)
    prev_f, prev_t, prev_th = pts[0]
    prev_diff = prev_f - (1.0 - prev_t)  # starts at -1
    for f, t, th in pts[1:]:
        diff = f - (1.0 - t)
        if diff >= 0.0:
            denom = diff - prev_diff
            lam = 0.0 if denom == 0 else (0.0 - prev_diff) / denom
            eer_value = prev_f + lam * (f - prev_f)
            if np.isinf(prev_th):
                threshold = th
            else:
                threshold = prev_th + lam * (th - prev_th)
            return float(eer_value), float(threshold)
        prev_f, prev_t, prev_th, prev_diff = f, t, th, diff
    return 1.0, float(pts[-1][2])  # fully reversed separation


def eer(scored: ScoredSet) -> tuple[float, float]:
    labels, scores = scored.arrays()
    return eer_arrays(labels, scores)


def evaluate(scored: ScoredSet) -> EvalReport:
    labels, scores = scored.arrays()
    auc_value = auc_arrays(labels, scores)
    trap = auc_trapezoid_arrays(labels, scores)
    if abs(auc_value - trap) > 1e-9:
        raise EvaluationError(
            f"internal AUC cross-check failed: ranks {auc_value} vs trapezoid {trap}"
        )
    eer_value, threshold = eer_arrays(labels, scores)
    pts = roc_points_arrays(labels, scores)
    return EvalReport(
        auc=auc_value,
        eer=eer_value,
        eer_threshold=threshold,
        roc_points=tuple((f, t) for f, t, _ in pts),
        n_real=scored.n_real,
        n_fake=scored.n_fake,
        polarity_reversed=eer_value > 0.5,
    )


def dump_distributions(scored: ScoredSet, n_bins: int = 50) -> dict:
    """Per-class histograms over shared bin edges."""
    labels, scores = scored.arrays()
    lo, hi = float(scores.min()), float(scores.max())
    if lo == hi:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, n_bins + 1)
    real_counts, _ = np.histogram(scores[~labels], bins=edges)
    fake_counts, _ = np.histogram(scores[labels], bins=edges)
    return {
        "bin_edges": edges.tolist(),
        "real_counts": real_counts.tolist(),
        "fake_counts": fake_counts.tolist(),
    }


# -- file formats --------------------------------------------------------------


def write_scored_set(rows: list[dict], path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(jsonl_line(row))
    return path


def load_scored_set(path) -> ScoredSet:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"scores file not found: {path}")
    items = []
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
                items.append(
                    ScoredItem(path=str(rec["path"]), label=rec["label"], score=float(rec["score"]))
                )
            except (KeyError, TypeError, ValidationError) as exc:
                raise ManifestParseError(line_no, f"bad scored record: {exc}") from exc
    return ScoredSet(tuple(items))


def write_report(report: EvalReport, path) -> Path:
    path = Path(path)
    path.write_text(json_dumps(report.to_dict()), encoding="utf-8")
    return path


def write_roc_csv(report: EvalReport, path) -> Path:
    path = Path(path)
    lines = ["fpr,tpr"] + [f"{f!r},{t!r}" for f, t in report.roc_points]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_histogram_csv(dist: dict, path) -> Path:
    path = Path(path)
    lines = ["bin_lo,bin_hi,real_count,fake_count"]
    edges = dist["bin_edges"]
    for i, (r, f) in enumerate(zip(dist["real_counts"], dist["fake_counts"])):
        lines.append(f"{edges[i]!r},{edges[i + 1]!r},{r},{f}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
