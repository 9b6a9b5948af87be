"""Acceptance suite. One test per criterion; each prints a pass/fail line
(run with `pytest tests/test_acceptance.py -v -s` to watch them).

Criterion 1 (full-scale reference targets) is documentation-only by design:
the corpora are external. The desk-scale experiment (criteria 3-4) runs the full
pipeline twice on the synthetic corpus at the required size.
"""

import time
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

from conftest import FAST_FRONTEND
from fpm_spoof.anomaly import (
    CalibrationStats,
    apply_ds,
    calibrate_ds,
    layer_anomaly_map,
    score_manifest,
    _segment_layer_discrepancies,
)
from fpm_spoof.backbone import BackboneConfig, load_checkpoint, save_checkpoint
from fpm_spoof.corpus import SyntheticCorpusConfig, generate_synthetic_corpus
from fpm_spoof.features import clip_mel_stack
from fpm_spoof.localization import evaluate_pairs, load_pairs
from fpm_spoof.losses import fpm_loss_and_grad, fpm_loss_value
from fpm_spoof.manifest import load_manifest, write_manifest
from fpm_spoof.metrics import (
    ScoredItem,
    ScoredSet,
    auc_arrays,
    auc_trapezoid_arrays,
    eer_arrays,
    evaluate,
    write_scored_set,
)
from fpm_spoof.tensorio import read_tensor, write_tensor
from fpm_spoof.training import TrainConfig, train_student, train_teacher
from helpers import fpm_loss_triple_loop, numerical_grad, relative_error

DESK_BACKBONE = BackboneConfig(stage_channels=(8, 16, 32, 64), dropout_p=0.1)
DESK_TRAIN = TrainConfig(
    max_epochs=25, early_stop_patience=12, batch_size=16, learning_rate=3e-3, seed=20250808
)
DESK_CORPUS_SEED = 20250808


def _report(name: str, ok: bool, detail: str = ""):
    print(f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} {detail}".rstrip())
    assert ok, f"{name} failed: {detail}"


def _run_desk_experiment(root: Path) -> SimpleNamespace:
    """Generate corpus, train both networks, calibrate, score, localize."""
    t_start = time.time()
    corpus_cfg = SyntheticCorpusConfig(
        n_speakers=4, clips_per_speaker=32, seed=DESK_CORPUS_SEED, frontend=FAST_FRONTEND
    )
    manifest = generate_synthetic_corpus(corpus_cfg, root)
    train_m = manifest.filter_split("train")
    dev_m = manifest.filter_split("dev")
    calib_m = manifest.filter_split("calib")
    eval_m = manifest.filter_split("eval")

    teacher, teacher_log = train_teacher(train_m, dev_m, DESK_BACKBONE, DESK_TRAIN, FAST_FRONTEND)
    student, student_log = train_student(teacher, train_m, dev_m, DESK_TRAIN)

    rows_plain = score_manifest(teacher, student, eval_m)
    stats = calibrate_ds(teacher, student, calib_m)
    rows_ds = score_manifest(teacher, student, eval_m, stats)

    pairs = load_pairs(root / "pairs.jsonl")
    _, loc_summary = evaluate_pairs(teacher, student, pairs)

    def _eval(rows):
        return evaluate(ScoredSet(tuple(ScoredItem(r["path"], r["label"], r["score"]) for r in rows)))

    return SimpleNamespace(
        root=root,
        manifest=manifest,
        eval_manifest=eval_m,
        teacher=teacher,
        student=student,
        teacher_log=teacher_log,
        student_log=student_log,
        stats=stats,
        rows_plain=rows_plain,
        rows_ds=rows_ds,
        report_plain=_eval(rows_plain),
        report_ds=_eval(rows_ds),
        loc_summary=loc_summary,
        wall_seconds=time.time() - t_start,
        n_real=sum(1 for e in manifest if e.label == "real"),
        n_fake=sum(1 for e in manifest if e.label == "fake"),
    )


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    return _run_desk_experiment(tmp_path_factory.mktemp("desk_run"))


# -- criterion 1: full-scale targets are documentation, not CI gates ----------


def test_criterion1_reference_targets_documented():
    readme = Path(__file__).resolve().parents[1] / "README.md"
    text = readme.read_text(encoding="utf-8")
    # headline targets recorded for users with the real corpora
    for token in ("100.0", "94.3", "13.3", "98.2", "5.7", "train-teacher", "train-student"):
        assert token in text, f"README missing documented target or recipe token {token!r}"
    _report("criterion-1 documented-targets", True, "(full-scale targets recorded in README, not CI gates)")


# -- criterion 2: property suite ----------------------------------------------


def test_criterion2_fpm_loss_cases_and_oracle():
    rng = np.random.default_rng(0)
    t = [rng.normal(size=(c, 3, 4)) for c in (2, 3, 4)]
    assert fpm_loss_value(t, [m.copy() for m in t]) == pytest.approx(0.0, abs=1e-6)

    e1 = [np.zeros((1, 2, 3, 3)) for _ in range(3)]
    e2 = [np.zeros((1, 2, 3, 3)) for _ in range(3)]
    for m in e1:
        m[:, 0] = 1.0
    for m in e2:
        m[:, 1] = 1.0
    assert fpm_loss_value(e1, e2) == pytest.approx(1.0, abs=1e-6)
    assert fpm_loss_value(t, [-m for m in t]) == pytest.approx(2.0, abs=1e-6)

    worst = 0.0
    for _ in range(100):
        c = int(rng.integers(1, 5))
        tp = [rng.normal(size=(c, 2, 2)) for _ in range(3)]
        sp = [rng.normal(size=(c, 2, 2)) for _ in range(3)]
        worst = max(worst, abs(fpm_loss_value(tp, sp) - fpm_loss_triple_loop(tp, sp)))
    _report("criterion-2 fpm-loss-oracle", worst < 1e-6, f"(max |diff| {worst:.2e} over 100 pyramids)")


def test_criterion2_fpm_gradient_finite_differences():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(5):
        c = int(rng.integers(1, 5))
        h, w = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        t = [rng.normal(size=(c, h, w)) for _ in range(3)]
        s = [rng.normal(size=(c, h, w)) for _ in range(3)]
        _, grads = fpm_loss_and_grad(t, s)
        for layer in range(3):
            num = numerical_grad(
                lambda v, layer=layer: fpm_loss_value(t, [m if i != layer else v for i, m in enumerate(s)]),
                s[layer].copy(),
            )
            worst = max(worst, relative_error(grads[layer], num))
    _report("criterion-2 fpm-gradient", worst < 1e-4, f"(max rel err {worst:.2e})")


def test_criterion2_channel_scaling_invariance():
    rng = np.random.default_rng(2)
    t = [rng.normal(size=(c, 4, 5)) for c in (3, 4, 5)]
    s = [rng.normal(size=(c, 4, 5)) for c in (3, 4, 5)]
    base_loss = fpm_loss_value(t, s)
    base_maps = [layer_anomaly_map(tm, sm).values for tm, sm in zip(t, s)]
    t2 = [m * rng.uniform(0.1, 10, size=(1, *m.shape[1:])) for m in t]
    s2 = [m * rng.uniform(0.1, 10, size=(1, *m.shape[1:])) for m in s]
    loss_diff = abs(fpm_loss_value(t2, s2) - base_loss)
    map_diff = max(
        np.abs(layer_anomaly_map(tm, sm).values - b).max()
        for tm, sm, b in zip(t2, s2, base_maps)
    )
    _report(
        "criterion-2 scaling-invariance",
        loss_diff < 1e-6 and map_diff < 1e-6,
        f"(loss diff {loss_diff:.2e}, map diff {map_diff:.2e})",
    )


def test_criterion2_layer_map_mean_equals_loss():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        t = [rng.normal(size=(c, 5, 6)) for c in (2, 4, 8)]
        s = [rng.normal(size=(c, 5, 6)) for c in (2, 4, 8)]
        per_layer = [layer_anomaly_map(tm, sm).values.mean() for tm, sm in zip(t, s)]
        worst = max(worst, abs(np.mean(per_layer) - fpm_loss_value(t, s)))
    _report("criterion-2 map-mean-equals-loss", worst < 1e-6, f"(max |diff| {worst:.2e})")


def test_criterion2_ds_self_standardization(desk):
    calib_m = desk.manifest.filter_split("calib")
    stats = desk.stats
    pooled = [[], [], []]
    for e in calib_m:
        stack = clip_mel_stack(e.path, FAST_FRONTEND)
        d_layers = _segment_layer_discrepancies(desk.teacher, desk.student, stack)
        for layer, std_d in enumerate(apply_ds([d.astype(np.float64) for d in d_layers], stats)):
            pooled[layer].append(std_d.ravel())
    worst_mean = max(abs(np.concatenate(p).mean()) for p in pooled)
    worst_std = max(abs(np.concatenate(p).std() - 1.0) for p in pooled)
    _report(
        "criterion-2 ds-self-standardization",
        worst_mean < 1e-6 and worst_std < 1e-3,
        f"(|mean| {worst_mean:.2e}, |std-1| {worst_std:.2e})",
    )


def test_criterion2_auc_and_eer_oracles():
    rng = np.random.default_rng(4)
    worst_auc = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 40))
        labels = np.zeros(n, dtype=bool)
        labels[: int(rng.integers(1, n))] = True
        rng.shuffle(labels)
        scores = np.round(rng.normal(size=n), int(rng.integers(0, 3)))
        worst_auc = max(worst_auc, abs(auc_arrays(labels, scores) - auc_trapezoid_arrays(labels, scores)))

    worst_gap = 0.0
    for _ in range(25):
        n_real, n_fake = int(rng.integers(3, 12)), int(rng.integers(3, 12))
        labels = np.array([False] * n_real + [True] * n_fake)
        scores = np.concatenate([rng.normal(0, 1, n_real), rng.normal(1, 1, n_fake)])
        value, _ = eer_arrays(labels, scores)
        lo, hi = scores.min() - 1, scores.max() + 1
        best = (np.inf, 1.0)
        for th in np.arange(lo, hi, 1e-4):
            pred = scores >= th
            fpr = (pred & ~labels).sum() / n_real
            fnr = (~pred & labels).sum() / n_fake
            if abs(fpr - fnr) < best[0]:
                best = (abs(fpr - fnr), (fpr + fnr) / 2)
        n = n_real + n_fake
        gap = abs(value - best[1]) - (1.0 / n + 1e-6)
        worst_gap = max(worst_gap, gap)
    _report(
        "criterion-2 metric-oracles",
        worst_auc < 1e-9 and worst_gap <= 0,
        f"(auc cross-check {worst_auc:.2e}; eer within 1/N + 1e-6)",
    )


def test_criterion2_frozen_teacher(desk, tmp_path):
    digest_before = desk.teacher.weights_digest()
    train_m = desk.manifest.filter_split("train")
    dev_m = desk.manifest.filter_split("dev")
    quick = TrainConfig(max_epochs=2, early_stop_patience=1, batch_size=16,
                        learning_rate=3e-3, seed=1)
    train_student(desk.teacher, train_m, dev_m, quick)
    ok = desk.teacher.weights_digest() == digest_before
    _report("criterion-2 frozen-teacher", ok, "(sha256 digest unchanged by train_student)")


# -- criterion 3: desk-scale experiment ----------------------------------------


def test_criterion3_corpus_size(desk):
    ok = desk.n_real >= 32 and desk.n_fake >= 32
    _report("criterion-3 corpus-size", ok, f"(real={desk.n_real}, fake={desk.n_fake}, speakers=4)")


def test_criterion3_teacher_beats_twice_chance(desk):
    acc = desk.teacher_log.epochs[desk.teacher_log.best_epoch]["dev_accuracy"]
    _report("criterion-3 teacher-accuracy", acc > 0.5, f"(dev acc {acc:.3f} > 2x chance 0.5)")


def test_criterion3_detection_auc_without_ds(desk):
    auc = desk.report_plain.auc
    _report("criterion-3 auc-without-ds", auc >= 0.85, f"(AUC {auc:.4f} >= 0.85)")


def test_criterion3_ds_auc_within_margin(desk):
    drop = desk.report_plain.auc - desk.report_ds.auc
    _report(
        "criterion-3 ds-auc-margin",
        drop <= 0.05,
        f"(AUC {desk.report_plain.auc:.4f} -> {desk.report_ds.auc:.4f}, drop {drop:+.4f} <= 0.05)",
    )


def test_criterion3_localization_energy_ratio(desk):
    ratio = desk.loc_summary["mean_energy_ratio"]
    _report("criterion-3 energy-ratio", ratio > 1.5, f"(mean inside/outside {ratio:.3f} > 1.5)")


def test_criterion3_real_maps_emptier_than_fake(desk):
    real_mean = desk.loc_summary["mean_real_map_mean"]
    fake_mean = desk.loc_summary["mean_fake_map_mean"]
    _report(
        "criterion-3 real-vs-fake-maps",
        real_mean < fake_mean,
        f"(real map mean {real_mean:.4f} < fake map mean {fake_mean:.4f})",
    )


def test_criterion3_wall_time_budget(desk):
    _report("criterion-3 wall-time", desk.wall_seconds < 1200, f"({desk.wall_seconds:.0f}s < 20min)")


# -- criterion 4: determinism ---------------------------------------------------


def test_criterion4_full_rerun_bit_identical(desk, tmp_path_factory):
    rerun = _run_desk_experiment(tmp_path_factory.mktemp("desk_rerun"))
    a = [(Path(r["path"]).name, r["score"]) for r in desk.rows_plain]
    b = [(Path(r["path"]).name, r["score"]) for r in rerun.rows_plain]
    ok = a == b
    a_ds = [(Path(r["path"]).name, r["score"]) for r in desk.rows_ds]
    b_ds = [(Path(r["path"]).name, r["score"]) for r in rerun.rows_ds]
    ok = ok and a_ds == b_ds and desk.stats.mu == rerun.stats.mu and desk.stats.sigma == rerun.stats.sigma
    ok = ok and desk.teacher.weights_digest() == rerun.teacher.weights_digest()
    ok = ok and desk.student.weights_digest() == rerun.student.weights_digest()
    _report(
        "criterion-4 determinism",
        ok,
        "(scores, DS stats, and weight digests bit-identical across full rerun)",
    )


# -- criterion 5: format round trips --------------------------------------------


def test_criterion5_round_trips(desk, tmp_path):
    # manifest
    p1 = write_manifest(desk.manifest, tmp_path / "m1.jsonl")
    p2 = write_manifest(load_manifest(p1), tmp_path / "m2.jsonl")
    manifest_ok = p1.read_bytes() == p2.read_bytes()

    # checkpoint
    save_checkpoint(desk.teacher, tmp_path / "t1", metadata={"run": "desk"})
    save_checkpoint(load_checkpoint(tmp_path / "t1"), tmp_path / "t2", metadata={"run": "desk"})
    ckpt_ok = (tmp_path / "t1.bin").read_bytes() == (tmp_path / "t2.bin").read_bytes() and (
        tmp_path / "t1.json"
    ).read_bytes() == (tmp_path / "t2.json").read_bytes()

    # calibration stats
    s1 = desk.stats.save(tmp_path / "c1.json")
    s2 = CalibrationStats.load(s1).save(tmp_path / "c2.json")
    stats_ok = s1.read_bytes() == s2.read_bytes()

    # portable tensor
    arr = np.asarray(
        clip_mel_stack(desk.eval_manifest.entries[0].path, FAST_FRONTEND)[0], dtype=np.float32
    )
    write_tensor(tmp_path / "x1", arr, kind="anomaly_map", header_extra={"ds_applied": False})
    back, header = read_tensor(tmp_path / "x1")
    write_tensor(tmp_path / "x2", back, kind="anomaly_map", header_extra={"ds_applied": header["ds_applied"]})
    tensor_ok = (tmp_path / "x1.f32").read_bytes() == (tmp_path / "x2.f32").read_bytes() and (
        tmp_path / "x1.json"
    ).read_bytes() == (tmp_path / "x2.json").read_bytes()

    # scored set
    q1 = write_scored_set(desk.rows_plain, tmp_path / "s1.jsonl")
    from fpm_spoof.metrics import load_scored_set

    loaded = load_scored_set(q1)
    rows = [
        {"path": it.path, "label": it.label, "score": it.score,
         "n_segments": r["n_segments"], "ds_applied": r["ds_applied"]}
        for it, r in zip(loaded.items, desk.rows_plain)
    ]
    q2 = write_scored_set(rows, tmp_path / "s2.jsonl")
    scores_ok = q1.read_bytes() == q2.read_bytes()

    _report(
        "criterion-5 round-trips",
        manifest_ok and ckpt_ok and stats_ok and tensor_ok and scores_ok,
        f"(manifest={manifest_ok} checkpoint={ckpt_ok} stats={stats_ok} "
        f"tensor={tensor_ok} scores={scores_ok})",
    )
