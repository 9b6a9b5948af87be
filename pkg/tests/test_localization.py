import numpy as np
import pytest

from conftest import FAST_FRONTEND
from fpm_spoof.anomaly import AnomalyMap
from fpm_spoof.errors import ManifestParseError, ShapeError, ValidationError
from fpm_spoof.localization import (
    GroundTruthMap,
    PairedClip,
    compare_real_fake_maps,
    evaluate_pairs,
    ground_truth_map,
    load_pairs,
    localization_report,
    write_pairs,
)
from fpm_spoof.manifest import load_regions


class TestGroundTruthMap:
    def test_identical_mels_zero_map(self):
        rng = np.random.default_rng(0)
        m = rng.normal(size=(16, 20))
        gt = ground_truth_map(m, m.copy())
        np.testing.assert_array_equal(gt.values, 0.0)

    def test_range_exactly_0_1(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(8, 10)), rng.normal(size=(8, 10))
        gt = ground_truth_map(a, b)
        assert gt.values.min() == 0.0 and gt.values.max() == 1.0

    def test_scaling_invariance(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(8, 10))
        d = rng.normal(size=(8, 10))
        gt1 = ground_truth_map(a, a + d)
        gt2 = ground_truth_map(a, a + 4.0 * d)
        np.testing.assert_allclose(gt1.values, gt2.values, atol=1e-12)

    def test_truncates_to_common_frames(self):
        a = np.zeros((8, 12))
        b = np.zeros((8, 10))
        b[2, 3] = 1.0
        gt = ground_truth_map(a, b)
        assert gt.values.shape == (8, 10)

    def test_incompatible_bins_rejected(self):
        with pytest.raises(ShapeError):
            ground_truth_map(np.zeros((8, 10)), np.zeros((9, 10)))

    def test_mass_concentrated_in_injected_region(self, small_corpus):
        # corpus sidecar gives the injected region; mel difference must sit there
        from fpm_spoof.features import clip_mel_stack
        from dataclasses import replace

        raw = replace(FAST_FRONTEND, standardize=False)
        regions = load_regions(small_corpus.dir / "anomalies.jsonl")
        for r in regions[:6]:
            real = clip_mel_stack(r.parent, raw)[0]
            fake = clip_mel_stack(r.path, raw)[0]
            gt = ground_truth_map(real, fake).values
            t_mask = np.zeros_like(gt, dtype=bool)
            t_mask[:, r.t0 : r.t1] = True
            inside = gt[t_mask].mean()
            outside = gt[~t_mask].mean()
            assert inside > outside, r.kind


class TestLocalizationReport:
    def test_identity_prediction(self):
        rng = np.random.default_rng(3)
        values = np.clip(np.abs(rng.normal(size=(10, 12))), 0, 1)
        values[0, 0], values[1, 1] = 0.0, 1.0  # pin the range
        gt = GroundTruthMap(values)
        report = localization_report(values.copy(), gt)
        assert report["pearson_r"] == pytest.approx(1.0)
        assert report["pixel_auc"] == 1.0
        assert report["energy_ratio"] > 1.0

    def test_constant_prediction_flagged(self):
        gt_values = np.zeros((6, 6))
        gt_values[2:4, 2:4] = 1.0
        report = localization_report(np.full((6, 6), 0.5), GroundTruthMap(gt_values))
        assert report["pearson_r"] is None
        assert report["constant_input"]
        assert report["pixel_auc"] == 0.5
        assert report["energy_ratio"] == pytest.approx(1.0)

    def test_pixel_auc_invariant_to_monotone_rescale_but_corr_not(self):
        rng = np.random.default_rng(4)
        gt_values = (rng.random((8, 8)) > 0.6).astype(float)
        gt = GroundTruthMap(gt_values)
        pred = rng.random((8, 8)) + gt_values
        r1 = localization_report(pred, gt)
        r2 = localization_report(np.exp(2 * pred), gt)
        assert r2["pixel_auc"] == pytest.approx(r1["pixel_auc"])
        assert r2["pearson_r"] != pytest.approx(r1["pearson_r"])

    def test_accepts_anomaly_map(self):
        gt_values = np.zeros((4, 4))
        gt_values[1, 1] = 1.0
        amap = AnomalyMap(np.arange(16.0).reshape(4, 4), ds_applied=False)
        report = localization_report(amap, GroundTruthMap(gt_values))
        assert report["pixel_auc"] is not None

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            localization_report(np.zeros((3, 3)), GroundTruthMap(np.zeros((4, 4))))


class TestCompareMaps:
    def test_identical_maps_zero_difference(self):
        m = AnomalyMap(np.ones((3, 3)), ds_applied=False)
        summary = compare_real_fake_maps(m, m)
        assert summary["mean_diff"] == 0.0 and summary["max_diff"] == 0.0

    def test_swap_negates_differences(self):
        rng = np.random.default_rng(5)
        a = AnomalyMap(rng.random((4, 5)), ds_applied=False)
        b = AnomalyMap(rng.random((4, 5)), ds_applied=False)
        ab = compare_real_fake_maps(a, b)
        ba = compare_real_fake_maps(b, a)
        assert ab["mean_diff"] == pytest.approx(-ba["mean_diff"])
        assert ab["max_diff"] == pytest.approx(-ba["max_diff"])


class TestPairsFile:
    def test_round_trip(self, tmp_path):
        pairs = [
            PairedClip("r0.wav", "f0.wav", "synthetic_injection"),
            PairedClip("r1.wav", "f1.wav", "vocoder_resynthesis"),
        ]
        p = write_pairs(pairs, tmp_path / "pairs.jsonl")
        loaded = load_pairs(p)
        assert [(x.source) for x in loaded] == ["synthetic_injection", "vocoder_resynthesis"]
        assert all(x.alignment == "sample_aligned" for x in loaded)

    def test_bad_source_rejected(self):
        with pytest.raises(ValidationError):
            PairedClip("a", "b", "downloaded")

    def test_malformed_line(self, tmp_path):
        (tmp_path / "p.jsonl").write_text('{"real_path": "a"}\n')
        with pytest.raises(ManifestParseError, match="line 1"):
            load_pairs(tmp_path / "p.jsonl")


class TestTrainedSystem:
    def test_energy_ratio_and_fake_dominance(self, small_corpus, trained_pair):
        pairs = load_pairs(small_corpus.dir / "pairs.jsonl")
        reports, summary = evaluate_pairs(trained_pair.teacher, trained_pair.student, pairs)
        assert summary["n_pairs"] == len(pairs)
        assert summary["mean_energy_ratio"] > 1.0
        assert summary["mean_fake_map_mean"] > summary["mean_real_map_mean"]
        assert all(r["n_segments"] == 1 for r in reports)

    def test_misaligned_pair_rejected(self, small_corpus, trained_pair, tmp_path):
        from scipy.io import wavfile

        rng = np.random.default_rng(6)
        short = tmp_path / "short.wav"
        wavfile.write(str(short), 16000, (rng.standard_normal(32000) * 3000).astype(np.int16))
        pair = PairedClip(small_corpus.eval.entries[0].path, str(short), "synthetic_injection")
        from fpm_spoof.localization import evaluate_pair

        with pytest.raises(ShapeError):
            evaluate_pair(trained_pair.teacher, trained_pair.student, pair)
