"""One-class speech-deepfake detection via student-teacher feature pyramid
matching with discrepancy scaling."""

from .audio import FrontendConfig, MelSpectrogram, Waveform, compute_mel, load_audio, segment
from .backbone import (
    BackboneConfig,
    FeaturePyramid,
    SpoofBackbone,
    build_backbone,
    load_checkpoint,
    pyramid_shapes,
    save_checkpoint,
)
from .anomaly import (
    AnomalyMap,
    CalibrationStats,
    DetectionScore,
    LayerAnomalyMap,
    anomaly_score,
    apply_ds,
    calibrate_ds,
    fuse_maps,
    layer_anomaly_map,
    score_clip,
    upsample_map,
)
from .corpus import SyntheticCorpusConfig, generate_synthetic_corpus
from .manifest import Manifest, ManifestEntry, load_manifest, select_calibration, write_manifest
from .metrics import EvalReport, ScoredItem, ScoredSet, auc, eer, evaluate, roc_curve
from .localization import (
    GroundTruthMap,
    PairedClip,
    compare_real_fake_maps,
    ground_truth_map,
    localization_report,
)
from .training import TrainConfig, TrainLog, fpm_loss, train_student, train_teacher

__version__ = "0.1.0"

__all__ = [
    "AnomalyMap",
    "BackboneConfig",
    "CalibrationStats",
    "DetectionScore",
    "EvalReport",
    "FeaturePyramid",
    "FrontendConfig",
    "GroundTruthMap",
    "LayerAnomalyMap",
    "Manifest",
    "ManifestEntry",
    "MelSpectrogram",
    "PairedClip",
    "ScoredItem",
    "ScoredSet",
    "SpoofBackbone",
    "SyntheticCorpusConfig",
    "TrainConfig",
    "TrainLog",
    "Waveform",
    "anomaly_score",
    "apply_ds",
    "auc",
    "build_backbone",
    "calibrate_ds",
    "compare_real_fake_maps",
    "compute_mel",
    "eer",
    "evaluate",
    "fpm_loss",
    "fuse_maps",
    "generate_synthetic_corpus",
    "ground_truth_map",
    "layer_anomaly_map",
    "load_audio",
    "load_checkpoint",
    "load_manifest",
    "localization_report",
    "pyramid_shapes",
    "roc_curve",
    "save_checkpoint",
    "score_clip",
    "segment",
    "select_calibration",
    "train_student",
    "train_teacher",
    "upsample_map",
    "write_manifest",
]
