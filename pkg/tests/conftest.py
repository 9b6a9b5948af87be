"""Shared fixtures: a small synthetic corpus and a briefly trained model pair.

Both are session-scoped; unit tests that need trained models reuse them
instead of retraining. The acceptance experiment builds its own larger run.
"""

from types import SimpleNamespace

import pytest

from fpm_spoof.audio import FrontendConfig
from fpm_spoof.backbone import BackboneConfig
from fpm_spoof.corpus import SyntheticCorpusConfig, generate_synthetic_corpus
from fpm_spoof.training import TrainConfig, train_student, train_teacher

FAST_FRONTEND = FrontendConfig(win_length=512, hop_length=512, n_fft=512, n_mels=32)
SMALL_BACKBONE = BackboneConfig(stage_channels=(8, 16, 32, 64), dropout_p=0.1)
SMALL_TRAIN = TrainConfig(
    max_epochs=18, early_stop_patience=10, batch_size=16, learning_rate=3e-3, seed=5
)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("small_corpus")
    config = SyntheticCorpusConfig(
        n_speakers=4, clips_per_speaker=12, seed=11, frontend=FAST_FRONTEND
    )
    manifest = generate_synthetic_corpus(config, out)
    return SimpleNamespace(
        config=config,
        dir=out,
        manifest=manifest,
        train=manifest.filter_split("train"),
        dev=manifest.filter_split("dev"),
        calib=manifest.filter_split("calib"),
        eval=manifest.filter_split("eval"),
    )


@pytest.fixture(scope="session")
def trained_pair(small_corpus):
    teacher, teacher_log = train_teacher(
        small_corpus.train, small_corpus.dev, SMALL_BACKBONE, SMALL_TRAIN, FAST_FRONTEND
    )
    student, student_log = train_student(
        teacher, small_corpus.train, small_corpus.dev, SMALL_TRAIN
    )
    return SimpleNamespace(
        teacher=teacher,
        student=student,
        teacher_log=teacher_log,
        student_log=student_log,
        corpus=small_corpus,
    )
