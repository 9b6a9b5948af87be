"""Teacher and student training under the shared optimization protocol:
cross-entropy (teacher, speaker ID) or feature-matching loss (student),
AdamW, cosine-annealed learning rate, early stopping on dev loss.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .audio import FrontendConfig
from .backbone import BackboneConfig, FeaturePyramid, SpoofBackbone, build_backbone
from .errors import (
    ConfigError,
    InsufficientDataError,
    LabelSpaceError,
    ShapeError,
)
from .losses import fpm_loss_and_grad, fpm_loss_value, softmax_cross_entropy
from .manifest import Manifest, ensure_real_only
from .features import mel_stacks
from .optim import AdamW, cosine_lr
from .tensorio import jsonl_line


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 300
    early_stop_patience: int = 15
    batch_size: int = 64
    learning_rate: float = 1e-4
    weight_decay: float = 1e-2
    min_lr: float = 0.0
    seed: int = 0
    student_init_from_teacher: bool = False
    student_dropout_active: bool = True  # irrelevant to taps; kept for protocol parity

    def __post_init__(self):
        if not (0 < self.early_stop_patience < self.max_epochs):
            raise ConfigError(
                f"patience ({self.early_stop_patience}) must be in (0, max_epochs={self.max_epochs})"
            )
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad train config: {exc}") from exc


@dataclass
class TrainLog:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    def append(self, **entry):
        self.epochs.append(entry)

    def write_jsonl(self, path) -> Path:
        path = Path(path)
        with path.open("w", encoding="utf-8") as fh:
            for e in self.epochs:
                fh.write(jsonl_line(e))
        return path

    def summary(self) -> dict:
        return {
            "best_epoch": self.best_epoch,
            "stopped_early": self.stopped_early,
            "epochs_run": len(self.epochs),
        }


class SegmentDataset:
    """Mel segments of every clip in a manifest, preloaded as float32.

    The loader is the one-class guard: with expect_real=True a fake-labeled
    entry raises before any audio is read.
    """

    def __init__(
        self,
        manifest: Manifest,
        frontend: FrontendConfig,
        expect_real: bool,
        consumer: str,
        cache_dir=None,
        workers: int = 1,
    ):
        if expect_real:
            ensure_real_only(manifest, consumer)
        if len(manifest) == 0:
            raise InsufficientDataError(f"{consumer} received an empty manifest")
        self.frontend = frontend
        stacks = mel_stacks([e.path for e in manifest], frontend, cache_dir, workers)
        xs, speakers, clip_idx = [], [], []
        for i, (entry, stack) in enumerate(zip(manifest, stacks)):
            for s in range(stack.shape[0]):
                xs.append(stack[s].astype(np.float32))
                speakers.append(entry.speaker_id)
                clip_idx.append(i)
        self.x = np.stack(xs)[:, None]  # (M, 1, F, T)
        self.speaker_ids = speakers
        self.clip_index = np.asarray(clip_idx)
        self.entries = manifest.entries

    def __len__(self) -> int:
        return self.x.shape[0]

    def label_array(self, speaker_to_idx: dict[str, int]) -> np.ndarray:
        try:
            return np.asarray([speaker_to_idx[s] for s in self.speaker_ids], dtype=np.int64)
        except KeyError as exc:
            raise LabelSpaceError(f"speaker {exc.args[0]!r} absent from the training label space")


def _batches(n: int, batch_size: int, perm: np.ndarray):
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def _snapshot(model: SpoofBackbone) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in model.state_arrays().items()}


def fpm_loss(teacher_pyr: FeaturePyramid, student_pyr: FeaturePyramid) -> float:
    """Feature-matching loss between two pyramids (0 identical .. 2 opposite)."""
    if teacher_pyr.shapes != student_pyr.shapes:
        raise ShapeError(
            f"pyramid shapes differ: {teacher_pyr.shapes} vs {student_pyr.shapes}"
        )
    return fpm_loss_value(list(teacher_pyr.maps), list(student_pyr.maps))


def train_teacher(
    train_manifest: Manifest,
    dev_manifest: Manifest,
    backbone_config: BackboneConfig,
    train_config: TrainConfig,
    frontend: FrontendConfig | None = None,
    cache_dir=None,
    workers: int = 1,
) -> tuple[SpoofBackbone, TrainLog]:
    """Speaker-identification training; returns the best-dev-loss teacher."""
    frontend = frontend if frontend is not None else FrontendConfig()
    train_ds = SegmentDataset(train_manifest, frontend, True, "teacher training", cache_dir, workers)
    dev_ds = SegmentDataset(dev_manifest, frontend, True, "teacher dev", cache_dir, workers)

    speakers = sorted(set(train_ds.speaker_ids))
    unseen = set(dev_ds.speaker_ids) - set(speakers)
    if unseen:
        raise LabelSpaceError(f"dev speakers unseen in train: {sorted(unseen)}")
    speaker_to_idx = {s: i for i, s in enumerate(speakers)}
    if backbone_config.n_classes is None:
        backbone_config = BackboneConfig.from_dict(
            {**backbone_config.to_dict(), "n_classes": len(speakers)}
        )
    elif backbone_config.n_classes != len(speakers):
        raise ConfigError(
            f"n_classes={backbone_config.n_classes} but train manifest has {len(speakers)} speakers"
        )
    y_train = train_ds.label_array(speaker_to_idx)
    y_dev = dev_ds.label_array(speaker_to_idx)

    model = build_backbone(backbone_config, seed=train_config.seed, frontend=frontend)
    model.speaker_labels = speakers
    opt = AdamW(model.parameters(), train_config.learning_rate, train_config.weight_decay)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(train_config.seed)))
    log = TrainLog()
    best_loss = np.inf
    best_state = _snapshot(model)
    since_best = 0

    for epoch in range(train_config.max_epochs):
        opt.lr = cosine_lr(
            train_config.learning_rate, epoch, train_config.max_epochs, train_config.min_lr
        )
        perm = rng.permutation(len(train_ds))
        losses = []
        for idx in _batches(len(train_ds), train_config.batch_size, perm):
            opt.zero_grad()
            _, _, logits = model.forward_batch(train_ds.x[idx], training=True, rng=rng)
            loss, glogits = softmax_cross_entropy(logits, y_train[idx])
            model.backward_batch(logits_grad=glogits.astype(np.float32))
            opt.step()
            losses.append(loss)
        dev_loss, dev_acc = _eval_teacher(model, dev_ds, y_dev, train_config.batch_size)
        log.append(
            epoch=epoch,
            train_loss=float(np.mean(losses)),
            dev_loss=dev_loss,
            dev_accuracy=dev_acc,
            lr=opt.lr,
        )
        if dev_loss < best_loss:
            best_loss = dev_loss
            log.best_epoch = epoch
            best_state = _snapshot(model)
            since_best = 0
        else:
            since_best += 1
            if since_best >= train_config.early_stop_patience:
                log.stopped_early = True
                break
    model.load_state_arrays(best_state)
    return model, log


def _eval_teacher(model, ds, labels, batch_size) -> tuple[float, float]:
    losses, hits, total = [], 0, 0
    for start in range(0, len(ds), batch_size):
        idx = np.arange(start, min(start + batch_size, len(ds)))
        _, _, logits = model.forward_batch(ds.x[idx], training=False)
        loss, _ = softmax_cross_entropy(logits, labels[idx])
        losses.append(loss * len(idx))
        hits += int((logits.argmax(axis=1) == labels[idx]).sum())
        total += len(idx)
    return float(np.sum(losses) / total), hits / total


def _teacher_taps(teacher: SpoofBackbone, x: np.ndarray, batch_size: int) -> list[np.ndarray]:
    """Inference-mode teacher pyramids for every segment, computed once."""
    parts = []
    for start in range(0, x.shape[0], batch_size):
        taps, _, _ = teacher.forward_batch(x[start : start + batch_size], training=False, need_head=False)
        parts.append(taps)
    return [np.concatenate([p[l] for p in parts], axis=0) for l in range(3)]


def train_student(
    teacher: SpoofBackbone,
    train_manifest: Manifest,
    dev_manifest: Manifest,
    train_config: TrainConfig,
    cache_dir=None,
    workers: int = 1,
) -> tuple[SpoofBackbone, TrainLog]:
    """Feature-pyramid-matching training against a frozen teacher."""
    if teacher.role != "teacher":
        raise ConfigError("train_student requires a teacher model")
    frontend = teacher.frontend
    train_ds = SegmentDataset(train_manifest, frontend, True, "student training", cache_dir, workers)
    dev_ds = SegmentDataset(dev_manifest, frontend, True, "student dev", cache_dir, workers)

    student = build_backbone(
        teacher.config.student_variant(), seed=train_config.seed + 1, frontend=frontend
    )
    if train_config.student_init_from_teacher:
        teacher_state = teacher.state_arrays()
        student.load_state_arrays(
            {k: v.copy() for k, v in teacher_state.items() if not k.startswith("head.classifier")}
        )

    t_train = _teacher_taps(teacher, train_ds.x, train_config.batch_size)
    t_dev = _teacher_taps(teacher, dev_ds.x, train_config.batch_size)

    opt = AdamW(student.parameters(head=False), train_config.learning_rate, train_config.weight_decay)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(train_config.seed)))
    drop_rng = rng if train_config.student_dropout_active else None
    log = TrainLog()
    best_loss = np.inf
    best_state = _snapshot(student)
    since_best = 0

    for epoch in range(train_config.max_epochs):
        opt.lr = cosine_lr(
            train_config.learning_rate, epoch, train_config.max_epochs, train_config.min_lr
        )
        perm = rng.permutation(len(train_ds))
        losses = []
        for idx in _batches(len(train_ds), train_config.batch_size, perm):
            opt.zero_grad()
            taps, _, _ = student.forward_batch(train_ds.x[idx], training=True, rng=drop_rng, need_head=False)
            loss, grads = fpm_loss_and_grad([t[idx] for t in t_train], taps)
            student.backward_batch(tap_grads=[g.astype(np.float32) for g in grads])
            opt.step()
            losses.append(loss)
        dev_loss = _eval_student(student, dev_ds, t_dev, train_config.batch_size)
        log.append(epoch=epoch, train_loss=float(np.mean(losses)), dev_loss=dev_loss, lr=opt.lr)
        if dev_loss < best_loss:
            best_loss = dev_loss
            log.best_epoch = epoch
            best_state = _snapshot(student)
            since_best = 0
        else:
            since_best += 1
            if since_best >= train_config.early_stop_patience:
                log.stopped_early = True
                break
    student.load_state_arrays(best_state)
    return student, log


def _eval_student(student, ds, t_taps, batch_size) -> float:
    total, weight = 0.0, 0
    for start in range(0, len(ds), batch_size):
        idx = np.arange(start, min(start + batch_size, len(ds)))
        taps, _, _ = student.forward_batch(ds.x[idx], training=False, need_head=False)
        loss = fpm_loss_value([t[idx] for t in t_taps], taps)
        total += loss * len(idx)
        weight += len(idx)
    return float(total / weight)
