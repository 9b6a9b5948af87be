"""ResNet18-style 2D CNN shared by teacher and student.

Topology: 3x3 stem conv (stride 2, no max-pool), four stages of two basic
residual blocks with stage strides (1, 2, 2, 2), then global average pooling,
dropout, a 256-unit fully connected layer with ReLU and, for the teacher only,
a linear speaker classifier. Feature taps are the outputs of the three final
stages; for an 80x400 input the tap shapes are 20x100, 10x50 and 5x25.

The forward/backward passes are written out explicitly; gradients can enter
either through the classifier logits (teacher training) or through the three
tap outputs (student feature-matching training).
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .audio import FrontendConfig, MelSpectrogram
from .errors import CheckpointError, ConfigError, RoleError, ShapeError
from .nn import BatchNorm2d, Conv2d, Dropout, GlobalAvgPool, Linear, ReLU
from .tensorio import json_dumps, pack_bundle, read_json, unpack_bundle, write_json

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class BackboneConfig:
    in_channels: int = 1
    stage_channels: tuple[int, int, int, int] = (64, 128, 256, 512)
    dropout_p: float = 0.3
    embed_dim: int = 256
    n_classes: int | None = None  # teacher: speaker count; student: None
    tap_stages: tuple[int, int, int] = (2, 3, 4)
    stem_stride: int = 2
    stage_strides: tuple[int, int, int, int] = (1, 2, 2, 2)

    def __post_init__(self):
        if self.embed_dim != 256:
            raise ConfigError(f"embed_dim is fixed at 256, got {self.embed_dim}")
        if len(self.stage_channels) != 4 or any(c < 1 for c in self.stage_channels):
            raise ConfigError(f"stage_channels must be 4 positive ints, got {self.stage_channels}")
        if len(self.tap_stages) != 3 or list(self.tap_stages) != sorted(set(self.tap_stages)) or not all(
            1 <= s <= 4 for s in self.tap_stages
        ):
            raise ConfigError(f"tap_stages must be 3 distinct increasing stages in 1..4, got {self.tap_stages}")
        if not (0.0 <= self.dropout_p < 1.0):
            raise ConfigError(f"dropout_p must be in [0,1), got {self.dropout_p}")
        if self.n_classes is not None and self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2 when present, got {self.n_classes}")
        if len(self.stage_strides) != 4 or any(s < 1 for s in self.stage_strides) or self.stem_stride < 1:
            raise ConfigError("stem_stride and the 4 stage_strides must be >= 1")
        if self.in_channels != 1:
            raise ConfigError(f"backbone consumes single-channel spectrograms, got {self.in_channels}")

    @property
    def role(self) -> str:
        return "teacher" if self.n_classes is not None else "student"

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("stage_channels", "tap_stages", "stage_strides"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        d = dict(d)
        for key in ("stage_channels", "tap_stages", "stage_strides"):
            if key in d:
                d[key] = tuple(d[key])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad backbone config: {exc}") from exc

    def student_variant(self) -> "BackboneConfig":
        return replace(self, n_classes=None)

    def fingerprint(self) -> str:
        return hashlib.sha256(json_dumps(self.to_dict()).encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class FeaturePyramid:
    maps: tuple[np.ndarray, ...]  # three (C, H, W) arrays, shallow -> deep
    source_shape: tuple[int, int]

    def __post_init__(self):
        if len(self.maps) != 3:
            raise ShapeError(f"feature pyramid must have 3 maps, got {len(self.maps)}")
        for m in self.maps:
            if m.ndim != 3:
                raise ShapeError(f"pyramid maps must be (C,H,W), got {m.shape}")
            if not np.all(np.isfinite(m)):
                raise ShapeError("non-finite values in feature pyramid")

    @property
    def shapes(self) -> tuple[tuple[int, int, int], ...]:
        return tuple(m.shape for m in self.maps)


def pyramid_shapes(config: BackboneConfig, f: int, t: int) -> list[tuple[int, int, int]]:
    """Spatial arithmetic of the tap maps for an f x t input."""

    def down(size, stride):
        return (size + 2 - 3) // stride + 1  # 3x3 conv, pad 1

    h, w = down(f, config.stem_stride), down(t, config.stem_stride)
    shapes = []
    for ch, st in zip(config.stage_channels, config.stage_strides):
        h, w = down(h, st), down(w, st)
        shapes.append((ch, h, w))
    return [shapes[s - 1] for s in config.tap_stages]


class _BasicBlock:
    def __init__(self, name, c_in, c_out, stride, rng):
        self.conv1 = Conv2d(f"{name}.conv1", c_in, c_out, 3, stride, 1, rng)
        self.bn1 = BatchNorm2d(f"{name}.bn1", c_out)
        self.relu1 = ReLU()
        self.conv2 = Conv2d(f"{name}.conv2", c_out, c_out, 3, 1, 1, rng)
        self.bn2 = BatchNorm2d(f"{name}.bn2", c_out)
        self.relu2 = ReLU()
        if stride != 1 or c_in != c_out:
            self.down_conv = Conv2d(f"{name}.down", c_in, c_out, 1, stride, 0, rng)
            self.down_bn = BatchNorm2d(f"{name}.down_bn", c_out)
        else:
            self.down_conv = None
            self.down_bn = None

    def forward(self, x, training=False):
        out = self.relu1.forward(self.bn1.forward(self.conv1.forward(x, training), training), training)
        out = self.bn2.forward(self.conv2.forward(out, training), training)
        if self.down_conv is not None:
            identity = self.down_bn.forward(self.down_conv.forward(x, training), training)
        else:
            identity = x
        return self.relu2.forward(out + identity, training)

    def backward(self, gy):
        g = self.relu2.backward(gy)
        g_main = self.bn2.backward(g)
        g_main = self.conv2.backward(g_main)
        g_main = self.conv1.backward(self.bn1.backward(self.relu1.backward(g_main)))
        if self.down_conv is not None:
            g_skip = self.down_conv.backward(self.down_bn.backward(g))
        else:
            g_skip = g
        return g_main + g_skip

    def layers(self):
        out = [self.conv1, self.bn1, self.conv2, self.bn2]
        if self.down_conv is not None:
            out += [self.down_conv, self.down_bn]
        return out


class SpoofBackbone:
    """Teacher/student CNN. Instances are safe for concurrent inference only;
    training mutates layer caches and must stay single-writer."""

    def __init__(self, config: BackboneConfig, seed: int, frontend: FrontendConfig | None = None):
        self.config = config
        self.frontend = frontend if frontend is not None else FrontendConfig()
        self.seed = int(seed)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed)))
        ch = config.stage_channels
        self.stem_conv = Conv2d("stem.conv", config.in_channels, ch[0], 3, config.stem_stride, 1, rng)
        self.stem_bn = BatchNorm2d("stem.bn", ch[0])
        self.stem_relu = ReLU()
        self.stages = []
        c_in = ch[0]
        for si, (c_out, stride) in enumerate(zip(ch, config.stage_strides), start=1):
            blocks = [
                _BasicBlock(f"stage{si}.block1", c_in, c_out, stride, rng),
                _BasicBlock(f"stage{si}.block2", c_out, c_out, 1, rng),
            ]
            self.stages.append(blocks)
            c_in = c_out
        self.pool = GlobalAvgPool()
        self.dropout = Dropout(config.dropout_p)
        self.fc = Linear("head.fc", ch[3], config.embed_dim, rng, relu_follows=True)
        self.fc_relu = ReLU()
        if config.n_classes is not None:
            self.classifier = Linear("head.classifier", config.embed_dim, config.n_classes, rng)
        else:
            self.classifier = None

    # -- structure ------------------------------------------------------

    @property
    def role(self) -> str:
        return self.config.role

    def _backbone_layers(self):
        layers = [self.stem_conv, self.stem_bn]
        for blocks in self.stages:
            for b in blocks:
                layers.extend(b.layers())
        return layers

    def _head_layers(self):
        layers = [self.fc]
        if self.classifier is not None:
            layers.append(self.classifier)
        return layers

    def parameters(self, head: bool = True):
        layers = self._backbone_layers() + (self._head_layers() if head else [])
        return [p for layer in layers for p in layer.params()]

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for layer in self._backbone_layers() + self._head_layers():
            out.update(layer.state_arrays())
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        own = self.state_arrays()
        missing = sorted(own.keys() - arrays.keys())
        extra = sorted(arrays.keys() - own.keys())
        if missing or extra:
            raise CheckpointError(f"state mismatch: missing={missing[:4]} unexpected={extra[:4]}")
        for name, target in own.items():
            src = arrays[name]
            if src.shape != target.shape:
                raise CheckpointError(f"shape mismatch for {name}: {src.shape} vs {target.shape}")
            target[...] = src

    def weights_digest(self) -> str:
        state = self.state_arrays()
        h = hashlib.sha256()
        for name in sorted(state):
            h.update(name.encode())
            h.update(np.ascontiguousarray(state[name]).tobytes())
        return h.hexdigest()

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.config.fingerprint().encode())
        h.update(self.frontend.fingerprint().encode())
        h.update(self.weights_digest().encode())
        return h.hexdigest()[:16]

    # -- forward / backward ----------------------------------------------

    def forward_batch(self, x: np.ndarray, training: bool = False, rng=None, need_head: bool = True):
        """x: (N, 1, F, T) float32. Returns (taps, embeddings, logits)."""
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeError(f"expected (N,{self.config.in_channels},F,T) input, got {x.shape}")
        out = self.stem_relu.forward(
            self.stem_bn.forward(self.stem_conv.forward(x, training), training), training
        )
        stage_outputs = []
        for blocks in self.stages:
            for b in blocks:
                out = b.forward(out, training)
            stage_outputs.append(out)
        taps = [stage_outputs[s - 1] for s in self.config.tap_stages]
        if not need_head:
            return taps, None, None
        pooled = self.pool.forward(out, training)
        dropped = self.dropout.forward(pooled, training, rng)
        embed = self.fc_relu.forward(self.fc.forward(dropped, training), training)
        logits = self.classifier.forward(embed, training) if self.classifier is not None else None
        return taps, embed, logits

    def backward_batch(self, tap_grads=None, logits_grad=None):
        """Backpropagate gradients entering at the taps and/or the logits."""
        grad_after = None  # gradient flowing into the current deepest point
        if logits_grad is not None:
            if self.classifier is None:
                raise RoleError("logits gradient on a model without classifier head")
            g = self.classifier.backward(logits_grad)
            g = self.fc.backward(self.fc_relu.backward(g))
            g = self.dropout.backward(g)
            grad_after = self.pool.backward(g)
        tap_by_stage = {}
        if tap_grads is not None:
            tap_by_stage = {s: g for s, g in zip(self.config.tap_stages, tap_grads) if g is not None}
        for si in range(4, 0, -1):
            blocks = self.stages[si - 1]
            g_stage = grad_after
            if si in tap_by_stage:
                g_stage = tap_by_stage[si] if g_stage is None else g_stage + tap_by_stage[si]
            if g_stage is None:
                continue
            for b in reversed(blocks):
                g_stage = b.backward(g_stage)
            grad_after = g_stage
        if grad_after is None:
            return None
        g = self.stem_bn.backward(self.stem_relu.backward(grad_after))
        return self.stem_conv.backward(g)

    # -- single-spectrogram operations -------------------------------------

    def _check_mel(self, mel: MelSpectrogram):
        f, t = mel.values.shape
        if f != self.frontend.n_mels:
            raise ShapeError(f"mel has {f} bins, frontend expects {self.frontend.n_mels}")

    def forward_features(self, mel: MelSpectrogram) -> FeaturePyramid:
        """Inference-mode feature pyramid for one spectrogram."""
        self._check_mel(mel)
        x = mel.values.astype(np.float32)[None, None]
        taps, _, _ = self.forward_batch(x, training=False, need_head=False)
        return FeaturePyramid(tuple(m[0] for m in taps), source_shape=mel.values.shape)

    def forward_logits(self, mel: MelSpectrogram) -> np.ndarray:
        if self.classifier is None:
            raise RoleError("forward_logits requires a teacher model (student has no classifier)")
        self._check_mel(mel)
        x = mel.values.astype(np.float32)[None, None]
        _, _, logits = self.forward_batch(x, training=False, need_head=True)
        return logits[0]


def build_backbone(config: BackboneConfig, seed: int, frontend: FrontendConfig | None = None) -> SpoofBackbone:
    return SpoofBackbone(config, seed, frontend)


# -- checkpoints -------------------------------------------------------------


def checkpoint_paths(stem) -> tuple[Path, Path]:
    stem = Path(stem)
    if stem.suffix in {".json", ".bin"}:
        stem = stem.with_suffix("")
    return stem.with_suffix(".bin"), stem.with_suffix(".json")


def save_checkpoint(model: SpoofBackbone, stem, metadata: dict | None = None) -> Path:
    """Write <stem>.bin (weights) + <stem>.json (sidecar); returns sidecar path."""
    bin_path, json_path = checkpoint_paths(stem)
    blob, directory = pack_bundle(model.state_arrays())
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    bin_path.write_bytes(blob)
    sidecar = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "role": model.role,
        "backbone": model.config.to_dict(),
        "frontend": model.frontend.to_dict(),
        "seed": model.seed,
        "metadata": metadata or {},
        "tensors": directory,
    }
    write_json(json_path, sidecar)
    return json_path


def load_checkpoint(stem, expected_role: str | None = None) -> SpoofBackbone:
    bin_path, json_path = checkpoint_paths(stem)
    if not json_path.is_file() or not bin_path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {json_path} / {bin_path}")
    sidecar = read_json(json_path)
    for key in ("format_version", "role", "backbone", "frontend", "tensors"):
        if key not in sidecar:
            raise CheckpointError(f"checkpoint sidecar missing {key!r}: {json_path}")
    if sidecar["format_version"] != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {sidecar['format_version']}")
    if expected_role is not None and sidecar["role"] != expected_role:
        raise RoleError(f"expected a {expected_role} checkpoint, found role={sidecar['role']!r}")
    config = BackboneConfig.from_dict(sidecar["backbone"])
    if config.role != sidecar["role"]:
        raise CheckpointError(
            f"role {sidecar['role']!r} inconsistent with config (n_classes={config.n_classes})"
        )
    frontend = FrontendConfig.from_dict(sidecar["frontend"])
    model = SpoofBackbone(config, seed=int(sidecar.get("seed", 0)), frontend=frontend)
    arrays = unpack_bundle(bin_path.read_bytes(), sidecar["tensors"])
    model.load_state_arrays(arrays)
    model.loaded_metadata = sidecar.get("metadata", {})
    return model
