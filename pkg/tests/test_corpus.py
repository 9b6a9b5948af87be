import hashlib
from pathlib import Path

import numpy as np
import pytest
from scipy.io import wavfile

from fpm_spoof.audio import FrontendConfig
from fpm_spoof.corpus import SyntheticCorpusConfig, generate_synthetic_corpus
from fpm_spoof.errors import ConfigError
from fpm_spoof.manifest import load_manifest, load_regions

FAST_FRONTEND = FrontendConfig(win_length=512, hop_length=512, n_fft=512, n_mels=32)


def _tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    cfg = SyntheticCorpusConfig(
        n_speakers=4, clips_per_speaker=8, seed=123, frontend=FAST_FRONTEND
    )
    manifest = generate_synthetic_corpus(cfg, out)
    return cfg, out, manifest


def test_seeded_regeneration_is_byte_identical(tmp_path):
    cfg = SyntheticCorpusConfig(n_speakers=2, clips_per_speaker=4, seed=7, frontend=FAST_FRONTEND)
    generate_synthetic_corpus(cfg, tmp_path / "a")
    generate_synthetic_corpus(cfg, tmp_path / "b")
    assert _tree_digest(tmp_path / "a") == _tree_digest(tmp_path / "b")


def test_counts_and_splits(corpus):
    cfg, out, manifest = corpus
    reals = [e for e in manifest if e.label == "real"]
    fakes = [e for e in manifest if e.label == "fake"]
    assert len(reals) == cfg.n_speakers * cfg.clips_per_speaker
    n_eval_real = sum(1 for e in reals if e.split == "eval")
    assert len(fakes) == n_eval_real > 0
    assert all(e.split == "eval" for e in fakes)
    splits = {e.split for e in reals}
    assert splits == {"train", "dev", "eval", "calib"}
    assert len({e.speaker_id for e in reals}) == cfg.n_speakers


def test_manifest_loads_and_files_exist(corpus):
    _, out, _ = corpus
    m = load_manifest(out / "manifest.jsonl")
    for e in m:
        assert Path(e.path).is_file(), e.path


def test_sidecar_regions_inside_mel_grid(corpus):
    cfg, out, manifest = corpus
    regions = load_regions(out / "anomalies.jsonl")
    fakes = {e.path for e in manifest if e.label == "fake"}
    assert {r.path for r in regions} == fakes
    n_frames = -(-int(cfg.clip_seconds * cfg.frontend.sample_rate) // cfg.frontend.hop_length)
    for r in regions:
        assert 0 <= r.t0 < r.t1 <= n_frames
        assert 0 <= r.f0 < r.f1 <= cfg.frontend.n_mels
        assert Path(r.parent).is_file()
        assert r.kind in cfg.anomaly_kinds


def test_fake_differs_only_inside_region(corpus):
    cfg, out, _ = corpus
    hop = cfg.frontend.hop_length
    for r in load_regions(out / "anomalies.jsonl"):
        _, fake = wavfile.read(r.path)
        _, real = wavfile.read(r.parent)
        s0, s1 = r.t0 * hop, min(r.t1 * hop, len(real))
        outside = np.concatenate([fake[:s0] - real[:s0], fake[s1:] - real[s1:]])
        assert np.abs(outside).max() == 0
        inside = fake[s0:s1].astype(np.int64) - real[s0:s1].astype(np.int64)
        assert np.abs(inside).max() > 0


def test_single_kind_config(tmp_path):
    cfg = SyntheticCorpusConfig(
        n_speakers=2, clips_per_speaker=8, anomaly_kinds=("band_tone",), seed=3,
        frontend=FAST_FRONTEND,
    )
    generate_synthetic_corpus(cfg, tmp_path)
    regions = load_regions(tmp_path / "anomalies.jsonl")
    assert regions and all(r.kind == "band_tone" for r in regions)
    for r in regions:
        assert r.f1 > r.f0 and r.t1 > r.t0


def test_pairs_file_matches_regions(corpus):
    _, out, _ = corpus
    from fpm_spoof.localization import load_pairs

    pairs = load_pairs(out / "pairs.jsonl")
    regions = load_regions(out / "anomalies.jsonl")
    assert {(p.real_path, p.fake_path) for p in pairs} == {(r.parent, r.path) for r in regions}


def test_config_validation():
    with pytest.raises(ConfigError):
        SyntheticCorpusConfig(n_speakers=1)
    with pytest.raises(ConfigError):
        SyntheticCorpusConfig(clip_seconds=2.0)
    with pytest.raises(ConfigError):
        SyntheticCorpusConfig(anomaly_kinds=("chirp",))


def test_real_clips_are_speaker_separable(corpus):
    # crude check: per-speaker mean mel spectra differ clearly between speakers
    cfg, out, manifest = corpus
    from fpm_spoof.features import clip_mel_stack

    by_speaker = {}
    for e in manifest:
        if e.label == "real":
            mel = clip_mel_stack(e.path, cfg.frontend).mean(axis=(0, 2))
            by_speaker.setdefault(e.speaker_id, []).append(mel)
    means = {s: np.mean(v, axis=0) for s, v in by_speaker.items()}
    within = max(
        float(np.linalg.norm(v - means[s])) for s, vs in by_speaker.items() for v in vs
    )
    speakers = sorted(means)
    between = min(
        float(np.linalg.norm(means[a] - means[b]))
        for i, a in enumerate(speakers)
        for b in speakers[i + 1 :]
    )
    assert between > within * 0.5
