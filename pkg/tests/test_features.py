import numpy as np
from scipy.io import wavfile

from conftest import FAST_FRONTEND
from fpm_spoof.features import cache_dir_from_env, clip_mel_stack, mel_stacks


def _wav(path, seconds=4.0, seed=0):
    rng = np.random.default_rng(seed)
    data = (0.2 * rng.standard_normal(int(seconds * 16000)) * 32767).astype(np.int16)
    wavfile.write(str(path), 16000, data)
    return path


def test_stack_shape_and_determinism(tmp_path):
    p = _wav(tmp_path / "a.wav")
    a = clip_mel_stack(p, FAST_FRONTEND)
    b = clip_mel_stack(p, FAST_FRONTEND)
    assert a.shape == (1, FAST_FRONTEND.n_mels, FAST_FRONTEND.frames_per_segment)
    np.testing.assert_array_equal(a, b)


def test_disk_cache_round_trip(tmp_path):
    p = _wav(tmp_path / "a.wav")
    cache = tmp_path / "cache"
    direct = clip_mel_stack(p, FAST_FRONTEND)
    first = clip_mel_stack(p, FAST_FRONTEND, cache_dir=cache)
    assert list(cache.glob("*.json"))
    cached = clip_mel_stack(p, FAST_FRONTEND, cache_dir=cache)
    np.testing.assert_array_equal(first, direct)
    np.testing.assert_array_equal(cached, direct)


def test_cache_keyed_by_frontend_config(tmp_path):
    from dataclasses import replace

    p = _wav(tmp_path / "a.wav")
    cache = tmp_path / "cache"
    clip_mel_stack(p, FAST_FRONTEND, cache_dir=cache)
    other = replace(FAST_FRONTEND, n_mels=16)
    out = clip_mel_stack(p, other, cache_dir=cache)
    assert out.shape[1] == 16
    assert len(list(cache.glob("*.json"))) == 2


def test_workers_preserve_order(tmp_path):
    paths = [_wav(tmp_path / f"{i}.wav", seed=i) for i in range(4)]
    serial = mel_stacks(paths, FAST_FRONTEND, workers=1)
    threaded = mel_stacks(paths, FAST_FRONTEND, workers=3)
    for a, b in zip(serial, threaded):
        np.testing.assert_array_equal(a, b)


def test_cache_env(monkeypatch, tmp_path):
    monkeypatch.delenv("FPM_SPOOF_CACHE", raising=False)
    assert cache_dir_from_env() is None
    monkeypatch.setenv("FPM_SPOOF_CACHE", str(tmp_path / "c"))
    assert cache_dir_from_env() == tmp_path / "c"
