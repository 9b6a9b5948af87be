"""Audio frontend: WAV loading, 4 s segmentation, log-mel spectrograms.

The fixed contract: 16 kHz mono input, 4 s segments, log-mel features.
Mel parameters are our defaults (25 ms window, 10 ms hop, 80 bins, 0-8 kHz,
natural log) and each segment is standardized to zero mean / unit variance
unless the config disables it.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .errors import AudioDecodeError, ConfigError, EmptyAudioError, ShapeError
from .tensorio import json_dumps


@dataclass(frozen=True, eq=False)
class Waveform:
    samples: np.ndarray  # float64 mono in [-1, 1]
    sample_rate: int

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate: int = 16000
    segment_seconds: float = 4.0
    win_length: int = 400
    hop_length: int = 160
    n_fft: int = 512
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-10
    standardize: bool = True

    def __post_init__(self):
        if self.n_fft < self.win_length:
            raise ConfigError(f"n_fft ({self.n_fft}) must be >= win_length ({self.win_length})")
        if self.hop_length > self.win_length:
            raise ConfigError(f"hop_length ({self.hop_length}) must be <= win_length ({self.win_length})")
        if self.fmax > self.sample_rate / 2:
            raise ConfigError(f"fmax ({self.fmax}) must be <= Nyquist ({self.sample_rate / 2})")
        if not (0 <= self.fmin < self.fmax):
            raise ConfigError(f"need 0 <= fmin < fmax, got [{self.fmin}, {self.fmax}]")
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")
        if self.segment_seconds <= 0 or self.hop_length < 1 or self.n_mels < 2:
            raise ConfigError("segment_seconds, hop_length, n_mels must be positive")

    @property
    def segment_samples(self) -> int:
        return int(round(self.segment_seconds * self.sample_rate))

    @property
    def frames_per_segment(self) -> int:
        return -(-self.segment_samples // self.hop_length)  # ceil

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FrontendConfig":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad frontend config: {exc}") from exc

    def fingerprint(self) -> str:
        return hashlib.sha256(json_dumps(self.to_dict()).encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class MelSpectrogram:
    values: np.ndarray  # (n_mels, frames) float64
    config: FrontendConfig

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _normalize_pcm(data: np.ndarray) -> np.ndarray:
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.int32:
        return data.astype(np.float64) / 2147483648.0
    if data.dtype == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    if data.dtype in (np.float32, np.float64):
        return data.astype(np.float64)
    raise AudioDecodeError(f"unsupported WAV sample format: {data.dtype}")


def load_audio(path, target_rate: int = 16000) -> Waveform:
    """Read a PCM WAV, downmix to mono, resample to target_rate, peak-guard."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"audio file not found: {path}")
    try:
        rate, data = wavfile.read(str(path))
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise AudioDecodeError(f"cannot decode {path}: {exc}") from exc
    if data.size == 0:
        raise EmptyAudioError(f"empty audio: {path}")
    x = _normalize_pcm(data)
    if x.ndim == 2:
        x = x.mean(axis=1)
    elif x.ndim != 1:
        raise AudioDecodeError(f"unexpected WAV layout {data.shape} in {path}")
    if rate != target_rate:
        g = math.gcd(int(rate), int(target_rate))
        x = resample_poly(x, target_rate // g, rate // g)
    if x.size == 0:
        raise EmptyAudioError(f"empty audio after resampling: {path}")
    if not np.all(np.isfinite(x)):
        raise AudioDecodeError(f"non-finite samples in {path}")
    peak = np.max(np.abs(x))
    if peak > 1.0:
        x = x / peak
    return Waveform(samples=x, sample_rate=target_rate)


def segment(waveform: Waveform, config: FrontendConfig) -> list[Waveform]:
    """Cut into non-overlapping full segments; pad a >=50% remainder, drop less.

    Clips shorter than half a segment become one zero-padded segment.
    """
    x = waveform.samples
    if len(x) == 0:
        raise EmptyAudioError("cannot segment an empty waveform")
    if waveform.sample_rate != config.sample_rate:
        raise ShapeError(
            f"waveform rate {waveform.sample_rate} != config rate {config.sample_rate}"
        )
    seg = config.segment_samples
    n_full, rem = divmod(len(x), seg)
    out = [x[i * seg : (i + 1) * seg] for i in range(n_full)]
    if rem * 2 >= seg or n_full == 0:
        tail = np.zeros(seg, dtype=x.dtype)
        tail[:rem] = x[n_full * seg :]
        out.append(tail)
    return [Waveform(s, config.sample_rate) for s in out]


@lru_cache(maxsize=8)
def _hann_window(win_length: int, n_fft: int) -> np.ndarray:
    n = np.arange(win_length)
    w = 0.5 * (1.0 - np.cos(2.0 * np.pi * n / win_length))  # periodic Hann
    out = np.zeros(n_fft)
    start = (n_fft - win_length) // 2
    out[start : start + win_length] = w
    return out


def hz_to_mel(f) -> np.ndarray:
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m) -> np.ndarray:
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def _mel_filterbank(n_mels: int, n_fft: int, sample_rate: int, fmin: float, fmax: float):
    """Triangular filters (peak 1) on the mel scale; returns (filters, centers_hz)."""
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bin_freqs = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    fb = np.zeros((n_mels, len(bin_freqs)))
    for m in range(n_mels):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (bin_freqs - lo) / max(center - lo, 1e-12)
        falling = (hi - bin_freqs) / max(hi - center, 1e-12)
        fb[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb, edges[1:-1].copy()


def mel_center_frequencies(config: FrontendConfig) -> np.ndarray:
    """Center frequency (Hz) of each mel filter."""
    _, centers = _mel_filterbank(
        config.n_mels, config.n_fft, config.sample_rate, config.fmin, config.fmax
    )
    return centers.copy()


def _stft_power(x: np.ndarray, config: FrontendConfig) -> np.ndarray:
    """Power spectrogram with centered frames; frame count = ceil(len/hop)."""
    n_fft, hop = config.n_fft, config.hop_length
    n_frames = -(-len(x) // hop)
    half = n_fft // 2
    xp = np.pad(x, (half, half), mode="reflect")
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = xp[idx] * _hann_window(config.win_length, n_fft)[None, :]
    spec = np.fft.rfft(frames, n=n_fft, axis=1)
    return (spec.real**2 + spec.imag**2).T  # (n_fft//2+1, n_frames)


def compute_mel(seg: Waveform, config: FrontendConfig) -> MelSpectrogram:
    """Log-mel spectrogram of one full segment, optionally standardized."""
    expected = config.segment_samples
    if len(seg.samples) != expected:
        raise ShapeError(f"segment must have {expected} samples, got {len(seg.samples)}")
    if seg.sample_rate != config.sample_rate:
        raise ShapeError(f"segment rate {seg.sample_rate} != config rate {config.sample_rate}")
    power = _stft_power(seg.samples, config)
    fb, _ = _mel_filterbank(config.n_mels, config.n_fft, config.sample_rate, config.fmin, config.fmax)
    mel = np.log(np.maximum(fb @ power, config.log_floor))
    if config.standardize:
        if mel.max() == mel.min():  # constant matrix: zero variance
            mel = np.zeros_like(mel)
        else:
            mel = (mel - mel.mean()) / mel.std()
    return MelSpectrogram(values=mel, config=config)


def clip_to_mels(waveform: Waveform, config: FrontendConfig) -> list[MelSpectrogram]:
    return [compute_mel(s, config) for s in segment(waveform, config)]
