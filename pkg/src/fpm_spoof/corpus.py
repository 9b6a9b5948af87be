"""Deterministic synthetic speech corpus with injected time-frequency anomalies.

Real clips are speaker-specific harmonic stacks (fixed fundamental, formant-like
band emphasis, per-clip jitter, amplitude modulation, faint noise). Fake clips
copy a real parent and inject exactly one anomaly into a logged region:

  band_tone   loud tone stack added inside a mel band over a time span
  band_swap   band content frequency-translated into a neighboring band
  noise_patch band-limited noise burst added over a time span

Samples outside the injected time span are bit-identical to the parent clip.
Everything derives from one seed; regenerating yields byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import firwin

from .audio import FrontendConfig, mel_center_frequencies
from .errors import ConfigError, ValidationError
from .manifest import AnomalyRegion, Manifest, ManifestEntry, write_manifest, write_regions
from .tensorio import jsonl_line

ANOMALY_KINDS = ("band_tone", "band_swap", "noise_patch")

# per-speaker split cycle: 1/2 train, 1/4 eval, 1/8 dev, 1/8 calib
_SPLIT_PATTERN = ("train", "eval", "train", "dev", "train", "eval", "calib", "train")


@dataclass(frozen=True)
class SyntheticCorpusConfig:
    n_speakers: int = 4
    clips_per_speaker: int = 8
    clip_seconds: float = 4.0
    anomaly_kinds: tuple[str, ...] = ANOMALY_KINDS
    seed: int = 0
    frontend: FrontendConfig = field(default_factory=FrontendConfig)

    def __post_init__(self):
        if self.n_speakers < 2:
            raise ConfigError(f"need >= 2 speakers, got {self.n_speakers}")
        if self.clips_per_speaker < 1:
            raise ConfigError(f"need >= 1 clip per speaker, got {self.clips_per_speaker}")
        if self.clip_seconds < self.frontend.segment_seconds:
            raise ConfigError(
                f"clip_seconds ({self.clip_seconds}) must be >= segment length "
                f"({self.frontend.segment_seconds})"
            )
        bad = [k for k in self.anomaly_kinds if k not in ANOMALY_KINDS]
        if bad or not self.anomaly_kinds:
            raise ConfigError(f"anomaly_kinds must be a non-empty subset of {ANOMALY_KINDS}")


@dataclass(frozen=True)
class _SpeakerProfile:
    f0: float
    rolloff: float
    formants: tuple[tuple[float, float, float], ...]  # (center_hz, bandwidth_hz, gain)


def _speaker_profiles(n: int, rng: np.random.Generator) -> list[_SpeakerProfile]:
    profiles = []
    f0s = np.geomspace(115.0, 310.0, n)
    for i in range(n):
        formants = tuple(
            (float(rng.uniform(lo, hi)), float(rng.uniform(120.0, 260.0)), float(rng.uniform(2.0, 5.0)))
            for lo, hi in ((450, 900), (1100, 2200), (2600, 3800))
        )
        profiles.append(
            _SpeakerProfile(f0=float(f0s[i]), rolloff=float(rng.uniform(0.7, 1.1)), formants=formants)
        )
    return profiles


def _synth_real(profile: _SpeakerProfile, n_samples: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n_samples) / sr
    f0 = profile.f0 * (1.0 + rng.uniform(-0.02, 0.02))
    vib = 1.0 + 0.005 * np.sin(2 * np.pi * rng.uniform(4.0, 6.5) * t + rng.uniform(0, 2 * np.pi))
    phase = np.cumsum(2 * np.pi * f0 * vib / sr)
    n_harm = int(min(7600.0 / f0, 40))
    x = np.zeros(n_samples)
    for k in range(1, n_harm + 1):
        fk = k * f0
        gain = k ** (-profile.rolloff)
        for fc, bw, g in profile.formants:
            gain *= 1.0 + g * np.exp(-(((fk - fc) / bw) ** 2))
        x += gain * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    am = 1.0 + 0.25 * np.sin(2 * np.pi * rng.uniform(1.5, 4.0) * t + rng.uniform(0, 2 * np.pi))
    x = x * am + 0.003 * rng.standard_normal(n_samples)
    return 0.35 * x / np.max(np.abs(x))


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x * x))) if len(x) else 0.0


def _edge_ramp(n: int) -> np.ndarray:
    ramp_len = max(min(160, n // 8), 1)
    env = np.ones(n)
    r = 0.5 * (1.0 - np.cos(np.pi * np.arange(ramp_len) / ramp_len))
    env[:ramp_len] = r
    env[-ramp_len:] = r[::-1]
    return env


def _bandpass(x: np.ndarray, lo: float, hi: float, sr: int) -> np.ndarray:
    taps = firwin(129, [max(lo, 40.0), min(hi, sr / 2 - 40.0)], pass_zero=False, fs=sr)
    return np.convolve(x, taps, mode="same")


def _pick_band(centers: np.ndarray, n_mels: int, rng: np.random.Generator, max_end: int | None = None):
    """Half-open mel-bin interval whose center span sits in usable territory."""
    usable = np.where((centers >= 350.0) & (centers <= centers[-1] * 0.95))[0]
    if len(usable) == 0:
        usable = np.arange(1, max(n_mels - 1, 2))
    width = int(rng.integers(max(3, n_mels // 10), max(4, n_mels // 5)))
    width = min(width, n_mels - 2)
    hi_start = (max_end if max_end is not None else usable[-1] + 1) - width
    starts = usable[(usable <= hi_start)]
    fb0 = int(rng.choice(starts)) if len(starts) else max(1, (n_mels - width) // 2)
    return fb0, fb0 + width


def _inject(
    x: np.ndarray,
    kind: str,
    frontend: FrontendConfig,
    centers: np.ndarray,
    rng: np.random.Generator,
) -> tuple[np.ndarray, tuple[int, int, int, int]]:
    """Return (fake samples, (t0, t1, f0, f1)) with the region logged in
    frame/mel-bin indices; samples outside [t0*hop, t1*hop) are untouched."""
    sr = frontend.sample_rate
    hop = frontend.hop_length
    n_frames = -(-len(x) // hop)
    dur = int(rng.integers(max(4, int(0.3 * n_frames)), max(5, int(0.5 * n_frames)) + 1))
    dur = min(dur, n_frames - 4)
    t0 = int(rng.integers(2, n_frames - dur - 1))
    t1 = t0 + dur
    s0, s1 = t0 * hop, min(t1 * hop, len(x))
    region = x[s0:s1]
    ramp = _edge_ramp(len(region))
    tr = np.arange(len(region)) / sr
    amp = max(2.5 * _rms(x), 0.02)

    if kind == "band_tone":
        fb0, fb1 = _pick_band(centers, frontend.n_mels, rng)
        f_tone = float(np.sqrt(centers[fb0] * centers[fb1 - 1]))
        delta = amp * np.sin(2 * np.pi * f_tone * tr + rng.uniform(0, 2 * np.pi))
    elif kind == "noise_patch":
        fb0, fb1 = _pick_band(centers, frontend.n_mels, rng)
        noise = rng.standard_normal(len(region))
        delta = _bandpass(noise, centers[fb0], centers[fb1 - 1], sr)
        delta *= amp / max(_rms(delta), 1e-12)
    elif kind == "band_swap":
        n_mels = frontend.n_mels
        fb0, fb_mid = _pick_band(centers, n_mels, rng, max_end=n_mels - (n_mels // 5))
        width = fb_mid - fb0
        fb1 = min(fb_mid + width, n_mels)
        src = _bandpass(region, centers[fb0], centers[fb_mid - 1], sr)
        shift_hz = float(centers[min(fb1 - 1, n_mels - 1)] - centers[fb_mid - 1])
        carrier = 2.0 * np.cos(2 * np.pi * shift_hz * tr)
        moved = _bandpass(src * carrier, centers[fb_mid - 1], centers[min(fb1 - 1, n_mels - 1)], sr)
        moved *= max(amp, _rms(src)) / max(_rms(moved), 1e-12)
        delta = moved - src
    else:
        raise ValidationError(f"unknown anomaly kind {kind!r}")

    y = x.copy()
    y[s0:s1] = region + delta * ramp
    return y, (t0, t1, fb0, fb1)


def _quantize_int16(x: np.ndarray) -> np.ndarray:
    return np.clip(np.round(x * 32767.0), -32768, 32767).astype(np.int16)


def generate_synthetic_corpus(config: SyntheticCorpusConfig, out_dir) -> Manifest:
    """Write the corpus under out_dir; returns the manifest (absolute paths).

    Files: audio/*.wav, manifest.jsonl, anomalies.jsonl (injected regions),
    pairs.jsonl (real/fake pairs for the localization harness).
    """
    out_dir = Path(out_dir)
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    sr = config.frontend.sample_rate
    n_samples = int(round(config.clip_seconds * sr))
    centers = mel_center_frequencies(config.frontend)

    master = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed)))
    profiles = _speaker_profiles(config.n_speakers, master)
    clip_seeds = np.random.SeedSequence(config.seed).spawn(
        config.n_speakers * config.clips_per_speaker
    )

    real_entries: list[ManifestEntry] = []
    fake_entries: list[ManifestEntry] = []
    regions: list[AnomalyRegion] = []
    pairs: list[dict] = []
    kind_cursor = 0

    for si in range(config.n_speakers):
        speaker = f"spk{si:02d}"
        for ci in range(config.clips_per_speaker):
            rng = np.random.Generator(
                np.random.PCG64(clip_seeds[si * config.clips_per_speaker + ci])
            )
            x = _synth_real(profiles[si], n_samples, sr, rng)
            split = _SPLIT_PATTERN[ci % len(_SPLIT_PATTERN)]
            real_name = f"{speaker}_c{ci:03d}.wav"
            real_path = audio_dir / real_name
            wavfile.write(str(real_path), sr, _quantize_int16(x))
            real_entries.append(
                ManifestEntry(
                    path=str(real_path.resolve()),
                    label="real",
                    speaker_id=speaker,
                    split=split,
                    duration_s=config.clip_seconds,
                )
            )
            if split != "eval":
                continue
            kind = config.anomaly_kinds[kind_cursor % len(config.anomaly_kinds)]
            kind_cursor += 1
            y, (t0, t1, f0, f1) = _inject(x, kind, config.frontend, centers, rng)
            fake_name = f"{speaker}_c{ci:03d}_fake_{kind}.wav"
            fake_path = audio_dir / fake_name
            wavfile.write(str(fake_path), sr, _quantize_int16(y))
            fake_entries.append(
                ManifestEntry(
                    path=str(fake_path.resolve()),
                    label="fake",
                    speaker_id=speaker,
                    split="eval",
                    duration_s=config.clip_seconds,
                )
            )
            regions.append(
                AnomalyRegion(
                    path=str(fake_path.resolve()),
                    parent=str(real_path.resolve()),
                    kind=kind,
                    t0=t0,
                    t1=t1,
                    f0=f0,
                    f1=f1,
                )
            )
            pairs.append({"real": str(real_path.resolve()), "fake": str(fake_path.resolve())})

    manifest = Manifest(tuple(real_entries + fake_entries), source_name="synthetic")
    write_manifest(manifest, out_dir / "manifest.jsonl")
    write_regions(regions, out_dir / "anomalies.jsonl", base_dir=out_dir)
    with (out_dir / "pairs.jsonl").open("w", encoding="utf-8") as fh:
        for p in pairs:
            rel = {
                "real_path": str(Path(p["real"]).relative_to(out_dir.resolve())),
                "fake_path": str(Path(p["fake"]).relative_to(out_dir.resolve())),
                "source": "synthetic_injection",
            }
            fh.write(jsonl_line(rel))
    return manifest
