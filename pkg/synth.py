"""
Synthetic parallel corpus of voiced ("normal") and noise-excited ("whisper") utterances.

Source-filter synthesis: an excitation (band-limited harmonic train with drifting,
jittered F0, or white noise) goes through a shared spectral tilt and a cascade of
three formant resonators per phone segment. Normal and whisper utterance `i` share
speaker and phone sequence; only the excitation and the whisper formant changes
differ, so the class contrast is spectral.
"""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from scipy import signal

from audio_io import AudioClip, Manifest, ManifestEntry, write_manifest, write_wav
from errors import ConfigError
from logger_config import setup_logger

logger = setup_logger(__name__)

# vowel-like formant ranges (Hz) and base bandwidths
FORMANT_RANGES = ((300.0, 900.0), (900.0, 2200.0), (2200.0, 3000.0))
BASE_BANDWIDTHS = (80.0, 100.0, 140.0)
TILT_CORNER_HZ = 300.0
PEAK_CEILING = 0.5

# independent random streams
_SPEAKER_STREAM = 1
_CONTENT_STREAM = 2
_LABEL_STREAM = {"normal": 3, "whisper": 4}


@dataclass(frozen=True)
class SynthConfig:
    n_per_class: int = 10
    duration_s: float = 5.2
    sample_rate: int = 16000
    f0_range: Tuple[float, float] = (100.0, 250.0)
    formant_shift: float = 0.15
    formant_bw_scale: float = 2.0
    silence_pad_s: float = 0.25
    seed: int = 0
    constant_f0: Optional[float] = None
    jitter: float = 0.01
    level_dbfs_range: Tuple[float, float] = (-34.0, -26.0)
    noise_floor_db: float = -50.0
    n_vowels: int = 5
    train_fraction: float = 0.8

    def __post_init__(self):
        lo, hi = self.f0_range
        if not (50.0 < lo <= hi < self.sample_rate / 8.0):
            raise ConfigError(f"f0_range {self.f0_range} must lie within (50, {self.sample_rate / 8})")
        if self.duration_s <= 2.0 * self.silence_pad_s:
            raise ConfigError("duration_s must exceed twice silence_pad_s")
        if self.formant_bw_scale < 1.0:
            raise ConfigError("formant_bw_scale must be >= 1")
        if self.n_per_class < 1:
            raise ConfigError("n_per_class must be >= 1")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ConfigError("train_fraction must be in (0, 1]")
        if self.constant_f0 is not None and not (lo <= self.constant_f0 <= hi):
            raise ConfigError(f"constant_f0 {self.constant_f0} outside f0_range {self.f0_range}")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate))

    @property
    def n_pad(self) -> int:
        return int(round(self.silence_pad_s * self.sample_rate))

    @property
    def n_train(self) -> int:
        return int(round(self.train_fraction * self.n_per_class))

    def to_dict(self) -> dict:
        data = asdict(self)
        data["f0_range"] = list(self.f0_range)
        data["level_dbfs_range"] = list(self.level_dbfs_range)
        return data


@dataclass(frozen=True)
class Speaker:
    index: int
    vowels: np.ndarray  # n_vowels x 3 formant targets
    base_f0: float


def _speaker_counts(cfg: SynthConfig) -> Tuple[int, int]:
    n_test = cfg.n_per_class - cfg.n_train
    return max(1, math.ceil(cfg.n_train / 4)), max(1, math.ceil(n_test / 4))


def split_of(cfg: SynthConfig, index: int) -> str:
    return "train" if index < cfg.n_train else "test"


def speaker_of(cfg: SynthConfig, index: int) -> int:
    """Train and test utterances draw from disjoint speaker pools."""
    s_train, s_test = _speaker_counts(cfg)
    if index < cfg.n_train:
        return index % s_train
    return s_train + (index - cfg.n_train) % s_test


def make_speaker(cfg: SynthConfig, speaker_index: int) -> Speaker:
    rng = np.random.default_rng([cfg.seed, _SPEAKER_STREAM, speaker_index])
    vowels = np.column_stack([rng.uniform(lo, hi, cfg.n_vowels) for lo, hi in FORMANT_RANGES])
    lo, hi = cfg.f0_range
    base_f0 = lo + (hi - lo) * rng.uniform(0.2, 0.8)
    return Speaker(index=speaker_index, vowels=vowels, base_f0=base_f0)


def utterance_id(cfg: SynthConfig, label: str, index: int) -> str:
    return f"spk{speaker_of(cfg, index):03d}_{label}_{index:05d}"


# ---------------------------------------------------------------------------
# Excitation
# ---------------------------------------------------------------------------


def _f0_contour(cfg: SynthConfig, speaker: Speaker, n: int, rng: np.random.Generator) -> np.ndarray:
    if cfg.constant_f0 is not None:
        return np.full(n, float(cfg.constant_f0))

    lo, hi = cfg.f0_range
    t = np.arange(n) / cfg.sample_rate
    base = np.clip(speaker.base_f0 * (1.0 + 0.05 * rng.standard_normal()), lo, hi)
    drift = 0.08 * np.sin(2.0 * np.pi * rng.uniform(0.4, 1.0) * t + rng.uniform(0.0, 2.0 * np.pi))

    # lowpassed jitter, unit variance before scaling
    b, a = signal.butter(2, 50.0, fs=cfg.sample_rate)
    jit = signal.lfilter(b, a, rng.standard_normal(n))
    jit_std = float(np.std(jit))
    if jit_std > 0:
        jit = jit / jit_std * cfg.jitter

    return np.clip(base * (1.0 + drift) * (1.0 + jit), lo, hi)


def harmonic_train(f0: np.ndarray, sample_rate: int) -> np.ndarray:
    """Zero-phase band-limited impulse train following the F0 contour."""
    nyquist_guard = 0.95 * sample_rate / 2.0
    phase = 2.0 * np.pi * np.cumsum(f0) / sample_rate
    n_harmonics = int(nyquist_guard // float(np.min(f0)))
    out = np.zeros_like(f0)
    for h in range(1, n_harmonics + 1):
        audible = h * f0 < nyquist_guard
        if not np.any(audible):
            break
        out += np.cos(h * phase) * audible
    return out / math.sqrt(max(np.mean(np.square(out)), 1e-20))


def _tilt(x: np.ndarray, sample_rate: int) -> np.ndarray:
    """Two cascaded one-pole low-passes: -12 dB/octave above the corner."""
    a = math.exp(-2.0 * math.pi * TILT_CORNER_HZ / sample_rate)
    y = signal.lfilter([1.0 - a], [1.0, -a], x)
    return signal.lfilter([1.0 - a], [1.0, -a], y)


def _resonator_sos(formants: np.ndarray, bandwidths: np.ndarray, sample_rate: int) -> np.ndarray:
    """All-pole resonator cascade, each section normalized to unity gain at DC."""
    sos = np.zeros((len(formants), 6))
    for i, (f, bw) in enumerate(zip(formants, bandwidths)):
        r = math.exp(-math.pi * bw / sample_rate)
        theta = 2.0 * math.pi * f / sample_rate
        a1, a2 = -2.0 * r * math.cos(theta), r * r
        sos[i] = [1.0 + a1 + a2, 0.0, 0.0, 1.0, a1, a2]
    return sos


# ---------------------------------------------------------------------------
# Utterances
# ---------------------------------------------------------------------------


def synth_utterance(cfg: SynthConfig, label: str, index: int) -> AudioClip:
    """Deterministic in (cfg.seed, label, index)."""
    if label not in _LABEL_STREAM:
        raise ConfigError(f"label must be normal or whisper, got {label!r}")

    sr = cfg.sample_rate
    n_active = cfg.n_samples - 2 * cfg.n_pad
    speaker = make_speaker(cfg, speaker_of(cfg, index))
    content_rng = np.random.default_rng([cfg.seed, _CONTENT_STREAM, index])
    label_rng = np.random.default_rng([cfg.seed, _LABEL_STREAM[label], index])

    # phone segments, shared between the parallel normal/whisper pair
    n_segments = int(content_rng.integers(3, 7))
    proportions = content_rng.dirichlet(np.full(n_segments, 4.0))
    bounds = np.concatenate(([0], np.round(np.cumsum(proportions) * n_active).astype(int)))
    bounds[-1] = n_active
    vowel_choice = content_rng.integers(0, cfg.n_vowels, n_segments)
    formant_jitter = content_rng.uniform(0.95, 1.05, (n_segments, 3))

    if label == "normal":
        excitation = harmonic_train(_f0_contour(cfg, speaker, n_active, label_rng), sr)
    else:
        excitation = label_rng.standard_normal(n_active)
    excitation = _tilt(excitation, sr)

    active = np.zeros(n_active)
    zi = np.zeros((3, 2))
    for s in range(n_segments):
        start, stop = bounds[s], bounds[s + 1]
        if stop <= start:
            continue
        formants = speaker.vowels[vowel_choice[s]] * formant_jitter[s]
        bandwidths = np.asarray(BASE_BANDWIDTHS)
        if label == "whisper":
            formants = formants * (1.0 + cfg.formant_shift)
            bandwidths = bandwidths * cfg.formant_bw_scale
        sos = _resonator_sos(formants, bandwidths, sr)
        segment, zi = signal.sosfilt(sos, excitation[start:stop], zi=zi)
        envelope = 0.3 + 0.7 * np.sin(np.pi * (np.arange(stop - start) + 0.5) / (stop - start))
        active[start:stop] = segment * envelope

    level = 10.0 ** (label_rng.uniform(*cfg.level_dbfs_range) / 20.0)
    active *= level / math.sqrt(max(np.mean(np.square(active)), 1e-20))

    samples = np.zeros(cfg.n_samples)
    samples[cfg.n_pad : cfg.n_pad + n_active] = active
    samples += label_rng.standard_normal(cfg.n_samples) * level * 10.0 ** (cfg.noise_floor_db / 20.0)

    peak = float(np.max(np.abs(samples)))
    if peak > PEAK_CEILING:
        samples *= PEAK_CEILING / peak

    return AudioClip(samples=samples, sample_rate=sr, utterance_id=utterance_id(cfg, label, index), label=label)


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


def estimate_pitch(
    frame: np.ndarray, sample_rate: int, f0_range: Tuple[float, float] = (100.0, 250.0), threshold: float = 0.45
) -> Optional[float]:
    """Normalized-autocorrelation pitch; None when no peak in f0_range clears the threshold."""
    x = np.asarray(frame, dtype=np.float64)
    x = x - np.mean(x)
    n = x.shape[0]
    spectrum = np.fft.rfft(x, 2 * n)
    ac = np.fft.irfft(np.abs(spectrum) ** 2)[:n]
    if ac[0] <= 0.0:
        return None
    ac = ac / ac[0]

    lag_lo = max(1, int(math.floor(sample_rate / f0_range[1])))
    lag_hi = min(n - 1, int(math.ceil(sample_rate / f0_range[0])))
    lag = lag_lo + int(np.argmax(ac[lag_lo : lag_hi + 1]))
    if ac[lag] < threshold:
        return None
    return sample_rate / lag


def spectral_flatness(frame: np.ndarray) -> float:
    x = np.asarray(frame, dtype=np.float64)
    power = np.abs(np.fft.rfft(x * np.hanning(x.shape[0]))) ** 2 + 1e-20
    return float(np.exp(np.mean(np.log(power))) / np.mean(power))


def voiced_frame_rate(clip: AudioClip, cfg: SynthConfig, frame_size: int = 1024, hop: int = 512) -> float:
    """Share of frames inside the active region for which the pitch oracle fires."""
    start, stop = cfg.n_pad, len(clip) - cfg.n_pad
    starts = range(start, stop - frame_size + 1, hop)
    hits = [estimate_pitch(clip.samples[s : s + frame_size], clip.sample_rate, cfg.f0_range) is not None for s in starts]
    return float(np.mean(hits)) if hits else 0.0


# ---------------------------------------------------------------------------
# Corpus
# ---------------------------------------------------------------------------


def generate_corpus(cfg: SynthConfig, out_dir, jobs: int = 1) -> Manifest:
    """
    Write 2*n_per_class WAVs, manifest.csv and a synth_config.json sidecar.

    80/20 train/test split per class, speaker-disjoint between splits.
    """
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)

    jobs_list = [(label, i) for label in ("normal", "whisper") for i in range(cfg.n_per_class)]
    logger.info(f"Synthesizing {len(jobs_list)} utterances at {cfg.sample_rate} Hz into {out_dir}")

    def _one(job):
        label, i = job
        clip = synth_utterance(cfg, label, i)
        path = write_wav(clip, wav_dir / f"{clip.utterance_id}.wav")
        return ManifestEntry(clip.utterance_id, path, label, split_of(cfg, i)), voiced_frame_rate(clip, cfg)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_one, jobs_list))
    else:
        results = [_one(job) for job in jobs_list]

    manifest = Manifest([entry for entry, _ in results])
    write_manifest(manifest, out_dir / "manifest.csv")
    with open(out_dir / "synth_config.json", "w", encoding="utf-8") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)

    for label in ("normal", "whisper"):
        rates = [rate for entry, rate in results if entry.label == label]
        logger.info(f"Pitch audit [{label}]: mean voiced-frame rate {np.mean(rates):.3f}")
    logger.info(f"Corpus written: {manifest.counts()}")
    return manifest
