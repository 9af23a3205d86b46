"""
Waveform I/O, corpus manifests, 44.1k -> 16k resampling and white-noise injection.
"""

import csv
import math
import zlib
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
import soundfile as sf
from scipy import signal

from config import (
    PCM16_SCALE,
    RESAMPLE_CUTOFF_HZ,
    RESAMPLE_DOWN,
    RESAMPLE_KAISER_BETA,
    RESAMPLE_TAPS_PER_PHASE,
    RESAMPLE_UP,
    SUPPORTED_RATES,
)
from errors import (
    ConfigError,
    FormatError,
    ManifestError,
    ShapeError,
    UnsupportedFormat,
    UnsupportedRate,
    ZeroSignalPower,
)
from logger_config import setup_logger

logger = setup_logger(__name__)

Label = Literal["normal", "whisper", "unlabeled"]
Split = Literal["train", "test"]

LABELS = ("normal", "whisper")
SPLITS = ("train", "test")
# class index used by every network and report: Normal first
CLASS_INDEX = {"normal": 0, "whisper": 1}

MANIFEST_HEADER = ["utterance_id", "path", "label", "split"]


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    utterance_id: str = ""
    label: Label = "unlabeled"

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise UnsupportedRate(f"sample rate must be positive, got {self.sample_rate}")

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class ManifestEntry:
    utterance_id: str
    path: Path
    label: Label
    split: Split

    @property
    def class_index(self) -> int:
        return CLASS_INDEX[self.label]


@dataclass
class Manifest:
    entries: List[ManifestEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def split(self, name: Split) -> List[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def counts(self) -> Dict[Tuple[str, str], int]:
        counts: Dict[Tuple[str, str], int] = {}
        for entry in self.entries:
            key = (entry.split, entry.label)
            counts[key] = counts.get(key, 0) + 1
        return counts


# ---------------------------------------------------------------------------
# WAV
# ---------------------------------------------------------------------------


def read_wav(path) -> AudioClip:
    """
    Read a PCM-16 mono WAV at 44.1 or 16 kHz.

    Samples are scaled by 1/32768; the returned clip is Unlabeled.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"WAV file not found: {path}")

    try:
        info = sf.info(str(path))
    except RuntimeError as e:
        raise FormatError(f"{path}: malformed WAV header ({e})") from e

    if info.format != "WAV":
        raise FormatError(f"{path}: not a RIFF/WAVE file (format {info.format})")
    if info.subtype != "PCM_16":
        raise UnsupportedFormat(f"{path}: only 16-bit PCM is supported, got {info.subtype}")
    if info.channels != 1:
        raise UnsupportedFormat(f"{path}: only mono is supported, got {info.channels} channels")
    if info.samplerate not in SUPPORTED_RATES:
        raise UnsupportedRate(f"{path}: unsupported sample rate {info.samplerate}")

    try:
        pcm, sample_rate = sf.read(str(path), dtype="int16", always_2d=False)
    except RuntimeError as e:
        raise FormatError(f"{path}: failed to read PCM data ({e})") from e

    samples = pcm.astype(np.float64) / PCM16_SCALE
    return AudioClip(samples=samples, sample_rate=int(sample_rate), utterance_id=path.stem)


def write_wav(clip: AudioClip, path) -> Path:
    """Clip to [-1, 1], quantize to the nearest 16-bit step and write a mono WAV."""
    if clip.sample_rate not in SUPPORTED_RATES:
        raise UnsupportedRate(f"cannot write sample rate {clip.sample_rate}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    clipped = np.clip(clip.samples, -1.0, 1.0)
    pcm = np.clip(np.round(clipped * PCM16_SCALE), -32768, 32767).astype(np.int16)
    sf.write(str(path), pcm, clip.sample_rate, format="WAV", subtype="PCM_16")
    return path


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------


@lru_cache(maxsize=1)
def _resample_filter() -> np.ndarray:
    """Kaiser-windowed sinc low-pass designed at the 160x intermediate rate."""
    numtaps = RESAMPLE_TAPS_PER_PHASE * RESAMPLE_UP + 1
    fs_up = 44100 * RESAMPLE_UP
    return signal.firwin(
        numtaps,
        RESAMPLE_CUTOFF_HZ,
        window=("kaiser", RESAMPLE_KAISER_BETA),
        fs=fs_up,
    )


def resample_44k_to_16k(clip: AudioClip) -> AudioClip:
    """Polyphase resampling by 160/441; the only conversion the toolkit supports."""
    if clip.sample_rate != 44100:
        raise UnsupportedRate(
            f"resample_44k_to_16k expects 44100 Hz input, got {clip.sample_rate}"
        )
    n_out = (len(clip) * RESAMPLE_UP) // RESAMPLE_DOWN
    resampled = signal.resample_poly(
        clip.samples, RESAMPLE_UP, RESAMPLE_DOWN, window=_resample_filter()
    )
    return replace(clip, samples=resampled[:n_out], sample_rate=16000)


# ---------------------------------------------------------------------------
# Noise
# ---------------------------------------------------------------------------


def signal_power(samples: np.ndarray) -> float:
    return float(np.mean(np.square(samples)))


def add_white_noise(clip: AudioClip, snr_db: float, seed: int) -> AudioClip:
    """
    Add Gaussian white noise at the requested SNR measured over the whole utterance.

    The output is not re-normalized and may exceed [-1, 1].
    """
    if not math.isfinite(snr_db):
        raise ConfigError(f"snr_db must be finite, got {snr_db}")
    p_signal = signal_power(clip.samples)
    if p_signal == 0.0:
        raise ZeroSignalPower(f"clip {clip.utterance_id!r} has zero signal power")

    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(len(clip))
    p_target = p_signal / (10.0 ** (snr_db / 10.0))
    noise *= math.sqrt(p_target / signal_power(noise))
    return replace(clip, samples=clip.samples + noise)


def measure_snr(clean: AudioClip, noisy: AudioClip) -> float:
    """
    10*log10(P_clean / P_(noisy - clean)).

    +inf when the two are identical, -inf when the clean clip is silent but the noisy one is not.
    """
    if len(clean) != len(noisy):
        raise ShapeError(f"length mismatch: {len(clean)} vs {len(noisy)}")
    if clean.sample_rate != noisy.sample_rate:
        raise ShapeError(f"rate mismatch: {clean.sample_rate} vs {noisy.sample_rate}")
    p_noise = signal_power(noisy.samples - clean.samples)
    if p_noise == 0.0:
        return math.inf
    p_clean = signal_power(clean.samples)
    if p_clean == 0.0:
        return -math.inf
    return 10.0 * math.log10(p_clean / p_noise)


def utterance_seed(seed: int, utterance_id: str) -> int:
    """Per-utterance seed, stable across runs and independent of corpus order."""
    return int(np.random.SeedSequence([seed, zlib.crc32(utterance_id.encode("utf-8"))])
               .generate_state(1)[0])


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


def load_manifest(path) -> Manifest:
    """
    Parse and validate a `utterance_id,path,label,split` CSV.

    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    root = path.parent
    entries: List[ManifestEntry] = []
    seen: Dict[str, int] = {}

    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != MANIFEST_HEADER:
            raise ManifestError(
                f"header must be exactly {','.join(MANIFEST_HEADER)}", line=1
            )

        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 4:
                raise ManifestError(f"expected 4 fields, got {len(row)}", line=line_no)
            utt_id, rel_path, label, split = (cell.strip() for cell in row)

            if label not in LABELS:
                raise ManifestError(f"unknown label {label!r}", line=line_no)
            if split not in SPLITS:
                raise ManifestError(f"unknown split {split!r}", line=line_no)
            if utt_id in seen:
                raise ManifestError(
                    f"duplicate utterance_id {utt_id!r} (first seen on line {seen[utt_id]})",
                    line=line_no,
                )
            seen[utt_id] = line_no

            wav_path = Path(rel_path)
            if not wav_path.is_absolute():
                wav_path = root / wav_path
            if not wav_path.exists():
                raise ManifestError(f"path does not resolve: {wav_path}", line=line_no)

            entries.append(ManifestEntry(utt_id, wav_path, label, split))

    manifest = Manifest(entries)
    train_labels = {e.label for e in manifest.split("train")}
    if train_labels and train_labels != set(LABELS):
        raise ManifestError(
            f"train split must contain both labels, found {sorted(train_labels)}"
        )

    logger.info(f"Loaded manifest {path}: {len(manifest)} entries {manifest.counts()}")
    return manifest


def write_manifest(manifest: Manifest, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    root = path.parent.resolve()
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for e in manifest.entries:
            wav_path = Path(e.path).resolve()
            try:
                rel = wav_path.relative_to(root).as_posix()
            except ValueError:
                rel = str(wav_path)
            writer.writerow([e.utterance_id, rel, e.label, e.split])
    return path


def manifest_rates(manifest: Manifest) -> Dict[int, int]:
    """Sample rate -> utterance count, read from the WAV headers only."""
    rates: Dict[int, int] = {}
    for entry in manifest.entries:
        if not Path(entry.path).exists():
            raise FileNotFoundError(f"WAV file not found: {entry.path}")
        try:
            rate = int(sf.info(str(entry.path)).samplerate)
        except RuntimeError as e:
            raise FormatError(f"{entry.path}: malformed WAV header ({e})") from e
        rates[rate] = rates.get(rate, 0) + 1
    return rates


def read_labeled(entry: ManifestEntry) -> AudioClip:
    clip = read_wav(entry.path)
    return replace(clip, utterance_id=entry.utterance_id, label=entry.label)
