"""
Spectrogram and per-frame features: QSE (quartered spectral envelope), LFBE, MFCC.

All features are computed on magnitude STFT frames of 1024 samples with a hop of
one eighth of the frame, whatever the sample rate.
"""

import json
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Literal, Sequence, Tuple

import numpy as np
from scipy.fft import dct
from sklearn.preprocessing import StandardScaler

from audio_io import AudioClip
from config import DEFAULT_SAMPLE_RATE, FRAME_SIZE, HOP_DIVISOR, LOG_FLOOR, N_MELS, N_MFCC, NORM_STD_FLOOR
from errors import ConfigError, DataError, FormatError, ShapeError, TooShort
from logger_config import setup_logger

logger = setup_logger(__name__)

WindowType = Literal["hann", "hamming", "rect"]
FeatureKind = Literal["q1", "q2", "q3", "q4", "half", "mfcc", "lfbe"]

QUARTERS = ("q1", "q2", "q3", "q4", "half")
FEATURE_KINDS = QUARTERS + ("mfcc", "lfbe")

# inclusive bin ranges of a 1024-point FFT (K = 512); DC excluded
QUARTER_BINS: Dict[str, Tuple[int, int]] = {
    "q1": (1, 128),
    "q2": (129, 256),
    "q3": (257, 384),
    "q4": (385, 512),
    "half": (1, 256),
}

FEATURE_DIMS = {"q1": 128, "q2": 128, "q3": 128, "q4": 128, "half": 256, "mfcc": N_MFCC, "lfbe": N_MELS}

# QSEF binary container
FEATURE_MAGIC = b"QSEF"
FEATURE_VERSION = 1
KIND_TAGS = {"q1": 1, "q2": 2, "q3": 3, "q4": 4, "half": 5, "mfcc": 6, "lfbe": 7}
TAG_KINDS = {v: k for k, v in KIND_TAGS.items()}
_FEATURE_HEADER = struct.Struct("<4sIBII")


@dataclass(frozen=True)
class FramingConfig:
    frame_size: int = FRAME_SIZE
    hop: int = FRAME_SIZE // HOP_DIVISOR
    window: WindowType = "hann"

    def __post_init__(self):
        n = self.frame_size
        if n < 2 or n & (n - 1):
            raise ConfigError(f"frame_size must be a power of two, got {n}")
        if self.hop < 1:
            raise ConfigError(f"hop must be >= 1, got {self.hop}")
        if self.window not in ("hann", "hamming", "rect"):
            raise ConfigError(f"unknown window {self.window!r}")

    @property
    def fft_size(self) -> int:
        return self.frame_size

    @property
    def K(self) -> int:
        return self.frame_size // 2

    def frame_duration_s(self, sample_rate: int) -> float:
        return self.frame_size / sample_rate

    def hop_duration_s(self, sample_rate: int) -> float:
        return self.hop / sample_rate


@dataclass
class Spectrogram:
    """S(n, k): N frames x (K + 1) magnitude bins."""

    values: np.ndarray
    sample_rate: int
    framing: FramingConfig

    @property
    def K(self) -> int:
        return self.values.shape[1] - 1

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


@dataclass
class FeatureMatrix:
    """X(n, k): N frames x D features."""

    values: np.ndarray
    kind: FeatureKind

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ShapeError(f"feature matrix must be 2-D, got shape {self.values.shape}")
        expected = FEATURE_DIMS.get(self.kind)
        if expected is None:
            raise ConfigError(f"unknown feature kind {self.kind!r}")
        if self.values.shape[1] != expected:
            raise ShapeError(f"{self.kind} expects D={expected}, got {self.values.shape[1]}")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    fitted_on: str = "train"

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])

    def to_dict(self) -> Dict:
        return {
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "fitted_on": self.fitted_on,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "NormStats":
        return cls(
            mean=np.asarray(data["mean"], dtype=np.float64),
            std=np.asarray(data["std"], dtype=np.float64),
            fitted_on=data.get("fitted_on", "train"),
        )


@dataclass(frozen=True)
class FeatureConfig:
    kind: FeatureKind = "q1"
    sample_rate: int = DEFAULT_SAMPLE_RATE
    framing: FramingConfig = field(default_factory=FramingConfig)
    n_mels: int = N_MELS

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ConfigError(f"unknown feature kind {self.kind!r}")

    @property
    def dim(self) -> int:
        return FEATURE_DIMS[self.kind]

    def to_dict(self) -> Dict:
        return {
            "kind": self.kind,
            "sample_rate": self.sample_rate,
            "frame_size": self.framing.frame_size,
            "hop": self.framing.hop,
            "window": self.framing.window,
            "n_mels": self.n_mels,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "FeatureConfig":
        framing = FramingConfig(
            frame_size=data.get("frame_size", FRAME_SIZE),
            hop=data.get("hop", FRAME_SIZE // HOP_DIVISOR),
            window=data.get("window", "hann"),
        )
        return cls(
            kind=data["kind"],
            sample_rate=data.get("sample_rate", DEFAULT_SAMPLE_RATE),
            framing=framing,
            n_mels=data.get("n_mels", N_MELS),
        )


# ---------------------------------------------------------------------------
# FFT
# ---------------------------------------------------------------------------


@lru_cache(maxsize=8)
def _bit_reversal(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=64)
def _twiddles(m: int) -> np.ndarray:
    return np.exp(-2j * np.pi * np.arange(m // 2) / m)


def fft_radix2(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT over the last axis."""
    x = np.asarray(x)
    n = x.shape[-1]
    if n < 1 or n & (n - 1):
        raise ShapeError(f"FFT length must be a power of two, got {n}")

    lead = x.shape[:-1]
    out = x[..., _bit_reversal(n)].astype(np.complex128).reshape(-1, n)
    m = 2
    while m <= n:
        half = m // 2
        blocks = out.reshape(out.shape[0], n // m, m)
        even = blocks[..., :half]
        odd = blocks[..., half:] * _twiddles(m)
        out = np.concatenate((even + odd, even - odd), axis=-1).reshape(-1, n)
        m *= 2
    return out.reshape(*lead, n)


def dft_direct(x: np.ndarray) -> np.ndarray:
    """O(n^2) DFT, kept as the reference the FFT is checked against."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    k = np.arange(n)
    basis = np.exp(-2j * np.pi * np.outer(k, k) / n)
    return x @ basis.T


# ---------------------------------------------------------------------------
# Spectrogram
# ---------------------------------------------------------------------------


def _window(kind: WindowType, n: int) -> np.ndarray:
    if kind == "rect":
        return np.ones(n)
    if kind == "hamming":
        return np.hamming(n + 1)[:-1]
    # periodic Hann
    return np.hanning(n + 1)[:-1]


def frame_signal(samples: np.ndarray, cfg: FramingConfig) -> np.ndarray:
    if samples.shape[0] < cfg.frame_size:
        raise TooShort(
            f"clip of {samples.shape[0]} samples is shorter than one frame ({cfg.frame_size})"
        )
    windows = np.lib.stride_tricks.sliding_window_view(samples, cfg.frame_size)
    return windows[:: cfg.hop]


def spectrogram(clip: AudioClip, cfg: FramingConfig = FramingConfig()) -> Spectrogram:
    frames = frame_signal(clip.samples, cfg) * _window(cfg.window, cfg.frame_size)
    spectrum = fft_radix2(frames)[:, : cfg.K + 1]
    return Spectrogram(values=np.abs(spectrum), sample_rate=clip.sample_rate, framing=cfg)


def frame_log_energy(spec: Spectrogram) -> np.ndarray:
    return np.log(np.sum(np.square(spec.values), axis=1) + LOG_FLOOR)


# ---------------------------------------------------------------------------
# QSE
# ---------------------------------------------------------------------------


def qse(spec: Spectrogram, quarter: str = "q1") -> FeatureMatrix:
    """Log magnitude over one quarter (or the lower half) of the positive-frequency bins."""
    quarter = quarter.lower()
    if spec.K != 512:
        raise ShapeError(f"QSE expects K = 512 (1024-point FFT), got K = {spec.K}")
    if quarter not in QUARTER_BINS:
        raise ConfigError(f"unknown quarter {quarter!r}")
    lo, hi = QUARTER_BINS[quarter]
    return FeatureMatrix(np.log(spec.values[:, lo : hi + 1] + LOG_FLOOR), kind=quarter)


# ---------------------------------------------------------------------------
# Mel filterbank, LFBE, MFCC
# ---------------------------------------------------------------------------


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_centers_hz(n_mels: int, sample_rate: int) -> np.ndarray:
    points = np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2)
    return mel_to_hz(points[1:-1])


@lru_cache(maxsize=16)
def mel_filterbank(n_mels: int, fft_size: int, sample_rate: int) -> np.ndarray:
    """
    Triangular mel filters, n_mels x (fft_size/2 + 1), each row peak-normalized to 1.

    Triangles are evaluated at the bin frequencies, so an over-dense bank leaves
    rows without any bin and is rejected.
    """
    if n_mels < 2:
        raise ConfigError(f"n_mels must be >= 2, got {n_mels}")

    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    bin_hz = np.arange(fft_size // 2 + 1) * sample_rate / fft_size

    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_hz - lower) / (center - lower)
    falling = (upper - bin_hz) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))

    peaks = fb.max(axis=1)
    if np.any(peaks <= 0.0):
        empty = int(np.argmin(peaks))
        raise ConfigError(
            f"{n_mels} mel bands exceed the usable bins of a {fft_size}-point FFT "
            f"at {sample_rate} Hz (band {empty} is empty)"
        )
    fb = fb / peaks[:, None]
    fb.setflags(write=False)
    return fb


def _log_filterbank_energies(spec: Spectrogram, n_mels: int) -> np.ndarray:
    fb = mel_filterbank(n_mels, spec.framing.fft_size, spec.sample_rate)
    if fb.shape[1] != spec.values.shape[1]:
        raise ShapeError(f"filterbank has {fb.shape[1]} bins, spectrogram {spec.values.shape[1]}")
    return np.log(np.square(spec.values) @ fb.T + LOG_FLOOR)


def cepstrum(log_energies: np.ndarray, n_coeffs: int) -> np.ndarray:
    """Orthonormal DCT-II of each row, first n_coeffs kept."""
    n_mels = log_energies.shape[-1]
    if n_coeffs > n_mels:
        raise ConfigError(f"n_coeffs ({n_coeffs}) cannot exceed n_mels ({n_mels})")
    return dct(np.asarray(log_energies, dtype=np.float64), type=2, norm="ortho", axis=-1)[..., :n_coeffs]


def lfbe(spec: Spectrogram, n_mels: int = N_MELS) -> FeatureMatrix:
    return FeatureMatrix(_log_filterbank_energies(spec, n_mels), kind="lfbe")


def mfcc(spec: Spectrogram, n_mels: int = N_MELS, n_coeffs: int = N_MFCC) -> FeatureMatrix:
    if n_coeffs > n_mels:
        raise ConfigError(f"n_coeffs ({n_coeffs}) cannot exceed n_mels ({n_mels})")
    return FeatureMatrix(cepstrum(_log_filterbank_energies(spec, n_mels), n_coeffs), kind="mfcc")


def extract(clip: AudioClip, cfg: FeatureConfig) -> FeatureMatrix:
    """Spectrogram followed by the feature named in cfg."""
    if clip.sample_rate != cfg.sample_rate:
        raise ShapeError(
            f"clip {clip.utterance_id!r} is at {clip.sample_rate} Hz, features expect {cfg.sample_rate}"
        )
    return features_from_spectrogram(spectrogram(clip, cfg.framing), cfg)


def features_from_spectrogram(spec: Spectrogram, cfg: FeatureConfig) -> FeatureMatrix:
    if cfg.kind == "lfbe":
        return lfbe(spec, cfg.n_mels)
    if cfg.kind == "mfcc":
        return mfcc(spec, cfg.n_mels, FEATURE_DIMS["mfcc"])
    return qse(spec, cfg.kind)


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------


def fit_norm_stats(features: Sequence[FeatureMatrix], fitted_on: str = "train") -> NormStats:
    """Per-dimension mean/std over every frame of the given (training) matrices."""
    if not features:
        raise DataError("cannot fit normalization statistics on an empty feature set")
    if fitted_on == "test":
        raise DataError("normalization statistics must never be fitted on the test split")
    dims = {fm.dim for fm in features}
    if len(dims) != 1:
        raise ShapeError(f"feature dimensions differ: {sorted(dims)}")

    scaler = StandardScaler()
    for fm in features:
        scaler.partial_fit(fm.values.astype(np.float64))
    std = np.maximum(np.sqrt(scaler.var_), NORM_STD_FLOOR)
    return NormStats(mean=scaler.mean_.copy(), std=std, fitted_on=fitted_on)


def apply_norm(fm: FeatureMatrix, stats: NormStats) -> FeatureMatrix:
    if fm.dim != stats.dim:
        raise ShapeError(f"feature dim {fm.dim} does not match normalization dim {stats.dim}")
    return FeatureMatrix((fm.values - stats.mean) / stats.std, kind=fm.kind)


def save_norm_stats(stats: NormStats, path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(stats.to_dict(), f, indent=2)
    return path


def load_norm_stats(path) -> NormStats:
    with open(path, "r", encoding="utf-8") as f:
        return NormStats.from_dict(json.load(f))


# ---------------------------------------------------------------------------
# QSEF serialization
# ---------------------------------------------------------------------------


def save_feature_matrix(fm: FeatureMatrix, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, KIND_TAGS[fm.kind], fm.n_frames, fm.dim)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(fm.values, dtype="<f4").tobytes())
    return path


def load_feature_matrix(path) -> FeatureMatrix:
    data = Path(path).read_bytes()
    if len(data) < _FEATURE_HEADER.size:
        raise FormatError(f"{path}: truncated feature header")
    magic, version, tag, n, d = _FEATURE_HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported feature file version {version}")
    if tag not in TAG_KINDS:
        raise FormatError(f"{path}: unknown feature kind tag {tag}")
    payload = data[_FEATURE_HEADER.size :]
    if len(payload) != n * d * 4:
        raise FormatError(f"{path}: expected {n * d * 4} payload bytes, found {len(payload)}")
    values = np.frombuffer(payload, dtype="<f4").reshape(n, d).astype(np.float32)
    return FeatureMatrix(values, kind=TAG_KINDS[tag])
