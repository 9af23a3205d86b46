"""
Training and experiment pipeline.

Feature extraction over a manifest (optional noise injection and resampling),
frame-level training with an utterance-level validation split and early stopping,
test-set evaluation, and YAML experiment presets grouped by results table.
"""

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml
from sklearn.model_selection import train_test_split

from audio_io import (
    CLASS_INDEX,
    LABELS,
    AudioClip,
    Manifest,
    ManifestEntry,
    add_white_noise,
    manifest_rates,
    measure_snr,
    read_labeled,
    resample_44k_to_16k,
    utterance_seed,
)
from config import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_DROPOUT,
    DEFAULT_LR,
    DEFAULT_MAX_EPOCHS,
    DEFAULT_PATIENCE,
    DEFAULT_SEED,
    DEFAULT_VAL_FRACTION,
    PRESETS_FILE,
)
from dsp_features import (
    FeatureConfig,
    FeatureMatrix,
    NormStats,
    apply_norm,
    features_from_spectrogram,
    fit_norm_stats,
    frame_log_energy,
    load_feature_matrix,
    save_feature_matrix,
    spectrogram,
)
from errors import ConfigError, DataError, FormatError, ShapeError, UnsupportedRate
from evaluation import EvalReport, UtterancePosterior, compute_report, decide_utterance, report_from_posteriors
from logger_config import setup_logger
from models import ARCHITECTURES, Checkpoint, build_spec, check_input_dim, network_from_spec, save_checkpoint
from neural import Adam, Network, cross_entropy

logger = setup_logger(__name__)

INDEX_HEADER = ["utterance_id", "label", "split", "path"]
LOG_HEADER = ["epoch", "train_loss", "val_acc"]
SUMMARY_HEADER = ["preset", "normal_pre", "normal_re", "normal_f1",
                  "whisper_pre", "whisper_re", "whisper_f1", "acc"]
BASELINE_MODELS = ("energy",)
PREDICT_CHUNK = 512


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = DEFAULT_BATCH_SIZE
    max_epochs: int = DEFAULT_MAX_EPOCHS
    lr: float = DEFAULT_LR
    dropout: float = DEFAULT_DROPOUT
    val_fraction: float = DEFAULT_VAL_FRACTION
    patience: int = DEFAULT_PATIENCE
    seed: int = DEFAULT_SEED
    frame_step: int = 1
    seq_len: int = 100
    sequence_batch: int = 16
    energy_filter: bool = False
    energy_floor_db: float = -30.0

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 0.5:
            raise ConfigError(f"val_fraction must be in (0, 0.5), got {self.val_fraction}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 1 or self.sequence_batch < 1:
            raise ConfigError("batch sizes must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.lr <= 0.0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.frame_step < 1 or self.seq_len < 1:
            raise ConfigError("frame_step and seq_len must be >= 1")

    def to_dict(self) -> Dict:
        return asdict(self)

    def with_overrides(self, overrides: Optional[Dict]) -> "TrainConfig":
        if not overrides:
            return self
        known = {f.name for f in fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise ConfigError(f"unknown training options: {', '.join(sorted(unknown))}")
        return replace(self, **overrides)


@dataclass
class UtteranceFeatures:
    utterance_id: str
    label: str
    split: str
    features: FeatureMatrix
    log_energy: np.ndarray
    snr_db: Optional[float] = None
    snr_after_resample_db: Optional[float] = None

    @property
    def class_index(self) -> int:
        return CLASS_INDEX[self.label]


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float
    val_loss: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: List[EpochLog]
    best_epoch: int


# ---------------------------------------------------------------------------
# Feature extraction
# ---------------------------------------------------------------------------


def prepare_clip(clip: AudioClip, target_rate: int, snr_db: Optional[float] = None,
                 seed: int = DEFAULT_SEED) -> Tuple[AudioClip, Optional[float], Optional[float]]:
    """
    Noise at the source rate, then resampling to target_rate.

    Returns (clip, measured SNR at injection, SNR measured after resampling).
    """
    measured = after = None
    noisy = clip
    if snr_db is not None:
        noisy = add_white_noise(clip, snr_db, utterance_seed(seed, clip.utterance_id))
        measured = measure_snr(clip, noisy)

    if noisy.sample_rate == target_rate:
        return noisy, measured, measured
    if noisy.sample_rate == 44100 and target_rate == 16000:
        resampled = resample_44k_to_16k(noisy)
        if snr_db is not None:
            after = measure_snr(resample_44k_to_16k(clip), resampled)
        return resampled, measured, after
    raise UnsupportedRate(f"cannot convert {clip.utterance_id!r} from {clip.sample_rate} Hz to {target_rate} Hz")


def rate_reachable(source_rate: int, target_rate: int) -> bool:
    return source_rate == target_rate or (source_rate, target_rate) == (44100, 16000)


def extract_utterance(entry: ManifestEntry, feature_cfg: FeatureConfig, snr_db: Optional[float] = None,
                      seed: int = DEFAULT_SEED) -> UtteranceFeatures:
    clip, measured, after = prepare_clip(read_labeled(entry), feature_cfg.sample_rate, snr_db, seed)
    spec = spectrogram(clip, feature_cfg.framing)
    return UtteranceFeatures(
        utterance_id=entry.utterance_id,
        label=entry.label,
        split=entry.split,
        features=features_from_spectrogram(spec, feature_cfg),
        log_energy=frame_log_energy(spec),
        snr_db=measured,
        snr_after_resample_db=after,
    )


def snr_audit(utterances: Sequence[UtteranceFeatures], requested: float) -> Dict:
    measured = [u.snr_db for u in utterances if u.snr_db is not None]
    after = [u.snr_after_resample_db for u in utterances if u.snr_after_resample_db is not None]
    audit = {
        "requested_db": requested,
        "n_utterances": len(measured),
        "measured_min_db": min(measured),
        "measured_max_db": max(measured),
    }
    if after:
        audit["after_resample_min_db"] = min(after)
        audit["after_resample_max_db"] = max(after)
    logger.info(
        f"SNR audit: requested {requested:.2f} dB, measured "
        f"[{audit['measured_min_db']:.4f}, {audit['measured_max_db']:.4f}] dB over {len(measured)} utterances"
        + (f", after resampling [{min(after):.2f}, {max(after):.2f}] dB" if after else "")
    )
    return audit


def extract_corpus(manifest: Manifest, feature_cfg: FeatureConfig, snr_db: Optional[float] = None,
                   seed: int = DEFAULT_SEED, jobs: int = 1,
                   splits: Sequence[str] = ("train", "test")) -> List[UtteranceFeatures]:
    """Per-utterance extraction in manifest order; `jobs` > 1 uses a thread pool."""
    entries = [e for e in manifest.entries if e.split in splits]
    logger.info(
        f"Extracting {feature_cfg.kind} at {feature_cfg.sample_rate} Hz from {len(entries)} utterances"
        + (f" with white noise at {snr_db} dB SNR" if snr_db is not None else "")
    )

    def _one(entry):
        return extract_utterance(entry, feature_cfg, snr_db, seed)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            utterances = list(pool.map(_one, entries))
    else:
        utterances = [_one(e) for e in entries]

    if snr_db is not None and utterances:
        snr_audit(utterances, snr_db)
    return utterances


def save_feature_dir(utterances: Sequence[UtteranceFeatures], feature_cfg: FeatureConfig, out_dir,
                     extra: Optional[Dict] = None) -> Path:
    """features/<id>.qsef (+ frame energies), index.csv and extract.json."""
    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "index.csv", "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(INDEX_HEADER)
        for u in utterances:
            rel = f"features/{u.utterance_id}.qsef"
            save_feature_matrix(u.features, out_dir / rel)
            np.save(feat_dir / f"{u.utterance_id}.energy.npy", u.log_energy.astype(np.float64))
            writer.writerow([u.utterance_id, u.label, u.split, rel])

    meta = {"feature": feature_cfg.to_dict(), "n_utterances": len(utterances)}
    if extra:
        meta.update(extra)
    with open(out_dir / "extract.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    logger.info(f"Wrote {len(utterances)} feature files to {feat_dir}")
    return out_dir


def load_feature_dir(path) -> Tuple[List[UtteranceFeatures], FeatureConfig, Dict]:
    path = Path(path)
    meta_path, index_path = path / "extract.json", path / "index.csv"
    if not meta_path.exists() or not index_path.exists():
        raise FormatError(f"{path}: not a feature directory (index.csv / extract.json missing)")
    with open(meta_path, "r", encoding="utf-8") as f:
        meta = json.load(f)
    feature_cfg = FeatureConfig.from_dict(meta["feature"])

    utterances = []
    with open(index_path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        if next(reader, None) != INDEX_HEADER:
            raise FormatError(f"{index_path}: header must be {','.join(INDEX_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise FormatError(f"{index_path}: line {line_no}: expected 4 fields")
            utt_id, label, split, rel = row
            if label not in LABELS:
                raise FormatError(f"{index_path}: line {line_no}: unknown label {label!r}")
            fm = load_feature_matrix(path / rel)
            if fm.kind != feature_cfg.kind:
                raise FormatError(f"{path / rel}: kind {fm.kind} but directory holds {feature_cfg.kind}")
            energy_path = path / "features" / f"{utt_id}.energy.npy"
            log_energy = np.load(energy_path) if energy_path.exists() else np.zeros(fm.n_frames)
            utterances.append(UtteranceFeatures(utt_id, label, split, fm, log_energy))
    return utterances, feature_cfg, meta


# ---------------------------------------------------------------------------
# Training data
# ---------------------------------------------------------------------------


def energy_mask(log_energy: np.ndarray, floor_db: float) -> np.ndarray:
    """Frames within floor_db of the utterance's loudest frame."""
    threshold = np.max(log_energy) + floor_db * math.log(10.0) / 10.0
    return log_energy >= threshold


def _frame_dataset(utterances: Sequence[UtteranceFeatures], stats: NormStats,
                   cfg: TrainConfig) -> Tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    for u in utterances:
        x = apply_norm(u.features, stats).values
        keep = np.zeros(x.shape[0], dtype=bool)
        keep[:: cfg.frame_step] = True
        if cfg.energy_filter:
            keep &= energy_mask(u.log_energy, cfg.energy_floor_db)
        xs.append(x[keep])
        ys.append(np.full(int(keep.sum()), u.class_index, dtype=np.int64))
    return np.concatenate(xs), np.concatenate(ys)


def _sequence_dataset(utterances: Sequence[UtteranceFeatures], stats: NormStats,
                      cfg: TrainConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Non-overlapping chunks of equal length; every frame carries its utterance label."""
    decimated = [apply_norm(u.features, stats).values[:: cfg.frame_step] for u in utterances]
    length = min(cfg.seq_len, min(x.shape[0] for x in decimated))
    xs, ys = [], []
    for u, x in zip(utterances, decimated):
        n_chunks = x.shape[0] // length
        xs.append(x[: n_chunks * length].reshape(n_chunks, length, x.shape[1]))
        ys.append(np.full((n_chunks, length), u.class_index, dtype=np.int64))
    return np.concatenate(xs), np.concatenate(ys)


def frame_posteriors(network: Network, is_sequence: bool, x: np.ndarray) -> np.ndarray:
    """Posteriors (N, 2) for a normalized N x D feature matrix."""
    if is_sequence:
        return network.predict(x[None, :, :])[0]
    out = [network.predict(x[i : i + PREDICT_CHUNK, :, None]) for i in range(0, x.shape[0], PREDICT_CHUNK)]
    return np.concatenate(out)


def split_validation(utterances: Sequence[UtteranceFeatures], val_fraction: float,
                     seed: int) -> Tuple[List[UtteranceFeatures], List[UtteranceFeatures]]:
    """Utterance-level stratified split of the training utterances."""
    labels = [u.class_index for u in utterances]
    counts = np.bincount(labels, minlength=len(LABELS))
    if np.any(counts < 2):
        raise DataError(f"need at least two training utterances per class for validation, got {counts.tolist()}")
    n_val = max(len(LABELS), int(math.ceil(val_fraction * len(utterances))))
    fit_idx, val_idx = train_test_split(
        np.arange(len(utterances)), test_size=n_val, stratify=labels, random_state=seed
    )
    return [utterances[i] for i in sorted(fit_idx)], [utterances[i] for i in sorted(val_idx)]


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _validate(network: Network, is_sequence: bool, val: Sequence[UtteranceFeatures], stats: NormStats,
              frame_step: int) -> Tuple[float, float]:
    correct, losses = 0, []
    for u in val:
        x = apply_norm(u.features, stats).values[::frame_step]
        post = frame_posteriors(network, is_sequence, x)
        loss, _ = cross_entropy(post, np.full(post.shape[0], u.class_index))
        losses.append(loss)
        correct += int(decide_utterance(post, u.utterance_id).decision_index == u.class_index)
    return correct / len(val), float(np.mean(losses))


def fit_features(utterances: Sequence[UtteranceFeatures], feature_cfg: FeatureConfig, model_name: str,
                 train_cfg: TrainConfig) -> TrainResult:
    """Train on the train-split utterances; anything tagged test is ignored."""
    if model_name not in ARCHITECTURES:
        raise ConfigError(f"unknown architecture {model_name!r}")
    train = [u for u in utterances if u.split == "train"]
    present = {u.label for u in train}
    if present != set(LABELS):
        raise DataError(f"training set must contain both classes, found {sorted(present)}")
    dims = {u.features.dim for u in train}
    if len(dims) != 1:
        raise ShapeError(f"mixed feature dimensions in training set: {sorted(dims)}")

    fit_set, val_set = split_validation(train, train_cfg.val_fraction, train_cfg.seed)
    stats = fit_norm_stats([u.features for u in fit_set], fitted_on="train")

    spec = build_spec(model_name, dims.pop(), train_cfg.dropout)
    check_input_dim(spec, feature_cfg.dim)
    network = network_from_spec(spec, train_cfg.seed)
    optimizer = Adam(network.parameters(), lr=train_cfg.lr)
    rng = np.random.default_rng([train_cfg.seed, 1])

    if spec.is_sequence:
        x_all, y_all = _sequence_dataset(fit_set, stats, train_cfg)
        batch_size = train_cfg.sequence_batch
    else:
        x_all, y_all = _frame_dataset(fit_set, stats, train_cfg)
        x_all = x_all[:, :, None]
        batch_size = train_cfg.batch_size
    logger.info(
        f"Training {model_name} on {len(fit_set)} utterances ({x_all.shape[0]} "
        f"{'sequences' if spec.is_sequence else 'frames'}), validating on {len(val_set)}"
    )

    log: List[EpochLog] = []
    best_key, best_epoch, best_params = None, 0, None
    since_best = 0
    for epoch in range(1, train_cfg.max_epochs + 1):
        order = rng.permutation(x_all.shape[0])
        loss_sum, correct, seen = 0.0, 0, 0
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            xb, yb = x_all[idx], y_all[idx]
            probs = network.forward(xb, training=True)
            loss, _ = cross_entropy(probs, yb)
            network.backward_from_logits(probs, yb)
            optimizer.step(network.gradients())
            loss_sum += loss * yb.size
            correct += int(np.sum(np.argmax(probs, axis=-1) == yb))
            seen += yb.size

        val_acc, val_loss = _validate(network, spec.is_sequence, val_set, stats, train_cfg.frame_step)
        entry = EpochLog(epoch, loss_sum / seen, correct / seen, val_acc, val_loss)
        log.append(entry)
        logger.info(
            f"epoch {epoch}: train_loss {entry.train_loss:.4f} train_acc {entry.train_acc:.4f} "
            f"val_acc {val_acc:.4f} val_loss {val_loss:.4f}"
        )

        key = (val_acc, -val_loss)
        if best_key is None or key > best_key:
            best_key, best_epoch = key, epoch
            best_params = [p.copy() for p in network.parameters()]
            since_best = 0
        else:
            since_best += 1
            if since_best >= train_cfg.patience:
                logger.info(f"Early stop after epoch {epoch}; best epoch {best_epoch}")
                break

    for p, best in zip(network.parameters(), best_params):
        p[...] = best

    metadata = {
        "seed": train_cfg.seed,
        "epochs_run": len(log),
        "best_epoch": best_epoch,
        "best_val_acc": best_key[0],
        "feature": feature_cfg.to_dict(),
        "train_config": train_cfg.to_dict(),
    }
    ckpt = Checkpoint(spec=spec, network=network, norm_stats=stats, metadata=metadata)
    return TrainResult(checkpoint=ckpt, log=log, best_epoch=best_epoch)


def fit(manifest: Manifest, feature_cfg: FeatureConfig, model_name: str, train_cfg: TrainConfig,
        snr_db: Optional[float] = None, jobs: int = 1) -> TrainResult:
    """Extract the train split only, then train."""
    present = {e.label for e in manifest.split("train")}
    if present != set(LABELS):
        raise DataError(f"manifest train split must contain both classes, found {sorted(present)}")
    utterances = extract_corpus(manifest, feature_cfg, snr_db, train_cfg.seed, jobs, splits=("train",))
    return fit_features(utterances, feature_cfg, model_name, train_cfg)


def write_training_log(log: Sequence[EpochLog], path) -> Path:
    """CSV `epoch,train_loss,val_acc` plus a JSON copy with every recorded field."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(LOG_HEADER)
        for e in log:
            writer.writerow([e.epoch, f"{e.train_loss:.6f}", f"{e.val_acc:.6f}"])
    with open(path.with_suffix(".json"), "w", encoding="utf-8") as f:
        json.dump([asdict(e) for e in log], f, indent=2)
    return path


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def evaluate(ckpt: Checkpoint, utterances: Sequence[UtteranceFeatures]) -> Tuple[EvalReport, List[UtterancePosterior]]:
    """Utterance decisions by mean posterior over all frames."""
    if ckpt.norm_stats is None:
        raise ConfigError("checkpoint carries no normalization statistics")
    if not utterances:
        raise DataError("no utterances to evaluate")
    posteriors = []
    for u in utterances:
        check_input_dim(ckpt.spec, u.features.dim)
        x = apply_norm(u.features, ckpt.norm_stats).values
        posteriors.append(decide_utterance(frame_posteriors(ckpt.network, ckpt.spec.is_sequence, x), u.utterance_id))
    report = report_from_posteriors([u.label for u in utterances], posteriors)
    return report, posteriors


def energy_baseline(train: Sequence[UtteranceFeatures],
                    test: Sequence[UtteranceFeatures]) -> Tuple[EvalReport, Dict]:
    """One threshold on mean frame log-energy, fitted for train accuracy."""
    if not train or not test:
        raise DataError("energy baseline needs train and test utterances")
    x = np.array([float(np.mean(u.log_energy)) for u in train])
    y = np.array([u.class_index for u in train])

    candidates = np.sort(x)
    thresholds = np.concatenate(([candidates[0] - 1.0], (candidates[:-1] + candidates[1:]) / 2.0))
    best = (-1.0, 0.0, 1)
    for thr in thresholds:
        for whisper_above in (1, 0):
            pred = (x > thr).astype(int) if whisper_above else (x <= thr).astype(int)
            acc = float(np.mean(pred == y))
            if acc > best[0]:
                best = (acc, float(thr), whisper_above)
    train_acc, threshold, whisper_above = best

    decisions = []
    for u in test:
        energy = float(np.mean(u.log_energy))
        whisper = energy > threshold if whisper_above else energy <= threshold
        decisions.append((u.label, LABELS[int(whisper)]))

    report = compute_report(decisions)
    model = {"threshold": threshold, "whisper_above": bool(whisper_above), "train_acc": train_acc}
    logger.info(f"Energy baseline: threshold {threshold:.3f}, train acc {train_acc:.4f}, test acc {report.accuracy:.2f}%")
    return report, model


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    table: str
    feature: str
    sample_rate: int
    arch: str
    snr_db: Optional[float] = None
    train: Dict = field(default_factory=dict)

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(kind=self.feature, sample_rate=self.sample_rate)


def load_presets(path=PRESETS_FILE) -> Dict[str, ExperimentPreset]:
    with open(path, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    defaults = (data.get("defaults") or {}).get("train") or {}
    presets = {}
    for name, body in (data.get("presets") or {}).items():
        try:
            preset = ExperimentPreset(
                name=name,
                table=body["table"],
                feature=body["feature"],
                sample_rate=int(body.get("rate", 16000)),
                arch=body["arch"],
                snr_db=body.get("snr"),
                train={**defaults, **(body.get("train") or {})},
            )
        except (KeyError, TypeError) as e:
            raise ConfigError(f"preset {name!r} is malformed: {e}") from e
        if preset.arch not in ARCHITECTURES + BASELINE_MODELS:
            raise ConfigError(f"preset {name!r}: unknown architecture {preset.arch!r}")
        preset.feature_config()
        TrainConfig().with_overrides(preset.train)
        presets[name] = preset
    return presets


def get_preset(name: str, presets: Optional[Dict[str, ExperimentPreset]] = None) -> ExperimentPreset:
    presets = presets if presets is not None else load_presets()
    if name not in presets:
        raise ConfigError(f"unknown preset {name!r}")
    return presets[name]


def preset_group(table: str, presets: Optional[Dict[str, ExperimentPreset]] = None) -> List[ExperimentPreset]:
    presets = presets if presets is not None else load_presets()
    group = [p for p in presets.values() if p.table == table]
    if not group:
        raise ConfigError(f"unknown preset or table {table!r}")
    return group


def run_preset(preset: ExperimentPreset, manifest: Manifest, out_dir, seed: int = DEFAULT_SEED,
               jobs: int = 1, train_overrides: Optional[Dict] = None) -> EvalReport:
    """Extract, fit, evaluate on the test split; writes <name>.csv/.json, checkpoint and logs."""

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    feature_cfg = preset.feature_config()
    utterances = extract_corpus(manifest, feature_cfg, preset.snr_db, seed, jobs)
    train = [u for u in utterances if u.split == "train"]
    test = [u for u in utterances if u.split == "test"]
    if not test:
        raise DataError("manifest has no test utterances")

    echo = {"preset": asdict(preset), "seed": seed}
    if preset.arch == "energy":
        report, model = energy_baseline(train, test)
        echo["energy_model"] = model
    else:
        train_cfg = TrainConfig(seed=seed).with_overrides(preset.train).with_overrides(train_overrides)
        result = fit_features(train, feature_cfg, preset.arch, train_cfg)
        result.checkpoint.metadata["preset"] = preset.name
        save_checkpoint(result.checkpoint, out_dir / f"{preset.name}.ckpt")
        write_training_log(result.log, out_dir / f"{preset.name}.log.csv")
        report, _ = evaluate(result.checkpoint, test)
        echo["train_config"] = train_cfg.to_dict()
        echo["best_epoch"] = result.best_epoch

    report.write(out_dir / f"{preset.name}.csv")
    with open(out_dir / f"{preset.name}.config.json", "w", encoding="utf-8") as f:
        json.dump(echo, f, indent=2, sort_keys=True)
    logger.info(f"Preset {preset.name}: accuracy {report.accuracy:.2f}%")
    return report


def run_table(table: str, manifest: Manifest, out_dir, seed: int = DEFAULT_SEED, jobs: int = 1,
              presets: Optional[Dict[str, ExperimentPreset]] = None,
              train_overrides: Optional[Dict] = None) -> Dict[str, EvalReport]:
    """Run every preset of a table group and write <table>_summary.csv."""
    out_dir = Path(out_dir)
    group = preset_group(table, presets)
    rates = manifest_rates(manifest)
    for preset in group:
        missing = sorted(r for r in rates if not rate_reachable(r, preset.sample_rate))
        if missing:
            raise UnsupportedRate(
                f"preset {preset.name} needs {preset.sample_rate} Hz audio, but the manifest holds "
                f"{', '.join(f'{rates[r]} clips at {r} Hz' for r in missing)}; "
                f"generate the corpus with `synth --rate 44100` for this table"
            )

    reports = {}
    for preset in group:
        reports[preset.name] = run_preset(preset, manifest, out_dir, seed, jobs, train_overrides)

    with open(out_dir / f"{table}_summary.csv", "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SUMMARY_HEADER)
        for name, report in reports.items():
            writer.writerow([name] + report.summary_row())
    return reports
