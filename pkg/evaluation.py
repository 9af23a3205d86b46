"""
Utterance-level decisions by mean frame posterior, and per-class precision/recall/F1 reports.
"""

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from sklearn.metrics import confusion_matrix, precision_recall_fscore_support

from audio_io import CLASS_INDEX, LABELS
from errors import DataError, LabelError, NormalizationError, ShapeError
from logger_config import setup_logger

logger = setup_logger(__name__)

ROW_SUM_TOLERANCE = 1e-4
REPORT_HEADER = ["class", "precision", "recall", "f1"]

ClassRef = Union[int, str]


@dataclass
class UtterancePosterior:
    utterance_id: str
    frame_posteriors: np.ndarray
    mean_posterior: np.ndarray
    decision: str

    @property
    def decision_index(self) -> int:
        return CLASS_INDEX[self.decision]


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class EvalReport:
    confusion: np.ndarray  # rows = truth, cols = decision, Normal first
    per_class: Dict[str, ClassMetrics]
    accuracy: float  # percent

    @property
    def n_utterances(self) -> int:
        return int(self.confusion.sum())

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        for label in LABELS:
            m = self.per_class[label]
            writer.writerow([label, f"{m.precision:.4f}", f"{m.recall:.4f}", f"{m.f1:.4f}"])
        writer.writerow(["accuracy", f"{self.accuracy:.2f}"])
        return buf.getvalue()

    def to_dict(self) -> Dict:
        return {
            "confusion": self.confusion.astype(int).tolist(),
            "classes": {
                label: {
                    "precision": round(m.precision, 4),
                    "recall": round(m.recall, 4),
                    "f1": round(m.f1, 4),
                    "support": m.support,
                }
                for label, m in self.per_class.items()
            },
            "accuracy": round(self.accuracy, 2),
            "n_utterances": self.n_utterances,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write(self, csv_path) -> Tuple[Path, Path]:
        """Write the CSV report and its JSON mirror next to it."""
        csv_path = Path(csv_path)
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        json_path = csv_path.with_suffix(".json")
        csv_path.write_text(self.to_csv(), encoding="utf-8")
        json_path.write_text(self.to_json() + "\n", encoding="utf-8")
        return csv_path, json_path

    def summary_row(self) -> List[str]:
        n, w = self.per_class["normal"], self.per_class["whisper"]
        return [f"{n.precision:.4f}", f"{n.recall:.4f}", f"{n.f1:.4f}",
                f"{w.precision:.4f}", f"{w.recall:.4f}", f"{w.f1:.4f}", f"{self.accuracy:.2f}"]


def decide_utterance(frame_posteriors: np.ndarray, utterance_id: str = "") -> UtterancePosterior:
    """Argmax of the mean frame posterior; exact ties go to Normal."""
    post = np.asarray(frame_posteriors, dtype=np.float64)
    if post.ndim != 2 or post.shape[0] == 0:
        raise ShapeError(f"expected a non-empty N x 2 posterior matrix, got shape {post.shape}")
    if post.shape[1] != len(LABELS):
        raise ShapeError(f"expected {len(LABELS)} classes, got {post.shape[1]}")
    row_sums = post.sum(axis=1)
    bad = np.abs(row_sums - 1.0) > ROW_SUM_TOLERANCE
    if np.any(bad):
        row = int(np.argmax(bad))
        raise NormalizationError(f"frame {row} of {utterance_id or 'utterance'} sums to {row_sums[row]:.6f}")

    # fsum keeps the mean independent of frame order
    n = post.shape[0]
    mean = np.array([math.fsum(post[:, k]) / n for k in range(post.shape[1])])
    decision = LABELS[0] if mean[0] >= mean[1] else LABELS[1]
    return UtterancePosterior(utterance_id, post, mean, decision)


def harmonic_f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _as_index(value: ClassRef) -> int:
    if isinstance(value, str):
        if value not in CLASS_INDEX:
            raise LabelError(f"unknown class {value!r}")
        return CLASS_INDEX[value]
    if int(value) not in (0, 1):
        raise LabelError(f"class index must be 0 or 1, got {value}")
    return int(value)


def compute_report(decisions: Sequence[Tuple[ClassRef, ClassRef]]) -> EvalReport:
    """Build the report from (truth, decision) pairs."""
    if not decisions:
        raise DataError("cannot build a report from zero decisions")
    truth = [_as_index(t) for t, _ in decisions]
    pred = [_as_index(d) for _, d in decisions]

    labels = [CLASS_INDEX[label] for label in LABELS]
    cm = confusion_matrix(truth, pred, labels=labels)
    precision, recall, _, support = precision_recall_fscore_support(
        truth, pred, labels=labels, zero_division=0
    )

    per_class = {
        label: ClassMetrics(
            precision=float(precision[i]),
            recall=float(recall[i]),
            f1=harmonic_f1(float(precision[i]), float(recall[i])),
            support=int(support[i]),
        )
        for i, label in enumerate(LABELS)
    }
    accuracy = 100.0 * float(np.trace(cm)) / float(cm.sum())
    return EvalReport(confusion=cm, per_class=per_class, accuracy=accuracy)


def report_from_posteriors(truths: Sequence[ClassRef], posteriors: Sequence[UtterancePosterior]) -> EvalReport:
    if len(truths) != len(posteriors):
        raise ShapeError(f"{len(truths)} labels for {len(posteriors)} utterances")
    report = compute_report([(t, p.decision) for t, p in zip(truths, posteriors)])
    logger.info(f"Evaluated {report.n_utterances} utterances: accuracy {report.accuracy:.2f}%")
    return report
