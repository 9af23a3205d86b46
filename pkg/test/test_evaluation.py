#!/usr/bin/env python3
"""
测试句子级判决和精确率/召回率/F1 报告
"""

import sys
from pathlib import Path

# 添加父目录到Python路径
sys.path.insert(0, str(Path(__file__).parent.parent))

import json

import numpy as np
import pytest

from errors import DataError, LabelError, NormalizationError, ShapeError
from evaluation import (
    compute_report,
    decide_utterance,
    harmonic_f1,
    report_from_posteriors,
)


def _pairs(confusion):
    """把 2x2 混淆矩阵展开为 (truth, decision) 列表"""
    pairs = []
    for truth in (0, 1):
        for decision in (0, 1):
            pairs += [(truth, decision)] * int(confusion[truth][decision])
    return pairs


# ---------------------------------------------------------------------------
# decide_utterance
# ---------------------------------------------------------------------------


def test_mean_posterior_decides_normal():
    result = decide_utterance(np.array([[0.9, 0.1], [0.2, 0.8], [0.7, 0.3]]), "u1")
    assert np.allclose(result.mean_posterior, [0.6, 0.4])
    assert result.decision == "normal"
    assert result.decision_index == 0


def test_single_frame_whisper():
    assert decide_utterance(np.array([[0.1, 0.9]])).decision == "whisper"


def test_tie_goes_to_normal():
    assert decide_utterance(np.full((7, 2), 0.5)).decision == "normal"


def test_frame_order_does_not_matter():
    rng = np.random.default_rng(0)
    first = rng.uniform(0.0, 1.0, 101)
    post = np.column_stack([first, 1.0 - first])
    a = decide_utterance(post)
    b = decide_utterance(post[rng.permutation(101)])
    assert np.array_equal(a.mean_posterior, b.mean_posterior)
    assert a.decision == b.decision


def test_decide_errors():
    with pytest.raises(ShapeError):
        decide_utterance(np.zeros((0, 2)))
    with pytest.raises(ShapeError):
        decide_utterance(np.full((3, 3), 1.0 / 3.0))
    with pytest.raises(NormalizationError):
        decide_utterance(np.array([[0.5, 0.5], [0.6, 0.6]]))


def test_small_float_drift_is_accepted():
    post = np.array([[0.7, 0.3 + 5e-5]])
    assert decide_utterance(post).decision == "normal"


# ---------------------------------------------------------------------------
# compute_report
# ---------------------------------------------------------------------------


def test_all_correct():
    report = compute_report(_pairs([[10, 0], [0, 10]]))
    for m in report.per_class.values():
        assert (m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0)
    assert report.accuracy == 100.0


def test_hand_counted_confusion():
    report = compute_report(_pairs([[9, 1], [2, 8]]))
    assert report.confusion.tolist() == [[9, 1], [2, 8]]
    normal, whisper = report.per_class["normal"], report.per_class["whisper"]
    assert normal.precision == pytest.approx(9 / 11)
    assert normal.recall == pytest.approx(0.9)
    assert whisper.precision == pytest.approx(8 / 9)
    assert whisper.recall == pytest.approx(0.8)
    assert report.accuracy == pytest.approx(85.0)
    assert normal.support == 10


def test_f1_of_published_row():
    assert round(harmonic_f1(0.9891, 0.9972), 4) == 0.9931


def test_zero_division_gives_zero():
    report = compute_report(_pairs([[5, 0], [5, 0]]))
    whisper = report.per_class["whisper"]
    assert whisper.precision == 0.0
    assert whisper.recall == 0.0
    assert whisper.f1 == 0.0
    assert report.accuracy == 50.0


def test_string_and_index_classes_agree():
    by_index = compute_report([(0, 0), (1, 0), (1, 1)])
    by_name = compute_report([("normal", "normal"), ("whisper", "normal"), ("whisper", "whisper")])
    assert by_index.confusion.tolist() == by_name.confusion.tolist()


def test_report_errors():
    with pytest.raises(DataError):
        compute_report([])
    with pytest.raises(LabelError):
        compute_report([(0, 2)])
    with pytest.raises(LabelError):
        compute_report([("shouted", "normal")])


def test_random_confusions_match_counting_oracle():
    rng = np.random.default_rng(1)
    for _ in range(50):
        cm = rng.integers(0, 20, (2, 2))
        if cm.sum() == 0:
            continue
        report = compute_report(_pairs(cm))
        assert report.confusion.sum() == cm.sum()
        assert report.accuracy == pytest.approx(100.0 * (cm[0, 0] + cm[1, 1]) / cm.sum())
        for c, label in enumerate(("normal", "whisper")):
            tp = cm[c, c]
            predicted = cm[:, c].sum()
            actual = cm[c, :].sum()
            precision = tp / predicted if predicted else 0.0
            recall = tp / actual if actual else 0.0
            f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
            m = report.per_class[label]
            assert m.precision == pytest.approx(precision)
            assert m.recall == pytest.approx(recall)
            assert m.f1 == pytest.approx(f1)
            assert 0.0 <= m.f1 <= max(m.precision, m.recall) + 1e-12


def test_report_from_posteriors():
    posts = [decide_utterance(np.array([[0.8, 0.2]])), decide_utterance(np.array([[0.3, 0.7]]))]
    report = report_from_posteriors(["normal", "normal"], posts)
    assert report.confusion.tolist() == [[1, 1], [0, 0]]
    with pytest.raises(ShapeError):
        report_from_posteriors(["normal"], posts)


# ---------------------------------------------------------------------------
# 输出格式
# ---------------------------------------------------------------------------


def test_csv_layout():
    text = compute_report(_pairs([[9, 1], [2, 8]])).to_csv()
    assert text.splitlines() == [
        "class,precision,recall,f1",
        "normal,0.8182,0.9000,0.8571",
        "whisper,0.8889,0.8000,0.8421",
        "accuracy,85.00",
    ]


def test_write_csv_and_json(tmp_path):
    report = compute_report(_pairs([[9, 1], [2, 8]]))
    csv_path, json_path = report.write(tmp_path / "out" / "report.csv")
    assert csv_path.read_text() == report.to_csv()
    data = json.loads(json_path.read_text())
    assert data["confusion"] == [[9, 1], [2, 8]]
    assert data["accuracy"] == 85.0
    assert data["n_utterances"] == 20
    assert data["classes"]["normal"]["precision"] == 0.8182
