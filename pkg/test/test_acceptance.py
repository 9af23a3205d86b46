#!/usr/bin/env python3
"""
端到端验收: 在合成语料上跑预设实验，检查各实验的准确率关系、可复现性和测试集隔离
"""

import sys
from pathlib import Path

# 添加父目录到Python路径
sys.path.insert(0, str(Path(__file__).parent.parent))

from dataclasses import replace

import pytest

from audio_io import Manifest, load_manifest, read_labeled, write_manifest, write_wav
from pipeline import ExperimentPreset, get_preset, run_preset
from synth import SynthConfig, generate_corpus

SEED = 21


@pytest.fixture(scope="module")
def medium_corpus(tmp_path_factory):
    """每类 50 条、2 秒，训练/测试按说话人 80/20 划分"""
    out = tmp_path_factory.mktemp("medium_corpus")
    return generate_corpus(SynthConfig(n_per_class=50, duration_s=2.0, seed=SEED), out, jobs=4)


@pytest.fixture(scope="module")
def accuracy(medium_corpus, tmp_path_factory):
    """按预设名运行一次并缓存测试集准确率"""
    out = tmp_path_factory.mktemp("preset_runs")
    cache = {}

    def _run(name):
        if name not in cache:
            cache[name] = run_preset(get_preset(name), medium_corpus, out, seed=SEED, jobs=4).accuracy
        return cache[name]

    return _run


@pytest.mark.slow
def test_q1_arch4_headline_and_energy_baseline(tmp_path_factory):
    out = tmp_path_factory.mktemp("headline")
    # 200 train + 80 test per class
    cfg = SynthConfig(n_per_class=280, duration_s=2.0, seed=SEED, train_fraction=200 / 280)
    manifest = generate_corpus(cfg, out / "corpus", jobs=4)
    assert len(manifest.split("train")) == 400
    assert len(manifest.split("test")) == 160

    q1 = run_preset(get_preset("table2_arch4_16k"), manifest, out / "runs", seed=SEED, jobs=4)
    energy = run_preset(get_preset("baseline_energy"), manifest, out / "runs", seed=SEED)
    assert q1.accuracy >= 99.0
    assert energy.accuracy < 70.0


@pytest.mark.slow
def test_accuracy_decays_away_from_first_quarter(accuracy):
    q1, q2, q3, q4 = (accuracy(f"table5_q{i}") for i in range(1, 5))
    assert q1 >= q2 >= max(q3, q4)
    assert q1 - q3 >= 5.0


@pytest.mark.slow
@pytest.mark.parametrize("arch", ["arch3", "arch4"])
def test_q1_at_least_matches_mfcc(accuracy, arch):
    assert accuracy(f"table2_{arch}_16k") >= accuracy(f"table4_mfcc_{arch}")


@pytest.mark.slow
@pytest.mark.parametrize("snr", [0, 5, 10])
def test_q1_holds_up_under_matched_noise(accuracy, snr):
    assert accuracy(f"table7_snr{snr}") >= 90.0


@pytest.mark.slow
def test_lfbe_lstm_baseline(accuracy):
    assert accuracy("table6_lfbe_lstm") >= 95.0


@pytest.mark.slow
def test_half_band_gains_at_most_one_point(accuracy):
    assert accuracy("half_arch4") <= accuracy("table5_q1") + 1.0


def _quick_preset(name):
    return ExperimentPreset(name=name, table="quick", feature="q1", sample_rate=16000,
                            arch="arch1", train={"max_epochs": 1, "frame_step": 8})


def test_same_seed_gives_identical_artifacts(tmp_path, tiny_corpus):
    manifest = load_manifest(tiny_corpus)
    run_preset(_quick_preset("repro"), manifest, tmp_path / "a", seed=6)
    run_preset(_quick_preset("repro"), manifest, tmp_path / "b", seed=6)
    for name in ("repro.ckpt", "repro.csv", "repro.json", "repro.log.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_mutated_test_audio_leaves_training_untouched(tmp_path, tiny_corpus):
    manifest = load_manifest(tiny_corpus)
    entries = []
    for entry in manifest.entries:
        if entry.split == "test":
            clip = read_labeled(entry)
            path = write_wav(replace(clip, samples=0.5 * clip.samples[::-1]), tmp_path / "wav" / f"{entry.utterance_id}.wav")
            entry = replace(entry, path=path)
        entries.append(entry)
    mutated = Manifest(entries)
    write_manifest(mutated, tmp_path / "manifest.csv")

    run_preset(_quick_preset("leak"), manifest, tmp_path / "clean", seed=8)
    run_preset(_quick_preset("leak"), load_manifest(tmp_path / "manifest.csv"), tmp_path / "mutated", seed=8)
    assert (tmp_path / "clean" / "leak.log.csv").read_bytes() == (tmp_path / "mutated" / "leak.log.csv").read_bytes()
    assert (tmp_path / "clean" / "leak.ckpt").read_bytes() == (tmp_path / "mutated" / "leak.ckpt").read_bytes()
