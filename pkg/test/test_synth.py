#!/usr/bin/env python3
"""
测试合成语料：长度、基频、平坦度、确定性、划分和音量分布
"""

import sys
from pathlib import Path

# 添加父目录到Python路径
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pytest

from audio_io import load_manifest
from synth import (
    SynthConfig,
    generate_corpus,
    harmonic_train,
    spectral_flatness,
    synth_utterance,
    voiced_frame_rate,
)
from errors import ConfigError


def _active_frames(clip, cfg, frame_size=1024, hop=1024):
    start, stop = cfg.n_pad, len(clip) - cfg.n_pad
    return [clip.samples[s : s + frame_size] for s in range(start, stop - frame_size + 1, hop)]


def test_default_length():
    clip = synth_utterance(SynthConfig(), "normal", 0)
    assert len(clip) == 83200
    assert clip.sample_rate == 16000
    assert clip.label == "normal"


def test_harmonic_train_unit_rms():
    out = harmonic_train(np.full(16000, 150.0), 16000)
    assert np.sqrt(np.mean(out ** 2)) == pytest.approx(1.0)


def test_constant_f0_harmonic_spacing():
    cfg = SynthConfig(constant_f0=150.0)
    clip = synth_utterance(cfg, "normal", 1)
    mid = len(clip) // 2
    frame = clip.samples[mid : mid + 1024] * np.hanning(1025)[:-1]
    log_mag = np.log(np.abs(np.fft.rfft(frame)) + 1e-10)
    spacing = 150.0 / (16000 / 1024)
    assert spacing == pytest.approx(9.6)
    for h in range(1, 11):
        center = int(round(h * spacing))
        peak = log_mag[center - 1 : center + 2].max()
        valley = log_mag[int(round((h + 0.5) * spacing))]
        assert peak > valley + 2.0


def test_whisper_is_flatter_than_normal():
    cfg = SynthConfig()
    flat = {}
    for label in ("normal", "whisper"):
        clip = synth_utterance(cfg, label, 2)
        flat[label] = np.mean([spectral_flatness(f) for f in _active_frames(clip, cfg)])
    assert flat["whisper"] > flat["normal"]


def test_parallel_pair_shares_speaker():
    cfg = SynthConfig(n_per_class=10)
    normal = synth_utterance(cfg, "normal", 7)
    whisper = synth_utterance(cfg, "whisper", 7)
    assert normal.utterance_id.split("_")[0] == whisper.utterance_id.split("_")[0]


def test_utterance_is_deterministic():
    cfg = SynthConfig(duration_s=1.0, seed=9)
    a = synth_utterance(cfg, "whisper", 3)
    b = synth_utterance(cfg, "whisper", 3)
    assert np.array_equal(a.samples, b.samples)
    other = synth_utterance(SynthConfig(duration_s=1.0, seed=10), "whisper", 3)
    assert not np.array_equal(a.samples, other.samples)


def test_corpus_is_byte_identical(tmp_path):
    cfg = SynthConfig(n_per_class=3, duration_s=1.0, seed=5)
    generate_corpus(cfg, tmp_path / "a")
    generate_corpus(cfg, tmp_path / "b", jobs=2)
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_tiny_corpus_split(tiny_corpus):
    manifest = load_manifest(tiny_corpus)
    assert len(manifest) == 20
    counts = manifest.counts()
    assert counts[("train", "normal")] == 8
    assert counts[("train", "whisper")] == 8
    assert counts[("test", "normal")] == 2
    assert counts[("test", "whisper")] == 2

    speakers = {split: {e.utterance_id.split("_")[0] for e in manifest.split(split)} for split in ("train", "test")}
    assert speakers["train"]
    assert speakers["test"]
    assert not speakers["train"] & speakers["test"]


def test_voiced_frame_rates():
    cfg = SynthConfig(n_per_class=4)
    normal = [voiced_frame_rate(synth_utterance(cfg, "normal", i), cfg) for i in range(4)]
    whisper = [voiced_frame_rate(synth_utterance(cfg, "whisper", i), cfg) for i in range(4)]
    assert np.mean(normal) >= 0.9
    assert np.mean(whisper) <= 0.1


def test_levels_overlap_between_classes():
    cfg = SynthConfig(n_per_class=10)
    rms = {}
    for label in ("normal", "whisper"):
        rms[label] = []
        for i in range(10):
            clip = synth_utterance(cfg, label, i)
            active = clip.samples[cfg.n_pad : len(clip) - cfg.n_pad]
            rms[label].append(np.sqrt(np.mean(active ** 2)))
    assert max(rms["normal"]) > min(rms["whisper"])
    assert max(rms["whisper"]) > min(rms["normal"])


@pytest.mark.parametrize(
    "kwargs",
    [
        {"f0_range": (40.0, 100.0)},
        {"duration_s": 0.4, "silence_pad_s": 0.25},
        {"formant_bw_scale": 0.5},
        {"n_per_class": 0},
        {"train_fraction": 0.0},
        {"constant_f0": 300.0},
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        SynthConfig(**kwargs)


def test_unknown_label():
    with pytest.raises(ConfigError):
        synth_utterance(SynthConfig(), "shouted", 0)
