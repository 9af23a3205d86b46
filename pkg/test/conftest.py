#!/usr/bin/env python3

import sys
from pathlib import Path

# 添加父目录到Python路径
sys.path.insert(0, str(Path(__file__).parent.parent))

import pytest

from synth import SynthConfig, generate_corpus


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """10 + 10 one-second utterances at 16 kHz: 16 train / 4 test."""
    out = tmp_path_factory.mktemp("tiny_corpus")
    cfg = SynthConfig(n_per_class=10, duration_s=1.0, seed=3)
    generate_corpus(cfg, out)
    return out / "manifest.csv"
