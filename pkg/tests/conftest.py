import os
import sys

import numpy as np
import pytest

# Ensure repo root is importable when running pytest from anywhere
PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

from diffgan_tts.config import ModelConfig, TrainConfig
from diffgan_tts.synthdata import CorpusSpec, generate_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    return ModelConfig.from_preset("tiny")


@pytest.fixture
def small_spec():
    return CorpusSpec(n_speakers=2, n_tokens=24, n_utterances=6, min_frames=10, max_frames=18, mel_bins=16, seed=3)


@pytest.fixture
def small_corpus(small_spec):
    utts, _ = generate_corpus(small_spec)
    return utts


@pytest.fixture
def train_cfg(tiny_cfg):
    return TrainConfig(model=tiny_cfg, steps=2, batch_size=2, seed=5, checkpoint_interval=1, log_interval=1,
                       stage1_iters=2)
