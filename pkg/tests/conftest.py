import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from voicefp.audio_io import AudioClip
from voicefp.corpus import CorpusConfig, generate_corpus, sample_identities


def sine(freq=440.0, seconds=1.0, rate=16000, amp=0.5, phase=0.0):
    t = np.arange(int(round(seconds * rate))) / rate
    return AudioClip(amp * np.sin(2 * np.pi * freq * t + phase), rate, f"sine{freq}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """5 identities, 2 clips per ordered pair, 4 real clips each, 2 s clips."""
    cfg = CorpusConfig(n_identities=5, clips_per_pair=2, real_per_identity=4, duration_s=2.0, seed=3)
    ids = sample_identities(cfg.n_identities, cfg.seed)
    out = tmp_path_factory.mktemp("corpus")
    return generate_corpus(ids, out, cfg), ids, cfg
