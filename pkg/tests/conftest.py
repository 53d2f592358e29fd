import numpy as np
import pytest

from avunit.corpus import CorpusConfig, make_parallel_corpus
from avunit.modeling import TrainConfig


def tiny_corpus_config(**overrides) -> CorpusConfig:
    """Small corpus for unit tests: seconds to generate, minutes nowhere."""
    base = dict(
        languages=2,
        speakers=4,
        train_sentences=24,
        valid_sentences=10,
        test_sentences=10,
        sentence_length=(3, 5),
        lexicon_size=12,
    )
    base.update(overrides)
    return CorpusConfig(**base)


@pytest.fixture(scope="session")
def tiny_corpus():
    return make_parallel_corpus(tiny_corpus_config())


@pytest.fixture(scope="session")
def tiny_train_config():
    return TrainConfig(steps=60, warmup_steps=6, peak_lr=2e-3, batch_size=8, seed=0)


def rng(seed=0):
    return np.random.default_rng(seed)
