from pathlib import Path

import numpy as np
import pytest

from decoding_toolkit import ZipfParams, ZipfSource, load_token_text, train_ngram
from decoding_toolkit.distributions import TokenDistribution

CORPUS_PATH = Path(__file__).resolve().parent.parent / "src/decoding_toolkit/data/corpus.txt"
STDIO_DOUBLE = Path(__file__).resolve().parent / "stdio_double.py"


@pytest.fixture(scope="session")
def zipf_params() -> ZipfParams:
    return ZipfParams(s=1.1, n_vocab=50000)


@pytest.fixture(scope="session")
def zipf_src(zipf_params) -> ZipfSource:
    return ZipfSource(zipf_params)


@pytest.fixture(scope="session")
def corpus_ids() -> list[int]:
    ids, _ = load_token_text(CORPUS_PATH)
    return ids


@pytest.fixture(scope="session")
def ngram_model(corpus_ids):
    return train_ngram(corpus_ids, order=3)


def make_dist(probs, ids=None, n_vocab=None) -> TokenDistribution:
    probs = np.asarray(probs, dtype=np.float64)
    if ids is None:
        ids = np.arange(probs.shape[0])
    return TokenDistribution(
        token_ids=np.asarray(ids),
        probs=probs,
        n_vocab_full=n_vocab if n_vocab is not None else probs.shape[0],
    )
