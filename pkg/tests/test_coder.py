import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decoding_toolkit.coder import (
    CodeStream,
    decode,
    encode,
    read_codestream,
    write_codestream,
    _quantize,
)
from decoding_toolkit.distributions import TokenDistribution
from decoding_toolkit.metrics import surprise_rate
from decoding_toolkit.mirostat import FixedPolicy, POLICY_PURE, generate
from tests.conftest import make_dist


class StaticModel:
    """Prefix-independent source over an explicit probability vector."""

    def __init__(self, probs):
        probs = np.asarray(probs, dtype=np.float64)
        self.n_vocab = probs.shape[0]
        order = np.argsort(-probs, kind="stable")
        self._dist = TokenDistribution(
            token_ids=np.arange(self.n_vocab)[order],
            probs=probs[order] / probs.sum(),
            n_vocab_full=self.n_vocab,
        )

    def next_distribution(self, prefix):
        return self._dist


def random_model_and_tokens(rng, max_vocab=24, max_len=60):
    n_vocab = int(rng.integers(2, max_vocab))
    probs = rng.dirichlet(np.ones(n_vocab) * rng.uniform(0.3, 3.0))
    probs = np.maximum(probs, 1e-9)
    model = StaticModel(probs / probs.sum())
    n = int(rng.integers(0, max_len))
    tokens = [int(t) for t in rng.choice(n_vocab, size=n, p=probs / probs.sum())]
    return model, tokens


class TestQuantize:
    def test_floor_of_one_count(self):
        cum = _quantize(np.array([1 - 1e-15, 1e-15]))
        freqs = np.diff(cum)
        assert freqs.min() >= 1

    def test_total_close_to_resolution(self):
        cum = _quantize(np.array([0.5, 0.3, 0.2]))
        assert abs(int(cum[-1]) - (1 << 32)) <= 3


class TestRoundTrip:
    def test_empty(self, zipf_src):
        stream = encode([], zipf_src)
        assert stream.n_bits == 0
        assert decode(stream, zipf_src, 0) == []
        assert stream.bits_per_token == 0.0

    def test_single_token(self, zipf_src):
        stream = encode([5], zipf_src)
        assert decode(stream, zipf_src, 1) == [5]

    def test_random_fixtures(self):
        rng = np.random.default_rng(123)
        for _ in range(60):
            model, tokens = random_model_and_tokens(rng)
            stream = encode(tokens, model)
            assert decode(stream, model, len(tokens)) == tokens

    @given(st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_roundtrip_property(self, seed):
        rng = np.random.default_rng(seed)
        model, tokens = random_model_and_tokens(rng)
        stream = encode(tokens, model)
        assert decode(stream, model, len(tokens)) == tokens

    def test_long_ngram_sample(self, ngram_model):
        record = generate(ngram_model, FixedPolicy(POLICY_PURE), 10_000, seed=3)
        tokens = record.generated_tokens
        stream = encode(tokens, ngram_model)
        assert decode(stream, ngram_model, len(tokens)) == tokens


class TestRateIdentity:
    def test_near_deterministic_model_overhead(self):
        probs = np.full(4, 1e-9)
        probs[0] = 1.0 - 3e-9
        model = StaticModel(probs)
        stream = encode([0] * 1000, model)
        assert stream.bits_per_token <= 0.1

    def test_zipf_sample_tracks_surprise_rate(self, zipf_src):
        record = generate(zipf_src, FixedPolicy(POLICY_PURE), 300, seed=9)
        tokens = record.generated_tokens
        stream = encode(tokens, zipf_src)
        diff = stream.bits_per_token - surprise_rate(record)
        assert -0.001 <= diff <= 0.06


class TestErrors:
    def test_token_outside_vocab(self, zipf_src):
        with pytest.raises(ValueError, match="vocabulary"):
            encode([50000], zipf_src)

    def test_token_without_mass(self):
        class Gappy:
            n_vocab = 3
            _dist = make_dist([0.6, 0.4], ids=[0, 2], n_vocab=3)

            def next_distribution(self, prefix):
                return self._dist

        with pytest.raises(ValueError, match="no probability"):
            encode([1], Gappy())


class TestFileFormat:
    def test_write_read_roundtrip(self, tmp_path, zipf_src):
        tokens = [0, 3, 1, 4, 1]
        stream = encode(tokens, zipf_src)
        path = tmp_path / "sample.mirc"
        write_codestream(path, stream, zipf_src.n_vocab)
        loaded, n_vocab = read_codestream(path)
        assert n_vocab == zipf_src.n_vocab
        assert loaded.n_tokens == len(tokens)
        # Byte padding may add up to 7 trailing zero bits; decoding is
        # unaffected because the decoder treats past-the-end bits as zeros.
        assert decode(loaded, zipf_src, len(tokens)) == tokens

    def test_header_is_16_bytes(self, tmp_path, zipf_src):
        stream = encode([], zipf_src)
        path = tmp_path / "empty.mirc"
        write_codestream(path, stream, zipf_src.n_vocab)
        assert path.stat().st_size == 16

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.mirc"
        path.write_bytes(b"XXXX" + b"\x00" * 12)
        with pytest.raises(ValueError, match="magic"):
            read_codestream(path)


class TestCodeStream:
    def test_bits_per_token(self):
        stream = CodeStream(bits=b"\xff", n_bits=6, n_tokens=3)
        assert stream.bits_per_token == 2.0
