import numpy as np
import pytest

from decoding_toolkit.mirostat import (
    DEFAULT_S_HAT,
    FixedPolicy,
    MirostatState,
    POLICY_PURE,
    POLICY_TOP_K,
    POLICY_TOP_P,
    controlled_per_step_surprises,
    controlled_surprise_rate,
    generate,
    mirostat_avg_step,
    mirostat_k_from_mu,
    mirostat_step,
    mirostat2_step,
)
from decoding_toolkit.models import write_replay, open_replay
from tests.conftest import make_dist

STEP_FNS = {"v1": mirostat_step, "v2": mirostat2_step, "avg": mirostat_avg_step}


def run_controller(source, state, n_tokens, seed):
    """Drive step functions directly, returning outcomes and traces."""
    rng = np.random.default_rng(seed)
    step = STEP_FNS[state.variant]
    outcomes, traces = [], []
    tokens: list[int] = []
    for _ in range(n_tokens):
        dist = source.next_distribution(tokens)
        outcome, trace, state = step(dist, state, rng)
        outcomes.append(outcome)
        traces.append(trace)
        tokens.append(outcome.token_id)
    return outcomes, traces, state


class TestState:
    def test_factories_double_tau(self):
        for ctor in (MirostatState.v1, MirostatState.v2, MirostatState.avg):
            state = ctor(3.0)
            assert state.mu == 6.0 and state.tau == 3.0 and state.eta == 1.0

    def test_validation(self):
        with pytest.raises(ValueError):
            MirostatState(tau=0.0, mu=1.0)
        with pytest.raises(ValueError):
            MirostatState(tau=1.0, mu=1.0, eta=0.0)
        with pytest.raises(ValueError):
            MirostatState(tau=1.0, mu=1.0, variant="v9")
        with pytest.raises(ValueError):
            MirostatState(tau=1.0, mu=1.0, error_source="guess")


class TestKFromMu:
    def test_pinned_example(self):
        # (0.1 * 2^4 / (1 - 50000^-0.1))^(1/1.1) = 2.233..., rounds to 2.
        assert mirostat_k_from_mu(1.1, 4.0, 50000) == 2

    def test_clamps_to_one_for_small_mu(self):
        assert mirostat_k_from_mu(1.1, -40.0, 50000) == 1

    def test_clamps_to_vocab_for_huge_mu(self):
        assert mirostat_k_from_mu(1.1, 4000.0, 50000) == 50000

    def test_nondecreasing_in_mu(self):
        ks = [mirostat_k_from_mu(1.1, mu, 50000) for mu in np.linspace(0, 16, 40)]
        assert ks == sorted(ks)

    def test_single_token_vocab(self):
        assert mirostat_k_from_mu(1.1, 5.0, 1) == 1

    def test_rejects_nonfinite_mu(self):
        with pytest.raises(ValueError):
            mirostat_k_from_mu(1.1, float("inf"), 100)

    def test_rejects_exponent_at_or_below_one(self):
        with pytest.raises(ValueError):
            mirostat_k_from_mu(1.0, 4.0, 100)

    def test_accepts_floor_clamped_estimate(self):
        # 1 + 1e-3 - 1 loses a few ulps; the check must tolerate that.
        assert mirostat_k_from_mu(1.0 + 1e-3, 4.0, 100) >= 1


class TestV1Step:
    def test_degenerate_distribution_raises_mu(self):
        dist = make_dist([1.0], ids=[3])
        state = MirostatState.v1(2.0)
        outcome, trace, after = mirostat_step(dist, state, np.random.default_rng(0))
        assert outcome.token_id == 3
        assert outcome.surprise_bits == 0.0
        assert trace.s_hat == DEFAULT_S_HAT  # estimator fallback on first step
        assert after.mu == state.mu + state.eta * state.tau

    def test_fallback_reuses_previous_estimate(self):
        state = MirostatState.v1(2.0, s_hat_prev=1.37)
        _, trace, _ = mirostat_step(make_dist([1.0]), state, np.random.default_rng(0))
        assert trace.s_hat == 1.37

    def test_trace_bookkeeping_exact(self, zipf_src):
        _, traces, _ = run_controller(zipf_src, MirostatState.v1(3.0), 50, seed=1)
        for trace in traces:
            expected = trace.mu_before - 1.0 * (trace.surprise_bits - 3.0)
            assert trace.mu_after == expected  # bitwise

    def test_k_bounds(self, zipf_src):
        _, traces, _ = run_controller(zipf_src, MirostatState.v1(4.0), 80, seed=2)
        assert all(1 <= t.k_used <= 50000 for t in traces)

    def test_state_progression(self, zipf_src):
        outcomes, _, final = run_controller(zipf_src, MirostatState.v1(3.0), 30, seed=3)
        assert final.step_count == 30
        assert final.surprise_sum_bits == pytest.approx(
            sum(o.surprise_bits for o in outcomes)
        )

    def test_variant_mismatch_rejected(self, zipf_src):
        dist = zipf_src.next_distribution([])
        with pytest.raises(ValueError):
            mirostat_step(dist, MirostatState.v2(3.0), np.random.default_rng(0))


class TestV2Step:
    def test_threshold_keeps_only_low_surprise(self):
        dist = make_dist([0.5, 0.3, 0.2])
        state = MirostatState(tau=1.0, mu=1.5, variant="v2")
        outcome, trace, _ = mirostat2_step(dist, state, np.random.default_rng(0))
        # Surprises are (1.0, 1.74, 2.32); only the first passes mu = 1.5.
        assert trace.k_used == 1
        assert outcome.token_id == 0
        assert outcome.surprise_bits == 0.0  # renormalized singleton
        assert outcome.surprise_model_bits == pytest.approx(1.0)

    def test_no_truncation_when_mu_large(self):
        dist = make_dist([0.5, 0.3, 0.2])
        state = MirostatState(tau=1.0, mu=10.0, variant="v2")
        _, trace, _ = mirostat2_step(dist, state, np.random.default_rng(0))
        assert trace.k_used == 3

    def test_modal_fallback_when_mu_below_minimum(self):
        dist = make_dist([0.5, 0.3, 0.2])
        state = MirostatState(tau=1.0, mu=0.25, variant="v2")
        _, trace, _ = mirostat2_step(dist, state, np.random.default_rng(0))
        assert trace.k_used == 1

    def test_boundary_token_kept_at_equality(self):
        dist = make_dist([0.5, 0.25, 0.25])
        state = MirostatState(tau=1.0, mu=2.0, variant="v2")
        _, trace, _ = mirostat2_step(dist, state, np.random.default_rng(0))
        assert trace.k_used == 3  # surprise exactly 2.0 is not truncated


class TestAvgStep:
    def test_first_step_matches_v2(self, zipf_src):
        dist = zipf_src.next_distribution([])
        out2, tr2, _ = mirostat2_step(dist, MirostatState.v2(3.0), np.random.default_rng(7))
        outa, tra, _ = mirostat_avg_step(dist, MirostatState.avg(3.0), np.random.default_rng(7))
        assert out2.token_id == outa.token_id
        assert tra.surprise_bits == out2.surprise_bits  # mean of one value
        assert tra.mu_after == tr2.mu_after

    def test_running_mean_maintained_exactly(self, zipf_src):
        outcomes, traces, final = run_controller(zipf_src, MirostatState.avg(3.0), 40, seed=4)
        observed = [o.surprise_bits for o in outcomes]
        assert final.surprise_sum_bits == pytest.approx(sum(observed), rel=1e-12)
        for n, trace in enumerate(traces, start=1):
            assert trace.surprise_bits == pytest.approx(np.mean(observed[:n]), rel=1e-9)

    def test_per_step_reconstruction(self, zipf_src):
        record = generate(zipf_src, MirostatState.avg(3.0), 40, seed=5)
        rebuilt = controlled_per_step_surprises(record, "avg")
        direct, _, _ = run_controller(zipf_src, MirostatState.avg(3.0), 40, seed=5)
        assert np.allclose(rebuilt, [o.surprise_bits for o in direct], atol=1e-9)


class TestFeedbackDirection:
    @pytest.mark.parametrize("variant", ["v1", "v2", "avg"])
    def test_error_sign_moves_mu(self, zipf_src, variant):
        _, traces, _ = run_controller(
            zipf_src, getattr(MirostatState, variant)(3.0), 60, seed=6
        )
        for trace in traces:
            if trace.surprise_bits > 3.0:
                assert trace.mu_after < trace.mu_before
            elif trace.surprise_bits < 3.0:
                assert trace.mu_after > trace.mu_before


class TestControlLite:
    @pytest.mark.parametrize("variant", ["v1", "v2"])
    def test_sampled_surprise_tracks_target(self, zipf_src, variant):
        errors = []
        for seed in range(3):
            _, traces, _ = run_controller(
                zipf_src, getattr(MirostatState, variant)(3.0), 150, seed=seed
            )
            mean = np.mean([t.surprise_bits for t in traces[25:]])
            errors.append(abs(mean - 3.0))
        assert max(errors) <= 0.25

    def test_model_error_source_tracks_model_surprise(self, zipf_src):
        # With the model error source, the controller drives the surprise
        # under the untruncated law; tau must exceed the rank-1 surprise
        # (2.85 bits here) to be reachable.
        rng = np.random.default_rng(0)
        state = MirostatState(tau=4.0, mu=8.0, variant="v1", error_source="model")
        model_surprises = []
        dist = zipf_src.next_distribution([])
        for _ in range(150):
            outcome, trace, state = mirostat_step(dist, state, rng)
            model_surprises.append(outcome.surprise_model_bits)
            assert trace.surprise_bits == outcome.surprise_model_bits
        assert abs(np.mean(model_surprises[25:]) - 4.0) <= 0.25


class TestGenerate:
    def test_zero_tokens(self, zipf_src):
        record = generate(zipf_src, FixedPolicy(POLICY_TOP_K, 5), 0, seed=0)
        assert record.tokens == [] and record.surprises_bits == []

    def test_greedy_is_seed_free(self, ngram_model):
        a = generate(ngram_model, FixedPolicy(POLICY_TOP_K, 1), 30, seed=1)
        b = generate(ngram_model, FixedPolicy(POLICY_TOP_K, 1), 30, seed=999)
        assert a.tokens == b.tokens

    def test_same_seed_bit_identical(self, zipf_src):
        a = generate(zipf_src, MirostatState.v1(3.0), 40, seed=11)
        b = generate(zipf_src, MirostatState.v1(3.0), 40, seed=11)
        assert a == b

    def test_context_recorded_and_excluded(self, ngram_model):
        record = generate(
            ngram_model, FixedPolicy(POLICY_TOP_P, 0.9), 20, seed=2, context=[4, 7]
        )
        assert record.context_len == 2
        assert record.tokens[:2] == [4, 7]
        assert record.surprises_bits[:2] == [0.0, 0.0]
        assert len(record.generated_tokens) == 20

    def test_temperature_and_penalty_compose(self, ngram_model):
        record = generate(
            ngram_model,
            FixedPolicy(POLICY_TOP_K, 20),
            30,
            seed=3,
            temperature=0.8,
            penalty_theta=1.5,
        )
        assert len(record.generated_tokens) == 30
        record2 = generate(
            ngram_model, MirostatState.v1(2.0), 30, seed=3, penalty_theta=1.5
        )
        assert len(record2.generated_tokens) == 30

    def test_penalty_reduces_repetition(self, ngram_model):
        plain = generate(ngram_model, FixedPolicy(POLICY_TOP_K, 2), 150, seed=4)
        penalized = generate(
            ngram_model, FixedPolicy(POLICY_TOP_K, 2), 150, seed=4, penalty_theta=6.0
        )
        from decoding_toolkit.metrics import ngram_repetition

        assert (
            ngram_repetition(penalized.generated_tokens, 1).percent
            < ngram_repetition(plain.generated_tokens, 1).percent
        )

    def test_stops_at_end_of_stream(self, tmp_path, zipf_src):
        rows = np.tile(np.array([0.6, 0.4]), (3, 1))
        path = tmp_path / "short.miro"
        write_replay(path, 2, [0, 0, 1], rows)
        source = open_replay(path)
        record = generate(source, FixedPolicy(POLICY_TOP_K, 1), 10, seed=0)
        assert len(record.tokens) == 3  # greedy follows the recorded modal path

    def test_surprises_are_model_surprises(self, zipf_src, zipf_params):
        from decoding_toolkit.zipf import surprise_of_rank

        record = generate(zipf_src, FixedPolicy(POLICY_TOP_K, 4), 25, seed=6)
        for token, s in zip(record.tokens, record.surprises_bits):
            assert s == pytest.approx(surprise_of_rank(token + 1, zipf_params), abs=1e-9)

    def test_controlled_rate_window(self, zipf_src):
        record = generate(zipf_src, MirostatState.v2(2.0), 120, seed=8)
        rate = controlled_surprise_rate(record, window=(25, 120), variant="v2")
        assert abs(rate - 2.0) <= 0.35

    def test_rejects_negative_tokens(self, zipf_src):
        with pytest.raises(ValueError):
            generate(zipf_src, FixedPolicy(POLICY_PURE), -1, seed=0)

    def test_fixed_policy_records_no_traces(self, zipf_src):
        record = generate(zipf_src, FixedPolicy(POLICY_TOP_K, 3), 5, seed=0)
        assert record.controller_traces is None
        with pytest.raises(ValueError):
            controlled_surprise_rate(record)


class TestTruncationSoundness:
    @pytest.mark.parametrize("variant", ["v2", "avg"])
    def test_kept_tokens_within_threshold(self, zipf_src, zipf_params, variant):
        from decoding_toolkit.zipf import surprise_of_rank

        _, traces, _ = run_controller(
            zipf_src, getattr(MirostatState, variant)(3.0), 100, seed=9
        )
        for trace in traces:
            boundary = surprise_of_rank(trace.k_used, zipf_params)
            assert boundary <= trace.mu_before + 1e-9 or trace.k_used == 1
