"""Feedback-controlled sampling: mirostat, mirostat 2, and mirostat-average.

All three drive a per-step surprise statistic toward a target tau by updating
a maximum-surprise variable mu <- mu - eta * error after each emitted token:

* v1 estimates the Zipf exponent from the head of the distribution each step
  and converts mu into an adaptive top-k cut.
* v2 truncates tokens whose surprise under the full distribution exceeds mu.
* avg truncates like v2 but computes the error from the running mean surprise
  instead of the latest token's surprise.

By default the error uses the surprise of the sampled token within the
renormalized truncated distribution (the distribution actually sampled);
``error_source="model"`` switches it to the surprise under the untruncated
distribution.  Both values are always recorded on the ``SampleOutcome``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .distributions import (
    LogitVector,
    SampleOutcome,
    TokenDistribution,
    repetition_penalty,
    sample,
    softmax_to_distribution,
    top_k_filter,
    top_p_filter,
)
from .estimator import EPSILON_FLOOR, estimate_zipf_exponent
from .metrics import GenerationRecord
from .models import EndOfStream

VARIANT_V1 = "v1"
VARIANT_V2 = "v2"
VARIANT_AVG = "avg"

ERROR_FROM_SAMPLED = "sampled"
ERROR_FROM_MODEL = "model"

# Exponent used when the per-step estimate is unavailable and there is no
# previous step to fall back on.
DEFAULT_S_HAT = 1.1

_LN2 = math.log(2.0)


@dataclass(frozen=True)
class MirostatState:
    """Controller state; advance it one token at a time via the step functions."""

    tau: float
    mu: float
    eta: float = 1.0
    m: int = 100
    step_count: int = 0
    surprise_sum_bits: float = 0.0
    variant: str = VARIANT_V1
    error_source: str = ERROR_FROM_SAMPLED
    epsilon_floor: float = EPSILON_FLOOR
    s_hat_prev: float | None = None

    def __post_init__(self) -> None:
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if self.variant not in (VARIANT_V1, VARIANT_V2, VARIANT_AVG):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.error_source not in (ERROR_FROM_SAMPLED, ERROR_FROM_MODEL):
            raise ValueError(f"unknown error_source {self.error_source!r}")

    @classmethod
    def v1(cls, tau: float, eta: float = 1.0, m: int = 100, **kw) -> "MirostatState":
        return cls(tau=tau, mu=2.0 * tau, eta=eta, m=m, variant=VARIANT_V1, **kw)

    @classmethod
    def v2(cls, tau: float, eta: float = 1.0, **kw) -> "MirostatState":
        return cls(tau=tau, mu=2.0 * tau, eta=eta, variant=VARIANT_V2, **kw)

    @classmethod
    def avg(cls, tau: float, eta: float = 1.0, **kw) -> "MirostatState":
        return cls(tau=tau, mu=2.0 * tau, eta=eta, variant=VARIANT_AVG, **kw)


@dataclass(frozen=True)
class StepTrace:
    """Bookkeeping for one controller step.

    ``surprise_bits`` is the statistic the error term consumed (for the avg
    variant that is the running mean), so
    mu_after == mu_before - eta * (surprise_bits - tau) holds exactly.
    ``k_used`` is the adaptive k for v1 and the kept-token count for v2/avg.
    """

    token_id: int
    surprise_bits: float
    mu_before: float
    mu_after: float
    k_used: int
    s_hat: float | None = None


def mirostat_k_from_mu(
    s_hat: float, mu: float, n_vocab: int, epsilon_floor: float = EPSILON_FLOOR
) -> int:
    """Adaptive top-k cut: round((eps * 2^mu / (1 - N^-eps))^(1/s)), clamped.

    Computed in log space so extreme mu cannot overflow.
    """
    if not math.isfinite(mu):
        raise ValueError(f"mu must be finite, got {mu}")
    if n_vocab < 1:
        raise ValueError(f"n_vocab must be >= 1, got {n_vocab}")
    eps = s_hat - 1.0
    # The subtraction can shave a few ulps off a floor-clamped estimate, so
    # compare with matching slack.
    if eps < epsilon_floor * (1.0 - 1e-9):
        raise ValueError(f"s_hat - 1 must be >= {epsilon_floor}, got {eps}")
    if n_vocab == 1:
        return 1
    log_k = (
        math.log(eps) + mu * _LN2 - math.log1p(-float(n_vocab) ** -eps)
    ) / s_hat
    if log_k >= math.log(n_vocab):
        return n_vocab
    if log_k < 0:
        return 1
    return min(max(int(math.floor(math.exp(log_k) + 0.5)), 1), n_vocab)


def _finish_step(
    state: MirostatState,
    outcome: SampleOutcome,
    k_used: int,
    s_hat: float | None,
) -> tuple[SampleOutcome, StepTrace, MirostatState]:
    observed = (
        outcome.surprise_bits
        if state.error_source == ERROR_FROM_SAMPLED
        else outcome.surprise_model_bits
    )
    if state.variant == VARIANT_AVG:
        statistic = (state.surprise_sum_bits + observed) / (state.step_count + 1)
    else:
        statistic = observed
    mu_after = state.mu - state.eta * (statistic - state.tau)
    trace = StepTrace(
        token_id=outcome.token_id,
        surprise_bits=statistic,
        mu_before=state.mu,
        mu_after=mu_after,
        k_used=k_used,
        s_hat=s_hat,
    )
    new_state = replace(
        state,
        mu=mu_after,
        step_count=state.step_count + 1,
        surprise_sum_bits=state.surprise_sum_bits + observed,
        s_hat_prev=s_hat if s_hat is not None else state.s_hat_prev,
    )
    return outcome, trace, new_state


def mirostat_step(
    dist_full: TokenDistribution,
    state: MirostatState,
    rng: np.random.Generator,
    model_dist: TokenDistribution | None = None,
) -> tuple[SampleOutcome, StepTrace, MirostatState]:
    """One adaptive top-k step: estimate the exponent, cut, sample, update mu."""
    if state.variant != VARIANT_V1:
        raise ValueError(f"expected a v1 state, got variant {state.variant!r}")
    try:
        est = estimate_zipf_exponent(
            dist_full.probs, state.m, epsilon_floor=state.epsilon_floor
        )
        s_hat = 1.0 + est.epsilon_hat
    except ValueError:
        # Degenerate head (e.g. single-token distribution): reuse the last
        # estimate, or the default exponent on the very first step.
        s_hat = state.s_hat_prev if state.s_hat_prev is not None else DEFAULT_S_HAT
    k = mirostat_k_from_mu(
        s_hat, state.mu, dist_full.n_vocab_full, epsilon_floor=state.epsilon_floor
    )
    truncated = top_k_filter(dist_full, k)
    outcome = sample(truncated, rng, model_dist=model_dist or dist_full)
    return _finish_step(state, outcome, k_used=len(truncated), s_hat=s_hat)


def _surprise_threshold_cut(dist_full: TokenDistribution, mu: float) -> int:
    """Tokens kept by the surprise-threshold rule: surprise <= mu, modal fallback."""
    surprises = -np.log2(dist_full.probs)  # nondecreasing
    kept = int(np.searchsorted(surprises, mu, side="right"))
    return max(kept, 1)


def mirostat2_step(
    dist_full: TokenDistribution,
    state: MirostatState,
    rng: np.random.Generator,
    model_dist: TokenDistribution | None = None,
) -> tuple[SampleOutcome, StepTrace, MirostatState]:
    """One surprise-threshold step: drop tokens more surprising than mu."""
    if state.variant != VARIANT_V2:
        raise ValueError(f"expected a v2 state, got variant {state.variant!r}")
    kept = _surprise_threshold_cut(dist_full, state.mu)
    truncated = top_k_filter(dist_full, kept)
    outcome = sample(truncated, rng, model_dist=model_dist or dist_full)
    return _finish_step(state, outcome, k_used=kept, s_hat=None)


def mirostat_avg_step(
    dist_full: TokenDistribution,
    state: MirostatState,
    rng: np.random.Generator,
    model_dist: TokenDistribution | None = None,
) -> tuple[SampleOutcome, StepTrace, MirostatState]:
    """Like the v2 step, but the error compares the running mean against tau."""
    if state.variant != VARIANT_AVG:
        raise ValueError(f"expected an avg state, got variant {state.variant!r}")
    kept = _surprise_threshold_cut(dist_full, state.mu)
    truncated = top_k_filter(dist_full, kept)
    outcome = sample(truncated, rng, model_dist=model_dist or dist_full)
    return _finish_step(state, outcome, k_used=kept, s_hat=None)


_STEP_FUNCTIONS = {
    VARIANT_V1: mirostat_step,
    VARIANT_V2: mirostat2_step,
    VARIANT_AVG: mirostat_avg_step,
}

POLICY_TOP_K = "top_k"
POLICY_TOP_P = "top_p"
POLICY_PURE = "pure"


@dataclass(frozen=True)
class FixedPolicy:
    """Non-adaptive truncation policy: top-k, top-p, or none (pure sampling)."""

    kind: str
    value: float | int | None = None

    def __post_init__(self) -> None:
        if self.kind not in (POLICY_TOP_K, POLICY_TOP_P, POLICY_PURE):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == POLICY_TOP_K and (self.value is None or int(self.value) < 1):
            raise ValueError(f"top_k needs k >= 1, got {self.value}")
        if self.kind == POLICY_TOP_P and not (
            self.value is not None and 0.0 < float(self.value) <= 1.0
        ):
            raise ValueError(f"top_p needs p in (0, 1], got {self.value}")

    def apply(self, dist: TokenDistribution) -> TokenDistribution:
        if self.kind == POLICY_TOP_K:
            return top_k_filter(dist, int(self.value))
        if self.kind == POLICY_TOP_P:
            return top_p_filter(dist, float(self.value))
        return dist


def generate(
    model,
    policy: FixedPolicy | MirostatState,
    max_tokens: int,
    seed: int | None = None,
    *,
    rng: np.random.Generator | None = None,
    context: Sequence[int] = (),
    temperature: float = 1.0,
    penalty_theta: float = 1.0,
    penalty_mode: str = "symmetric",
) -> GenerationRecord:
    """Run the per-step decode loop against any model source.

    ``temperature`` and ``penalty_theta`` distort the model distribution (in
    log space) before the policy truncates it; the recorded per-step
    surprises are always measured under the undistorted model distribution.
    Stops at ``max_tokens`` or when the model signals end of stream.
    """
    if max_tokens < 0:
        raise ValueError(f"max_tokens must be >= 0, got {max_tokens}")
    if rng is None:
        rng = np.random.default_rng(seed)
    controller = isinstance(policy, MirostatState)
    state = policy if controller else None
    step_fn = _STEP_FUNCTIONS[state.variant] if controller else None
    distorted = temperature != 1.0 or penalty_theta != 1.0

    tokens: list[int] = [int(t) for t in context]
    surprises: list[float] = [0.0] * len(tokens)
    traces: list = [None] * len(tokens)
    for _ in range(max_tokens):
        try:
            dist = model.next_distribution(tokens)
        except EndOfStream:
            break
        working = dist
        if distorted:
            logits = LogitVector(
                token_ids=dist.token_ids, scores=np.log(dist.probs)
            )
            if penalty_theta != 1.0:
                logits = repetition_penalty(
                    logits, set(tokens), penalty_theta, mode=penalty_mode
                )
            working = softmax_to_distribution(logits, temperature)
        if controller:
            outcome, trace, state = step_fn(working, state, rng, model_dist=dist)
        else:
            outcome = sample(policy.apply(working), rng, model_dist=dist)
            trace = None
        tokens.append(outcome.token_id)
        surprises.append(outcome.surprise_model_bits)
        traces.append(trace)
    return GenerationRecord(
        tokens=tokens,
        surprises_bits=surprises,
        controller_traces=traces if controller else None,
        context_len=len(context),
    )


def controlled_per_step_surprises(
    record: GenerationRecord, variant: str = VARIANT_V1
) -> list[float]:
    """Per-step surprise values the controller observed, one per generated token.

    For v1/v2 these sit directly in the traces.  Avg traces store the running
    mean M_t, so the step values are recovered as M_t*t - M_{t-1}*(t-1).
    """
    traces = record.generated_traces
    if not traces or any(t is None for t in traces):
        raise ValueError("record has no controller traces")
    if variant != VARIANT_AVG:
        return [t.surprise_bits for t in traces]
    values = []
    prev_sum = 0.0
    for t, trace in enumerate(traces, start=1):
        total = trace.surprise_bits * t
        values.append(total - prev_sum)
        prev_sum = total
    return values


def controlled_surprise_rate(
    record: GenerationRecord,
    window: tuple[int, int] | None = None,
    variant: str = VARIANT_V1,
) -> float:
    """Mean surprise the controller observed over the generated region."""
    values = controlled_per_step_surprises(record, variant)
    if window is not None:
        start, stop = window
        values = values[start:stop]
        if not values:
            raise ValueError(f"window {window} selects no steps")
    return float(np.mean(values))
