"""Probability-vector plumbing shared by every decoder.

A ``TokenDistribution`` is always sorted by descending probability with a
parallel token-id map, normalized to 1, and strictly positive.  Filters
return new distributions; sampling draws by inverse CDF from a single
uniform variate so runs are reproducible given a seeded generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SUM_TOL = 1e-9

PENALTY_SYMMETRIC = "symmetric"
PENALTY_NEGATIVE_ONLY = "negative_only"


@dataclass(frozen=True, eq=False)
class TokenDistribution:
    """Normalized next-token distribution, sorted nonincreasing by probability."""

    token_ids: np.ndarray
    probs: np.ndarray
    n_vocab_full: int

    def __post_init__(self) -> None:
        ids = np.asarray(self.token_ids, dtype=np.int64)
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "token_ids", ids)
        object.__setattr__(self, "probs", probs)
        if ids.ndim != 1 or probs.ndim != 1 or ids.shape[0] != probs.shape[0]:
            raise ValueError("token_ids and probs must be parallel 1-d sequences")
        if ids.shape[0] < 1:
            raise ValueError("distribution must keep at least one token")
        if np.unique(ids).shape[0] != ids.shape[0]:
            raise ValueError("token_ids must be unique")
        if np.any(probs <= 0.0) or np.any(probs > 1.0 + SUM_TOL):
            raise ValueError("probabilities must lie in (0, 1]")
        if np.any(np.diff(probs) > 0.0):
            raise ValueError("probabilities must be sorted nonincreasing")
        total = float(probs.sum())
        if abs(total - 1.0) > SUM_TOL:
            raise ValueError(f"probabilities must sum to 1 +/- {SUM_TOL}, got {total!r}")
        if self.n_vocab_full < ids.shape[0]:
            raise ValueError("n_vocab_full cannot be smaller than the kept set")

    def __len__(self) -> int:
        return int(self.token_ids.shape[0])


@dataclass(frozen=True, eq=False)
class LogitVector:
    """Pre-softmax scores with their token ids."""

    token_ids: np.ndarray
    scores: np.ndarray

    def __post_init__(self) -> None:
        ids = np.asarray(self.token_ids, dtype=np.int64)
        scores = np.asarray(self.scores, dtype=np.float64)
        object.__setattr__(self, "token_ids", ids)
        object.__setattr__(self, "scores", scores)
        if ids.ndim != 1 or scores.ndim != 1 or ids.shape[0] != scores.shape[0]:
            raise ValueError("token_ids and scores must be parallel 1-d sequences")
        if np.unique(ids).shape[0] != ids.shape[0]:
            raise ValueError("token_ids must be unique")
        if np.any(np.isnan(scores)):
            raise ValueError("scores must not contain NaN")


@dataclass(frozen=True)
class SampleOutcome:
    """One drawn token with its surprise in the sampled distribution and in
    the untruncated model distribution (equal when no model dist is given)."""

    token_id: int
    surprise_bits: float
    surprise_model_bits: float


def softmax_to_distribution(logits: LogitVector, temperature: float = 1.0) -> TokenDistribution:
    """Convert scores to a sorted, normalized distribution at the given temperature.

    Scores that underflow to zero mass are dropped from the kept set;
    ``n_vocab_full`` still records the original vocabulary size.
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    scores = logits.scores / temperature
    finite = np.isfinite(scores)
    if not np.any(finite):
        raise ValueError("softmax needs at least one finite score")
    peak = float(np.max(scores[finite]))
    weights = np.exp(scores - peak)  # -inf maps to 0
    keep = weights > 0.0
    weights = weights[keep]
    ids = logits.token_ids[keep]
    probs = weights / weights.sum()
    order = np.argsort(-probs, kind="stable")
    return TokenDistribution(
        token_ids=ids[order], probs=probs[order], n_vocab_full=logits.token_ids.shape[0]
    )


def top_k_filter(dist: TokenDistribution, k: int) -> TokenDistribution:
    """Keep the k most probable tokens and renormalize; k >= len is the identity."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k >= len(dist):
        return dist
    head = dist.probs[:k]
    return TokenDistribution(
        token_ids=dist.token_ids[:k],
        probs=head / head.sum(),
        n_vocab_full=dist.n_vocab_full,
    )


def top_p_filter(dist: TokenDistribution, p: float) -> TokenDistribution:
    """Keep the smallest prefix with cumulative mass >= p and renormalize.

    The boundary token is included (cumulative >= p, not >); p = 1 keeps
    everything.
    """
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must be in (0, 1], got {p}")
    cum = np.cumsum(dist.probs)
    keep = int(np.searchsorted(cum, p, side="left")) + 1
    if keep >= len(dist):
        return dist
    head = dist.probs[:keep]
    return TokenDistribution(
        token_ids=dist.token_ids[:keep],
        probs=head / head.sum(),
        n_vocab_full=dist.n_vocab_full,
    )


def repetition_penalty(
    logits: LogitVector,
    generated: set[int] | frozenset[int],
    theta: float,
    mode: str = PENALTY_SYMMETRIC,
) -> LogitVector:
    """Penalize already-generated tokens in score space.

    Negative scores of generated tokens are multiplied by theta; in the
    default symmetric mode positive scores are divided by theta as well, so
    the penalty always lowers the token's probability regardless of sign.
    Membership is all that matters; occurrence counts are ignored.
    """
    if theta < 1.0:
        raise ValueError(f"theta must be >= 1, got {theta}")
    if mode not in (PENALTY_SYMMETRIC, PENALTY_NEGATIVE_ONLY):
        raise ValueError(f"unknown penalty mode {mode!r}")
    if theta == 1.0 or not generated:
        return logits
    scores = logits.scores.copy()
    hit = np.isin(logits.token_ids, np.fromiter(generated, dtype=np.int64))
    neg = hit & (scores < 0.0)
    scores[neg] = scores[neg] * theta
    if mode == PENALTY_SYMMETRIC:
        pos = hit & (scores > 0.0)
        scores[pos] = scores[pos] / theta
    return LogitVector(token_ids=logits.token_ids, scores=scores)


def sample(
    dist: TokenDistribution,
    rng: np.random.Generator,
    model_dist: TokenDistribution | None = None,
) -> SampleOutcome:
    """Draw one token by inverse CDF over the sorted probabilities.

    ``model_dist``, when given, supplies the untruncated distribution used
    for the model-surprise field; without it both surprise fields are equal.
    """
    u = rng.random()
    cum = np.cumsum(dist.probs)
    idx = int(np.searchsorted(cum, u, side="right"))
    if idx >= len(dist):  # guard the u ~ 1 float edge
        idx = len(dist) - 1
    token = int(dist.token_ids[idx])
    surprise = -math.log2(float(dist.probs[idx])) + 0.0  # +0.0 normalizes -0.0
    if model_dist is None or model_dist is dist:
        model_surprise = surprise
    else:
        pos = np.flatnonzero(model_dist.token_ids == token)
        if pos.shape[0] == 0:
            raise ValueError(f"sampled token {token} missing from model distribution")
        model_surprise = -math.log2(float(model_dist.probs[pos[0]])) + 0.0
    return SampleOutcome(
        token_id=token, surprise_bits=surprise, surprise_model_bits=model_surprise
    )
