"""Closed-form surprise and cross-entropy for Zipf-distributed vocabularies.

Probabilities follow the rank-frequency law p(i) = 1 / (i^s * H_{N,s}) where
H_{N,s} is the generalized harmonic number.  Temperature folds into the
exponent (s -> s/T), so every function works on the effective exponent of its
``ZipfParams`` argument.  All surprise and cross-entropy values are in bits.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

_LN2 = math.log(2.0)

# The truncated cross-entropy approximation is only valid on this exponent
# range; outside it the closed form is not a sound approximation.
S_APPROX_MIN = 1.0
S_APPROX_MAX = 1.0 / _LN2
_S_EDGE_TOL = 1e-12


@dataclass(frozen=True)
class ZipfParams:
    """Rank-frequency parameters: exponent, vocabulary size, temperature."""

    s: float
    n_vocab: int
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.n_vocab < 1:
            raise ValueError(f"n_vocab must be >= 1, got {self.n_vocab}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")

    @property
    def epsilon(self) -> float:
        """s - 1, always derived from s."""
        return self.s - 1.0

    @property
    def s_eff(self) -> float:
        """Exponent after folding in temperature (s / T)."""
        return self.s / self.temperature

    @property
    def epsilon_eff(self) -> float:
        return self.s_eff - 1.0


@dataclass(frozen=True)
class ApproxConstants:
    """Constants of the truncated cross-entropy bounds and approximation.

    ``b1, b2, b3`` parameterize the shipped approximation; ``a1, a2`` belong
    to the matching lower bound and are retained for diagnostics only.
    """

    a1: float
    a2: float
    b1: float
    b2: float
    b3: float

    @classmethod
    def from_params(cls, params: ZipfParams) -> "ApproxConstants":
        s = params.s_eff
        eps = params.epsilon_eff
        _require_approx_domain(s)
        # Shared tail term of both integral bounds of sum(log2(i)/i^s).
        tail = (math.log(3.0) + 1.0 / eps) / (eps * _LN2 * 3.0**eps)
        a1 = s * (1.0 / 2.0 ** (1.0 + eps) + tail)
        b1 = s * (1.0 / 2.0 ** (1.0 + eps) + math.log2(3.0) / 3.0 ** (1.0 + eps) + tail)
        a2 = b2 = s / (eps * _LN2)
        b3 = 1.0 + 0.7 * eps
        return cls(a1=a1, a2=a2, b1=b1, b2=b2, b3=b3)


def _require_approx_domain(s: float) -> None:
    if not (S_APPROX_MIN < s <= S_APPROX_MAX + _S_EDGE_TOL):
        raise ValueError(
            f"exponent s must lie in (1, 1/ln 2] for this approximation, got {s}"
        )


def _require_positive_epsilon(eps: float) -> None:
    if eps <= 0:
        raise ValueError(f"epsilon = s - 1 must be > 0, got {eps}")


@functools.lru_cache(maxsize=1024)
def _harmonic_cached(n: int, s: float) -> float:
    # Ascending term magnitude (n down to 1) keeps the running sum accurate.
    ranks = np.arange(n, 0, -1, dtype=np.float64)
    return float(np.sum(ranks**-s))


def harmonic_exact(n: int, s: float) -> float:
    """Generalized harmonic number H_{n,s} = sum_{i=1..n} i^-s by direct summation."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return _harmonic_cached(int(n), float(s))


def harmonic_approx(k: int, params: ZipfParams) -> float:
    """Empirical closed form for H_{k,s}: 0.7 + (1 - k^-eps) / eps."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    eps = params.epsilon_eff
    _require_positive_epsilon(eps)
    return 0.7 + (1.0 - float(k) ** -eps) / eps


def harmonic_integral_approx(n: int, params: ZipfParams) -> float:
    """Integral form of H_{n,s}: (1 - n^-eps) / eps, used by the adaptive-k rule."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    eps = params.epsilon_eff
    _require_positive_epsilon(eps)
    return (1.0 - float(n) ** -eps) / eps


def _check_rank(rank: int, n_vocab: int) -> None:
    if not 1 <= rank <= n_vocab:
        raise ValueError(f"rank must be in [1, {n_vocab}], got {rank}")


def zipf_pmf(rank: int, params: ZipfParams) -> float:
    """Probability of the token at the given 1-based frequency rank."""
    _check_rank(rank, params.n_vocab)
    s = params.s_eff
    return 1.0 / (float(rank) ** s * harmonic_exact(params.n_vocab, s))


def zipf_pmf_vector(params: ZipfParams) -> np.ndarray:
    """Full probability vector over ranks 1..n_vocab, in rank order."""
    s = params.s_eff
    ranks = np.arange(1, params.n_vocab + 1, dtype=np.float64)
    return ranks**-s / harmonic_exact(params.n_vocab, s)


def surprise_of_rank(rank: int, params: ZipfParams) -> float:
    """Surprise -log2 p(rank) = s*log2(rank) + log2(H_{N,s}), in bits."""
    _check_rank(rank, params.n_vocab)
    s = params.s_eff
    return s * math.log2(rank) + math.log2(harmonic_exact(params.n_vocab, s))


def surprise_slope(rank: float, params: ZipfParams) -> float:
    """Derivative of the surprise curve at a (continuous) rank, bits per rank."""
    if rank <= 0:
        raise ValueError(f"rank must be > 0, got {rank}")
    return params.s_eff / (rank * _LN2)


def topk_cross_entropy_exact(k: int, params: ZipfParams) -> float:
    """Cross-entropy (bits) of the renormalized top-k head against the full law.

    Direct summation of (s / H_{k,s}) * sum_{i<=k} log2(i)/i^s + log2(H_{N,s}).
    """
    _check_rank(k, params.n_vocab)
    s = params.s_eff
    i = np.arange(1, k + 1, dtype=np.float64)
    head = float(np.sum(np.log2(i) * i**-s))
    return s * head / harmonic_exact(k, s) + math.log2(
        harmonic_exact(params.n_vocab, s)
    )


def topk_cross_entropy_approx(
    k: int, params: ZipfParams, consts: ApproxConstants | None = None
) -> float:
    """Closed-form approximation of the top-k cross-entropy, bits.

    Valid for 1 < s <= 1/ln 2 and k >= 2; at k = 1 the denominator
    b3*k^eps - 1 degenerates, so callers should use the exact sum there.
    """
    s = params.s_eff
    eps = params.epsilon_eff
    _require_approx_domain(s)
    if k < 2:
        raise ValueError(f"k must be >= 2 for the closed form, got {k}")
    if consts is None:
        consts = ApproxConstants.from_params(params)
    b1, b2, b3 = consts.b1, consts.b2, consts.b3
    frac = (b2 * b3 * (math.log(k) + 1.0 / eps) - b1) / (b1 * (b3 * float(k) ** eps - 1.0))
    return (b1 * eps / b3) * (1.0 - frac) + math.log2(
        harmonic_exact(params.n_vocab, s)
    )


def _topp_validity_limit(params: ZipfParams) -> tuple[float, float, float]:
    """Returns (b, H_N, upper limit on p) for the nucleus closed forms."""
    eps = params.epsilon_eff
    _require_positive_epsilon(eps)
    b = 1.0 + 0.7 * eps
    h_n = harmonic_exact(params.n_vocab, params.s_eff)
    return b, h_n, min(1.0, b / (eps * h_n))


def topp_rank(p: float, params: ZipfParams) -> int:
    """Approximate nucleus size for mass p: round((b - eps*p*H_N)^(-1/eps))."""
    eps = params.epsilon_eff
    b, h_n, limit = _topp_validity_limit(params)
    if not 0.0 < p < limit:
        raise ValueError(f"p must be in (0, {limit:.6g}) for these parameters, got {p}")
    radicand = b - eps * p * h_n
    k = radicand ** (-1.0 / eps)
    # Round half up, then clamp into the vocabulary.
    return int(min(max(math.floor(k + 0.5), 1), params.n_vocab))


def topp_surprise_approx(p: float, params: ZipfParams) -> float:
    """Near-linear approximation of the surprise at the nucleus boundary, bits."""
    eps = params.epsilon_eff
    b, h_n, limit = _topp_validity_limit(params)
    if not 0.0 < p < limit:
        raise ValueError(f"p must be in (0, {limit:.6g}) for these parameters, got {p}")
    return (
        ((1.0 + eps) / (b * _LN2)) * h_n * p
        - ((1.0 + eps) / eps) * math.log2(b)
        + math.log2(h_n)
    )


def topp_cross_entropy_approx(p: float, params: ZipfParams) -> float:
    """Closed-form approximation of the nucleus cross-entropy, bits.

    Valid for 1 < s <= 1/ln 2 and eps*p*H_N < 1.
    """
    s = params.s_eff
    eps = params.epsilon_eff
    _require_approx_domain(s)
    h_n = harmonic_exact(params.n_vocab, s)
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must be in (0, 1], got {p}")
    if eps * p * h_n >= 1.0:
        raise ValueError(
            f"eps*p*H_N must be < 1 for the closed form, got {eps * p * h_n:.6g}"
        )
    return (s / (2.0 * _LN2)) * (p * h_n + eps * p * p * h_n * h_n) + math.log2(h_n)


def nucleus_rank_exact(p: float, params: ZipfParams) -> int:
    """Smallest k whose cumulative rank-law mass reaches p (brute cumulative sum)."""
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must be in (0, 1], got {p}")
    cum = np.cumsum(zipf_pmf_vector(params))
    # searchsorted may land one past the end when p == 1 and the float sum
    # falls a hair short of it; clamp back into the vocabulary.
    return min(int(np.searchsorted(cum, p, side="left")) + 1, params.n_vocab)


def topp_cross_entropy_exact(p: float, params: ZipfParams) -> float:
    """Brute-force nucleus cross-entropy: truncate at the exact cumulative
    rank, renormalize, and sum -q_i*log2(p_i) directly."""
    k = nucleus_rank_exact(p, params)
    probs = zipf_pmf_vector(params)
    head = probs[:k]
    q = head / head.sum()
    return float(-np.sum(q * np.log2(head)))
