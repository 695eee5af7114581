"""Zipf exponent recovery from the head of a sorted probability vector.

Fits the exponent by least squares on log-ratios of adjacent probabilities,
which cancels the normalizer: with t_i = log((i+1)/i) and
b_i = log(p_i / p_{i+1}), the estimate is sum(t_i*b_i) / sum(t_i^2).
The log base cancels too, so natural logs are used throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

# Entries below this are clamped up before taking ratios, so hard-zeroed
# logits do not produce infinite log-ratios.
PROB_FLOOR = 1e-12

# Estimates at or below s = 1 + EPSILON_FLOOR get their epsilon clamped so
# downstream closed forms (which divide by epsilon) stay finite.
EPSILON_FLOOR = 1e-3


@dataclass(frozen=True)
class ExponentEstimate:
    """Estimated exponent; ``epsilon_hat`` is ``s_hat - 1`` clamped to the floor."""

    s_hat: float
    epsilon_hat: float
    m_used: int


def estimate_zipf_exponent(
    probs_desc: Sequence[float] | np.ndarray,
    m: int = 100,
    *,
    epsilon_floor: float = EPSILON_FLOOR,
    prob_floor: float = PROB_FLOOR,
) -> ExponentEstimate:
    """Estimate the Zipf exponent from the top ``m`` entries of a descending
    probability vector.

    The input need not be normalized (ratios cancel any common scale), but it
    must be sorted nonincreasing; this is asserted rather than fixed silently
    because callers own the sort order.
    """
    if m < 2:
        raise ValueError(f"m must be >= 2, got {m}")
    p = np.asarray(probs_desc, dtype=np.float64)
    m_used = min(int(m), p.shape[0])
    if m_used < 2:
        raise ValueError("need at least two probabilities to form a ratio")
    head = p[:m_used]
    if np.any(head < 0) or not np.all(np.isfinite(head)):
        raise ValueError("probabilities must be finite and nonnegative")
    head = np.maximum(head, prob_floor)
    if np.any(np.diff(head) > 0):
        raise ValueError("probabilities must be sorted nonincreasing")
    i = np.arange(1, m_used, dtype=np.float64)
    t = np.log((i + 1.0) / i)
    b = np.log(head[:-1] / head[1:])
    s_hat = float(np.dot(t, b) / np.dot(t, t))
    epsilon_hat = max(s_hat - 1.0, epsilon_floor)
    return ExponentEstimate(s_hat=s_hat, epsilon_hat=epsilon_hat, m_used=m_used)
