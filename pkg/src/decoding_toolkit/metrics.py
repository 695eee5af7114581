"""Surprise-rate, perplexity, and n-gram repetition over generation records.

The per-step ``surprises_bits`` of a record hold the surprise of each emitted
token under the untruncated model distribution; context tokens occupy the
first ``context_len`` slots (surprise 0) and are excluded from every metric.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


@dataclass
class GenerationRecord:
    """Tokens plus parallel per-step surprises and optional controller traces."""

    tokens: list[int]
    surprises_bits: list[float]
    controller_traces: list | None = None
    context_len: int = 0

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.surprises_bits):
            raise ValueError("tokens and surprises_bits must be parallel")
        if self.controller_traces is not None and len(self.controller_traces) != len(
            self.tokens
        ):
            raise ValueError("controller_traces must parallel tokens when present")
        if not 0 <= self.context_len <= len(self.tokens):
            raise ValueError("context_len out of range")
        arr = np.asarray(self.surprises_bits, dtype=np.float64)
        if arr.size and (not np.all(np.isfinite(arr)) or np.any(arr < 0)):
            raise ValueError("surprises must be finite and >= 0")

    @property
    def generated_tokens(self) -> list[int]:
        return self.tokens[self.context_len :]

    @property
    def generated_surprises(self) -> list[float]:
        return self.surprises_bits[self.context_len :]

    @property
    def generated_traces(self) -> list | None:
        if self.controller_traces is None:
            return None
        return self.controller_traces[self.context_len :]


@dataclass(frozen=True)
class RepetitionReport:
    """Share of repeated n-grams: percent = (1 - distinct/total) * 100."""

    n: int
    percent: float
    distinct_count: int
    total_count: int


def surprise_rate(
    record: GenerationRecord, window: tuple[int, int] | None = None
) -> float:
    """Mean per-token surprise (bits) over the generated region.

    ``window`` is an optional (start, stop) pair of 0-based indices into the
    generated tokens, stop exclusive; the full record is the default.  This
    is the finite-sample estimate of the cross-entropy rate.
    """
    values = np.asarray(record.generated_surprises, dtype=np.float64)
    if window is not None:
        start, stop = window
        if not 0 <= start < stop <= values.shape[0]:
            raise ValueError(f"window {window} out of bounds for {values.shape[0]} tokens")
        values = values[start:stop]
    if values.shape[0] == 0:
        raise ValueError("cannot average an empty record")
    return float(values.mean())


def perplexity(rate_bits: float) -> float:
    """Perplexity corresponding to a cross-entropy rate in bits: 2**rate."""
    if not np.isfinite(rate_bits):
        raise ValueError(f"rate must be finite, got {rate_bits}")
    return float(2.0**rate_bits)


def ngram_repetition(tokens: Sequence[int], n: int) -> RepetitionReport:
    """Repetition percentage of contiguous n-grams in a token sequence."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if len(tokens) < n:
        raise ValueError(f"sequence of length {len(tokens)} has no {n}-grams")
    total = len(tokens) - n + 1
    grams = {tuple(tokens[i : i + n]) for i in range(total)}
    distinct = len(grams)
    return RepetitionReport(
        n=n,
        percent=(1.0 - distinct / total) * 100.0,
        distinct_count=distinct,
        total_count=total,
    )


def trailing_window_means(values: Sequence[float], width: int = 10) -> np.ndarray:
    """Trailing moving average; early positions use the partial window available."""
    if width < 1:
        raise ValueError(f"width must be >= 1, got {width}")
    arr = np.asarray(values, dtype=np.float64)
    csum = np.concatenate([[0.0], np.cumsum(arr)])
    idx = np.arange(1, arr.shape[0] + 1)
    lo = np.maximum(idx - width, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def csv_lines(
    meta: dict[str, object], columns: Sequence[str], rows: Iterable[Sequence[object]]
) -> str:
    """Render a CSV with '#'-prefixed metadata lines, deterministically.

    Floats are formatted with repr (shortest round-trip), so identical inputs
    yield byte-identical output.
    """
    out: list[str] = []
    for key, value in meta.items():
        out.append(f"# {key}={value}")
    out.append(",".join(columns))
    for row in rows:
        out.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    return "\n".join(out) + "\n"


def trace_rows(surprises: Sequence[float], width: int = 10) -> list[tuple[int, float, float]]:
    """(step, surprise_bits, window_mean_bits) rows; steps are 1-based."""
    means = trailing_window_means(surprises, width)
    return [
        (i + 1, float(s), float(m))
        for i, (s, m) in enumerate(zip(surprises, means))
    ]


def repetition_rows(tokens: Sequence[int], orders: Sequence[int]) -> list[tuple[int, float]]:
    """(n, percent) rows for each requested n-gram order."""
    return [(n, ngram_repetition(tokens, n).percent) for n in orders]
