"""Next-token distribution sources for desk-scale experiments.

Four sources implement the same duck-typed contract (``n_vocab`` attribute
plus ``next_distribution(prefix) -> TokenDistribution`` returning the full
vocabulary sorted descending, deterministically per prefix):

* ``ZipfSource``      -- stationary rank-law distribution, prefix-independent.
* ``NGramModel``      -- count-based model with additive smoothing and backoff.
* ``ReplaySource``    -- recorded per-step conditionals, teacher-forced only.
* ``StdioModelClient`` -- live external model over a line-delimited JSON pipe.
"""

from __future__ import annotations

import json
import queue
import shlex
import struct
import subprocess
import threading
from collections import Counter
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .distributions import TokenDistribution
from .zipf import ZipfParams, zipf_pmf_vector

REPLAY_MAGIC = b"MIRO"
REPLAY_VERSION = 1
_REPLAY_HEADER = struct.Struct("<4sIII")  # magic, version, n_vocab, n_steps

ROW_SUM_TOL = 1e-6


class EndOfStream(Exception):
    """Raised by a source when it has no further distributions to serve."""


class ReplayFormatError(Exception):
    """Replay file failed structural validation (magic, size, normalization)."""


class ReplayPrefixError(Exception):
    """A replay was queried with a prefix that diverges from the recording."""


class StdioProtocolError(Exception):
    """The external model subprocess violated the wire protocol."""


class ModelSource(Protocol):
    n_vocab: int

    def next_distribution(self, prefix: Sequence[int]) -> TokenDistribution: ...


def _sorted_distribution(probs: np.ndarray, n_vocab: int) -> TokenDistribution:
    """Dense by-id probability row -> sorted TokenDistribution, zeros dropped."""
    ids = np.flatnonzero(probs > 0.0)
    if ids.shape[0] == 0:
        raise ValueError("distribution has no positive mass")
    kept = probs[ids]
    order = np.argsort(-kept, kind="stable")
    return TokenDistribution(token_ids=ids[order], probs=kept[order], n_vocab_full=n_vocab)


class ZipfSource:
    """Stationary source following the rank-frequency law, i.i.d. over steps."""

    def __init__(self, params: ZipfParams, vocab_labels: Sequence[str] | None = None):
        self.params = params
        self.n_vocab = params.n_vocab
        self.vocab_labels = list(vocab_labels) if vocab_labels is not None else None
        probs = zipf_pmf_vector(params)
        # Token id i carries rank i+1; already sorted descending.
        self._dist = TokenDistribution(
            token_ids=np.arange(self.n_vocab, dtype=np.int64),
            probs=probs / probs.sum(),
            n_vocab_full=self.n_vocab,
        )

    def next_distribution(self, prefix: Sequence[int]) -> TokenDistribution:
        return self._dist

    def entropy_bits(self) -> float:
        p = self._dist.probs
        return float(-np.sum(p * np.log2(p)))


def zipf_source(params: ZipfParams, vocab_labels: Sequence[str] | None = None) -> ZipfSource:
    return ZipfSource(params, vocab_labels)


class NGramModel:
    """Count-based n-gram source with interpolated backoff.

    Conditionals interpolate each order with the next shorter one:
    P_j(w | ctx) = (c(ctx, w) + gamma * P_{j-1}(w)) / (c(ctx) + gamma),
    grounded in an add-alpha unigram, so every row is normalized by
    construction and unseen contexts fall straight through to the unigram.
    """

    def __init__(
        self,
        order: int,
        n_vocab: int,
        unigram: np.ndarray,
        tables: list[dict[tuple[int, ...], dict[int, int]]],
        totals: list[dict[tuple[int, ...], int]],
        alpha: float,
        backoff: float,
    ):
        self.order = order
        self.n_vocab = n_vocab
        self.alpha = alpha
        self.backoff = backoff
        self._unigram = unigram
        self._tables = tables
        self._totals = totals
        self._cache: dict[tuple[int, ...], TokenDistribution] = {}

    def conditional(self, context: Sequence[int]) -> np.ndarray:
        """Dense by-id conditional row for the longest usable context suffix."""
        probs = self._unigram
        max_ctx = self.order - 1
        usable = list(context)[-max_ctx:] if max_ctx > 0 else []
        for length in range(1, len(usable) + 1):
            ctx = tuple(usable[-length:])
            counts = self._tables[length].get(ctx)
            total = self._totals[length].get(ctx, 0)
            scale = self.backoff / (total + self.backoff)
            nxt = probs * scale
            if counts:
                for token, c in counts.items():
                    nxt[token] += c / (total + self.backoff)
            probs = nxt
        return probs

    def next_distribution(self, prefix: Sequence[int]) -> TokenDistribution:
        max_ctx = self.order - 1
        key = tuple(prefix[-max_ctx:]) if max_ctx > 0 else ()
        dist = self._cache.get(key)
        if dist is None:
            dist = _sorted_distribution(self.conditional(key), self.n_vocab)
            self._cache[key] = dist
        return dist


def train_ngram(
    corpus_tokens: Sequence[int],
    order: int,
    alpha: float = 0.01,
    backoff: float = 0.4,
) -> NGramModel:
    """Count n-grams of every length up to ``order`` over the corpus."""
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    tokens = [int(t) for t in corpus_tokens]
    if not tokens:
        raise ValueError("corpus is empty")
    if len(tokens) <= order:
        raise ValueError("corpus must be longer than the model order")
    if min(tokens) < 0:
        raise ValueError("token ids must be nonnegative")
    n_vocab = max(tokens) + 1

    uni_counts = Counter(tokens)
    uni = np.full(n_vocab, alpha, dtype=np.float64)
    for token, c in uni_counts.items():
        uni[token] += c
    uni /= uni.sum()

    tables: list[dict[tuple[int, ...], dict[int, int]]] = [{} for _ in range(order)]
    totals: list[dict[tuple[int, ...], int]] = [{} for _ in range(order)]
    for length in range(1, order):
        table = tables[length]
        total = totals[length]
        for i in range(length, len(tokens)):
            ctx = tuple(tokens[i - length : i])
            nxt = tokens[i]
            row = table.setdefault(ctx, {})
            row[nxt] = row.get(nxt, 0) + 1
            total[ctx] = total.get(ctx, 0) + 1
    return NGramModel(order, n_vocab, uni, tables, totals, alpha, backoff)


def load_token_text(path: str | Path) -> tuple[list[int], list[str]]:
    """Read whitespace-separated words and map them to dense integer ids.

    Ids are assigned by descending corpus frequency (ties broken
    lexicographically), so id 0 is the most frequent word.  Returns the id
    sequence and the id -> word table.
    """
    words = Path(path).read_text(encoding="utf-8").split()
    if not words:
        raise ValueError(f"no tokens found in {path}")
    counts = Counter(words)
    vocab = sorted(counts, key=lambda w: (-counts[w], w))
    index = {w: i for i, w in enumerate(vocab)}
    return [index[w] for w in words], vocab


class ReplaySource:
    """Recorded per-step conditionals; serves only the recorded trajectory."""

    def __init__(self, n_vocab: int, tokens: list[int], rows: np.ndarray):
        self.n_vocab = n_vocab
        self.recorded_tokens = tokens
        self._rows = rows
        self._cache: dict[int, TokenDistribution] = {}

    @property
    def n_steps(self) -> int:
        return len(self.recorded_tokens)

    def distribution_at(self, step: int) -> TokenDistribution:
        if not 0 <= step < self.n_steps:
            raise EndOfStream(f"replay has only {self.n_steps} steps")
        dist = self._cache.get(step)
        if dist is None:
            dist = _sorted_distribution(self._rows[step], self.n_vocab)
            self._cache[step] = dist
        return dist

    def next_distribution(self, prefix: Sequence[int]) -> TokenDistribution:
        step = len(prefix)
        if step >= self.n_steps:
            raise EndOfStream(f"replay has only {self.n_steps} steps")
        if list(prefix) != self.recorded_tokens[:step]:
            raise ReplayPrefixError(
                "replay distributions are bound to the recorded prefix; "
                "free-running generation against a replay is not supported"
            )
        return self.distribution_at(step)

    def recorded_surprises_bits(self) -> list[float]:
        """Teacher-forced surprise of each recorded token under its own row."""
        out = []
        for i, token in enumerate(self.recorded_tokens):
            p = float(self._rows[i][token])
            if p <= 0.0:
                raise ReplayFormatError(
                    f"recorded token {token} has zero probability at step {i}"
                )
            out.append(float(-np.log2(p)) + 0.0)
        return out


def write_replay(
    path: str | Path,
    n_vocab: int,
    tokens: Sequence[int],
    rows: Sequence[np.ndarray] | np.ndarray,
) -> None:
    """Write a replay file: 16-byte header, u32 token ids, float32 prob rows."""
    tokens = [int(t) for t in tokens]
    rows = [np.asarray(r, dtype=np.float64) for r in rows]
    if len(rows) != len(tokens):
        raise ValueError("one probability row is required per token")
    with open(path, "wb") as fh:
        fh.write(_REPLAY_HEADER.pack(REPLAY_MAGIC, REPLAY_VERSION, n_vocab, len(tokens)))
        if tokens:
            fh.write(struct.pack(f"<{len(tokens)}I", *tokens))
        for i, row in enumerate(rows):
            if row.shape != (n_vocab,):
                raise ValueError(f"row {i} has shape {row.shape}, expected ({n_vocab},)")
            if abs(float(row.sum()) - 1.0) > ROW_SUM_TOL:
                raise ValueError(f"row {i} is not normalized")
            fh.write(row.astype("<f4").tobytes())


def open_replay(path: str | Path) -> ReplaySource:
    """Validate and load a replay file."""
    raw = Path(path).read_bytes()
    if len(raw) < _REPLAY_HEADER.size:
        raise ReplayFormatError("file too short for a replay header")
    magic, version, n_vocab, n_steps = _REPLAY_HEADER.unpack_from(raw, 0)
    if magic != REPLAY_MAGIC:
        raise ReplayFormatError(f"bad magic {magic!r}")
    if version != REPLAY_VERSION:
        raise ReplayFormatError(f"unsupported version {version}")
    expected = _REPLAY_HEADER.size + 4 * n_steps + 4 * n_vocab * n_steps
    if len(raw) != expected:
        raise ReplayFormatError(
            f"truncated or oversized replay: {len(raw)} bytes, expected {expected}"
        )
    offset = _REPLAY_HEADER.size
    tokens = list(struct.unpack_from(f"<{n_steps}I", raw, offset)) if n_steps else []
    offset += 4 * n_steps
    rows = np.frombuffer(raw, dtype="<f4", offset=offset).reshape(n_steps, n_vocab)
    rows = rows.astype(np.float64)
    for i in range(n_steps):
        total = float(rows[i].sum())
        if abs(total - 1.0) > ROW_SUM_TOL:
            raise ReplayFormatError(f"row {i} sums to {total!r}, not 1")
        if np.any(rows[i] < 0.0):
            raise ReplayFormatError(f"row {i} contains negative probabilities")
        rows[i] /= total
    bad = [t for t in tokens if not 0 <= t < n_vocab]
    if bad:
        raise ReplayFormatError(f"token id {bad[0]} outside vocabulary of {n_vocab}")
    return ReplaySource(n_vocab=n_vocab, tokens=tokens, rows=rows)


def teacher_forced_surprises(model: ModelSource, tokens: Sequence[int]) -> list[float]:
    """Surprise (bits) of each token under the model's conditional at its step."""
    out: list[float] = []
    prefix: list[int] = []
    for i, token in enumerate(tokens):
        dist = model.next_distribution(prefix)
        pos = np.flatnonzero(dist.token_ids == int(token))
        if pos.shape[0] == 0:
            raise ValueError(f"token {token} has no probability at step {i}")
        out.append(float(-np.log2(dist.probs[pos[0]])) + 0.0)
        prefix.append(int(token))
    return out


class StdioModelClient:
    """Client for an external model speaking line-delimited JSON on stdio.

    Handshake: send {"type":"hello","version":1}, expect
    {"type":"model","n_vocab":N,"name":...}.  Each step sends
    {"type":"next","prefix":[...]} and expects {"type":"dist",
    "probs_sparse":[[id,prob]...],"rest_mass":r}; the rest mass is spread
    uniformly over unlisted ids.  One request is in flight at a time.
    """

    def __init__(self, command: str | Sequence[str], timeout: float = 60.0):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout
        self._step = 0
        try:
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise StdioProtocolError(f"failed to start model subprocess: {exc}") from exc
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        reply = self._roundtrip({"type": "hello", "version": 1})
        if reply.get("type") != "model":
            raise StdioProtocolError(f"handshake failed, got {reply!r}")
        try:
            self.n_vocab = int(reply["n_vocab"])
        except (KeyError, TypeError, ValueError) as exc:
            raise StdioProtocolError(f"handshake missing n_vocab: {reply!r}") from exc
        if self.n_vocab < 1:
            raise StdioProtocolError(f"invalid n_vocab {self.n_vocab}")
        self.name = str(reply.get("name", ""))

    def _pump(self) -> None:
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _roundtrip(self, message: dict) -> dict:
        proc = self._proc
        if proc.poll() is not None and proc.returncode != 0:
            raise StdioProtocolError(f"model subprocess exited with {proc.returncode}")
        assert proc.stdin is not None
        try:
            proc.stdin.write(json.dumps(message) + "\n")
            proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise StdioProtocolError(f"model subprocess pipe closed: {exc}") from exc
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise StdioProtocolError(
                f"model reply timed out after {self.timeout} s at step {self._step}"
            ) from None
        if line is None:
            raise StdioProtocolError("model subprocess closed its output stream")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise StdioProtocolError(f"malformed reply line: {line!r}") from exc
        if reply.get("type") == "error":
            raise StdioProtocolError(
                f"model error at step {self._step}: {reply.get('message')!r}"
            )
        return reply

    def next_distribution(self, prefix: Sequence[int]) -> TokenDistribution:
        reply = self._roundtrip({"type": "next", "prefix": [int(t) for t in prefix]})
        if reply.get("type") != "dist":
            raise StdioProtocolError(f"expected dist reply, got {reply!r}")
        sparse = reply.get("probs_sparse")
        rest = float(reply.get("rest_mass", 0.0))
        if not isinstance(sparse, list) or not sparse:
            raise StdioProtocolError(f"step {self._step}: missing probs_sparse")
        probs = np.zeros(self.n_vocab, dtype=np.float64)
        listed = np.zeros(self.n_vocab, dtype=bool)
        for entry in sparse:
            try:
                token, p = int(entry[0]), float(entry[1])
            except (TypeError, ValueError, IndexError) as exc:
                raise StdioProtocolError(
                    f"step {self._step}: bad sparse entry {entry!r}"
                ) from exc
            if not 0 <= token < self.n_vocab:
                raise StdioProtocolError(
                    f"step {self._step}: token id {token} outside advertised "
                    f"vocabulary of {self.n_vocab}"
                )
            if listed[token]:
                raise StdioProtocolError(f"step {self._step}: duplicate id {token}")
            if p < 0:
                raise StdioProtocolError(f"step {self._step}: negative probability")
            probs[token] = p
            listed[token] = True
        if rest < -ROW_SUM_TOL:
            raise StdioProtocolError(f"step {self._step}: negative rest_mass {rest}")
        total = float(probs.sum()) + max(rest, 0.0)
        if abs(total - 1.0) > ROW_SUM_TOL:
            raise StdioProtocolError(
                f"step {self._step}: sparse mass plus rest_mass sums to {total!r}"
            )
        unlisted = np.flatnonzero(~listed)
        if unlisted.shape[0] and rest > 0.0:
            probs[unlisted] = rest / unlisted.shape[0]
        self._step += 1
        return _sorted_distribution(probs / probs.sum(), self.n_vocab)

    def close(self) -> None:
        proc = self._proc
        if proc.poll() is None:
            try:
                assert proc.stdin is not None
                proc.stdin.write(json.dumps({"type": "bye"}) + "\n")
                proc.stdin.flush()
                proc.stdin.close()
            except (BrokenPipeError, OSError):
                pass
            try:
                proc.wait(timeout=5.0)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()

    def __enter__(self) -> "StdioModelClient":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()
