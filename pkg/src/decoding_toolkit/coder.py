"""Arithmetic coding of token sequences driven by a model source.

The coder walks the sequence, asks the model for each step's conditional
distribution, quantizes it to integer frequencies (32-bit resolution, floor
of one count per kept token), and codes the token against the cumulative
table with a 64-bit binary arithmetic coder.  Because the decoder rebuilds
the very same tables from the same model, the code is lossless, and the
emitted length tracks the sequence's surprise under the model to within
quantization plus a constant termination overhead.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

STATE_BITS = 64
_FULL = 1 << STATE_BITS
_HALF = _FULL >> 1
_QUARTER = _HALF >> 1
_MASK = _FULL - 1

FREQ_BITS = 32  # per-step distributions are quantized to this resolution

CODE_MAGIC = b"MIRC"
CODE_VERSION = 1
_CODE_HEADER = struct.Struct("<4sIII")  # magic, version, n_tokens, n_vocab


@dataclass(frozen=True)
class CodeStream:
    """Encoded bits (packed big-endian into bytes) plus their exact bit count."""

    bits: bytes
    n_bits: int
    n_tokens: int

    @property
    def bits_per_token(self) -> float:
        if self.n_tokens == 0:
            return 0.0
        return self.n_bits / self.n_tokens


class _BitWriter:
    def __init__(self) -> None:
        self._bytes = bytearray()
        self._acc = 0
        self._filled = 0
        self.n_bits = 0

    def write(self, bit: int) -> None:
        self._acc = (self._acc << 1) | bit
        self._filled += 1
        self.n_bits += 1
        if self._filled == 8:
            self._bytes.append(self._acc)
            self._acc = 0
            self._filled = 0

    def getvalue(self) -> bytes:
        out = bytearray(self._bytes)
        if self._filled:
            out.append(self._acc << (8 - self._filled))
        return bytes(out)


class _BitReader:
    """Reads bits back; past the end it yields zeros, which the arithmetic
    decoder's termination convention relies on."""

    def __init__(self, data: bytes, n_bits: int | None = None) -> None:
        self._data = data
        self._limit = len(data) * 8 if n_bits is None else n_bits
        self._pos = 0

    def read(self) -> int:
        if self._pos >= self._limit:
            return 0
        byte = self._data[self._pos >> 3]
        bit = (byte >> (7 - (self._pos & 7))) & 1
        self._pos += 1
        return bit


def _quantize(probs: np.ndarray) -> np.ndarray:
    """Cumulative integer frequency table, one slot per sorted token.

    Every token receives at least one count so the coder can always
    represent it; totals stay far below the coder's precision.
    """
    freqs = np.maximum(np.rint(probs * (1 << FREQ_BITS)).astype(np.int64), 1)
    cum = np.empty(freqs.shape[0] + 1, dtype=np.int64)
    cum[0] = 0
    np.cumsum(freqs, out=cum[1:])
    return cum


class _Encoder:
    def __init__(self, writer: _BitWriter) -> None:
        self.low = 0
        self.high = _MASK
        self.pending = 0
        self.writer = writer

    def encode(self, cum: np.ndarray, symbol: int) -> None:
        total = int(cum[-1])
        span = self.high - self.low + 1
        self.high = self.low + int(cum[symbol + 1]) * span // total - 1
        self.low = self.low + int(cum[symbol]) * span // total
        while True:
            if (self.low ^ self.high) & _HALF == 0:
                bit = self.low >> (STATE_BITS - 1)
                self.writer.write(bit)
                for _ in range(self.pending):
                    self.writer.write(bit ^ 1)
                self.pending = 0
            elif self.low & ~self.high & _QUARTER:
                # Underflow: middle-straddling range, defer the bit.
                self.pending += 1
                self.low ^= _QUARTER
                self.high ^= _QUARTER
            else:
                break
            self.low = (self.low << 1) & _MASK
            self.high = ((self.high << 1) & _MASK) | 1

    def finish(self) -> None:
        # One disambiguating bit; the reader's trailing zeros do the rest.
        self.pending += 1
        bit = self.low >> (STATE_BITS - 2) & 1
        self.writer.write(bit)
        for _ in range(self.pending):
            self.writer.write(bit ^ 1)


class _Decoder:
    def __init__(self, reader: _BitReader) -> None:
        self.low = 0
        self.high = _MASK
        self.reader = reader
        self.code = 0
        for _ in range(STATE_BITS):
            self.code = (self.code << 1) | reader.read()

    def decode(self, cum: np.ndarray) -> int:
        total = int(cum[-1])
        span = self.high - self.low + 1
        value = ((self.code - self.low + 1) * total - 1) // span
        symbol = int(np.searchsorted(cum, value, side="right")) - 1
        self.high = self.low + int(cum[symbol + 1]) * span // total - 1
        self.low = self.low + int(cum[symbol]) * span // total
        while True:
            if (self.low ^ self.high) & _HALF == 0:
                pass
            elif self.low & ~self.high & _QUARTER:
                self.code ^= _QUARTER
                self.low ^= _QUARTER
                self.high ^= _QUARTER
            else:
                break
            self.low = (self.low << 1) & _MASK
            self.high = ((self.high << 1) & _MASK) | 1
            self.code = ((self.code << 1) & _MASK) | self.reader.read()
        return symbol


def _symbol_index(dist, token: int) -> int:
    pos = np.flatnonzero(dist.token_ids == token)
    if pos.shape[0] == 0:
        raise ValueError(f"token {token} has no probability under the model")
    return int(pos[0])


def encode(tokens: Sequence[int], model) -> CodeStream:
    """Arithmetic-code a token sequence under the model's conditionals."""
    tokens = [int(t) for t in tokens]
    for t in tokens:
        if not 0 <= t < model.n_vocab:
            raise ValueError(f"token {t} outside vocabulary of {model.n_vocab}")
    writer = _BitWriter()
    enc = _Encoder(writer)
    prefix: list[int] = []
    for t in tokens:
        dist = model.next_distribution(prefix)
        cum = _quantize(dist.probs)
        enc.encode(cum, _symbol_index(dist, t))
        prefix.append(t)
    if tokens:
        enc.finish()
    return CodeStream(bits=writer.getvalue(), n_bits=writer.n_bits, n_tokens=len(tokens))


def decode(stream: CodeStream, model, n_tokens: int) -> list[int]:
    """Invert ``encode`` given the same model and the token count."""
    if n_tokens == 0:
        return []
    dec = _Decoder(_BitReader(stream.bits, stream.n_bits))
    out: list[int] = []
    for _ in range(n_tokens):
        dist = model.next_distribution(out)
        cum = _quantize(dist.probs)
        symbol = dec.decode(cum)
        out.append(int(dist.token_ids[symbol]))
    return out


def write_codestream(path: str | Path, stream: CodeStream, n_vocab: int) -> None:
    """Persist a bitstream: 16-byte header then the byte-padded payload."""
    with open(path, "wb") as fh:
        fh.write(_CODE_HEADER.pack(CODE_MAGIC, CODE_VERSION, stream.n_tokens, n_vocab))
        fh.write(stream.bits)


def read_codestream(path: str | Path) -> tuple[CodeStream, int]:
    """Load a bitstream; the bit count is recovered up to byte padding."""
    raw = Path(path).read_bytes()
    if len(raw) < _CODE_HEADER.size:
        raise ValueError("file too short for a code header")
    magic, version, n_tokens, n_vocab = _CODE_HEADER.unpack_from(raw, 0)
    if magic != CODE_MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != CODE_VERSION:
        raise ValueError(f"unsupported version {version}")
    payload = raw[_CODE_HEADER.size :]
    stream = CodeStream(bits=payload, n_bits=len(payload) * 8, n_tokens=n_tokens)
    return stream, n_vocab
