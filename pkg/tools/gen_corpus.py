#!/usr/bin/env python3
"""Generate the bundled corpus used by the n-gram experiments.

Emits ~110k whitespace-separated word tokens of template-grammar prose: a
closed class of real English function words plus synthesized content
lexicons, with Zipf-weighted word choice inside each class.  The output is
deterministic for a fixed seed, and the text is original, so the corpus is
redistributable (public-domain dedication; see README).

Usage: python tools/gen_corpus.py [out_path]
"""

from __future__ import annotations

import random
import sys
from pathlib import Path

SEED = 79031
TARGET_TOKENS = 110_000

DETERMINERS = ["the", "a", "this", "that", "each", "every", "some", "another", "no", "any"]
PREPOSITIONS = [
    "of", "to", "in", "on", "with", "from", "by", "at", "over", "under",
    "near", "through", "across", "against", "within", "beyond", "toward", "behind",
]
CONJUNCTIONS = ["and", "but", "or", "while", "when", "after", "before", "because", "although", "until"]

ONSETS = [
    "b", "br", "c", "cr", "d", "dr", "f", "fl", "g", "gl", "h", "j", "k", "l",
    "m", "n", "p", "pr", "r", "s", "st", "t", "tr", "v", "w", "z", "sh", "ch",
    "th", "pl", "sk", "gr",
]
NUCLEI = ["a", "e", "i", "o", "u", "ai", "ea", "ie", "oa", "ou", "ei", "au"]
CODAS = ["", "n", "r", "s", "l", "t", "d", "k", "m", "nd", "st", "rn", "sh", "ck"]


def make_words(count: int, rng: random.Random, suffix: str = "") -> list[str]:
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < count:
        syllables = rng.choice((1, 2, 2, 2, 3))
        word = "".join(
            rng.choice(ONSETS) + rng.choice(NUCLEI) + rng.choice(CODAS)
            for _ in range(syllables)
        ) + suffix
        if 3 <= len(word) <= 14 and word not in seen:
            seen.add(word)
            words.append(word)
    return words


class ZipfPicker:
    """Zipf-weighted choice over a fixed word list."""

    def __init__(self, words: list[str], exponent: float = 1.15):
        self.words = words
        weights = [1.0 / (i + 1) ** exponent for i in range(len(words))]
        total = sum(weights)
        self.cum = []
        acc = 0.0
        for w in weights:
            acc += w / total
            self.cum.append(acc)

    def pick(self, rng: random.Random) -> str:
        u = rng.random()
        lo, hi = 0, len(self.cum) - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if self.cum[mid] < u:
                lo = mid + 1
            else:
                hi = mid
        return self.words[lo]


def main(out_path: str) -> None:
    rng = random.Random(SEED)
    nouns = ZipfPicker(make_words(320, rng))
    verbs = ZipfPicker(make_words(220, rng, suffix="s"))
    adjectives = ZipfPicker(make_words(150, rng))
    adverbs = ZipfPicker(make_words(90, rng, suffix="ly"))
    names = ZipfPicker([w.capitalize() for w in make_words(70, rng)])
    determiners = ZipfPicker(DETERMINERS, exponent=1.0)
    prepositions = ZipfPicker(PREPOSITIONS, exponent=1.0)
    conjunctions = ZipfPicker(CONJUNCTIONS, exponent=1.0)

    def noun_phrase(allow_pp: bool) -> list[str]:
        roll = rng.random()
        if roll < 0.18:
            return [names.pick(rng)]
        out = [determiners.pick(rng)]
        if rng.random() < 0.35:
            out.append(adjectives.pick(rng))
        out.append(nouns.pick(rng))
        if allow_pp and rng.random() < 0.22:
            out.extend([prepositions.pick(rng), *noun_phrase(False)])
        return out

    def verb_phrase() -> list[str]:
        out = [verbs.pick(rng)]
        if rng.random() < 0.3:
            out.append(adverbs.pick(rng))
        roll = rng.random()
        if roll < 0.45:
            out.extend(noun_phrase(True))
        elif roll < 0.75:
            out.extend([prepositions.pick(rng), *noun_phrase(False)])
        return out

    def clause() -> list[str]:
        return [*noun_phrase(True), *verb_phrase()]

    def sentence() -> list[str]:
        out = clause()
        if rng.random() < 0.28:
            out.extend([",", conjunctions.pick(rng), *clause()])
        out.append(".")
        return out

    lines: list[str] = []
    n_tokens = 0
    while n_tokens < TARGET_TOKENS:
        tokens = sentence()
        lines.append(" ".join(tokens))
        n_tokens += len(tokens)
    Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    vocab = {w for line in lines for w in line.split()}
    print(f"wrote {n_tokens} tokens, vocab {len(vocab)}, to {out_path}")


if __name__ == "__main__":
    default = Path(__file__).resolve().parent.parent / "src/decoding_toolkit/data/corpus.txt"
    main(sys.argv[1] if len(sys.argv) > 1 else str(default))
