"""Word vocabulary with sentence-boundary and unknown-word tokens."""

from __future__ import annotations

from collections import Counter

import numpy as np

from ..errors import DataError, StateError

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
SPECIALS = (BOS, EOS, UNK)


def read_corpus(path) -> list[list[str]]:
    """One whitespace-tokenized sentence per line; blank lines are skipped."""
    with open(path, encoding="utf-8") as fh:
        return [line.split() for line in fh if line.strip()]


def write_corpus(path, sentences):
    with open(path, "w", encoding="utf-8") as fh:
        for s in sentences:
            fh.write(" ".join(s) + "\n")


class Vocabulary:
    """Ordered token list; the three special tokens always occupy indices 0-2."""

    def __init__(self, words):
        words = [w for w in words if w not in SPECIALS]
        if len(set(words)) != len(words):
            raise DataError("vocabulary words must be unique")
        self.words = list(SPECIALS) + words
        self.index = {w: i for i, w in enumerate(self.words)}

    @classmethod
    def build(cls, sentences, max_size: int | None = None, min_count: int = 1) -> "Vocabulary":
        """Most frequent words first, ties in alphabetical order."""
        counts = Counter(w for s in sentences for w in s if w not in SPECIALS)
        ranked = sorted((w for w, c in counts.items() if c >= min_count),
                        key=lambda w: (-counts[w], w))
        if max_size is not None:
            ranked = ranked[:max(0, max_size - len(SPECIALS))]
        return cls(ranked)

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self.index

    @property
    def bos(self) -> int:
        return self.index[BOS]

    @property
    def eos(self) -> int:
        return self.index[EOS]

    @property
    def unk(self) -> int:
        return self.index[UNK]

    def encode(self, words) -> np.ndarray:
        if len(self.words) <= len(SPECIALS) - 1:
            raise StateError("vocabulary is empty")
        return np.array([self.index.get(w, self.unk) for w in words], dtype=np.int64)

    def decode(self, ids) -> list[str]:
        return [self.words[i] for i in ids]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.words[len(SPECIALS):]) + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls([w.strip() for w in fh if w.strip()])
