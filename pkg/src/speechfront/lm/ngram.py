"""Back-off n-gram models: ARPA reading/writing, scoring and a small estimator.

Scores in ARPA files and in :class:`NgramLm` are base-10 log probabilities.
"""

from __future__ import annotations

import math
import re
from collections import defaultdict

from ..errors import ParseError
from .vocab import BOS, EOS, UNK

# log10 probability used for <s> (never predicted) and for words the model
# cannot score at all (OOV with no <unk> entry)
LOG10_ZERO = -99.0

_COUNT_RE = re.compile(r"^ngram\s+(\d+)\s*=\s*(\d+)$")
_SECTION_RE = re.compile(r"^\\(\d+)-grams:$")


class NgramLm:
    def __init__(self, order: int, probs: dict, backoffs: dict | None = None):
        self.order = order
        self.probs = probs
        self.backoffs = backoffs or {}
        self.vocab = {k[0] for k in probs if len(k) == 1}

    def _map(self, word):
        if word in self.vocab:
            return word
        return UNK if UNK in self.vocab else None

    def log10_prob(self, word: str, history=()) -> float:
        """Back-off score of ``word`` after ``history``."""
        w = self._map(word)
        if w is None:
            return LOG10_ZERO
        keep = self.order - 1
        ctx = tuple(self._map(h) or UNK for h in history)[max(0, len(history) - keep):] if keep else ()
        total = 0.0
        while True:
            p = self.probs.get(ctx + (w,))
            if p is not None:
                return total + p
            if not ctx:
                return total + LOG10_ZERO
            total += self.backoffs.get(ctx, 0.0)
            ctx = ctx[1:]

    def prob(self, word, history=()) -> float:
        return 10.0 ** self.log10_prob(word, history)

    def word_log10_probs(self, sentence) -> list[float]:
        """Scores of every word and the end token; ``<s>`` is only a context."""
        history = [BOS]
        out = []
        for w in list(sentence) + [EOS]:
            out.append(self.log10_prob(w, history))
            history.append(w)
        return out

    def predictable(self) -> list[str]:
        return sorted(self.vocab - {BOS})


def ngram_score(lm: NgramLm, sentence) -> float:
    """Total log10 probability of a sentence including the end token."""
    return float(sum(lm.word_log10_probs(sentence)))


def ngram_perplexity(lm: NgramLm, sentences) -> float:
    total, count = 0.0, 0
    for s in sentences:
        scores = lm.word_log10_probs(s)
        total += sum(scores)
        count += len(scores)
    return 10.0 ** (-total / count)


def parse_arpa(text: str) -> NgramLm:
    lines = text.splitlines()
    pos = 0

    def err(msg):
        raise ParseError(msg, line=pos + 1)

    while pos < len(lines) and not lines[pos].strip():
        pos += 1
    if pos >= len(lines) or lines[pos].strip() != "\\data\\":
        err("expected \\data\\ header")
    pos += 1
    counts = {}
    while pos < len(lines) and lines[pos].strip():
        m = _COUNT_RE.match(lines[pos].strip())
        if not m:
            err(f"malformed count line {lines[pos].strip()!r}")
        counts[int(m.group(1))] = int(m.group(2))
        pos += 1
    if not counts or sorted(counts) != list(range(1, max(counts) + 1)):
        err("n-gram counts must cover orders 1..n")
    order = max(counts)
    probs, backoffs = {}, {}
    seen = defaultdict(int)
    current = None
    for pos in range(pos, len(lines)):
        line = lines[pos].strip()
        if not line:
            continue
        if line == "\\end\\":
            break
        m = _SECTION_RE.match(line)
        if m:
            current = int(m.group(1))
            if current not in counts:
                err(f"section for undeclared order {current}")
            continue
        if current is None:
            err(f"n-gram entry outside a section: {line!r}")
        fields = line.split()
        if len(fields) not in (current + 1, current + 2):
            err(f"expected {current} words with a log-probability and optional back-off")
        try:
            logp = float(fields[0])
            bow = float(fields[current + 1]) if len(fields) == current + 2 else None
        except ValueError:
            err(f"non-numeric score in {line!r}")
        key = tuple(fields[1:current + 1])
        if key in probs:
            err(f"duplicate n-gram {' '.join(key)!r}")
        probs[key] = logp
        if bow is not None:
            backoffs[key] = bow
        seen[current] += 1
    else:
        pos = len(lines)
        err("missing \\end\\ marker")
    for n, c in counts.items():
        if seen[n] != c:
            err(f"declared {c} {n}-grams but found {seen[n]}")
    return NgramLm(order, probs, backoffs)


def read_arpa(path) -> NgramLm:
    with open(path, encoding="utf-8") as fh:
        return parse_arpa(fh.read())


def format_arpa(lm: NgramLm) -> str:
    by_order = defaultdict(list)
    for key in lm.probs:
        by_order[len(key)].append(key)
    out = ["\\data\\"]
    out += [f"ngram {n}={len(by_order[n])}" for n in range(1, lm.order + 1)]
    for n in range(1, lm.order + 1):
        out += ["", f"\\{n}-grams:"]
        for key in sorted(by_order[n]):
            row = f"{lm.probs[key]!r}\t{' '.join(key)}"
            if key in lm.backoffs:
                row += f"\t{lm.backoffs[key]!r}"
            out.append(row)
    out += ["", "\\end\\", ""]
    return "\n".join(out)


def write_arpa(lm: NgramLm, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_arpa(lm))


def estimate_addk(sentences, order: int = 5, k: float = 0.1, vocab=None) -> NgramLm:
    """Interpolated add-k n-gram model, stored in exact back-off form.

    ``p_j(w|h) = (c(h w) + k V p_{j-1}(w|h')) / (c(h) + k V)`` with an add-k
    unigram at the bottom; ``V`` counts every predictable token
    (``</s>`` and ``<unk>`` included). For an unseen ``(h, w)`` this equals
    ``alpha(h) p_{j-1}(w|h')`` with ``alpha(h) = k V / (c(h) + k V)``, which is
    exactly the ARPA back-off recursion.
    """
    if k <= 0:
        raise ValueError("k must be positive")
    sentences = [list(s) for s in sentences]
    words = set(vocab) if vocab is not None else {w for s in sentences for w in s}
    words = (words | {EOS, UNK}) - {BOS}
    V = len(words)
    counts = [defaultdict(int) for _ in range(order + 1)]
    for s in sentences:
        tokens = [BOS] + [w if w in words else UNK for w in s] + [EOS]
        for i in range(1, len(tokens)):
            for j in range(1, order + 1):
                if i - j + 1 < 0:
                    break
                counts[j][tuple(tokens[i - j + 1:i + 1])] += 1
    ctx_totals = [defaultdict(int) for _ in range(order + 1)]
    for j in range(2, order + 1):
        for key, c in counts[j].items():
            ctx_totals[j][key[:-1]] += c

    total = sum(counts[1].values())
    uni = {w: (counts[1].get((w,), 0) + k) / (total + k * V) for w in words}
    probs = {(w,): math.log10(p) for w, p in uni.items()}
    probs[(BOS,)] = LOG10_ZERO
    backoffs = {}
    tables = {1: {(w,): p for w, p in uni.items()}}
    alpha = {}
    for j in range(2, order + 1):
        for h, ch in ctx_totals[j].items():
            alpha[h] = k * V / (ch + k * V)
        # every suffix of an observed n-gram is itself observed one order down
        tables[j] = {key: (c + k * V * tables[j - 1][key[1:]]) / (ctx_totals[j][key[:-1]] + k * V)
                     for key, c in counts[j].items()}
        probs.update({key: math.log10(p) for key, p in tables[j].items()})
    for h, a in alpha.items():
        backoffs[h] = math.log10(a)
        if h not in probs:
            # contexts are always observed n-grams except those ending in <s>
            probs[h] = LOG10_ZERO
    return NgramLm(order, probs, backoffs)

