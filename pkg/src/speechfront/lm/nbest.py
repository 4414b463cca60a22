"""N-best lists: reading, writing and LM rescoring.

File format, one hypothesis per line::

    utt_id rank acoustic_score lm_score word1 word2 ...

Scores are natural-log values.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, replace

import numpy as np

from ..errors import DataError, ParseError
from .lstm import LstmLm
from .ngram import NgramLm
from .selection import interpolate


@dataclass(frozen=True)
class Hypothesis:
    utt_id: str
    rank: int
    acoustic: float
    lm: float
    words: tuple[str, ...]
    combined: float | None = None


def parse_nbest(text: str) -> "OrderedDict[str, list[Hypothesis]]":
    out: OrderedDict[str, list[Hypothesis]] = OrderedDict()
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) < 4:
            raise ParseError("expected 'utt_id rank acoustic lm words...'", line=lineno)
        try:
            rank = int(fields[1])
            ac, lm = float(fields[2]), float(fields[3])
        except ValueError:
            raise ParseError(f"bad rank or score in {line.strip()!r}", line=lineno) from None
        if not (math.isfinite(ac) and math.isfinite(lm)):
            raise ParseError("scores must be finite", line=lineno)
        out.setdefault(fields[0], []).append(Hypothesis(fields[0], rank, ac, lm, tuple(fields[4:])))
    return out


def read_nbest(path):
    with open(path, encoding="utf-8") as fh:
        return parse_nbest(fh.read())


def format_nbest(lists) -> str:
    lines = []
    for hyps in lists.values():
        for h in hyps:
            lines.append(" ".join([h.utt_id, str(h.rank), repr(h.acoustic), repr(h.lm), *h.words]))
    return "\n".join(lines) + "\n"


class InterpolatedLm:
    """Per-word linear interpolation of an LSTM LM and a back-off n-gram LM.

    Either component may be omitted when the weight makes it irrelevant.
    """

    def __init__(self, lstm: LstmLm | None, ngram: NgramLm | None, lam: float):
        if lstm is None and lam > 0:
            raise ValueError("lambda > 0 requires an LSTM model")
        if ngram is None and lam < 1:
            raise ValueError("lambda < 1 requires an n-gram model")
        self.lstm, self.ngram, self.lam = lstm, ngram, lam

    def word_probs(self, words) -> np.ndarray:
        n = len(words) + 1
        p_lstm = np.exp(self.lstm.word_log_probs(words)) if self.lstm is not None else np.zeros(n)
        p_ng = (10.0 ** np.array(self.ngram.word_log10_probs(words)) if self.ngram is not None
                else np.zeros(n))
        return interpolate(p_lstm, p_ng, self.lam)

    def sentence_logprob(self, words) -> float:
        with np.errstate(divide="ignore"):
            return float(np.sum(np.log(self.word_probs(words))))


def rescore(hyps, lm, lm_scale: float = 1.0, word_penalty: float = 0.0) -> list[Hypothesis]:
    """Rerank by ``acoustic + lm_scale * ln P(words) + word_penalty * len(words)``.

    ``lm`` is anything with ``sentence_logprob(words)``. The result is sorted
    by descending combined score; ties are broken by the original rank and
    then by the word sequence, so the order never depends on input order.
    Returned hypotheses carry the new LM score and fresh ranks from 1.
    """
    hyps = list(hyps)
    if not hyps:
        raise DataError("cannot rescore an empty hypothesis list")
    scored = []
    for h in hyps:
        lm_score = lm.sentence_logprob(list(h.words)) if lm_scale != 0 else h.lm
        combined = h.acoustic + lm_scale * lm_score + word_penalty * len(h.words)
        scored.append((h, lm_score, combined))
    scored.sort(key=lambda t: (-t[2], t[0].rank, t[0].words))
    return [replace(h, rank=i + 1, lm=s, combined=c) for i, (h, s, c) in enumerate(scored)]


def rescore_all(lists, lm, lm_scale=1.0, word_penalty=0.0):
    return OrderedDict((utt, rescore(h, lm, lm_scale, word_penalty)) for utt, h in lists.items())
