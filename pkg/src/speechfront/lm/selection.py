"""Perplexity-based training-data selection and LM interpolation."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import DataError
from .ngram import NgramLm, estimate_addk

log = logging.getLogger(__name__)

LAMBDA_GRID = np.round(np.arange(21) * 0.05, 2)


def interpolate(p_lstm, p_ngram, lam: float):
    """``lam * p_lstm + (1 - lam) * p_ngram`` per word position."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    p_lstm = np.asarray(p_lstm, dtype=np.float64)
    p_ngram = np.asarray(p_ngram, dtype=np.float64)
    if lam == 0.0:
        return p_ngram.copy()
    if lam == 1.0:
        return p_lstm.copy()
    return lam * p_lstm + (1.0 - lam) * p_ngram


def perplexity_from_probs(probs) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.size == 0:
        raise DataError("no word probabilities")
    with np.errstate(divide="ignore"):
        return float(np.exp(-np.mean(np.log(probs))))


def optimize_lambda(p_lstm, p_ngram, grid=LAMBDA_GRID):
    """Grid-search the weight minimizing perplexity; returns ``(lambda, {lambda: ppl})``.

    Ties go to the smallest weight.
    """
    table = {float(lam): perplexity_from_probs(interpolate(p_lstm, p_ngram, float(lam)))
             for lam in grid}
    best = min(table, key=lambda lam: (table[lam], lam))
    return best, table


@dataclass
class Selection:
    # selected sentence indices in the original corpus order
    indices: list[int]
    # per-word perplexity of every training sentence under the dev LM
    perplexities: np.ndarray
    # all indices sorted by ascending perplexity (stable)
    ranking: list[int]

    def subset(self, corpus):
        return [corpus[i] for i in self.indices]


def sentence_perplexity(lm: NgramLm, sentence) -> float:
    scores = lm.word_log10_probs(sentence)
    return float(10.0 ** (-sum(scores) / len(scores)))


def select_data(train, dev, top_k: int, order: int = 5, k: float = 0.1) -> Selection:
    """Keep the ``top_k`` training sentences that the dev-set LM finds most likely.

    The dev LM is an interpolated add-k model of ``order``; sentences are
    ranked by per-word perplexity (end token included) with ties kept in
    corpus order. The selected sentences are returned in corpus order.
    """
    train = [list(s) for s in train]
    dev = [list(s) for s in dev]
    if not dev:
        raise DataError("development corpus is empty")
    if top_k < 0:
        raise ValueError("top_k must be nonnegative")
    if top_k > len(train):
        warnings.warn(f"top_k={top_k} exceeds the corpus size {len(train)}; selecting everything",
                      stacklevel=2)
        top_k = len(train)
    lm = estimate_addk(dev, order=order, k=k)
    ppl = np.array([sentence_perplexity(lm, s) for s in train])
    ranking = [int(i) for i in np.argsort(ppl, kind="stable")]
    chosen = sorted(ranking[:top_k])
    log.info("selected %d of %d sentences (ppl threshold %.3g)", top_k, len(train),
             ppl[ranking[top_k - 1]] if top_k else float("nan"))
    return Selection(chosen, ppl, ranking)
