"""Recurrent LSTM language model with 1-of-N input and soft-max output."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax

from .. import checkpoint
from ..errors import DataError, FormatError, StateError
from ..neural import SequenceNetwork
from ..neural.training import TrainConfig, train
from .vocab import Vocabulary

log = logging.getLogger(__name__)

DEFAULT_HIDDEN = 300


def lm_train_config(**overrides) -> TrainConfig:
    """Training defaults for word prediction (cross-entropy, no input noise)."""
    base = dict(learning_rate=0.05, max_epochs=20, batch_sequences=10, input_noise_std=0.0,
                early_stop_patience=3, cost="xent", clip_norm=10.0)
    base.update(overrides)
    return TrainConfig(**base)


class LstmLm:
    """One LSTM layer of ``hidden`` units followed by a linear soft-max layer.

    Inputs are word indices, so the first layer's input weights are selected
    by row rather than multiplied with a one-hot vector.
    """

    def __init__(self, vocab: Vocabulary, net: SequenceNetwork):
        if len(vocab) == 0:
            raise StateError("empty vocabulary")
        if net.input_dim != len(vocab) or net.output_dim != len(vocab):
            raise DataError(f"network maps {net.input_dim} -> {net.output_dim} "
                            f"but the vocabulary has {len(vocab)} words")
        self.vocab = vocab
        self.net = net

    @classmethod
    def create(cls, vocab: Vocabulary, hidden: int = DEFAULT_HIDDEN, seed: int = 0,
               scale: float = 0.1) -> "LstmLm":
        n = len(vocab)
        return cls(vocab, SequenceNetwork.random(n, [("lstm", hidden), ("linear", n)], seed, scale))

    @classmethod
    def zeros(cls, vocab: Vocabulary, hidden: int = DEFAULT_HIDDEN) -> "LstmLm":
        n = len(vocab)
        return cls(vocab, SequenceNetwork(n, [("lstm", hidden), ("linear", n)]))

    @property
    def hidden(self) -> int:
        return self.net.topology[0][1]

    def sequences(self, sentence):
        """Input ``<s> w_1 .. w_n`` and target ``w_1 .. w_n </s>`` index sequences."""
        ids = self.vocab.encode(sentence)
        return (np.concatenate([[self.vocab.bos], ids]).astype(np.int64),
                np.concatenate([ids, [self.vocab.eos]]).astype(np.int64))

    def log_distributions(self, history) -> np.ndarray:
        """Natural-log next-word distributions after ``<s>`` and each history word."""
        x, _ = self.sequences(history)
        return log_softmax(self.net(x), axis=-1)

    def word_log_probs(self, sentence) -> np.ndarray:
        """``ln p(w_i | <s> w_1 .. w_{i-1})`` for every word and the end token."""
        x, t = self.sequences(sentence)
        logp = log_softmax(self.net(x), axis=-1)
        return logp[np.arange(len(t)), t]

    def sentence_logprob(self, sentence) -> float:
        return float(np.sum(self.word_log_probs(sentence)))

    def perplexity(self, sentences) -> float:
        scores = [self.word_log_probs(s) for s in sentences]
        n = sum(len(s) for s in scores)
        if n == 0:
            raise DataError("cannot compute perplexity of an empty corpus")
        return float(np.exp(-sum(float(np.sum(s)) for s in scores) / n))

    def save(self, path, metadata: dict | None = None):
        header = {"format": "speechfront-lstm-lm", "vocab": self.vocab.words,
                  "network": self.net.config(), "metadata": metadata or {}}
        checkpoint.save(path, header, {"theta": self.net.theta})

    @classmethod
    def load(cls, path) -> "LstmLm":
        header, arrays = checkpoint.load(path)
        if header.get("format") != "speechfront-lstm-lm":
            raise FormatError(f"{path}: not an LSTM language model")
        return cls(Vocabulary(header["vocab"]),
                   SequenceNetwork.from_config(header["network"], arrays["theta"]))


def lm_prob(lm: LstmLm, history) -> np.ndarray:
    """Next-word distribution after the whole ``history`` (``<s>`` is implied)."""
    return np.exp(lm.log_distributions(history)[-1])


@dataclass
class LmTrainReport:
    # entry 0 is before training
    valid_perplexity: list[float] = field(default_factory=list)
    train_perplexity: list[float] = field(default_factory=list)
    best_epoch: int = 0


def train_lm(corpus, vocab: Vocabulary, cfg: TrainConfig | None = None, valid=None,
             hidden: int = DEFAULT_HIDDEN, seed: int = 0):
    """Cross-entropy training; the target at each position is the next word.

    Returns ``(model, report)`` with per-epoch validation perplexities (the
    training corpus is used when no validation corpus is given).
    """
    corpus = [list(s) for s in corpus]
    if not corpus:
        raise DataError("training corpus is empty")
    cfg = cfg or lm_train_config()
    if cfg.cost != "xent":
        cfg = TrainConfig(**{**cfg.to_dict(), "cost": "xent"})
    valid = [list(s) for s in valid] if valid else corpus
    model = LstmLm.create(vocab, hidden, seed)
    train_set = [model.sequences(s) for s in corpus]
    valid_set = [model.sequences(s) for s in valid]
    n_train = sum(len(t) for _, t in train_set)
    n_valid = sum(len(t) for _, t in valid_set)
    report = LmTrainReport()

    def progress(epoch, train_cost, valid_cost):
        log.info("epoch %d: train ppl %.3f, valid ppl %.3f", epoch,
                 np.exp(train_cost / n_train), np.exp(valid_cost / n_valid))

    result = train(model.net, train_set, valid_set, cfg, progress)
    report.valid_perplexity = [float(np.exp(v / n_valid)) for v in result.valid_costs]
    report.train_perplexity = [float(np.exp(c / n_train)) for c in result.train_costs]
    report.best_epoch = result.best_epoch
    return LstmLm(vocab, result.net), report
