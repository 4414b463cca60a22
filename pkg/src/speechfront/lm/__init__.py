"""Language modelling: LSTM LM, back-off n-grams, data selection, N-best rescoring."""

from .lstm import LmTrainReport, LstmLm, lm_prob, lm_train_config, train_lm
from .nbest import Hypothesis, InterpolatedLm, format_nbest, parse_nbest, read_nbest, rescore, rescore_all
from .ngram import NgramLm, estimate_addk, ngram_perplexity, ngram_score, parse_arpa, read_arpa, write_arpa
from .selection import LAMBDA_GRID, interpolate, optimize_lambda, perplexity_from_probs, select_data
from .vocab import BOS, EOS, UNK, Vocabulary, read_corpus, write_corpus

__all__ = [
    "BOS", "EOS", "UNK", "Hypothesis", "InterpolatedLm", "LAMBDA_GRID", "LmTrainReport",
    "LstmLm", "NgramLm", "Vocabulary", "estimate_addk", "format_nbest", "interpolate",
    "lm_prob", "lm_train_config", "ngram_perplexity", "ngram_score", "optimize_lambda",
    "parse_arpa", "parse_nbest", "perplexity_from_probs", "read_arpa", "read_corpus",
    "read_nbest", "rescore", "rescore_all", "select_data", "train_lm", "write_arpa",
    "write_corpus",
]
