import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from speechfront.errors import DataError, ParseError
from speechfront.lm import (
    Hypothesis,
    InterpolatedLm,
    LstmLm,
    Vocabulary,
    estimate_addk,
    format_nbest,
    interpolate,
    lm_prob,
    lm_train_config,
    ngram_score,
    optimize_lambda,
    parse_arpa,
    parse_nbest,
    perplexity_from_probs,
    rescore,
    select_data,
    train_lm,
)
from speechfront.lm.ngram import format_arpa

TOY_ARPA = """\\data\\
ngram 1=4
ngram 2=2

\\1-grams:
-99 <s> -0.5
-0.6 a -0.25
-0.4 b
-0.8 </s>

\\2-grams:
-0.2 <s> a
-0.1 a b

\\end\\
"""


def grammar_sentence(r):
    subj = ["the cat", "a dog", "the old bird", "my friend"]
    verb = ["sees", "chases", "likes"]
    obj = ["the red ball", "a small mouse", "the garden"]
    tail = ["today", "in the morning", "again", ""]
    return " ".join([subj[r.integers(4)], verb[r.integers(3)], obj[r.integers(3)],
                     tail[r.integers(4)]]).split()


def two_domain(seed, n=200):
    r = np.random.default_rng(seed)
    in_domain = [grammar_sentence(r) for _ in range(n)]
    shuffled = [list(r.permutation(grammar_sentence(r))) for _ in range(n)]
    order = r.permutation(2 * n)
    corpus = [in_domain[i] if i < n else shuffled[i - n] for i in order]
    labels = [bool(i < n) for i in order]
    dev = [grammar_sentence(r) for _ in range(50)]
    return corpus, labels, dev


class TestVocabulary:
    def test_specials_first(self):
        v = Vocabulary.build([["b", "a", "b"]])
        assert v.words == ["<s>", "</s>", "<unk>", "b", "a"]

    def test_unknown_maps_to_unk(self):
        v = Vocabulary(["x"])
        assert v.encode(["x", "zzz"]).tolist() == [3, v.unk]

    def test_specials_not_duplicated(self):
        v = Vocabulary(["<s>", "a", "<unk>"])
        assert v.words.count("<s>") == 1 and len(v) == 4

    def test_max_size(self):
        v = Vocabulary.build([["a", "a", "b", "c"]], max_size=4)
        assert v.words == ["<s>", "</s>", "<unk>", "a"]

    def test_roundtrip(self, tmp_path):
        v = Vocabulary.build([["x", "y", "y"]])
        v.save(tmp_path / "v.txt")
        assert Vocabulary.load(tmp_path / "v.txt").words == v.words


class TestArpa:
    def test_hand_computed_backoff(self):
        lm = parse_arpa(TOY_ARPA)
        # p(a|<s>) + p(b|a) + [bow(b) + p(</s>)]
        assert ngram_score(lm, ["a", "b"]) == pytest.approx(-0.2 - 0.1 - 0.8, abs=1e-10)
        # [bow(<s>) + p(b)] + [bow(b) + p(a)] + [bow(a) + p(</s>)]
        assert ngram_score(lm, ["b", "a"]) == pytest.approx(-0.9 - 0.6 - 1.05, abs=1e-10)

    def test_single_unigram(self):
        lm = parse_arpa(TOY_ARPA)
        assert ngram_score(lm, ["b"]) == pytest.approx(-0.5 - 0.4 - 0.8, abs=1e-10)

    def test_oov_uses_unk(self):
        lm = parse_arpa(TOY_ARPA.replace("ngram 1=4", "ngram 1=5").replace("-0.8 </s>", "-0.8 </s>\n-2.0 <unk>"))
        score = ngram_score(lm, ["zzz"])
        assert math.isfinite(score)
        assert score == pytest.approx(-0.5 - 2.0 - 0.8, abs=1e-10)

    def test_oov_without_unk_is_finite(self):
        assert math.isfinite(ngram_score(parse_arpa(TOY_ARPA), ["zzz"]))

    @pytest.mark.parametrize("text, line", [
        ("ngram 1=1\n", 1),
        ("\\data\\\nngram x=1\n", 2),
        ("\\data\\\nngram 1=1\n\n\\1-grams:\n-1.0\n\\end\\\n", 5),
        ("\\data\\\nngram 1=1\n\n\\1-grams:\nfoo a\n\\end\\\n", 5),
        ("\\data\\\nngram 1=2\n\n\\1-grams:\n-1 a\n\\end\\\n", 6),
        ("\\data\\\nngram 1=1\n\n\\1-grams:\n-1 a\n", 6),
    ])
    def test_malformed_reports_line(self, text, line):
        with pytest.raises(ParseError) as exc:
            parse_arpa(text)
        assert exc.value.line == line
        assert f"line {line}" in str(exc.value)

    def test_roundtrip(self):
        lm = parse_arpa(TOY_ARPA)
        again = parse_arpa(format_arpa(lm))
        assert again.probs == lm.probs and again.backoffs == lm.backoffs


class TestAddK:
    @pytest.fixture
    def model(self):
        r = np.random.default_rng(0)
        sents = [grammar_sentence(r) for _ in range(60)]
        return estimate_addk(sents, order=5, k=0.1)

    @pytest.mark.parametrize("history", [["<s>"], ["<s>", "the"], ["the", "cat", "sees"],
                                         ["zzz", "the"], ["<s>", "my", "friend", "likes", "the"]])
    def test_normalized(self, model, history):
        total = sum(model.prob(w, history) for w in model.predictable())
        assert total == pytest.approx(1.0, abs=1e-4)
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_arpa_export_preserves_scores(self, model):
        again = parse_arpa(format_arpa(model))
        s = ["the", "cat", "likes", "zzz"]
        assert ngram_score(again, s) == ngram_score(model, s)

    def test_seen_beats_shuffled(self, model):
        assert ngram_score(model, ["the", "cat", "sees", "the", "garden"]) > \
            ngram_score(model, ["garden", "the", "sees", "cat", "the"])


class TestLstmLm:
    def test_zero_weights_uniform(self):
        v = Vocabulary(["a", "b", "c"])
        p = lm_prob(LstmLm.zeros(v, hidden=8), ["a", "b"])
        np.testing.assert_allclose(p, 1 / 6, atol=1e-15)

    def test_zero_model_perplexity_is_vocab_size(self):
        v = Vocabulary(["a", "b", "c", "d"])
        assert LstmLm.zeros(v, 8).perplexity([["a", "b"], ["c"]]) == pytest.approx(len(v), rel=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.lists(st.sampled_from(["a", "b", "c", "q"]), max_size=12), st.integers(0, 100))
    def test_normalized(self, history, seed):
        lm = LstmLm.create(Vocabulary(["a", "b", "c"]), hidden=6, seed=seed, scale=1.0)
        p = lm_prob(lm, history)
        assert np.all(p >= 0)
        assert abs(p.sum() - 1.0) <= 1e-9

    def test_depends_on_whole_history(self):
        lm = LstmLm.create(Vocabulary(["a", "b"]), hidden=6, seed=3, scale=1.0)
        assert not np.allclose(lm_prob(lm, ["a", "a", "b"]), lm_prob(lm, ["b", "a", "b"]))

    def test_sentence_logprob_sums_words(self):
        lm = LstmLm.create(Vocabulary(["a", "b"]), hidden=6, seed=1)
        dists = lm.log_distributions(["a", "b"])
        idx = lm.vocab.encode(["a", "b", "</s>"])
        assert lm.sentence_logprob(["a", "b"]) == pytest.approx(dists[[0, 1, 2], idx].sum(), abs=1e-12)

    def test_alternating_corpus(self):
        corpus = [["a", "b"] * 6] * 5
        v = Vocabulary.build(corpus)
        lm, _ = train_lm(corpus, v, lm_train_config(max_epochs=30), hidden=16)
        # measured 0.969
        assert lm_prob(lm, ["a", "b", "a"])[v.index["b"]] > 0.9

    def test_grammar_perplexity_decreases(self):
        r = np.random.default_rng(0)
        train = [grammar_sentence(r) for _ in range(200)]
        valid = [grammar_sentence(r) for _ in range(40)]
        _, report = train_lm(train, Vocabulary.build(train), lm_train_config(max_epochs=3),
                             valid, hidden=32)
        ppl = report.valid_perplexity
        assert len(ppl) == 4
        assert ppl[0] > ppl[1] > ppl[2] > ppl[3]

    def test_memorization(self):
        one = [["the", "quick", "brown", "fox", "jumps"]]
        cfg = lm_train_config(learning_rate=1.0, max_epochs=100, early_stop_patience=100)
        lm, _ = train_lm(one, Vocabulary.build(one), cfg, hidden=16)
        # measured 1.0035
        assert lm.perplexity(one) <= 1.2

    def test_deterministic_checkpoint(self, tmp_path):
        corpus = [["a", "b", "c"], ["c", "b"]]
        v = Vocabulary.build(corpus)
        for name in ("x", "y"):
            lm, _ = train_lm(corpus, v, lm_train_config(max_epochs=3), hidden=8, seed=4)
            lm.save(tmp_path / name)
        assert (tmp_path / "x").read_bytes() == (tmp_path / "y").read_bytes()
        again = LstmLm.load(tmp_path / "x")
        assert again.vocab.words == v.words
        np.testing.assert_array_equal(again.net.theta, lm.net.theta)


class TestInterpolation:
    def test_endpoints(self, rng):
        a, b = rng.uniform(size=10), rng.uniform(size=10)
        np.testing.assert_array_equal(interpolate(a, b, 0.0), b)
        np.testing.assert_array_equal(interpolate(a, b, 1.0), a)

    def test_optimum_beats_components(self, rng):
        a, b = rng.uniform(0.01, 1, 200), rng.uniform(0.01, 1, 200)
        lam, table = optimize_lambda(a, b)
        assert len(table) == 21 and lam in table
        assert table[lam] <= min(perplexity_from_probs(a), perplexity_from_probs(b))

    def test_bad_weight(self):
        with pytest.raises(ValueError):
            interpolate([0.5], [0.5], 1.5)


class TestSelection:
    def test_dev_sentences_rank_first(self):
        r = np.random.default_rng(2)
        dev = [["zebra", "walks", "slowly", "home"], ["quiet", "river", "flows"]]
        other = [list(r.permutation(["zebra", "walks", "river", "home", "flows"])) for _ in range(20)]
        corpus = other[:7] + [dev[0]] + other[7:] + [dev[1]]
        sel = select_data(corpus, dev, 2)
        assert sel.subset(corpus) == [dev[0], dev[1]]

    def test_full_size_is_identity(self):
        corpus, _, dev = two_domain(0, n=20)
        assert select_data(corpus, dev, len(corpus)).subset(corpus) == corpus

    def test_top_k_too_large_warns(self):
        corpus, _, dev = two_domain(0, n=5)
        with pytest.warns(UserWarning):
            sel = select_data(corpus, dev, 100)
        assert sel.indices == list(range(10))

    def test_two_domain(self):
        corpus, labels, dev = two_domain(0)
        sel = select_data(corpus, dev, len(corpus) // 2)
        assert np.mean([labels[i] for i in sel.indices]) >= 0.95

    def test_deterministic_with_stable_ties(self):
        corpus = [["a", "b"], ["c"], ["a", "b"], ["c"]]
        first = select_data(corpus, [["a", "b"]], 1)
        second = select_data(corpus, [["a", "b"]], 1)
        assert first.indices == second.indices == [0]
        assert first.ranking[:2] == [0, 2]

    def test_empty_dev(self):
        with pytest.raises(DataError):
            select_data([["a"]], [], 1)


def two_hypotheses():
    return [Hypothesis("u1", 1, -9.0, -3.0, ("b", "a")), Hypothesis("u1", 2, -10.0, -4.0, ("a", "b"))]


class TestRescore:
    @pytest.fixture
    def lm(self):
        vocab = Vocabulary(["a", "b"])
        return InterpolatedLm(LstmLm.zeros(vocab, 4), parse_arpa(TOY_ARPA), 0.5)

    def test_hand_computed_winner(self, lm):
        # uniform LSTM (1/5) mixed 50/50 with the toy ARPA, per word:
        # "a b": (0.2 + 10^-0.2)/2, (0.2 + 10^-0.1)/2, (0.2 + 10^-0.8)/2
        # "b a": (0.2 + 10^-0.9)/2, (0.2 + 10^-0.6)/2, (0.2 + 10^-1.05)/2
        out = rescore(two_hypotheses(), lm)
        assert out[0].words == ("a", "b")
        assert out[0].combined == pytest.approx(-13.296163, abs=1e-6)
        assert out[1].combined == pytest.approx(-14.237395, abs=1e-6)
        assert [h.rank for h in out] == [1, 2]

    def test_acoustic_only(self, lm):
        out = rescore(two_hypotheses(), lm, lm_scale=0.0, word_penalty=0.0)
        assert out[0].words == ("b", "a")

    def test_word_penalty(self, lm):
        hyps = [Hypothesis("u", 1, -5.0, 0.0, ("a",)), Hypothesis("u", 2, -5.0, 0.0, ("a", "a"))]
        assert rescore(hyps, lm, lm_scale=0.0, word_penalty=1.0)[0].words == ("a", "a")

    def test_single(self, lm):
        h = two_hypotheses()[:1]
        assert rescore(h, lm)[0].words == h[0].words

    def test_empty(self, lm):
        with pytest.raises(DataError):
            rescore([], lm)

    @settings(max_examples=30, deadline=None)
    @given(st.permutations(range(4)))
    def test_permutation_invariant(self, perm):
        lm = InterpolatedLm(None, parse_arpa(TOY_ARPA), 0.0)
        hyps = [Hypothesis("u", 1, -3.0, 0.0, ("a",)), Hypothesis("u", 2, -3.0, 0.0, ("a",)),
                Hypothesis("u", 3, -1.0, 0.0, ("b", "b")), Hypothesis("u", 4, -2.0, 0.0, ("b",))]
        base = rescore(hyps, lm)
        shuffled = rescore([hyps[i] for i in perm], lm)
        assert base == shuffled

    def test_lambda_endpoints(self):
        ng = parse_arpa(TOY_ARPA)
        only = InterpolatedLm(None, ng, 0.0)
        assert only.sentence_logprob(["a", "b"]) == pytest.approx(
            ngram_score(ng, ["a", "b"]) * math.log(10), abs=1e-12)
        with pytest.raises(ValueError):
            InterpolatedLm(None, ng, 0.5)


class TestNbestFormat:
    def test_roundtrip(self):
        text = "u1 1 -10.5 -3.25 hello world\nu1 2 -11.0 -2.0 hello\nu2 1 -1.0 -1.0\n"
        lists = parse_nbest(text)
        assert list(lists) == ["u1", "u2"]
        assert lists["u1"][0].words == ("hello", "world")
        assert parse_nbest(format_nbest(lists)) == lists

    def test_bad_line(self):
        with pytest.raises(ParseError) as exc:
            parse_nbest("u1 1 -1 -1 a\nu1 x -1 -1 b\n")
        assert exc.value.line == 2
