import math
from fractions import Fraction

import numpy as np
import pytest

from oracles import bigram_row, frac_log2, oracle_series
from errcast.toy_lm import (
    START_SYMBOL,
    BigramModel,
    load_model,
    next_distribution,
    sample_text,
    save_model,
    trace_prompt,
    train_bigram,
)
from errcast.trace import validate_trace


def test_untrained_model_is_uniform():
    model = BigramModel(vocab=(START_SYMBOL, "a", "b", "c"), counts=np.zeros((4, 4)))
    dist = next_distribution(model, ["a"])
    assert np.allclose(dist, 0.25)


def test_trained_on_ab_repeats():
    # "abab" twice: start->a 1, a->b 4, b->a 3; |V| = 3
    model = train_bigram(["abab" * 2])
    dist = next_distribution(model, ["a"])
    expected = float(Fraction(4 + 1, 4 + 3))
    assert dist[model.symbol_index("b")] == pytest.approx(expected, abs=1e-15)
    assert dist.argmax() == model.symbol_index("b")


def test_bigram_ignores_prefix_beyond_last_symbol(ab_model):
    d1 = next_distribution(ab_model, list("abbba"))
    d2 = next_distribution(ab_model, list("a"))
    assert np.array_equal(d1, d2)


def test_empty_prefix_uses_start_row(ab_model):
    d_empty = next_distribution(ab_model, [])
    d_start = ab_model.row_distribution(START_SYMBOL)
    assert np.array_equal(d_empty, d_start)


def test_unknown_symbol_rejected(ab_model):
    with pytest.raises(ValueError, match="unknown symbol"):
        next_distribution(ab_model, ["z"])


def test_rows_are_distributions(ab_model):
    for sym in ab_model.vocab:
        row = ab_model.row_distribution(sym)
        assert abs(row.sum() - 1.0) < 1e-12
        assert (row > 0).all()


class TestTracePrompt:
    def test_single_symbol_has_no_cis(self, ab_model):
        tr = trace_prompt(ab_model, "a")
        assert len(tr.tokens) == 1
        assert tr.tokens[0].cis_second_term_bits is None

    def test_uniform_model_entropy_is_log2_v(self):
        model = BigramModel(vocab=(START_SYMBOL, "a", "b", "c"), counts=np.zeros((4, 4)))
        tr = trace_prompt(model, "abc")
        for tok in tr.tokens:
            assert tok.entropy_bits == pytest.approx(2.0, abs=1e-12)

    def test_surprisal_matches_exact_rationals(self, ab_model):
        tr = trace_prompt(ab_model, "abab")
        vocab = list(ab_model.vocab)
        counts = ab_model.counts.tolist()
        text = "abab"
        for i, tok in enumerate(tr.tokens):
            prev = text[i - 1] if i else START_SYMBOL
            row = bigram_row(vocab, counts, prev)
            expected = -frac_log2(row[vocab.index(text[i])])
            assert tok.surprisal_bits == pytest.approx(expected, abs=1e-12)

    def test_surprisal_consistent_with_next_distribution(self, ab_model):
        text = "abba"
        tr = trace_prompt(ab_model, text)
        for i, tok in enumerate(tr.tokens):
            dist = next_distribution(ab_model, list(text[:i]))
            expected = -math.log2(dist[ab_model.symbol_index(text[i])])
            assert tok.surprisal_bits == expected

    def test_identical_rows_give_zero_cis(self, ab_model):
        # deleting an 'a' whose row equals its predecessor's row: cis = 0
        tr = trace_prompt(ab_model, "aaa")
        # position 1: full-prefix term log2 P(a|a), deleted-prefix term log2 P(a|a)
        assert -tr.tokens[2].surprisal_bits - tr.tokens[1].cis_second_term_bits == pytest.approx(
            0.0, abs=1e-12
        )

    def test_full_availability_and_validates(self, ab_model):
        tr = trace_prompt(ab_model, "abab")
        assert validate_trace(tr) == []
        for i, tok in enumerate(tr.tokens):
            expected = {"surprisal", "entropy", "kl", "maxprob", "oddball"}
            if i < len(tr.tokens) - 1:
                expected.add("cis")
            assert tok.availability() == expected

    def test_oracle_equivalence_on_one_prompt(self, ab_model):
        text = "abbaab"
        tr = trace_prompt(ab_model, text)
        oracle = oracle_series(list(ab_model.vocab), ab_model.counts.tolist(), list(text))
        for i, tok in enumerate(tr.tokens):
            assert tok.surprisal_bits == pytest.approx(oracle["spr"][0][i], abs=1e-12)
            assert tok.entropy_bits == pytest.approx(oracle["h"][0][i], abs=1e-12)
            assert tok.kl_to_reference_bits == pytest.approx(
                oracle["cws"][0][i] - oracle["spr"][0][i], abs=1e-11
            )
            assert tok.max_prob == pytest.approx(oracle["maxp"][0][i], abs=1e-15)
            assert tok.oddball_sum == pytest.approx(oracle["odd"][0][i], abs=1e-15)

    def test_empty_prompt_rejected(self, ab_model):
        with pytest.raises(ValueError, match="empty"):
            trace_prompt(ab_model, "")


def test_serialization_roundtrip(tmp_path, ab_model):
    path = tmp_path / "model.json"
    save_model(ab_model, path)
    back = load_model(path)
    assert back.vocab == ab_model.vocab
    assert np.array_equal(back.counts, ab_model.counts)
    assert back.alpha == ab_model.alpha


def test_sample_text_excludes_start_symbol(ab_model):
    rng = np.random.default_rng(0)
    text = sample_text(ab_model, 50, rng)
    assert len(text) == 50
    assert START_SYMBOL not in text


def test_vocab_must_include_start():
    with pytest.raises(ValueError, match="start symbol"):
        BigramModel(vocab=("a", "b"), counts=np.zeros((2, 2)))
