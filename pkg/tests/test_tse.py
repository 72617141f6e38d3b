from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_score
from mtf.bpe import bpe_decode, bpe_encode, bpe_train
from mtf.tok import tokenize
from mtf.tse import (
    CATEGORIES,
    BpeNotDecoded,
    TseReport,
    applicable,
    grammar_for,
    validate,
)
from mtf.vocab import Scheme, TokenSequence, TokenType, VocabMismatch, build_vocab, scheme_types

T = TokenType


def seq_of(scheme: Scheme, *tokens) -> TokenSequence:
    vocab = build_vocab(scheme)
    ids = [vocab.id_of(t[0], t[1]) if isinstance(t, tuple) else vocab.id_of(t) for t in tokens]
    return TokenSequence(tuple(ids), vocab.hash)


def counts(report: TseReport) -> dict:
    return {k: v for k, v in report.counts.items() if v}


@pytest.mark.parametrize("scheme", list(Scheme))
def test_grammar_is_total(scheme):
    g = grammar_for(scheme)
    for ttype in build_vocab(scheme).types():
        assert ttype in g.allowed
    for succ in g.allowed.values():
        assert succ <= set(build_vocab(scheme).types())


def test_grammar_spot_checks():
    assert grammar_for(Scheme.TS_DUR).allowed[T.PITCH] == {T.VELOCITY}
    assert not grammar_for(Scheme.POS_DUR).allows(T.POSITION, T.POSITION)
    assert grammar_for(Scheme.POS_NOFF).allows(T.POSITION, T.NOTE_OFF)
    assert grammar_for(Scheme.TS_NOFF).allows(T.TIME_SHIFT, T.TIME_SHIFT)
    assert not grammar_for(Scheme.TS_DUR).allows(T.BOS, T.DURATION)


def test_applicability_mirrors_dash_pattern():
    assert applicable(Scheme.TS_DUR) == ("type", "dupn")
    assert applicable(Scheme.TS_NOFF) == ("type", "dupn", "nnon", "nnof")
    assert applicable(Scheme.POS_DUR) == ("type", "time", "dupn")
    assert applicable(Scheme.POS_NOFF) == CATEGORIES


def test_nnon_and_nnof_hand_trace():
    seq = seq_of(Scheme.TS_NOFF, T.BOS, (T.NOTE_ON, 60), (T.VELOCITY, 4), (T.TIME_SHIFT, 8), (T.NOTE_OFF, 61), T.EOS)
    report = validate(seq, Scheme.TS_NOFF)
    assert counts(report) == {"nnon": 1, "nnof": 1}
    assert report.total_tokens == 5
    assert report.ratios["nnon"] == pytest.approx(0.2)


def test_time_hand_trace():
    seq = seq_of(
        Scheme.POS_DUR, T.BOS, T.BAR, (T.POSITION, 9), (T.PITCH, 60), (T.VELOCITY, 4), (T.DURATION, 8),
        (T.POSITION, 5), (T.PITCH, 62), (T.VELOCITY, 4), (T.DURATION, 8), T.EOS,
    )
    assert counts(validate(seq, Scheme.POS_DUR)) == {"time": 1}


def test_repeated_position_counts_as_time_error():
    seq = seq_of(
        Scheme.POS_DUR, T.BOS, T.BAR, (T.POSITION, 9), (T.PITCH, 60), (T.VELOCITY, 4), (T.DURATION, 1),
        (T.POSITION, 9), (T.PITCH, 62), (T.VELOCITY, 4), (T.DURATION, 1), T.EOS,
    )
    assert counts(validate(seq, Scheme.POS_DUR)) == {"time": 1}


def test_bar_resets_position_comparator():
    seq = seq_of(
        Scheme.POS_DUR, T.BOS, T.BAR, (T.POSITION, 9), (T.PITCH, 60), (T.VELOCITY, 4), (T.DURATION, 8),
        T.BAR, (T.POSITION, 5), (T.PITCH, 62), (T.VELOCITY, 4), (T.DURATION, 8), T.EOS,
    )
    assert validate(seq, Scheme.POS_DUR).n_errors == 0


def test_dupn_hand_trace():
    seq = seq_of(
        Scheme.TS_DUR, T.BOS, (T.PITCH, 60), (T.VELOCITY, 4), (T.DURATION, 8),
        (T.PITCH, 60), (T.VELOCITY, 4), (T.DURATION, 8), T.EOS,
    )
    assert counts(validate(seq, Scheme.TS_DUR)) == {"dupn": 1}


def test_restrike_after_release_is_legal():
    seq = seq_of(
        Scheme.TS_DUR, T.BOS, (T.PITCH, 60), (T.VELOCITY, 4), (T.DURATION, 8),
        (T.TIME_SHIFT, 8), (T.PITCH, 60), (T.VELOCITY, 4), (T.DURATION, 8), T.EOS,
    )
    assert validate(seq, Scheme.TS_DUR).n_errors == 0


def test_type_error_skips_token():
    # the stray Duration is skipped, so the note after it still parses
    seq = seq_of(Scheme.TS_DUR, T.BOS, (T.DURATION, 4), (T.PITCH, 60), (T.VELOCITY, 4), (T.DURATION, 8), T.EOS)
    assert counts(validate(seq, Scheme.TS_DUR)) == {"type": 1}


def test_specials_after_eos():
    vocab = build_vocab(Scheme.TS_DUR)
    ids = (1, 2, 0, 0)
    assert validate(TokenSequence(ids, vocab.hash), Scheme.TS_DUR).n_errors == 0
    ids = (1, 2, 5)
    assert counts(validate(TokenSequence(ids, vocab.hash), Scheme.TS_DUR)) == {"type": 1}


def test_out_of_vocabulary_id_is_type_error():
    vocab = build_vocab(Scheme.TS_DUR)
    report = validate(TokenSequence((1, 999, 2), vocab.hash), Scheme.TS_DUR)
    assert counts(report) == {"type": 1}


def test_bpe_sequence_rejected():
    vocab = build_vocab(Scheme.TS_DUR)
    with pytest.raises(BpeNotDecoded):
        validate(TokenSequence((1, 2), vocab.hash, True), Scheme.TS_DUR)


def test_vocab_mismatch_rejected():
    with pytest.raises(VocabMismatch):
        validate(TokenSequence((1, 2), build_vocab(Scheme.POS_DUR).hash), Scheme.TS_DUR)


def test_report_merge_and_ratios():
    a = TseReport({**dict.fromkeys(CATEGORIES, 0), "type": 2}, 10)
    b = TseReport({**dict.fromkeys(CATEGORIES, 0), "dupn": 1}, 30)
    m = TseReport.merge([a, b])
    assert m.total_tokens == 40
    assert m.ratios["type"] == 0.05 and m.ratios["dupn"] == 0.025
    assert TseReport().ratios == dict.fromkeys(CATEGORIES, 0.0)
    assert set(m.to_json()) == {"counts", "total_tokens", "ratios"}


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scheme=st.sampled_from(list(Scheme)))
def test_ratios_in_unit_interval_on_random_ids(seed, scheme):
    rng = random.Random(seed)
    vocab = build_vocab(scheme)
    ids = (1,) + tuple(rng.randrange(5, len(vocab)) for _ in range(rng.randint(0, 80))) + (2,)
    report = validate(TokenSequence(ids, vocab.hash), scheme)
    assert all(0.0 <= r <= 1.0 for r in report.ratios.values())
    for cat in CATEGORIES:
        if cat not in applicable(scheme):
            assert report.counts[cat] == 0


@pytest.mark.parametrize("scheme", list(Scheme))
def test_validation_invariant_under_bpe(scheme):
    rng = random.Random(7)
    vocab = build_vocab(scheme)
    corpus = [tokenize(random_score(rng, 30), scheme) for _ in range(20)]
    # include a noisy sequence with errors
    noisy = TokenSequence((1,) + tuple(rng.randrange(5, len(vocab)) for _ in range(60)) + (2,), vocab.hash)
    model = bpe_train(corpus + [noisy], len(vocab) + 60)
    for seq in corpus + [noisy]:
        assert validate(bpe_decode(bpe_encode(seq, model), model), scheme) == validate(seq, scheme)


def test_scheme_types_cover_grammar():
    for scheme in Scheme:
        keys = set(grammar_for(scheme).allowed)
        assert set(scheme_types(scheme)) <= keys
