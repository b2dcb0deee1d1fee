import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import metric_fixtures as fx
from actionpara.metrics import (
    BleuConfig,
    IBleuConfig,
    MetricReport,
    _sentence_stats,
    bleu,
    evaluate_corpus,
    format_table,
    ibleu,
    meteor_lite,
    rouge,
    score_all,
)
from oracles import brute_bleu, brute_rouge, nltk_meteor


@pytest.mark.parametrize("cand,ref,max_n,smoothing,expected", fx.BLEU)
def test_bleu_fixtures(cand, ref, max_n, smoothing, expected):
    assert bleu([cand], [ref], BleuConfig(max_n, smoothing)) == pytest.approx(expected, abs=1e-9)


def test_bleu_corpus_fixture():
    (cands, refs), max_n, expected = fx.BLEU_CORPUS
    assert bleu(cands, refs, BleuConfig(max_n, "none")) == pytest.approx(expected, abs=1e-9)
    # corpus pooling differs from the sentence average here
    assert bleu(cands, refs, BleuConfig(max_n, "none", corpus_level=False)) != pytest.approx(expected)


def test_disjoint_unsmoothed_is_zero():
    assert bleu(["a b c d"], ["e f g h"], BleuConfig(4, "none")) == 0.0


def test_bleu_errors():
    with pytest.raises(ValueError):
        bleu([], [])
    with pytest.raises(ValueError):
        bleu(["a"], ["a", "b"])
    with pytest.raises(ValueError):
        bleu(["a"], ["a"], BleuConfig(max_n=5))
    with pytest.raises(ValueError):
        bleu(["a"], ["a"], BleuConfig(smoothing="exp"))


def test_ibleu_identities():
    s = ["how do i learn", "what is it"]
    assert ibleu(s, s, s) == 60.0
    assert ibleu(s, s, s, IBleuConfig(0.9)) == pytest.approx(80.0, abs=1e-12)
    c, r = ["a b c d"], ["a b c e"]
    assert ibleu(c, r, ["z"], IBleuConfig(1.0)) == bleu(c, r)
    # copy: candidate equals source, self-BLEU is 100
    assert ibleu(c, r, c) == pytest.approx(0.8 * bleu(c, r) - 20.0, abs=1e-12)
    with pytest.raises(ValueError):
        ibleu(c, r, c, IBleuConfig(1.5))


@pytest.mark.parametrize("cand,ref,variant,expected", fx.ROUGE)
def test_rouge_fixtures(cand, ref, variant, expected):
    assert rouge([cand], [ref], variant) == pytest.approx(expected, abs=1e-9)


def test_rouge_is_sentence_averaged():
    assert rouge(["a b", "c"], ["a b", "d"], "R1") == 50.0
    with pytest.raises(ValueError):
        rouge(["a"], ["a"], "R3")


@pytest.mark.parametrize("cand,ref,expected", fx.METEOR)
def test_meteor_fixtures(cand, ref, expected):
    assert meteor_lite([cand], [ref]) == pytest.approx(expected, abs=1e-9)


# -- cross-checks against independent implementations ---------------------------

WORDS = "a b c d e run running runs dog dogs walk walked walking the of".split()


def _random_pairs(seed, n=100):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        c = " ".join(rng.choice(WORDS, rng.integers(1, 9)))
        r = " ".join(rng.choice(WORDS, rng.integers(1, 9)))
        out.append((c, r))
    return out


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_bleu_matches_brute_force(seed):
    pairs = _random_pairs(seed)
    cands, refs = [c for c, _ in pairs], [r for _, r in pairs]
    for n in (1, 2, 3, 4):
        for smooth in (True, False):
            got = bleu(cands, refs, BleuConfig(n, "add_one_on_zero" if smooth else "none"))
            assert got == pytest.approx(brute_bleu(cands, refs, n, smooth), abs=1e-9)
    for c, r in pairs:
        assert bleu([c], [r], BleuConfig(2)) == pytest.approx(brute_bleu([c], [r], 2), abs=1e-9)


def test_bleu_matches_nltk_on_near_copies():
    from nltk.translate.bleu_score import corpus_bleu

    rng = np.random.default_rng(5)
    cands, refs = [], []
    for _ in range(100):
        c = list(rng.choice(WORDS, rng.integers(5, 12)))
        r = list(c)
        r[rng.integers(len(r))] = str(rng.choice(WORDS))
        r.insert(int(rng.integers(len(r) + 1)), str(rng.choice(WORDS)))
        cands.append(" ".join(c))
        refs.append(" ".join(r))
    expected = 100 * corpus_bleu([[r.split()] for r in refs], [c.split() for c in cands])
    assert 10 < expected < 100
    assert bleu(cands, refs, BleuConfig(4, "none")) == pytest.approx(expected, abs=1e-9)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_rouge_matches_brute_force(seed):
    pairs = _random_pairs(seed)
    cands, refs = [c for c, _ in pairs], [r for _, r in pairs]
    for v in ("R1", "R2", "RL"):
        assert rouge(cands, refs, v) == pytest.approx(brute_rouge(cands, refs, v), abs=1e-9)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_meteor_matches_nltk(seed):
    pairs = _random_pairs(seed)
    cands, refs = [c for c, _ in pairs], [r for _, r in pairs]
    assert meteor_lite(cands, refs) == pytest.approx(nltk_meteor(cands, refs), abs=1e-9)
    for c, r in pairs:
        assert meteor_lite([c], [r]) == pytest.approx(nltk_meteor([c], [r]), abs=1e-9)


# -- properties -------------------------------------------------------------------

sentence = st.lists(st.sampled_from(WORDS), min_size=1, max_size=10).map(" ".join)
corpus = st.lists(st.tuples(sentence, sentence, sentence), min_size=1, max_size=6)


@settings(max_examples=150, deadline=None)
@given(corpus)
def test_scores_are_bounded(rows):
    cands, refs, srcs = map(list, zip(*rows))
    scores = score_all(cands, refs, srcs)
    for k, v in scores.items():
        if k.startswith("iBLEU"):
            a = float(k.split("-")[1])
            assert -(1 - a) * 100 - 1e-9 <= v <= a * 100 + 1e-9
        else:
            assert 0.0 <= v <= 100.0 + 1e-9, k


@settings(max_examples=100, deadline=None)
@given(corpus)
def test_copy_identity(rows):
    _, refs, srcs = map(list, zip(*rows))
    for a in (0.8, 0.9):
        got = ibleu(srcs, refs, srcs, IBleuConfig(a))
        assert got == pytest.approx(a * bleu(srcs, refs) - (1 - a) * 100.0, abs=1e-9)


@given(sentence, sentence)
def test_appending_a_matching_token_keeps_unigram_matches(cand, ref):
    c, r = cand.split(), ref.split()
    before = _sentence_stats(c, r, 1)[0][0]
    after = _sentence_stats(c + [r[-1]], r, 1)[0][0]
    assert after >= before


# -- reports ----------------------------------------------------------------------


def test_report_sample_std():
    rep = MetricReport.aggregate([{"BLEU-4": 10.0}, {"BLEU-4": 20.0}])
    assert rep.mean["BLEU-4"] == 15.0
    assert rep.std["BLEU-4"] == pytest.approx(math.sqrt(50), abs=1e-12)


def test_single_and_identical_runs_have_zero_std():
    c, r, s = ["a b c"], ["a b d"], ["a c"]
    one = evaluate_corpus([c], r, s)
    five = evaluate_corpus([c] * 5, r, s)
    assert set(one.std.values()) == {0.0} and set(five.std.values()) == {0.0}
    assert five.mean == one.mean and five.runs == 5


def test_mismatched_run_lengths():
    with pytest.raises(ValueError, match="run 1"):
        evaluate_corpus([["a"], ["a", "b"]], ["a"], ["a"])
    with pytest.raises(ValueError):
        MetricReport.aggregate([{"a": 1.0}, {"b": 1.0}])


def test_report_json_roundtrip_and_table():
    rep = evaluate_corpus([["a b c"], ["a b"]], ["a b c"], ["a c"])
    back = MetricReport.from_dict(json.loads(rep.to_json()))
    assert back == rep
    table = format_table({"Os": rep, "Ks": rep})
    lines = table.splitlines()
    assert lines[0].split()[:3] == ["Mode", "iBLEU-0.8", "iBLEU-0.9"]
    assert lines[1].startswith("Os") and "±" in lines[1] and len(lines) == 3
