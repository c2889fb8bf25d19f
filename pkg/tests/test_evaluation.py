import itertools
from types import SimpleNamespace

import numpy as np
import pytest

from s2t_longformer.attention import WindowConfig
from s2t_longformer.errors import DataError
from s2t_longformer.evaluation import (
    Hypothesis,
    beam_decode,
    bleu,
    bleu_tokenize,
    corpus_token_accuracy,
    corpus_wer,
    edit_distance,
    greedy_decode,
    token_accuracy,
    wer,
    write_report,
)
from s2t_longformer.model import Model, ModelConfig
from s2t_longformer.text import build_vocab

from helpers import wer_oracle


class TableModel:
    """Stub decoder with fixed next-token logits per prefix; implements the
    encode/decode_step protocol the decoders rely on."""

    def __init__(self, table, vocab_size):
        self.table = table
        self.vocab_size = vocab_size

    def eval(self):
        pass

    def encode(self, features):
        return features

    def decode_step(self, tokens, enc):
        key = tuple(int(t) for t in tokens)
        logits = self.table.get(key, np.zeros(self.vocab_size))
        return SimpleNamespace(data=np.asarray(logits, dtype=np.float32))


def random_table_model(vocab_size, max_len, seed, bos=1):
    rng = np.random.default_rng(seed)
    table = {}
    prefixes = [(bos,)]
    for _ in range(max_len):
        nxt = []
        for p in prefixes:
            table[p] = rng.normal(0, 1.5, vocab_size)
            nxt.extend(p + (t,) for t in range(vocab_size))
        prefixes = nxt
    return TableModel(table, vocab_size)


def log_softmax64(logits):
    z = np.asarray(logits, dtype=np.float64)
    return z - (z.max() + np.log(np.exp(z - z.max()).sum()))


def exhaustive_best(model, max_len, bos=1, eos=2):
    """Enumerate every generated sequence of length <= max_len (stopping at
    EOS) and return the best normalized score."""
    best = None
    for length in range(1, max_len + 1):
        for combo in itertools.product(range(model.vocab_size), repeat=length):
            if eos in combo[:-1]:
                continue  # EOS terminates a sequence
            if combo[-1] != eos and length != max_len:
                continue  # unfinished sequences only count at the horizon
            tokens = (bos,) + combo
            score = 0.0
            for i in range(1, len(tokens)):
                lp = log_softmax64(model.table[tokens[:i]])
                score += lp[tokens[i]]
            norm = score / length
            if best is None or norm > best[0]:
                best = (norm, tokens)
    return best


# ---------------------------------------------------------------- greedy


def test_greedy_eos_at_step_one_gives_empty_text():
    table = {(1,): np.array([0.0, 0.0, 9.0, 0.0])}
    model = TableModel(table, 4)
    hyp = greedy_decode(model, None, max_len=5)
    assert hyp.tokens.tolist() == [1, 2]
    vocab = build_vocab(["ab"])
    assert vocab.decode(hyp.tokens) == ""


def test_greedy_deterministic():
    model = random_table_model(5, 3, seed=0)
    a = greedy_decode(model, None, max_len=3)
    b = greedy_decode(model, None, max_len=3)
    assert a.tokens.tolist() == b.tokens.tolist() and a.score == b.score


def test_greedy_stops_at_max_len():
    model = TableModel({}, 4)  # all-zero logits: argmax is token 0, never EOS
    hyp = greedy_decode(model, None, max_len=4)
    assert len(hyp.tokens) == 5


@pytest.mark.parametrize("seed", range(5))
def test_greedy_equals_beam_one(seed):
    model = random_table_model(4, 4, seed=seed)
    g = greedy_decode(model, None, max_len=4)
    b = beam_decode(model, None, beam=1, max_len=4)[0]
    assert g.tokens.tolist() == b.tokens.tolist()
    assert g.score == pytest.approx(b.score, abs=1e-9)


# ---------------------------------------------------------------- beam


def test_beam_outputs_sorted_by_normalized_score():
    model = random_table_model(4, 3, seed=3)
    hyps = beam_decode(model, None, beam=4, max_len=3)
    scores = [h.normalized_score for h in hyps]
    assert scores == sorted(scores, reverse=True)


@pytest.mark.parametrize("seed", range(6))
def test_beam_matches_exhaustive_search(seed):
    vocab_size, max_len = 4, 3
    model = random_table_model(vocab_size, max_len, seed=10 + seed)
    top = beam_decode(model, None, beam=vocab_size ** max_len, max_len=max_len)[0]
    best_norm, best_tokens = exhaustive_best(model, max_len)
    assert top.tokens.tolist() == list(best_tokens)
    assert top.normalized_score == pytest.approx(best_norm, abs=1e-5)


@pytest.mark.parametrize("seed", range(8))
@pytest.mark.parametrize("beam", [2, 3, 5])
def test_beam_top_at_least_greedy(seed, beam):
    model = random_table_model(5, 4, seed=30 + seed)
    g = greedy_decode(model, None, max_len=4)
    b = beam_decode(model, None, beam=beam, max_len=4)[0]
    assert b.normalized_score >= g.normalized_score - 1e-9


def test_beam_on_real_model_smoke():
    cfg = ModelConfig(vocab_size=8, encoder_layers=1, decoder_layers=1, heads=2,
                      embed_dim=8, ffn_dim=16, dropout=0.0, window=WindowConfig(4),
                      mel_bins=6)
    model = Model(cfg, seed=0)
    feats = np.random.default_rng(0).normal(0, 1, (12, 6)).astype(np.float32)
    hyps = beam_decode(model, feats, beam=3, max_len=6)
    assert 1 <= len(hyps) <= 3
    for h in hyps:
        assert np.isfinite(h.score)
        assert isinstance(h, Hypothesis)


# ---------------------------------------------------------------- wer


def test_wer_identical_is_zero():
    assert wer("a b c", "a b c") == 0.0


def test_wer_one_substitution_in_three():
    assert wer("a b c", "a x c") == pytest.approx(1 / 3)


def test_wer_empty_hyp_two_deletions():
    assert wer("", "a b") == pytest.approx(1.0)


def test_wer_empty_reference_rejected():
    with pytest.raises(DataError):
        wer("a", "")


def test_wer_matches_oracle_exhaustive_length3():
    words = ["x", "y", "z"]
    seqs = [list(c) for n in range(4) for c in itertools.product(words, repeat=n)]
    for hyp in seqs:
        for ref in seqs:
            if not ref:
                continue
            expected = wer_oracle(hyp, ref) / len(ref)
            assert wer(" ".join(hyp), " ".join(ref)) == pytest.approx(expected)


def test_corpus_wer_pools_errors():
    hyps = ["a b", "x"]
    refs = ["a b", "a b c"]
    # 0 errors over 2 words + 3 errors over 3 words = 3/5
    assert corpus_wer(hyps, refs) == pytest.approx(3 / 5)


# ---------------------------------------------------------------- bleu


def test_bleu_identity_is_100():
    hyps = ["the cat sat on the mat", "a b c d"]
    assert bleu(hyps, list(hyps)) == pytest.approx(100.0)


def test_bleu_clipping_zeroes_score():
    assert bleu(["a a a a"], ["a b c d"]) == 0.0


def test_bleu_closed_form_brevity_penalty():
    score = bleu(["a b c d"], ["a b c d e"])
    assert score == pytest.approx(77.88, abs=0.01)


def test_bleu_monotone_under_overlap_ablation():
    ref = ["the quick brown fox jumps over the lazy dog"]
    degraded = [
        "the quick brown fox jumps over the lazy dog",
        "the quick brown fox jumps over the lazy cat",
        "the quick brown fox sleeps under the lazy cat",
        "a quick red fox sleeps under some lazy cat",
    ]
    scores = [bleu([h], ref, smooth_add_one=True) for h in degraded]
    assert all(a >= b for a, b in zip(scores, scores[1:]))


def test_bleu_smoothing_keeps_nonzero():
    assert bleu(["a b"], ["a c"], smooth_add_one=True) > 0.0


def test_bleu_empty_corpus_rejected():
    with pytest.raises(DataError):
        bleu([], [])


def test_bleu_tokenizer_splits_punctuation():
    assert bleu_tokenize("don't stop, now!") == ["don", "'", "t", "stop", ",", "now", "!"]


# ---------------------------------------------------------------- token accuracy


def test_token_accuracy_exact_match():
    assert token_accuracy("abc", "abc") == 1.0


def test_token_accuracy_one_of_three():
    assert token_accuracy("abx", "abc") == pytest.approx(2 / 3)


def test_token_accuracy_floor_zero():
    assert token_accuracy("xxxxxxxxxx", "ab") == 0.0


def test_corpus_token_accuracy_micro_average():
    assert corpus_token_accuracy(["ab", "cd"], ["ab", "ce"]) == pytest.approx(3 / 4)


# ---------------------------------------------------------------- edit distance


def test_edit_distance_basics():
    assert edit_distance([], []) == 0
    assert edit_distance(list("kitten"), list("sitting")) == 3
    assert edit_distance(["a"], []) == 1


# ---------------------------------------------------------------- report


def test_report_format(tmp_path):
    path = tmp_path / "report.tsv"
    write_report(path, [("u1", "a b", "a b", 0.0), ("u2", "a", "a b", 0.5)], "wer", 0.25)
    lines = path.read_text().splitlines()
    assert lines[0] == "utt_id\thyp\tref\twer"
    assert lines[-1] == "corpus\twer\t0.250000"
    assert len(lines) == 4
