"""Decoding (greedy, beam) and corpus metrics (WER, BLEU, token accuracy)."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .errors import DataError
from .text import BOS, EOS


@dataclass
class Hypothesis:
    tokens: np.ndarray  # BOS ... (EOS when the model finished)
    score: float  # sum of token log-probs
    normalized_score: float  # score / generated token count

    @property
    def generated(self):
        return self.tokens[1:]


def _step_logprobs(model, tokens, enc):
    logits = model.decode_step(tokens, enc)
    z = np.asarray(logits.data, dtype=np.float64)
    return z - (z.max() + np.log(np.exp(z - z.max()).sum()))


def greedy_decode(model, features, max_len=64, bos=BOS, eos=EOS):
    """Pick the argmax token each step until EOS or ``max_len`` tokens."""
    if max_len < 1:
        raise DataError(f"max_len must be >= 1, got {max_len}")
    model.eval()
    with ag.no_grad():
        enc = model.encode(features)
        tokens = [bos]
        score = 0.0
        for _ in range(max_len):
            lp = _step_logprobs(model, tokens, enc)
            nxt = int(np.argmax(lp))
            score += float(lp[nxt])
            tokens.append(nxt)
            if nxt == eos:
                break
    n_gen = len(tokens) - 1
    return Hypothesis(np.asarray(tokens, dtype=np.intp), score, score / n_gen)


def beam_decode(model, features, beam=5, max_len=64, bos=BOS, eos=EOS):
    """Length-normalized beam search.

    Live hypotheses are pruned by cumulative log-prob; finished ones (EOS) are
    held aside and ranked by score / generated-token count. Returns the top
    ``beam`` finished hypotheses, best first. beam=1 reproduces greedy.
    """
    if beam < 1:
        raise DataError(f"beam must be >= 1, got {beam}")
    model.eval()
    done = []
    with ag.no_grad():
        enc = model.encode(features)
        live = [((bos,), 0.0)]
        for _ in range(max_len):
            candidates = []
            for tokens, score in live:
                lp = _step_logprobs(model, list(tokens), enc)
                for tok in range(lp.size):
                    candidates.append((tokens + (tok,), score + float(lp[tok])))
            candidates.sort(key=lambda c: (-c[1], c[0]))
            next_live = []
            for tokens, score in candidates:
                if tokens[-1] == eos:
                    done.append(_make_hyp(tokens, score))
                elif len(next_live) < beam:
                    next_live.append((tokens, score))
            live = next_live
            if not live:
                break
        done.extend(_make_hyp(tokens, score) for tokens, score in live)
    done.sort(key=lambda h: (-h.normalized_score, tuple(h.tokens)))
    return done[:beam]


def _make_hyp(tokens, score):
    n_gen = max(len(tokens) - 1, 1)
    return Hypothesis(np.asarray(tokens, dtype=np.intp), score, score / n_gen)


# ----------------------------------------------------------------- metrics


def edit_distance(a, b):
    """Levenshtein distance with unit substitution/insertion/deletion costs."""
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ai in enumerate(a, start=1):
        cur = [i]
        for j, bj in enumerate(b, start=1):
            cur.append(min(
                prev[j] + 1,
                cur[j - 1] + 1,
                prev[j - 1] + (ai != bj),
            ))
        prev = cur
    return prev[-1]


def wer(hyp, ref):
    """Word error rate: word-level edit distance over reference word count."""
    ref_words = ref.split()
    if not ref_words:
        raise DataError("WER needs a non-empty reference")
    return edit_distance(hyp.split(), ref_words) / len(ref_words)


def corpus_wer(hyps, refs):
    """Total word-level edit distance over total reference words."""
    if len(hyps) != len(refs) or not refs:
        raise DataError(f"corpus WER needs matched non-empty lists, got {len(hyps)}/{len(refs)}")
    errors = total = 0
    for h, r in zip(hyps, refs):
        rw = r.split()
        if not rw:
            raise DataError("WER needs a non-empty reference")
        errors += edit_distance(h.split(), rw)
        total += len(rw)
    return errors / total


def token_accuracy(hyp, ref):
    """Character-token accuracy: 1 - edit_distance/len(ref), floored at 0."""
    if not ref:
        raise DataError("token accuracy needs a non-empty reference")
    return max(0.0, 1.0 - edit_distance(list(hyp), list(ref)) / len(ref))


def corpus_token_accuracy(hyps, refs):
    if len(hyps) != len(refs) or not refs:
        raise DataError("corpus token accuracy needs matched non-empty lists")
    dist = total = 0
    for h, r in zip(hyps, refs):
        if not r:
            raise DataError("token accuracy needs a non-empty reference")
        dist += edit_distance(list(h), list(r))
        total += len(r)
    return max(0.0, 1.0 - dist / total)


_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def bleu_tokenize(text):
    """The exact tokenization used by ``bleu``: runs of word characters are
    tokens, and every other non-space character is its own token."""
    return _TOKEN_RE.findall(text)


def _ngrams(tokens, order):
    return Counter(tuple(tokens[i:i + order]) for i in range(len(tokens) - order + 1))


def bleu(hyps, refs, max_order=4, smooth_add_one=False):
    """Corpus BLEU in [0, 100]: geometric mean of modified 1..4-gram
    precisions times the brevity penalty exp(1 - r/c) when c < r.

    Without smoothing, any zero n-gram precision makes the score 0 (the
    standard corpus convention); ``smooth_add_one`` adds 1 to every numerator
    and denominator instead. Orders with no n-grams anywhere in the corpus
    (sentences shorter than the order) are skipped, so an identity corpus
    scores 100 regardless of sentence lengths.
    """
    if len(hyps) != len(refs) or not refs:
        raise DataError(f"BLEU needs matched non-empty lists, got {len(hyps)} vs {len(refs)}")
    matches = [0] * max_order
    totals = [0] * max_order
    hyp_len = ref_len = 0
    for h, r in zip(hyps, refs):
        ht = bleu_tokenize(h)
        rt = bleu_tokenize(r)
        hyp_len += len(ht)
        ref_len += len(rt)
        for k in range(1, max_order + 1):
            hc = _ngrams(ht, k)
            rc = _ngrams(rt, k)
            totals[k - 1] += max(len(ht) - k + 1, 0)
            matches[k - 1] += sum(min(c, rc[g]) for g, c in hc.items())
    if hyp_len == 0:
        return 0.0
    log_p = 0.0
    used_orders = 0
    for m, t in zip(matches, totals):
        if t == 0:
            continue
        if smooth_add_one:
            m, t = m + 1, t + 1
        if m == 0:
            return 0.0
        log_p += math.log(m / t)
        used_orders += 1
    if used_orders == 0:
        return 0.0
    log_p /= used_orders
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p)


# ----------------------------------------------------------------- reports


def write_report(path, rows, metric_name, corpus_value):
    """Tab-separated per-utterance report plus one corpus summary line.
    Rows are (utt_id, hyp, ref, value)."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"utt_id\thyp\tref\t{metric_name}\n")
        for utt_id, hyp, ref, value in rows:
            f.write(f"{utt_id}\t{hyp}\t{ref}\t{value:.6f}\n")
        f.write(f"corpus\t{metric_name}\t{corpus_value:.6f}\n")
