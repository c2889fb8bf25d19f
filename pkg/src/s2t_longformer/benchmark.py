"""Empirical verification of the attention complexity claims.

``run_scaling`` times dense vs sliding-window attention over a doubling
ladder of sequence lengths and reports exact score-evaluation counts, median
wall time, and peak live tensor bytes. The counts are the exact complexity
witness; wall-time slopes corroborate them with wide tolerances since
constant factors dominate at small n.

``window_sweep`` trains the toy task briefly at several window sizes and
tabulates cost against quality, mirroring how one would pick a window.
"""

from __future__ import annotations

import csv
import tempfile
import time
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .attention import WindowConfig, count_score_evaluations, dense_attention, sliding_window_attention
from .audio import read_manifest
from .autograd import Tensor, tracker
from .errors import ConfigError

DEFAULT_LADDER = (256, 512, 1024, 2048, 4096)
SWEEP_SIZES = (512, 76, 60, 48)


@dataclass
class ScalingRow:
    pattern: str
    n: int
    w: int
    score_evals: int
    wall_ms: float | None  # None when the point could not be measured
    peak_bytes: int | None


@dataclass
class ScalingReport:
    rows: list
    slopes: dict  # pattern -> fitted log2(wall_ms) / log2(n) slope

    def summary_text(self):
        lines = ["pattern      n      w  score_evals   wall_ms   peak_bytes"]
        for r in self.rows:
            wall = f"{r.wall_ms:9.3f}" if r.wall_ms is not None else "unmeasured"
            peak = f"{r.peak_bytes}" if r.peak_bytes is not None else "-"
            lines.append(f"{r.pattern:<8} {r.n:6d} {r.w:6d} {r.score_evals:12d} {wall:>9} {peak:>12}")
        for pattern, slope in sorted(self.slopes.items()):
            lines.append(f"log-log wall-time slope [{pattern}]: {slope:.3f}")
        return "\n".join(lines) + "\n"


def _attention_once(pattern, q, k, v, cfg):
    if pattern == "dense":
        return dense_attention(q, k, v)
    if pattern == "sliding":
        return sliding_window_attention(q, k, v, cfg)
    raise ConfigError(f"unknown benchmark pattern {pattern!r}")


def run_scaling(patterns=("dense", "sliding"), n_ladder=DEFAULT_LADDER, w=48,
                repeats=5, heads=1, head_dim=64, seed=0):
    """Measure each pattern over the ladder; one warm-up iteration is
    excluded and the median of ``repeats`` timed iterations is reported.
    An out-of-memory ladder point is marked unmeasured and the run continues.
    """
    cfg = WindowConfig(w)
    rng = np.random.default_rng(seed)
    rows = []
    for pattern in patterns:
        for n in n_ladder:
            evals = count_score_evaluations(n, "sliding" if pattern == "sliding" else "dense", cfg)
            try:
                q = Tensor(rng.standard_normal((heads, n, head_dim)).astype(np.float32))
                k = Tensor(rng.standard_normal((heads, n, head_dim)).astype(np.float32))
                v = Tensor(rng.standard_normal((heads, n, head_dim)).astype(np.float32))
                with ag.no_grad():
                    _attention_once(pattern, q, k, v, cfg)  # warm-up
                    times = []
                    tracker.reset_peak()
                    base = tracker.current_bytes
                    for _ in range(repeats):
                        t0 = time.perf_counter()
                        out = _attention_once(pattern, q, k, v, cfg)
                        times.append((time.perf_counter() - t0) * 1000.0)
                        del out
                peak = tracker.peak_bytes - base
                rows.append(ScalingRow(pattern, n, w, evals, float(np.median(times)), peak))
            except MemoryError:
                rows.append(ScalingRow(pattern, n, w, evals, None, None))
    slopes = {}
    for pattern in patterns:
        pts = [(r.n, r.wall_ms) for r in rows if r.pattern == pattern and r.wall_ms is not None]
        if len(pts) >= 2:
            x = np.log2([p[0] for p in pts])
            y = np.log2([p[1] for p in pts])
            slopes[pattern] = float(np.polyfit(x, y, 1)[0])
    return ScalingReport(rows, slopes)


def write_scaling_csv(report, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["pattern", "n", "w", "score_evals", "wall_ms", "peak_bytes"])
        for r in report.rows:
            writer.writerow([
                r.pattern, r.n, r.w, r.score_evals,
                "" if r.wall_ms is None else repr(r.wall_ms),
                "" if r.peak_bytes is None else r.peak_bytes,
            ])


def read_scaling_csv(path):
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        for rec in csv.DictReader(f):
            rows.append(ScalingRow(
                pattern=rec["pattern"],
                n=int(rec["n"]),
                w=int(rec["w"]),
                score_evals=int(rec["score_evals"]),
                wall_ms=float(rec["wall_ms"]) if rec["wall_ms"] else None,
                peak_bytes=int(rec["peak_bytes"]) if rec["peak_bytes"] else None,
            ))
    return rows


# ----------------------------------------------------------------- window sweep


@dataclass
class SweepRow:
    w: int
    score_evals_per_epoch: int
    wall_ms_per_update: float
    metric_name: str
    metric: float


def window_sweep(train_manifest, test_manifest, sizes=SWEEP_SIZES, updates=300,
                 seed=0, eval_limit=None):
    """Train the toy ASR task once per window size and report cost vs WER.

    score_evals_per_epoch is the exact per-head count summed over the corpus;
    wall time is measured over the fixed update budget.
    """
    from .evaluation import corpus_wer, greedy_decode
    from .model import Model, ModelConfig
    from .text import build_vocab
    from .training import TrainConfig, Trainer, load_dataset

    rows = read_manifest(train_manifest)
    vocab = build_vocab([r.transcript for r in rows] + [r.translation for r in rows])
    results = []
    for w in sizes:
        model_cfg = ModelConfig(
            vocab_size=vocab.size, encoder_layers=2, decoder_layers=2, heads=4,
            embed_dim=64, ffn_dim=256, dropout=0.1, window=WindowConfig(w),
        )
        train_cfg = TrainConfig(
            peak_lr=1e-3, warmup_updates=max(updates // 10, 1), max_tokens_per_batch=2000,
            update_freq=1, max_updates=updates, seed=seed, valid_interval=max(updates, 1),
        )
        train_set = load_dataset(train_manifest, vocab, "asr")
        test_set = load_dataset(test_manifest, vocab, "asr")
        if eval_limit:
            test_set = test_set[:eval_limit]
        evals = sum(count_score_evaluations(u.features.shape[0], "sliding", WindowConfig(w))
                    for u in train_set)
        with tempfile.TemporaryDirectory() as tmp:
            model = Model(model_cfg, seed=seed)
            trainer = Trainer(model, train_cfg, train_set, [], tmp, "asr")
            t0 = time.perf_counter()
            trainer.run()
            wall_per_update = (time.perf_counter() - t0) * 1000.0 / updates
        hyps, refs = [], []
        for utt in test_set:
            hyp = greedy_decode(model, utt.features, max_len=24)
            hyps.append(vocab.decode(hyp.tokens))
            refs.append(utt.reference)
        results.append(SweepRow(w, evals, wall_per_update, "wer", corpus_wer(hyps, refs)))
    return results


def write_sweep_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["w", "score_evals_per_epoch", "wall_ms_per_update", "metric_name", "metric"])
        for r in rows:
            writer.writerow([r.w, r.score_evals_per_epoch, repr(r.wall_ms_per_update),
                             r.metric_name, repr(r.metric)])


def sweep_summary_text(rows):
    lines = ["     w  score_evals/epoch  wall_ms/update   metric"]
    for r in rows:
        lines.append(f"{r.w:6d} {r.score_evals_per_epoch:18d} {r.wall_ms_per_update:15.2f}"
                     f"   {r.metric_name}={r.metric:.4f}")
    return "\n".join(lines) + "\n"
