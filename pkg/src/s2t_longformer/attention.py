"""Scaled dot-product attention in three interchangeable patterns.

``dense_attention`` is the ordinary quadratic kind and doubles as the oracle
for the windowed variants. ``sliding_window_attention`` restricts each query
to the w/2 nearest positions on each side (plus itself);
``dilated_window_attention`` samples those neighbors at stride d, widening the
reach to (w/2)*d per side at the same cost.

Windowed attention never materializes an n-by-n score matrix: scores live in
a banded strip of shape [heads, n, w+1] where slot t of row i addresses
position i + (t - w/2) * d. Out-of-range slots are masked with -inf before the
softmax, so windows clip cleanly at sequence boundaries and gradients flow
only through attended pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, matmul, record_op, softmax, transpose, dropout as drop_op
from .errors import ConfigError, ShapeError

NEG_INF = np.float32(-np.inf)


@dataclass(frozen=True)
class WindowConfig:
    """Sliding-window parameters: total width ``window_size`` (even, so each
    side gets window_size/2 neighbors) and ``dilation`` (1 = contiguous)."""

    window_size: int
    dilation: int = 1

    def __post_init__(self):
        if self.window_size <= 0 or self.window_size % 2 != 0:
            raise ConfigError(f"window_size must be a positive even integer, got {self.window_size}")
        if self.dilation < 1:
            raise ConfigError(f"dilation must be >= 1, got {self.dilation}")


def band_offsets(cfg):
    """Signed offsets of the w+1 band slots: multiples of d in [-w/2*d, w/2*d]."""
    half = cfg.window_size // 2
    return (np.arange(-half, half + 1) * cfg.dilation).astype(np.intp)


def band_index_map(n, cfg):
    """Per-query attended indices and validity for a length-n sequence.

    Returns (indices, valid): both [n, w+1]. indices are clipped into range
    for safe gathering; valid marks the slots actually inside the sequence.
    """
    if n < 1:
        raise ShapeError("attention over an empty sequence")
    j = np.arange(n)[:, None] + band_offsets(cfg)[None, :]
    valid = (j >= 0) & (j < n)
    return np.clip(j, 0, n - 1), valid


def _slot_ranges(n, cfg):
    """Per band slot: (offset, lo, hi) where queries i in [lo, hi) have their
    slot-t neighbor i+offset inside the sequence."""
    ranges = []
    for t, off in enumerate(band_offsets(cfg)):
        off = int(off)
        lo = max(0, -off)
        hi = n - max(0, off)
        ranges.append((t, off, lo, hi))
    return ranges


def _band_scores(q, k, cfg):
    """Banded attention scores: [h, n, w+1] with q . k / sqrt(dk) in valid
    slots and -inf elsewhere.

    Custom op working one diagonal offset at a time over aligned slices, so
    nothing quadratic (or gather-shaped) is ever allocated; memory stays
    O(n * w) and slice arithmetic keeps the backward scatter-free.
    """
    h, n, dk = q.shape
    if n < 1:
        raise ShapeError("attention over an empty sequence")
    scale = np.float32(1.0 / np.sqrt(dk))
    ranges = _slot_ranges(n, cfg)
    scores = np.full((h, n, cfg.window_size + 1), NEG_INF, dtype=np.float32)
    for t, off, lo, hi in ranges:
        if hi <= lo:
            continue
        scores[:, lo:hi, t] = np.einsum(
            "hid,hid->hi", q.data[:, lo:hi], k.data[:, lo + off:hi + off]
        ) * scale
    out = Tensor(scores)

    def bwd(g):
        dq = np.zeros_like(q.data)
        dk_ = np.zeros_like(k.data)
        for t, off, lo, hi in ranges:
            if hi <= lo:
                continue
            gs = g[:, lo:hi, t, None] * scale
            dq[:, lo:hi] += gs * k.data[:, lo + off:hi + off]
            dk_[:, lo + off:hi + off] += gs * q.data[:, lo:hi]
        return (dq, dk_)

    return record_op((q, k), out, bwd)


def _band_apply(weights, v, cfg):
    """Weighted sum of banded values: [h, n, w+1] x [h, n, dv] -> [h, n, dv].
    Invalid slots carry exactly zero weight (softmax of -inf), so skipping
    them per offset is exact."""
    h, n, dv = v.shape
    ranges = _slot_ranges(n, cfg)
    out_data = np.zeros((h, n, dv), dtype=np.float32)
    for t, off, lo, hi in ranges:
        if hi <= lo:
            continue
        out_data[:, lo:hi] += weights.data[:, lo:hi, t, None] * v.data[:, lo + off:hi + off]
    out = Tensor(out_data)

    def bwd(g):
        dw = np.zeros_like(weights.data)
        dv_ = np.zeros_like(v.data)
        for t, off, lo, hi in ranges:
            if hi <= lo:
                continue
            dw[:, lo:hi, t] = np.einsum(
                "hid,hid->hi", g[:, lo:hi], v.data[:, lo + off:hi + off]
            )
            dv_[:, lo + off:hi + off] += weights.data[:, lo:hi, t, None] * g[:, lo:hi]
        return (dw, dv_)

    return record_op((weights, v), out, bwd)


def _check_qkv(q, k, v):
    if q.ndim != 3 or k.ndim != 3 or v.ndim != 3:
        raise ShapeError(f"attention expects [heads, n, dim] tensors, got {q.shape}/{k.shape}/{v.shape}")
    if q.shape[0] != k.shape[0] or k.shape[0] != v.shape[0]:
        raise ShapeError(f"head counts differ: {q.shape}/{k.shape}/{v.shape}")
    if q.shape[2] != k.shape[2]:
        raise ShapeError(f"query dim {q.shape[2]} != key dim {k.shape[2]}")
    if k.shape[1] != v.shape[1]:
        raise ShapeError(f"key length {k.shape[1]} != value length {v.shape[1]}")


def _windowed(q, k, v, cfg, p_drop, rng, training, weights_sink):
    _check_qkv(q, k, v)
    if q.shape[1] != k.shape[1]:
        raise ShapeError("windowed attention is self-attention: query and key lengths must match")
    scores = _band_scores(q, k, cfg)
    weights = softmax(scores, axis=-1)
    if weights_sink is not None:
        weights_sink.append(weights)
    weights = drop_op(weights, p_drop, rng, training)
    return _band_apply(weights, v, cfg)


def sliding_window_attention(q, k, v, cfg, p_drop=0.0, rng=None, training=False, weights_sink=None):
    """Self-attention where query i attends {j : |i-j| <= w/2}, clipped at the
    boundaries. Requires dilation 1; score memory is O(n * w)."""
    if cfg.dilation != 1:
        raise ConfigError(f"sliding window requires dilation 1, got {cfg.dilation}")
    return _windowed(q, k, v, cfg, p_drop, rng, training, weights_sink)


def dilated_window_attention(q, k, v, cfg, p_drop=0.0, rng=None, training=False, weights_sink=None):
    """Self-attention over {i + t*d : |t| <= w/2}; d=1 reproduces the plain
    sliding window bit for bit."""
    return _windowed(q, k, v, cfg, p_drop, rng, training, weights_sink)


def causal_mask(n):
    """Additive [n, n] mask: 0 on and below the diagonal, -inf above."""
    m = np.zeros((n, n), dtype=np.float32)
    m[np.triu_indices(n, k=1)] = NEG_INF
    return m


def dense_attention(q, k, v, causal=False, p_drop=0.0, rng=None, training=False, weights_sink=None):
    """Standard scaled dot-product attention; the quadratic baseline and the
    oracle for the windowed patterns. Query length may differ from key length
    (cross-attention); ``causal`` applies a lower-triangular mask and needs
    matching lengths."""
    _check_qkv(q, k, v)
    if q.shape[1] < 1 or k.shape[1] < 1:
        raise ShapeError("attention over an empty sequence")
    scale = 1.0 / float(np.sqrt(q.shape[2]))
    scores = matmul(q, transpose(k, (0, 2, 1))) * scale
    if causal:
        if q.shape[1] != k.shape[1]:
            raise ShapeError("causal attention needs equal query and key lengths")
        scores = scores + Tensor(causal_mask(q.shape[1]))
    weights = softmax(scores, axis=-1)
    if weights_sink is not None:
        weights_sink.append(weights)
    weights = drop_op(weights, p_drop, rng, training)
    return matmul(weights, v)


def cross_attention(q, k, v, p_drop=0.0, rng=None, training=False, weights_sink=None):
    """Dense attention from every query position to every key position; the
    two lengths are unconstrained (text queries over spectrogram keys)."""
    return dense_attention(q, k, v, causal=False, p_drop=p_drop, rng=rng,
                           training=training, weights_sink=weights_sink)


def count_score_evaluations(n, pattern, cfg=None):
    """Exact number of query-key score evaluations per head.

    dense -> n^2; sliding/dilated -> the summed clipped window sizes, which is
    at most n * (w + 1).
    """
    if n < 1:
        raise ShapeError(f"sequence length must be >= 1, got {n}")
    if pattern == "dense":
        return n * n
    if pattern in ("sliding", "dilated"):
        if cfg is None:
            raise ConfigError(f"pattern {pattern!r} needs a WindowConfig")
        _, valid = band_index_map(n, cfg)
        return int(valid.sum())
    raise ConfigError(f"unknown attention pattern {pattern!r}")
