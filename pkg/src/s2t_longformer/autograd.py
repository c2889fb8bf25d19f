"""Reverse-mode automatic differentiation over dense float32 arrays.

Executed operations are recorded on a global tape and replayed in reverse by
``backward()``. Storage is float32; reductions accumulate in float64 before
casting back, which keeps finite-difference gradient checks quiet without
doubling memory.

Gradients accumulate additively (``+=``) into every ``requires_grad`` tensor,
so several backward passes sum into the same buffers; this is what makes
micro-batch gradient accumulation exact.

Broadcasting is deliberately narrow: elementwise ops accept a Python scalar or
a smaller operand whose shape equals the trailing dimensions of the larger one
(the bias case). Anything else needs an explicit reshape.
"""

from __future__ import annotations

import weakref
from contextlib import contextmanager

import numpy as np

from .errors import DataError, ShapeError


class AllocationTracker:
    """Byte accounting for tensor buffers.

    Every Tensor registers its buffer size at construction and deregisters it
    when collected, so ``peak_bytes`` tracks the peak of live tensor memory.
    This is the accounting hook the benchmark module reads; raw numpy
    temporaries inside an op are not counted, only tensors that land on the
    tape or in user hands.
    """

    def __init__(self):
        self.current_bytes = 0
        self.peak_bytes = 0

    def note_alloc(self, nbytes):
        self.current_bytes += nbytes
        if self.current_bytes > self.peak_bytes:
            self.peak_bytes = self.current_bytes

    def note_free(self, nbytes):
        self.current_bytes -= nbytes

    def reset_peak(self):
        self.peak_bytes = self.current_bytes


tracker = AllocationTracker()


class TapeOp:
    """One recorded operation: inputs, output, and the rule mapping the
    output gradient to input gradients (a tuple aligned with ``inputs``)."""

    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered log of executed ops. Append order is execution order, so an
    op's inputs are always produced earlier: the list is topologically
    sorted by construction."""

    def __init__(self):
        self.ops = []

    def clear(self):
        self.ops.clear()


_tape = Tape()
_grad_enabled = True


def active_tape():
    return _tape


@contextmanager
def no_grad():
    """Disable recording inside the block (inference / decoding)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense n-dimensional float32 array with optional tape participation."""

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float32)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        nbytes = self.data.nbytes
        tracker.note_alloc(nbytes)
        weakref.finalize(self, tracker.note_free, nbytes)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # operator sugar; scalars are plain Python floats
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, mul(other, -1.0))
        return add(self, -float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self):
        return sum_(self)

    def mean(self):
        return mean_(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def record_op(inputs, output, backward_fn):
    """Put an op on the active tape when recording is on and any input needs
    gradients. Extension point for custom ops (the attention module uses it).

    ``backward_fn(grad_out) -> tuple[np.ndarray | None, ...]`` returns one
    gradient per input, or None for inputs that need none.
    """
    if _grad_enabled and any(t.requires_grad for t in inputs):
        output.requires_grad = True
        _tape.ops.append(TapeOp(tuple(inputs), output, backward_fn))
    return output


def backward(loss):
    """Accumulate d(loss)/d(tensor) into every reachable requires_grad tensor.

    The loss must be a scalar. Ops are visited exactly once, in reverse
    execution order; the tape is consumed afterwards.
    """
    if loss.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    needed = {id(loss)}
    marked = []
    for op in reversed(_tape.ops):
        if id(op.output) in needed:
            marked.append(op)
            for t in op.inputs:
                needed.add(id(t))
    if loss.grad is None:
        loss.grad = np.ones_like(loss.data)
    else:
        loss.grad += np.ones_like(loss.data)
    for op in marked:  # already in reverse execution order
        grads = op.backward_fn(op.output.grad)
        for t, g in zip(op.inputs, grads):
            if g is None or not t.requires_grad:
                continue
            if t.grad is None:
                # copy: a bwd rule may hand back (a view of) the output grad
                t.grad = np.array(g, dtype=np.float32)
            else:
                t.grad += g
    _tape.clear()


# ---------------------------------------------------------------- helpers


def _sum_to_trailing(grad, shape):
    """Reduce a gradient back to a trailing-broadcast operand's shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    return grad.astype(np.float32, copy=False)


def _check_trailing(a_shape, b_shape):
    small, big = (a_shape, b_shape) if len(a_shape) <= len(b_shape) else (b_shape, a_shape)
    if small != big[len(big) - len(small):]:
        raise ShapeError(f"shapes {a_shape} and {b_shape} do not align on trailing dimensions")


# ---------------------------------------------------------------- elementwise


def add(a, b):
    if not isinstance(b, Tensor):
        out = Tensor(a.data + np.float32(b))
        return record_op((a,), out, lambda g: (g,))
    if a.shape != b.shape:
        _check_trailing(a.shape, b.shape)
    out = Tensor(a.data + b.data)

    def bwd(g):
        return (_sum_to_trailing(g, a.shape), _sum_to_trailing(g, b.shape))

    return record_op((a, b), out, bwd)


def mul(a, b):
    if not isinstance(b, Tensor):
        s = np.float32(b)
        out = Tensor(a.data * s)
        return record_op((a,), out, lambda g: (g * s,))
    if a.shape != b.shape:
        _check_trailing(a.shape, b.shape)
    out = Tensor(a.data * b.data)

    def bwd(g):
        return (
            _sum_to_trailing(g * b.data, a.shape),
            _sum_to_trailing(g * a.data, b.shape),
        )

    return record_op((a, b), out, bwd)


def relu(x):
    out = Tensor(np.maximum(x.data, 0.0))
    mask = x.data > 0

    def bwd(g):
        return (g * mask,)

    return record_op((x,), out, bwd)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    """Matrix product over the last two axes. Leading (batch) dimensions must
    match exactly; there is no leading-dim broadcasting."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return (ga, gb)

    return record_op((a, b), out, bwd)


def reshape(x, shape):
    out = Tensor(np.reshape(x.data, shape))
    orig = x.shape

    def bwd(g):
        return (np.reshape(g, orig),)

    return record_op((x,), out, bwd)


def transpose(x, axes):
    out = Tensor(np.transpose(x.data, axes))
    inv = tuple(np.argsort(axes))

    def bwd(g):
        return (np.transpose(g, inv),)

    return record_op((x,), out, bwd)


# ---------------------------------------------------------------- reductions


def sum_(x):
    out = Tensor(np.sum(x.data, dtype=np.float64))

    def bwd(g):
        return (np.broadcast_to(g, x.shape).astype(np.float32),)

    return record_op((x,), out, bwd)


def mean_(x):
    n = x.size
    out = Tensor(np.sum(x.data, dtype=np.float64) / n)

    def bwd(g):
        return ((np.broadcast_to(g, x.shape) / n).astype(np.float32),)

    return record_op((x,), out, bwd)


# ---------------------------------------------------------------- neural ops


def softmax(x, axis=-1):
    """Numerically stabilized softmax along ``axis``.

    Entries masked with -inf get zero weight. A row that is entirely -inf
    produces an all-zeros row (not NaN); rows with at least one finite entry
    sum to 1.
    """
    m = np.max(x.data, axis=axis, keepdims=True)
    m = np.where(np.isneginf(m), np.float32(0.0), m)
    e = np.exp(x.data - m)
    s = np.sum(e, axis=axis, keepdims=True, dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        y = np.where(s > 0, e / np.maximum(s, 1e-300), 0.0).astype(np.float32)
    out = Tensor(y)

    def bwd(g):
        dot = np.sum(g * y, axis=axis, keepdims=True, dtype=np.float64).astype(np.float32)
        return (y * (g - dot),)

    return record_op((x,), out, bwd)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis, then scale and shift.

    gamma and beta have shape (D,) where D is the last dimension of x.
    Statistics accumulate in float64.
    """
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise ShapeError(
            f"layer_norm parameter shapes {gamma.shape}/{beta.shape} do not match input {x.shape}"
        )
    mu = np.mean(x.data, axis=-1, keepdims=True, dtype=np.float64)
    var = np.mean((x.data - mu) ** 2, axis=-1, keepdims=True, dtype=np.float64)
    sigma = np.sqrt(var + eps)
    xhat = ((x.data - mu) / sigma).astype(np.float32)
    out = Tensor(xhat * gamma.data + beta.data)
    inv_sigma = (1.0 / sigma).astype(np.float32)

    def bwd(g):
        lead = tuple(range(g.ndim - 1))
        dgamma = np.sum(g * xhat, axis=lead, dtype=np.float64).astype(np.float32)
        dbeta = np.sum(g, axis=lead, dtype=np.float64).astype(np.float32)
        gg = g * gamma.data
        m1 = np.mean(gg, axis=-1, keepdims=True, dtype=np.float64)
        m2 = np.mean(gg * xhat, axis=-1, keepdims=True, dtype=np.float64)
        dx = (inv_sigma * (gg - m1 - xhat * m2)).astype(np.float32)
        return (dx, dgamma, dbeta)

    return record_op((x, gamma, beta), out, bwd)


def dropout(x, p, rng, training):
    """Inverted dropout: keep with probability 1-p and scale by 1/(1-p) at
    train time; identity at eval time."""
    if not training or p <= 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ShapeError(f"dropout probability {p} outside [0, 1)")
    keep = (rng.random(x.shape) >= p).astype(np.float32) / np.float32(1.0 - p)
    out = Tensor(x.data * keep)

    def bwd(g):
        return (g * keep,)

    return record_op((x,), out, bwd)


def embedding_lookup(table, ids):
    """Select rows of ``table`` ([V, D]) by integer id; grads scatter-add back."""
    ids = np.asarray(ids, dtype=np.intp)
    if ids.ndim != 1:
        raise ShapeError(f"embedding ids must be 1-D, got shape {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding id out of range for table of {table.shape[0]} rows")
    out = Tensor(table.data[ids])

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return record_op((table,), out, bwd)


def conv1d(x, weight, bias, stride=1, padding=0):
    """1-D convolution along the first axis of ``x`` [n, C_in].

    weight is [C_out, C_in, k]; output is [n_out, C_out] with
    n_out = (n + 2*padding - k) // stride + 1.
    """
    n, c_in = x.shape
    c_out, c_in_w, k = weight.shape
    if c_in_w != c_in:
        raise ShapeError(f"conv1d channel mismatch: input {c_in}, weight {c_in_w}")
    n_out = (n + 2 * padding - k) // stride + 1
    if n_out < 1:
        raise ShapeError(f"conv1d input of length {n} too short for kernel {k} (padding {padding})")
    xp = np.pad(x.data, ((padding, padding), (0, 0)))
    idx = (np.arange(n_out) * stride)[:, None] + np.arange(k)[None, :]  # [n_out, k]
    cols = xp[idx]  # [n_out, k, C_in]
    out = Tensor(np.einsum("okc,dck->od", cols, weight.data, optimize=True) + bias.data)

    def bwd(g):
        dw = np.einsum("od,okc->dck", g, cols, optimize=True).astype(np.float32)
        db = np.sum(g, axis=0, dtype=np.float64).astype(np.float32)
        dcols = np.einsum("od,dck->okc", g, weight.data, optimize=True)
        dxp = np.zeros_like(xp)
        np.add.at(dxp, idx, dcols)
        dx = dxp[padding:padding + n] if padding else dxp
        return (dx.astype(np.float32), dw, db)

    return record_op((x, weight, bias), out, bwd)


def cross_entropy_logits(logits, targets, smoothing=0.0, pad_id=None):
    """Label-smoothed cross-entropy from raw logits.

    logits: [T, V]; targets: int array [T]. Positions equal to ``pad_id`` are
    excluded from both the loss and its normalizer. The loss per kept row is
    (1-eps) * (-log p_target) + eps * mean_v(-log p_v), averaged over kept
    rows. Raises if every position is padding.
    """
    targets = np.asarray(targets, dtype=np.intp)
    if logits.ndim != 2 or targets.ndim != 1 or targets.shape[0] != logits.shape[0]:
        raise ShapeError(f"cross entropy shapes: logits {logits.shape}, targets {targets.shape}")
    t, v = logits.shape
    keep = np.ones(t, dtype=bool) if pad_id is None else targets != pad_id
    n_keep = int(keep.sum())
    if n_keep == 0:
        raise DataError("cross entropy over an all-padding target sequence")
    z = logits.data.astype(np.float64)
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax + np.log(np.sum(np.exp(z - zmax), axis=1, keepdims=True))
    logp = z - lse  # [T, V]
    nll = -logp[np.arange(t), targets]
    smooth = -logp.mean(axis=1)
    rows = (1.0 - smoothing) * nll + smoothing * smooth
    out = Tensor(rows[keep].mean())
    probs = np.exp(logp).astype(np.float32)

    def bwd(g):
        q = np.full((t, v), smoothing / v, dtype=np.float32)
        q[np.arange(t), targets] += np.float32(1.0 - smoothing)
        dlogits = (probs - q) * (np.float32(g) / n_keep)
        dlogits[~keep] = 0.0
        return (dlogits,)

    return record_op((logits,), out, bwd)
