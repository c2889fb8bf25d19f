import numpy as np
import pytest

import s2t_longformer.autograd as ag
from s2t_longformer.autograd import (
    Tensor,
    conv1d,
    cross_entropy_logits,
    dropout,
    embedding_lookup,
    layer_norm,
    matmul,
    relu,
    softmax,
)
from s2t_longformer.errors import DataError, ShapeError

from helpers import check_grads, fd_grad, rel_err


def rand(shape, seed, lo=-1.0, hi=1.0):
    return np.random.default_rng(seed).uniform(lo, hi, size=shape).astype(np.float32)


# ---------------------------------------------------------------- matmul


def test_matmul_identity():
    x = rand((2, 3), 0)
    out = matmul(Tensor(np.eye(2, dtype=np.float32)), Tensor(x))
    np.testing.assert_allclose(out.data, x, rtol=1e-6)


def test_matmul_hand_example():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[0.0], [1.0]])
    np.testing.assert_allclose(matmul(a, b).data, [[2.0], [4.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))


def test_matmul_gradcheck_spec_shapes():
    a = rand((3, 4), 1)
    b = rand((4, 2), 2)
    check_grads(lambda ta, tb: matmul(ta, tb).sum(), [a, b])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_matmul_gradcheck_random_shapes(seed):
    rng = np.random.default_rng(100 + seed)
    m, k, n = rng.integers(1, 6, size=3)
    a = rand((m, k), seed)
    b = rand((k, n), seed + 50)
    w = rand((m, n), seed + 90)  # random projection so the loss mixes entries
    check_grads(lambda ta, tb: (matmul(ta, tb) * Tensor(w)).sum(), [a, b])


def test_batched_matmul_gradcheck():
    a = rand((2, 3, 4), 3)
    b = rand((2, 4, 2), 4)
    check_grads(lambda ta, tb: matmul(ta, tb).sum(), [a, b])


# ---------------------------------------------------------------- softmax


def test_softmax_uniform():
    out = softmax(Tensor([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-7)


def test_softmax_large_values_no_overflow():
    out = softmax(Tensor([1000.0, 1000.0]))
    assert np.all(np.isfinite(out.data))
    np.testing.assert_allclose(out.data, [0.5, 0.5], atol=1e-7)


def test_softmax_closed_form():
    out = softmax(Tensor([0.0, float(np.log(3.0))]))
    np.testing.assert_allclose(out.data, [0.25, 0.75], atol=1e-6)


def test_softmax_rows_sum_to_one_nonnegative():
    x = rand((5, 7), 11, lo=-3, hi=3)
    out = softmax(Tensor(x), axis=-1)
    assert np.all(out.data >= 0)
    np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(5), atol=1e-5)


def test_softmax_all_masked_row_is_zeros_not_nan():
    x = np.array([[-np.inf, -np.inf], [0.0, 1.0]], dtype=np.float32)
    out = softmax(Tensor(x), axis=-1)
    assert np.all(np.isfinite(out.data))
    np.testing.assert_allclose(out.data[0], [0.0, 0.0])
    np.testing.assert_allclose(out.data[1].sum(), 1.0, atol=1e-6)


def test_softmax_partial_mask_renormalizes():
    x = np.array([[0.5, -np.inf, 0.5]], dtype=np.float32)
    out = softmax(Tensor(x), axis=-1)
    np.testing.assert_allclose(out.data, [[0.5, 0.0, 0.5]], atol=1e-6)


@pytest.mark.parametrize("seed", [5, 6, 7])
def test_softmax_gradcheck(seed):
    x = rand((3, 5), seed, lo=-2, hi=2)
    w = rand((3, 5), seed + 10)
    check_grads(lambda t: (softmax(t, axis=-1) * Tensor(w)).sum(), [x])


# ---------------------------------------------------------------- backward contracts


def test_backward_sum_gives_ones():
    x = Tensor(rand((3, 2), 8), requires_grad=True)
    x.sum().backward()
    np.testing.assert_allclose(x.grad, np.ones((3, 2)))


def test_backward_sum_of_squares_closed_form():
    x = Tensor([1.0, 2.0], requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_allclose(x.grad, [2.0, 4.0], rtol=1e-6)


def test_backward_rejects_non_scalar():
    x = Tensor(rand((2, 2), 9), requires_grad=True)
    with pytest.raises(ShapeError):
        ag.backward(x + 1.0)
    ag.active_tape().clear()


def test_backward_accumulates_across_calls():
    x = Tensor([1.0, 1.0], requires_grad=True)
    x.sum().backward()
    x.sum().backward()
    np.testing.assert_allclose(x.grad, [2.0, 2.0])


def test_backward_consumes_tape():
    x = Tensor([1.0], requires_grad=True)
    (x * 2.0).sum().backward()
    assert len(ag.active_tape().ops) == 0


def test_backward_diamond_graph_visits_each_op_once():
    calls = []

    def counting_identity(t, tag):
        out = Tensor(t.data.copy())

        def bwd(g):
            calls.append(tag)
            return (g,)

        return ag.record_op((t,), out, bwd)

    x = Tensor([2.0], requires_grad=True)
    shared = counting_identity(x, "shared")
    left = counting_identity(shared, "left")
    right = counting_identity(shared, "right")
    (left + right).sum().backward()
    assert sorted(calls) == ["left", "right", "shared"]
    np.testing.assert_allclose(x.grad, [2.0])


def test_tape_is_topologically_ordered():
    x = Tensor(rand((2, 2), 10), requires_grad=True)
    y = relu(x)
    z = matmul(y, y)
    z.sum()
    ops = ag.active_tape().ops
    produced = {id(x): -1}
    for i, op in enumerate(ops):
        for inp in op.inputs:
            assert id(inp) in produced, "op consumed a tensor produced later"
        produced[id(op.output)] = i
    ag.active_tape().clear()


def test_composite_graph_gradcheck():
    x = rand((4, 3), 12, lo=0.2, hi=1.2)
    w = rand((3, 3), 13)

    def loss(tx, tw):
        h = relu(matmul(tx, tw))
        return (softmax(h, axis=-1) * Tensor(np.ones((4, 3), np.float32))).sum() + (h * h).mean()

    check_grads(loss, [x, w])


def test_backward_determinism_bit_identical():
    def run():
        x = Tensor(rand((6, 5), 21), requires_grad=True)
        w = Tensor(rand((5, 4), 22), requires_grad=True)
        h = relu(matmul(x, w))
        loss = (softmax(h, axis=-1)).sum() + (h * h).mean()
        loss.backward()
        return x.grad.copy(), w.grad.copy()

    g1 = run()
    g2 = run()
    assert np.array_equal(g1[0], g2[0]) and np.array_equal(g1[1], g2[1])


def test_no_grad_disables_recording():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with ag.no_grad():
        y = (x * 3.0).sum()
    assert not y.requires_grad
    assert len(ag.active_tape().ops) == 0


# ---------------------------------------------------------------- elementwise ops


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_add_gradcheck(seed):
    a = rand((3, 4), seed)
    b = rand((3, 4), seed + 30)
    check_grads(lambda ta, tb: (ta + tb).sum(), [a, b])


def test_add_bias_broadcast_gradcheck():
    x = rand((4, 3), 31)
    b = rand((3,), 32)
    w = rand((4, 3), 33)
    check_grads(lambda tx, tb: ((tx + tb) * Tensor(w)).sum(), [x, b])


def test_add_rejects_non_trailing_broadcast():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((4, 3))) + Tensor(np.zeros((4,)))


@pytest.mark.parametrize("seed", [3, 4, 5])
def test_mul_gradcheck(seed):
    a = rand((2, 5), seed)
    b = rand((2, 5), seed + 40)
    check_grads(lambda ta, tb: (ta * tb).sum(), [a, b])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_relu_gradcheck(seed):
    # keep inputs away from the kink at 0
    x = rand((4, 4), seed + 60)
    x = np.where(np.abs(x) < 0.05, 0.2, x).astype(np.float32)
    check_grads(lambda t: (relu(t) * Tensor(rand((4, 4), seed + 61))).sum(), [x])


# ---------------------------------------------------------------- layer norm


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_layer_norm_gradcheck(seed):
    x = rand((3, 6), seed + 70, lo=-2, hi=2)
    gamma = rand((6,), seed + 71, lo=0.5, hi=1.5)
    beta = rand((6,), seed + 72)
    w = rand((3, 6), seed + 73)
    check_grads(lambda tx, tg, tb: (layer_norm(tx, tg, tb) * Tensor(w)).sum(), [x, gamma, beta])


def test_layer_norm_normalizes():
    x = Tensor(rand((5, 8), 75, lo=-4, hi=4))
    out = layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8)))
    np.testing.assert_allclose(out.data.mean(axis=-1), np.zeros(5), atol=1e-5)
    np.testing.assert_allclose(out.data.std(axis=-1), np.ones(5), atol=1e-3)


# ---------------------------------------------------------------- dropout


def test_dropout_eval_is_identity():
    x = Tensor(rand((3, 3), 80))
    assert dropout(x, 0.5, None, training=False) is x


def test_dropout_inverted_scaling_preserves_mean():
    rng = np.random.default_rng(0)
    x = Tensor(np.ones((200, 200), dtype=np.float32))
    out = dropout(x, 0.25, rng, training=True)
    kept = out.data[out.data > 0]
    np.testing.assert_allclose(kept.flat[0], 1.0 / 0.75, rtol=1e-6)
    assert abs(out.data.mean() - 1.0) < 0.02


def test_dropout_gradcheck_fixed_mask():
    x = rand((4, 4), 81)

    def loss(t):
        return (dropout(t, 0.3, np.random.default_rng(7), training=True)
                * Tensor(rand((4, 4), 82))).sum()

    check_grads(loss, [x])


# ---------------------------------------------------------------- embedding


def test_embedding_lookup_selects_rows():
    table = Tensor(np.arange(12, dtype=np.float32).reshape(4, 3))
    out = embedding_lookup(table, [2, 0, 2])
    np.testing.assert_allclose(out.data, [[6, 7, 8], [0, 1, 2], [6, 7, 8]])


def test_embedding_gradcheck_with_repeats():
    table = rand((5, 3), 83)
    ids = np.array([0, 2, 2, 4])
    w = rand((4, 3), 84)
    check_grads(lambda t: (embedding_lookup(t, ids) * Tensor(w)).sum(), [table])


def test_embedding_rejects_out_of_range():
    with pytest.raises(ShapeError):
        embedding_lookup(Tensor(np.zeros((3, 2))), [3])


# ---------------------------------------------------------------- conv1d


@pytest.mark.parametrize("n,stride,padding", [(8, 2, 2), (5, 1, 0), (1, 2, 2)])
def test_conv1d_gradcheck(n, stride, padding):
    x = rand((n, 3), 90 + n)
    w = rand((4, 3, min(5, n + 2 * padding)), 91 + n)
    b = rand((4,), 92 + n)
    check_grads(lambda tx, tw, tb: conv1d(tx, tw, tb, stride=stride, padding=padding).sum(),
                [x, w, b])


def test_conv1d_matches_manual_computation():
    x = np.arange(6, dtype=np.float32).reshape(6, 1)
    w = np.ones((1, 1, 3), dtype=np.float32)
    b = np.zeros(1, dtype=np.float32)
    out = conv1d(Tensor(x), Tensor(w), Tensor(b), stride=1, padding=1)
    expected = [[1], [3], [6], [9], [12], [9]]  # moving 3-sum with zero padding
    np.testing.assert_allclose(out.data, expected)


def test_conv1d_too_short_raises():
    with pytest.raises(ShapeError):
        conv1d(Tensor(np.zeros((1, 2))), Tensor(np.zeros((2, 2, 5))), Tensor(np.zeros(2)),
               stride=2, padding=0)


# ---------------------------------------------------------------- reshape / transpose


def test_reshape_transpose_gradcheck():
    x = rand((2, 3, 4), 95)
    w = rand((4, 6), 96)

    def loss(t):
        return (t.transpose(2, 0, 1).reshape(4, 6) * Tensor(w)).sum()

    check_grads(loss, [x])


# ---------------------------------------------------------------- cross entropy


def test_cross_entropy_uniform_logits_is_log_v():
    logits = Tensor(np.zeros((3, 7), dtype=np.float32))
    for eps in (0.0, 0.1, 0.5):
        loss = cross_entropy_logits(logits, [1, 2, 3], smoothing=eps)
        np.testing.assert_allclose(loss.item(), np.log(7), rtol=1e-6)


def test_cross_entropy_no_smoothing_is_standard():
    logits = np.log(np.array([[0.9, 0.1]], dtype=np.float32))
    loss = cross_entropy_logits(Tensor(logits), [0], smoothing=0.0)
    np.testing.assert_allclose(loss.item(), -np.log(0.9), rtol=1e-5)


def test_cross_entropy_all_pad_raises():
    with pytest.raises(DataError):
        cross_entropy_logits(Tensor(np.zeros((2, 4))), [0, 0], pad_id=0)


@pytest.mark.parametrize("seed,pad", [(0, None), (1, None), (2, 0)])
def test_cross_entropy_gradcheck(seed, pad):
    logits = rand((5, 6), 97 + seed, lo=-2, hi=2)
    targets = np.array([1, 4, 0, 3, 5])
    check_grads(
        lambda t: cross_entropy_logits(t, targets, smoothing=0.1, pad_id=pad), [logits]
    )


# ---------------------------------------------------------------- allocation tracker


def test_tracker_counts_tensor_bytes():
    before = ag.tracker.current_bytes
    t = Tensor(np.zeros((256, 256), dtype=np.float32))
    assert ag.tracker.current_bytes - before >= 256 * 256 * 4
    del t
    assert ag.tracker.current_bytes == before


def test_tracker_peak_resets():
    base = ag.tracker.current_bytes
    ag.tracker.reset_peak()
    t = Tensor(np.zeros(1024, dtype=np.float32))
    assert ag.tracker.peak_bytes >= base + 4096
    del t
    ag.tracker.reset_peak()
    assert ag.tracker.peak_bytes == ag.tracker.current_bytes
