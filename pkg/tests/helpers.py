"""Shared test oracles, independent of the library code paths they check."""

import numpy as np

from s2t_longformer.autograd import Tensor


def fd_grad(f, x, h=1e-3):
    """Central finite differences of a scalar function of one array.

    f takes a float32 array and returns a Python float; differences are
    accumulated in float64.
    """
    x = np.array(x, dtype=np.float32)
    g = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + np.float32(h)
        fp = float(f(x))
        flat[i] = orig - np.float32(h)
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(a, b):
    """Norm-based relative error between two gradient arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def check_grads(build_loss, arrays, tol=1e-3, h=1e-3):
    """Compare analytic gradients of ``build_loss`` against central finite
    differences for every input array.

    build_loss maps len(arrays) Tensors to a scalar loss Tensor; it must be
    deterministic (re-seed any rng it uses internally).
    """
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    loss = build_loss(*tensors)
    loss.backward()
    analytic = [t.grad.copy() for t in tensors]
    for i, a in enumerate(arrays):
        def f(x, i=i):
            ts = [Tensor(np.array(arr, dtype=np.float32)) for arr in arrays]
            ts[i] = Tensor(x)
            return build_loss(*ts).item()

        numeric = fd_grad(f, a, h=h)
        err = rel_err(analytic[i], numeric)
        assert err < tol, f"gradient mismatch on input {i}: rel err {err:.2e}"


def wer_oracle(hyp_words, ref_words):
    """Full-matrix edit-distance DP, written independently of the library's
    rolling-row implementation."""
    n, m = len(hyp_words), len(ref_words)
    dp = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        dp[i][0] = i
    for j in range(m + 1):
        dp[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = dp[i - 1][j - 1] + (hyp_words[i - 1] != ref_words[j - 1])
            dp[i][j] = min(sub, dp[i - 1][j] + 1, dp[i][j - 1] + 1)
    return dp[n][m]
