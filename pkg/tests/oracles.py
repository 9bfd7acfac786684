"""Slow, obviously-correct reference computations used as test oracles.

Nothing here imports the code under test's numerics; each routine is written
from the definition with explicit loops.
"""

import numpy as np


def numeric_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of the scalar function ``f`` at ``x`` (mutated and restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        fp = f()
        x[idx] = old - eps
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * eps)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def loop_conv2d(x, k, b, padding):
    n, h, w, cin = x.shape
    ks = k.shape[0]
    cout = k.shape[3]
    p = ks // 2 if padding == "same" else 0
    xp = np.zeros((n, h + 2 * p, w + 2 * p, cin))
    xp[:, p : p + h, p : p + w, :] = x
    ho, wo = h + 2 * p - ks + 1, w + 2 * p - ks + 1
    out = np.zeros((n, ho, wo, cout))
    for i in range(n):
        for y in range(ho):
            for xx in range(wo):
                for o in range(cout):
                    s = b[o]
                    for dy in range(ks):
                        for dx in range(ks):
                            for c in range(cin):
                                s += xp[i, y + dy, xx + dx, c] * k[dy, dx, c, o]
                    out[i, y, xx, o] = s
    return out


def loop_matmul(a, b):
    n, f = a.shape
    g = b.shape[1]
    out = np.zeros((n, g))
    for i in range(n):
        for j in range(g):
            for k in range(f):
                out[i, j] += a[i, k] * b[k, j]
    return out


def block_max(x):
    n, h, w, c = x.shape
    out = np.zeros((n, h // 2, w // 2, c))
    for i in range(n):
        for y in range(h // 2):
            for xx in range(w // 2):
                for ch in range(c):
                    out[i, y, xx, ch] = max(
                        x[i, 2 * y, 2 * xx, ch],
                        x[i, 2 * y, 2 * xx + 1, ch],
                        x[i, 2 * y + 1, 2 * xx, ch],
                        x[i, 2 * y + 1, 2 * xx + 1, ch],
                    )
    return out


def block_mean(x, f):
    h, w = x.shape[:2]
    out = np.zeros((h // f, w // f) + x.shape[2:])
    for y in range(h // f):
        for xx in range(w // f):
            acc = 0.0
            for dy in range(f):
                for dx in range(f):
                    acc = acc + x[y * f + dy, xx * f + dx]
            out[y, xx] = acc / (f * f)
    return out


def pair_sq_dist(X):
    n = len(X)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            D[i, j] = sum((X[i, k] - X[j, k]) ** 2 for k in range(X.shape[1]))
    return D
