"""Classical (Torgerson) multidimensional scaling.

The squared-distance matrix is double-centred into a Gram matrix whose top
eigenpairs are found by power iteration with Hotelling deflation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

POWER_TOL = 1e-10
POWER_MAX_ITER = 10_000
# eigenvalues below this fraction of the largest are treated as zero
RELATIVE_EIG_FLOOR = 1e-12


@dataclass
class Embedding2D:
    ids: list[str]
    coords: np.ndarray  # (n, 2)
    color_value: np.ndarray  # (n,) or (n, k) values used to colour points

    def to_csv(self, scales_px_per_dam, angles_rad) -> str:
        lines = ["id,x,y,scale_px_per_dam,angle_rad"]
        for rid, (x, y), s, a in zip(self.ids, self.coords, scales_px_per_dam, angles_rad):
            lines.append(f"{rid},{float(x)!r},{float(y)!r},{float(s)!r},{float(a)!r}")
        return "\n".join(lines) + "\n"


def pairwise_sq_dist(X) -> np.ndarray:
    """Squared Euclidean distances between the rows of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError(f"need an (n >= 2, d) array, got shape {X.shape}")
    sq = np.einsum("ij,ij->i", X, X)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.maximum(d2, 0.0, out=d2)
    d2 = 0.5 * (d2 + d2.T)
    np.fill_diagonal(d2, 0.0)
    return d2


def double_center(D2: np.ndarray) -> np.ndarray:
    """B = -1/2 J D2 J with J the centring matrix, without forming J."""
    D2 = np.asarray(D2, dtype=np.float64)
    row = D2.mean(axis=1, keepdims=True)
    col = D2.mean(axis=0, keepdims=True)
    B = -0.5 * (D2 - row - col + D2.mean())
    return 0.5 * (B + B.T)


def power_iteration(B: np.ndarray, v0: np.ndarray, tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER):
    """Dominant eigenpair (by magnitude) of the symmetric matrix ``B``."""
    v = v0 / np.linalg.norm(v0)
    lam = float(v @ B @ v)
    for _ in range(max_iter):
        w = B @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0, v
        w /= norm
        # sign of the Rayleigh quotient fixes the flip for negative eigenvalues
        if w @ v < 0:
            w = -w
        lam = float(w @ B @ w)
        if np.linalg.norm(w - v) < tol:
            v = w
            break
        v = w
    return lam, v


def top_eigenpairs(B: np.ndarray, k: int, tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER):
    n = B.shape[0]
    work = B.copy()
    # deterministic, generic start vector (not orthogonal to any eigvec in practice)
    base = np.cos(np.arange(1, n + 1) * 0.7071) + 0.5 * np.sin(np.arange(1, n + 1) * 1.3)
    vals, vecs = [], []
    for _ in range(k):
        start = base - sum((u @ base) * u for u in vecs) if vecs else base
        if np.linalg.norm(start) == 0:
            start = base
        lam, v = power_iteration(work, start, tol, max_iter)
        vals.append(lam)
        vecs.append(v)
        work = work - lam * np.outer(v, v)
    return np.array(vals), np.stack(vecs, axis=1)


def classical_mds(D2, k: int = 2, tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER) -> np.ndarray:
    """Embed points in ``k`` dimensions from their squared distances.

    Returns an (n, k) array of centred coordinates. Axes whose eigenvalue is
    negative (or numerically zero) are set to 0.
    """
    D2 = np.asarray(D2, dtype=np.float64)
    if D2.ndim != 2 or D2.shape[0] != D2.shape[1]:
        raise ValueError(f"distance matrix must be square, got {D2.shape}")
    n = D2.shape[0]
    if n < k + 1:
        raise ValueError(f"need at least {k + 1} points for a {k}-D embedding, got {n}")
    if not np.allclose(D2, D2.T, atol=1e-12 * max(1.0, np.abs(D2).max())) or np.any(np.diag(D2) != 0):
        raise ValueError("squared-distance matrix must be symmetric with zero diagonal")
    B = double_center(D2)
    vals, vecs = top_eigenpairs(B, k, tol, max_iter)
    floor = RELATIVE_EIG_FLOOR * max(float(np.max(np.abs(vals))), 0.0)
    scale = np.where(vals > floor, np.sqrt(np.clip(vals, 0.0, None)), 0.0)
    coords = vecs * scale[None, :]
    return coords - coords.mean(axis=0, keepdims=True)


def embed_latents(ids, latents, color_value) -> Embedding2D:
    coords = classical_mds(pairwise_sq_dist(latents), k=2)
    return Embedding2D(list(ids), coords, np.asarray(color_value))
