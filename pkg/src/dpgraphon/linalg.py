"""Dense symmetric linear algebra and clustering primitives.

Eigendecompositions are delegated to LAPACK (numpy); the assignment
problem to scipy's Jonker-Volgenant solver.  Balanced k-means keeps the
column sums exactly n/k by solving a min-cost balanced assignment in the
Lloyd assignment step.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import CapacityError, SolverError
from .rng import substream

DENSE_EIG_CAP = 4000


def sym_eig(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues in descending order and orthonormal eigenvectors.

    Residual contract: ||M v_i - lam_i v_i|| <= 1e-8 ||M||.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    if n > DENSE_EIG_CAP:
        raise CapacityError(f"dense eigensolver capped at n={DENSE_EIG_CAP}")
    if not np.allclose(M, M.T, atol=1e-10 * max(1.0, np.abs(M).max())):
        raise ValueError("matrix must be symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (M + M.T))
    order = np.argsort(-vals, kind="stable")
    return vals[order], vecs[:, order]


def rank_k_truncate(M: np.ndarray, k: int) -> np.ndarray:
    """Best rank-k approximation in Frobenius norm: keep the k
    eigenvalues of largest magnitude."""
    M = np.asarray(M, dtype=float)
    if k > M.shape[0]:
        raise ValueError("k must be at most n")
    vals, vecs = sym_eig(M)
    keep = np.argsort(-np.abs(vals), kind="stable")[:k]
    V = vecs[:, keep]
    return (V * vals[keep]) @ V.T


def spectral_norm(M: np.ndarray, tol: float = 1e-6, max_iter: int = 2000) -> float:
    """Largest |eigenvalue| of a symmetric matrix by power iteration,
    falling back to a full eigendecomposition if convergence stalls."""
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    if n == 0:
        return 0.0
    scale = np.abs(M).max()
    if scale == 0.0:
        return 0.0
    v = np.ones(n) / np.sqrt(n)
    theta = 0.0
    for _ in range(max_iter):
        w = M @ v
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return 0.0
        v_new = w / norm_w
        theta = float(abs(v_new @ (M @ v_new)))
        if np.linalg.norm(M @ v_new - (v_new @ (M @ v_new)) * v_new) <= tol * max(theta, scale * 1e-12):
            return theta
        v = v_new
    vals = np.linalg.eigvalsh(0.5 * (M + M.T))
    return float(np.abs(vals).max())


def hungarian(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Min-cost assignment: column permutation and total cost."""
    cost = np.asarray(cost, dtype=float)
    rows, cols = linear_sum_assignment(cost)
    return cols, float(cost[rows, cols].sum())


def _balanced_assign(dist2: np.ndarray) -> np.ndarray:
    """Exact min-cost assignment of n points to k clusters of size n/k.

    dist2 is the n-by-k squared-distance matrix.
    """
    n, k = dist2.shape
    size = n // k
    if k == 2:
        # order by cost difference; cheapest-to-0 half goes to cluster 0
        margin = dist2[:, 0] - dist2[:, 1]
        order = np.lexsort((np.arange(n), margin))
        labels = np.ones(n, dtype=np.int64)
        labels[order[:size]] = 0
        return labels
    if n > 900:
        raise CapacityError("balanced assignment with k >= 3 capped at n = 900")
    big = np.repeat(dist2, size, axis=1)
    _, cols = linear_sum_assignment(big)
    return (cols // size).astype(np.int64)


def _kmeans_cost(points: np.ndarray, labels: np.ndarray, centers: np.ndarray) -> float:
    return float(((points - centers[labels]) ** 2).sum())


def balanced_kmeans(
    points: np.ndarray,
    k: int,
    balanced: bool = True,
    restarts: int = 10,
    max_iter: int = 100,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Lloyd iteration with an exact balanced assignment step.

    Returns (labels, centers, cost) of the best restart.  Restart 0 uses
    greedy farthest-point initialization; the rest are seeded random picks.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if balanced and n % k != 0:
        raise ValueError("balanced k-means needs k | n")
    if k > n:
        raise ValueError("k must be at most n")
    gen = substream(seed, "kmeans")
    best: tuple[float, np.ndarray, np.ndarray] | None = None
    for r in range(max(1, restarts)):
        if r == 0:
            centers = _farthest_point_init(points, k)
        else:
            centers = points[gen.choice(n, size=k, replace=False)]
        labels = np.zeros(n, dtype=np.int64)
        for _ in range(max_iter):
            dist2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            if balanced:
                new_labels = _balanced_assign(dist2)
            else:
                new_labels = dist2.argmin(axis=1)
            if np.array_equal(new_labels, labels) and _ > 0:
                break
            labels = new_labels
            for c in range(k):
                mask = labels == c
                if mask.any():
                    centers[c] = points[mask].mean(axis=0)
        cost = _kmeans_cost(points, labels, centers)
        if best is None or cost < best[0] - 1e-15:
            best = (cost, labels.copy(), centers.copy())
    assert best is not None
    cost, labels, centers = best
    return labels, centers, cost


def _farthest_point_init(points: np.ndarray, k: int) -> np.ndarray:
    n = points.shape[0]
    chosen = [0]
    d2 = ((points - points[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        nxt = int(d2.argmax())
        chosen.append(nxt)
        d2 = np.minimum(d2, ((points - points[nxt]) ** 2).sum(axis=1))
    return points[chosen].copy()
