"""Pure-Python reference implementations of the hot kernels.

Semantics are identical to the compiled backend in ``_core``; the
compiled backend only exists because these two loops dominate the
runtime of the audit and metric suites.
"""

from __future__ import annotations

from collections import deque

import numpy as np
from scipy.optimize import linear_sum_assignment

_EPS = 1e-12


def transport_value(
    U: np.ndarray,
    W: np.ndarray,
    caps: np.ndarray,
    return_solution: bool = False,
):
    """Maximize <W, Y> over symmetric Y with 0 <= Y <= U and row sums
    Y @ 1 <= caps, where U, W are symmetric, nonnegative, hollow.

    Solved as a max-profit transportation problem on the bipartite double
    cover (the symmetric optimum equals the asymmetric one; averaging an
    asymmetric optimum restores feasibility at equal value).  Successive
    shortest augmenting paths; stops when no path has positive profit.
    """
    U = np.asarray(U, dtype=float)
    W = np.asarray(W, dtype=float)
    caps = np.asarray(caps, dtype=float)
    n = U.shape[0]

    if W.min() >= 0.0 and bool((U.sum(axis=1) <= caps).all()):
        # every row already meets its cap: Y = U is optimal
        value = float((W * U).sum())
        return (value, U.copy()) if return_solution else value

    src, dst = np.nonzero(U > _EPS)
    m = src.shape[0]
    # nodes: 0..n-1 rows, n..2n-1 cols, s=2n, t=2n+1
    s, t = 2 * n, 2 * n + 1
    V = 2 * n + 2

    tails: list[int] = []
    heads: list[int] = []
    cap: list[float] = []
    cost: list[float] = []

    def add_arc(a: int, b: int, c: float, w: float) -> None:
        tails.append(a)
        heads.append(b)
        cap.append(c)
        cost.append(w)
        tails.append(b)
        heads.append(a)
        cap.append(0.0)
        cost.append(-w)

    for i in range(n):
        add_arc(s, i, float(caps[i]), 0.0)
        add_arc(n + i, t, float(caps[i]), 0.0)
    first_mid = len(cap)
    for e in range(m):
        add_arc(int(src[e]), n + int(dst[e]), float(U[src[e], dst[e]]), -float(W[src[e], dst[e]]))

    tails_a = np.array(tails, dtype=np.int64)
    heads_a = np.array(heads, dtype=np.int64)
    cap_a = np.array(cap, dtype=float)
    cost_a = np.array(cost, dtype=float)
    adj: list[list[int]] = [[] for _ in range(V)]
    for e in range(len(cap_a)):
        adj[tails_a[e]].append(e)

    max_aug = 4 * (len(cap_a) + V) + 64
    total = 0.0
    for _ in range(max_aug):
        dist = np.full(V, np.inf)
        dist[s] = 0.0
        pred = np.full(V, -1, dtype=np.int64)
        in_queue = np.zeros(V, dtype=bool)
        queue = deque([s])
        in_queue[s] = True
        while queue:
            u = queue.popleft()
            in_queue[u] = False
            du = dist[u]
            for e in adj[u]:
                v = heads_a[e]
                if cap_a[e] > _EPS and du + cost_a[e] < dist[v] - 1e-15:
                    dist[v] = du + cost_a[e]
                    pred[v] = e
                    if not in_queue[v]:
                        queue.append(int(v))
                        in_queue[v] = True
        if not np.isfinite(dist[t]) or dist[t] >= -1e-12:
            break
        bottleneck = np.inf
        v = t
        while v != s:
            e = int(pred[v])
            bottleneck = min(bottleneck, cap_a[e])
            v = int(tails_a[e])
        v = t
        while v != s:
            e = int(pred[v])
            cap_a[e] -= bottleneck
            cap_a[e ^ 1] += bottleneck
            v = int(tails_a[e])
        total += -dist[t] * bottleneck

    if not return_solution:
        return total
    X = np.zeros((n, n))
    for e in range(m):
        arc = first_mid + 2 * e
        X[src[e], dst[e]] = float(U[src[e], dst[e]]) - cap_a[arc]
    Y = 0.5 * (X + X.T)
    return total, Y


def transport_batch(U, caps, labels, B_batch):
    """LP values for every (partition, candidate) pair; see the compiled
    backend for the batched layout."""
    U = np.asarray(U, dtype=float)
    caps = np.asarray(caps, dtype=float)
    labels = np.asarray(labels)
    B_batch = np.asarray(B_batch, dtype=float)
    P, C = labels.shape[0], B_batch.shape[0]
    out = np.empty((P, C))
    for p in range(P):
        lab = labels[p]
        for c in range(C):
            W = B_batch[c][np.ix_(lab, lab)].astype(float)
            np.fill_diagonal(W, 0.0)
            out[p, c] = transport_value(U, W, caps)
    return out


def _hungarian_perm(cost: np.ndarray) -> np.ndarray:
    _, cols = linear_sum_assignment(cost)
    return cols


def fw_birkhoff(
    Q: np.ndarray,
    starts: np.ndarray,
    max_iter: int = 10_000,
    tol: float = 1e-8,
):
    """Minimize vec(S)^T Q vec(S) over the Birkhoff polytope by
    Frank-Wolfe with away steps, keeping track of the permutation atoms
    introduced since the start (away steps may only remove those).

    Returns (best value, best S, converged flag) over the given starts.
    """
    Q = np.asarray(Q, dtype=float)
    Q = 0.5 * (Q + Q.T)
    k2 = Q.shape[0]
    k = int(round(np.sqrt(k2)))
    starts = np.asarray(starts, dtype=float)

    best_val = np.inf
    best_S = None
    best_conv = False
    for S0 in starts:
        val, S, conv = _fw_single(Q, k, S0.reshape(k, k), max_iter, tol)
        if val < best_val - 1e-15:
            best_val, best_S, best_conv = val, S, conv
    return best_val, best_S, best_conv


def _fw_single(Q, k, S0, max_iter, tol):
    x = S0.reshape(-1).copy()
    atoms: dict[tuple, float] = {}
    rows = np.arange(k)

    converged = False
    for _ in range(max_iter):
        g = 2.0 * (Q @ x)
        G = g.reshape(k, k)
        perm = _hungarian_perm(G)
        s_fw = np.zeros(k * k)
        s_fw[rows * k + perm] = 1.0
        fw_gap = float(g @ (x - s_fw))
        if fw_gap <= tol:
            converged = True
            break
        away_key = None
        away_score = -np.inf
        for key, alpha in atoms.items():
            sc = float(G[rows, list(key)].sum())
            if sc > away_score + 1e-15:
                away_score, away_key = sc, key
        use_away = False
        if away_key is not None and away_score - float(g @ x) > fw_gap:
            use_away = True
        if use_away:
            away_vec = np.zeros(k * k)
            away_vec[rows * k + np.array(away_key)] = 1.0
            d = x - away_vec
            alpha = atoms[away_key]
            gamma_max = alpha / max(1.0 - alpha, 1e-300)
        else:
            d = s_fw - x
            gamma_max = 1.0
        dQd = float(d @ (Q @ d))
        gd = float(g @ d)
        if dQd > 1e-300:
            gamma = min(max(-gd / (2.0 * dQd), 0.0), gamma_max)
        else:
            # flat or concave slice: best endpoint
            gamma = gamma_max if gd < 0 else 0.0
        if gamma <= 1e-16:
            converged = True
            break
        x = x + gamma * d
        if use_away:
            scale = 1.0 + gamma
            for key in list(atoms):
                atoms[key] *= scale
            atoms[away_key] -= gamma
        else:
            for key in list(atoms):
                atoms[key] *= 1.0 - gamma
            key = tuple(int(p) for p in perm)
            atoms[key] = atoms.get(key, 0.0) + gamma
        for key in [key for key, a in atoms.items() if a <= 1e-14]:
            del atoms[key]
    S = np.clip(x.reshape(k, k), 0.0, None)
    val = float(x @ (Q @ x))
    return val, S, converged
