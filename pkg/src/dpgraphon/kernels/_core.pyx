# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the two hot kernels (see _fallback.py for
the reference semantics): the capped-row-sum transportation LP and the
away-step Frank-Wolfe minimizer over the Birkhoff polytope."""

import numpy as np

cimport numpy as cnp

cnp.import_array()

cdef double EPS = 1e-12
cdef double INF = 1e300


def transport_value(U, W, caps, bint return_solution=False):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] Ua = np.ascontiguousarray(U, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] Wa = np.ascontiguousarray(W, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ca = np.ascontiguousarray(caps, dtype=np.float64)
    cdef Py_ssize_t n = Ua.shape[0]
    cdef Py_ssize_t i, j

    cdef double wmin = INF
    cdef bint all_within = True
    cdef double rowsum
    for i in range(n):
        rowsum = 0.0
        for j in range(n):
            rowsum += Ua[i, j]
            if Wa[i, j] < wmin:
                wmin = Wa[i, j]
        if rowsum > ca[i]:
            all_within = False
    cdef double value = 0.0
    if wmin >= 0.0 and all_within:
        for i in range(n):
            for j in range(n):
                value += Wa[i, j] * Ua[i, j]
        if return_solution:
            return value, Ua.copy()
        return value

    # arc arrays on the bipartite double cover; nodes 0..n-1 rows,
    # n..2n-1 cols, s=2n, t=2n+1
    cdef Py_ssize_t m = 0
    for i in range(n):
        for j in range(n):
            if Ua[i, j] > EPS:
                m += 1
    cdef Py_ssize_t V = 2 * n + 2
    cdef Py_ssize_t s = 2 * n
    cdef Py_ssize_t t = 2 * n + 1
    cdef Py_ssize_t narcs = 2 * (2 * n + m)

    cdef cnp.ndarray[cnp.int64_t, ndim=1] tails = np.empty(narcs, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] heads = np.empty(narcs, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cap = np.empty(narcs, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cost = np.empty(narcs, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] esrc = np.empty(m, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] edst = np.empty(m, dtype=np.int64)

    cdef Py_ssize_t pos = 0
    for i in range(n):
        tails[pos] = s; heads[pos] = i; cap[pos] = ca[i]; cost[pos] = 0.0; pos += 1
        tails[pos] = i; heads[pos] = s; cap[pos] = 0.0; cost[pos] = 0.0; pos += 1
        tails[pos] = n + i; heads[pos] = t; cap[pos] = ca[i]; cost[pos] = 0.0; pos += 1
        tails[pos] = t; heads[pos] = n + i; cap[pos] = 0.0; cost[pos] = 0.0; pos += 1
    cdef Py_ssize_t first_mid = pos
    cdef Py_ssize_t e = 0
    for i in range(n):
        for j in range(n):
            if Ua[i, j] > EPS:
                esrc[e] = i; edst[e] = j
                tails[pos] = i; heads[pos] = n + j; cap[pos] = Ua[i, j]; cost[pos] = -Wa[i, j]; pos += 1
                tails[pos] = n + j; heads[pos] = i; cap[pos] = 0.0; cost[pos] = Wa[i, j]; pos += 1
                e += 1

    # adjacency: CSR over tails
    cdef cnp.ndarray[cnp.int64_t, ndim=1] deg = np.zeros(V + 1, dtype=np.int64)
    for e in range(narcs):
        deg[tails[e] + 1] += 1
    for i in range(V):
        deg[i + 1] += deg[i]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] adj = np.empty(narcs, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] fill = deg[:V].copy()
    for e in range(narcs):
        adj[fill[tails[e]]] = e
        fill[tails[e]] += 1

    cdef cnp.ndarray[cnp.float64_t, ndim=1] dist = np.empty(V, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] pred = np.empty(V, dtype=np.int64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] inq = np.zeros(V, dtype=np.uint8)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] queue = np.empty(16 * V + 16, dtype=np.int64)
    cdef Py_ssize_t qcap = queue.shape[0]

    cdef Py_ssize_t max_aug = 4 * (narcs + V) + 64
    cdef Py_ssize_t it, u, v, qh, qt, a
    cdef double du, bott, total = 0.0

    for it in range(max_aug):
        for u in range(V):
            dist[u] = INF
            pred[u] = -1
            inq[u] = 0
        dist[s] = 0.0
        qh = 0; qt = 0
        queue[qt % qcap] = s; qt += 1
        inq[s] = 1
        while qh < qt:
            u = queue[qh % qcap]; qh += 1
            inq[u] = 0
            du = dist[u]
            for a in range(deg[u], deg[u + 1]):
                e = adj[a]
                v = heads[e]
                if cap[e] > EPS and du + cost[e] < dist[v] - 1e-15:
                    dist[v] = du + cost[e]
                    pred[v] = e
                    if not inq[v]:
                        queue[qt % qcap] = v; qt += 1
                        inq[v] = 1
        if dist[t] >= -1e-12 or dist[t] >= INF:
            break
        bott = INF
        v = t
        while v != s:
            e = pred[v]
            if cap[e] < bott:
                bott = cap[e]
            v = tails[e]
        v = t
        while v != s:
            e = pred[v]
            cap[e] -= bott
            cap[e ^ 1] += bott
            v = tails[e]
        total += -dist[t] * bott

    if not return_solution:
        return total
    X = np.zeros((n, n))
    for e in range(m):
        X[esrc[e], edst[e]] = Ua[esrc[e], edst[e]] - cap[first_mid + 2 * e]
    return total, 0.5 * (X + X.T)


def transport_batch(U, caps, labels, B_batch):
    """LP values max <W, Y> for every (partition, candidate) pair, with
    W_ij = B[labels[i], labels[j]] (hollow).  Shares the arc structure and
    workspaces across the whole batch."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] Ua = np.ascontiguousarray(U, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ca = np.ascontiguousarray(caps, dtype=np.float64)
    cdef cnp.ndarray[cnp.int8_t, ndim=2] lab = np.ascontiguousarray(labels, dtype=np.int8)
    cdef cnp.ndarray[cnp.float64_t, ndim=3] Ba = np.ascontiguousarray(B_batch, dtype=np.float64)
    cdef Py_ssize_t n = Ua.shape[0]
    cdef Py_ssize_t P = lab.shape[0]
    cdef Py_ssize_t C = Ba.shape[0]
    cdef Py_ssize_t K = Ba.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((P, C), dtype=np.float64)

    cdef Py_ssize_t m = 0
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(n):
            if Ua[i, j] > EPS:
                m += 1
    cdef Py_ssize_t V = 2 * n + 2
    cdef Py_ssize_t s = 2 * n
    cdef Py_ssize_t t = 2 * n + 1
    cdef Py_ssize_t narcs = 2 * (2 * n + m)

    cdef cnp.ndarray[cnp.int64_t, ndim=1] tails = np.empty(narcs, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] heads = np.empty(narcs, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cap0 = np.empty(narcs, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cap = np.empty(narcs, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cost = np.empty(narcs, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] esrc = np.empty(m, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] edst = np.empty(m, dtype=np.int64)

    cdef Py_ssize_t pos = 0
    for i in range(n):
        tails[pos] = s; heads[pos] = i; cap0[pos] = ca[i]; cost[pos] = 0.0; pos += 1
        tails[pos] = i; heads[pos] = s; cap0[pos] = 0.0; cost[pos] = 0.0; pos += 1
        tails[pos] = n + i; heads[pos] = t; cap0[pos] = ca[i]; cost[pos] = 0.0; pos += 1
        tails[pos] = t; heads[pos] = n + i; cap0[pos] = 0.0; cost[pos] = 0.0; pos += 1
    cdef Py_ssize_t first_mid = pos
    cdef Py_ssize_t e = 0
    for i in range(n):
        for j in range(n):
            if Ua[i, j] > EPS:
                esrc[e] = i; edst[e] = j
                tails[pos] = i; heads[pos] = n + j; cap0[pos] = Ua[i, j]; pos += 1
                tails[pos] = n + j; heads[pos] = i; cap0[pos] = 0.0; pos += 1
                e += 1

    cdef cnp.ndarray[cnp.int64_t, ndim=1] deg = np.zeros(V + 1, dtype=np.int64)
    for e in range(narcs):
        deg[tails[e] + 1] += 1
    for i in range(V):
        deg[i + 1] += deg[i]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] adj = np.empty(narcs, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] fill = deg[:V].copy()
    for e in range(narcs):
        adj[fill[tails[e]]] = e
        fill[tails[e]] += 1

    cdef cnp.ndarray[cnp.float64_t, ndim=1] dist = np.empty(V, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] pred = np.empty(V, dtype=np.int64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] inq = np.zeros(V, dtype=np.uint8)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] queue = np.empty(16 * V + 16, dtype=np.int64)
    cdef Py_ssize_t qcap = queue.shape[0]
    cdef Py_ssize_t max_aug = 4 * (narcs + V) + 64
    cdef Py_ssize_t p, c, it, u, v, qh, qt, a
    cdef double du, bott, total, w

    for p in range(P):
        for c in range(C):
            # per-instance costs and capacity reset
            for e in range(m):
                w = Ba[c, lab[p, esrc[e]], lab[p, edst[e]]]
                cost[first_mid + 2 * e] = -w
                cost[first_mid + 2 * e + 1] = w
            for e in range(narcs):
                cap[e] = cap0[e]
            total = 0.0
            for it in range(max_aug):
                for u in range(V):
                    dist[u] = INF
                    pred[u] = -1
                    inq[u] = 0
                dist[s] = 0.0
                qh = 0; qt = 0
                queue[qt % qcap] = s; qt += 1
                inq[s] = 1
                while qh < qt:
                    u = queue[qh % qcap]; qh += 1
                    inq[u] = 0
                    du = dist[u]
                    for a in range(deg[u], deg[u + 1]):
                        e = adj[a]
                        v = heads[e]
                        if cap[e] > EPS and du + cost[e] < dist[v] - 1e-15:
                            dist[v] = du + cost[e]
                            pred[v] = e
                            if not inq[v]:
                                queue[qt % qcap] = v; qt += 1
                                inq[v] = 1
                if dist[t] >= -1e-12 or dist[t] >= INF:
                    break
                bott = INF
                v = t
                while v != s:
                    e = pred[v]
                    if cap[e] < bott:
                        bott = cap[e]
                    v = tails[e]
                v = t
                while v != s:
                    e = pred[v]
                    cap[e] -= bott
                    cap[e ^ 1] += bott
                    v = tails[e]
                total += -dist[t] * bott
            out[p, c] = total
    return out


cdef void _hungarian(double[:, ::1] a, Py_ssize_t n, cnp.int64_t[::1] row_to_col,
                     double[::1] u, double[::1] v, cnp.int64_t[::1] p,
                     cnp.int64_t[::1] way, double[::1] minv, cnp.uint8_t[::1] used) noexcept:
    """Min-cost assignment (shortest augmenting path with potentials).
    p[j] = row assigned to column j (1-indexed internally)."""
    cdef Py_ssize_t i, j, j0, j1, i0
    cdef double cur, delta
    for j in range(n + 1):
        u[j] = 0.0; v[j] = 0.0; p[j] = 0; way[j] = 0
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(n + 1):
            minv[j] = INF
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            delta = INF
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = a[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    for j in range(1, n + 1):
        if p[j] > 0:
            row_to_col[p[j] - 1] = j - 1


def fw_birkhoff(Q, starts, Py_ssize_t max_iter=10_000, double tol=1e-8):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] Qa = np.ascontiguousarray(Q, dtype=np.float64)
    Qa = 0.5 * (Qa + Qa.T)
    cdef Py_ssize_t k2 = Qa.shape[0]
    cdef Py_ssize_t k = <Py_ssize_t>round(np.sqrt(k2))
    cdef cnp.ndarray[cnp.float64_t, ndim=3] S0 = np.ascontiguousarray(
        np.asarray(starts, dtype=np.float64).reshape(-1, k, k))
    cdef Py_ssize_t nstarts = S0.shape[0]

    cdef Py_ssize_t max_atoms = 8192
    cdef cnp.ndarray[cnp.int64_t, ndim=2] aperm = np.empty((max_atoms, k), dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] aw = np.empty(max_atoms, dtype=np.float64)

    cdef cnp.ndarray[cnp.float64_t, ndim=1] x = np.empty(k2, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] g = np.empty(k2, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] d = np.empty(k2, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] qd = np.empty(k2, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] perm = np.empty(k, dtype=np.int64)

    # hungarian workspace
    cdef cnp.ndarray[cnp.float64_t, ndim=2] costm = np.empty((k, k), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] hu = np.empty(k + 1, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] hv = np.empty(k + 1, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] hp = np.empty(k + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] hway = np.empty(k + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] hminv = np.empty(k + 1, dtype=np.float64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] hused = np.empty(k + 1, dtype=np.uint8)

    cdef double best_val = INF
    cdef cnp.ndarray[cnp.float64_t, ndim=2] best_S = np.zeros((k, k))
    cdef bint best_conv = False

    cdef Py_ssize_t sidx, it, i, j, natoms, away_idx, kk, widx
    cdef double fw_gap, away_score, sc, gx, alpha, gamma_max, dQd, gd, gamma, val, scale
    cdef bint use_away, converged, duplicate

    cdef cnp.ndarray[cnp.float64_t, ndim=1] flat
    for sidx in range(nstarts):
        flat = S0[sidx].reshape(-1)
        for i in range(k2):
            x[i] = flat[i]
        natoms = 0
        converged = False
        for it in range(max_iter):
            # g = 2 Q x
            for i in range(k2):
                sc = 0.0
                for j in range(k2):
                    sc += Qa[i, j] * x[j]
                g[i] = 2.0 * sc
            for i in range(k):
                for j in range(k):
                    costm[i, j] = g[i * k + j]
            _hungarian(costm, k, perm, hu, hv, hp, hway, hminv, hused)
            gx = 0.0
            for i in range(k2):
                gx += g[i] * x[i]
            sc = 0.0
            for i in range(k):
                sc += g[i * k + perm[i]]
            fw_gap = gx - sc
            if fw_gap <= tol:
                converged = True
                break
            away_idx = -1
            away_score = -INF
            for kk in range(natoms):
                if aw[kk] <= 0.0:
                    continue
                sc = 0.0
                for i in range(k):
                    sc += g[i * k + aperm[kk, i]]
                if sc > away_score + 1e-15:
                    away_score = sc
                    away_idx = kk
            use_away = False
            if away_idx >= 0 and away_score - gx > fw_gap:
                use_away = True
            if use_away:
                for i in range(k2):
                    d[i] = x[i]
                for i in range(k):
                    d[i * k + aperm[away_idx, i]] -= 1.0
                alpha = aw[away_idx]
                if 1.0 - alpha < 1e-300:
                    gamma_max = INF
                else:
                    gamma_max = alpha / (1.0 - alpha)
            else:
                for i in range(k2):
                    d[i] = -x[i]
                for i in range(k):
                    d[i * k + perm[i]] += 1.0
                gamma_max = 1.0
            dQd = 0.0
            gd = 0.0
            for i in range(k2):
                sc = 0.0
                for j in range(k2):
                    sc += Qa[i, j] * d[j]
                qd[i] = sc
            for i in range(k2):
                dQd += d[i] * qd[i]
                gd += g[i] * d[i]
            if dQd > 1e-300:
                gamma = -gd / (2.0 * dQd)
                if gamma < 0.0:
                    gamma = 0.0
                if gamma > gamma_max:
                    gamma = gamma_max
            else:
                gamma = gamma_max if gd < 0.0 else 0.0
            if gamma <= 1e-16:
                converged = True
                break
            for i in range(k2):
                x[i] += gamma * d[i]
            if use_away:
                scale = 1.0 + gamma
                for kk in range(natoms):
                    aw[kk] *= scale
                aw[away_idx] -= gamma
            else:
                for kk in range(natoms):
                    aw[kk] *= 1.0 - gamma
                duplicate = False
                for kk in range(natoms):
                    if aw[kk] > 0.0:
                        duplicate = True
                        for i in range(k):
                            if aperm[kk, i] != perm[i]:
                                duplicate = False
                                break
                        if duplicate:
                            aw[kk] += gamma
                            break
                if not duplicate and natoms < max_atoms:
                    for i in range(k):
                        aperm[natoms, i] = perm[i]
                    aw[natoms] = gamma
                    natoms += 1
            # prune dead atoms
            widx = 0
            for kk in range(natoms):
                if aw[kk] > 1e-14:
                    if widx != kk:
                        aw[widx] = aw[kk]
                        for i in range(k):
                            aperm[widx, i] = aperm[kk, i]
                    widx += 1
            natoms = widx
        val = 0.0
        for i in range(k2):
            sc = 0.0
            for j in range(k2):
                sc += Qa[i, j] * x[j]
            val += x[i] * sc
        if val < best_val - 1e-15:
            best_val = val
            for i in range(k):
                for j in range(k):
                    best_S[i, j] = x[i * k + j] if x[i * k + j] > 0.0 else 0.0
            best_conv = converged
    return best_val, best_S, best_conv
