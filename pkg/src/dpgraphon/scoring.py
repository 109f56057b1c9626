"""Exponential-mechanism score functions.

The NP-hard ideal score is

    s(B; Y) = max_{Z in Z(n,k)} f(Z; B, Y),
    f(Z; B, Y) = <Z B Z^T, Y> - (1/2) ||Z B Z^T||_F^2,

evaluated by brute force over all equipartitions.  Its low-sensitivity
piecewise-linear extension replaces <Z B Z^T, Y> with the maximum of
<Z B Z^T, Y_-> over symmetric 0 <= Y_- <= Y with row sums capped at
20*R*n.  The inner problem is a transportation LP; two exact shortcuts
avoid it (no row over the cap: Y_- = Y; cap violators that form an
independent set: per-row fractional knapsacks).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import CapacityError, SolverError
from .graphs import BlockMatrix, CommunityMembership, ScaledMatrix

ENUM_CAP_N = 14
ENUM_CAP_K = 3


def _entries(x) -> np.ndarray:
    if isinstance(x, (BlockMatrix, ScaledMatrix)):
        return np.asarray(x.entries, dtype=float)
    return np.asarray(x, dtype=float)


# ---------------------------------------------------------------------------
# enumeration of equipartitions


def count_equipartitions(n: int, k: int) -> int:
    return math.factorial(n) // math.factorial(n // k) ** k


def enumerate_equipartitions(n: int, k: int) -> np.ndarray:
    """All balanced label vectors in lexicographic order, shape (count, n).

    Capped at n <= 14, k <= 3 (the count is n! / ((n/k)!)^k).
    """
    if n % k != 0:
        raise ValueError("k must divide n")
    if n > ENUM_CAP_N or k > ENUM_CAP_K:
        raise CapacityError(f"equipartition enumeration capped at n <= {ENUM_CAP_N}, k <= {ENUM_CAP_K}")
    out = np.empty((count_equipartitions(n, k), n), dtype=np.int8)
    labels = np.repeat(np.arange(k, dtype=np.int8), n // k)
    idx = 0
    cur = labels.copy()
    while True:
        out[idx] = cur
        idx += 1
        # next multiset permutation in lexicographic order
        i = n - 2
        while i >= 0 and cur[i] >= cur[i + 1]:
            i -= 1
        if i < 0:
            break
        j = n - 1
        while cur[j] <= cur[i]:
            j -= 1
        cur[i], cur[j] = cur[j], cur[i]
        cur[i + 1 :] = cur[i + 1 :][::-1]
    assert idx == out.shape[0]
    return out


def _block_sums(labels: np.ndarray, Y: np.ndarray, k: int) -> np.ndarray:
    """M(Z) = Z^T Y Z for a batch of label vectors: shape (P, k, k)."""
    P, n = labels.shape
    M = np.empty((P, k, k))
    onehot = (labels[:, :, None] == np.arange(k)[None, None, :]).astype(float)
    YE = np.einsum("ij,pjb->pib", Y, onehot)
    M = np.einsum("pia,pib->pab", onehot, YE)
    return M


# ---------------------------------------------------------------------------
# ideal (brute-force) score


def f_objective(Z, B, Y) -> float:
    """f(Z; B, Y) by direct matrix arithmetic."""
    Zm = Z.matrix() if isinstance(Z, CommunityMembership) else np.asarray(Z, dtype=float)
    Bm = _entries(B)
    Ym = _entries(Y)
    if Zm.shape[0] != Ym.shape[0] or Zm.shape[1] != Bm.shape[0]:
        raise ValueError("dimension mismatch")
    ZBZ = Zm @ Bm @ Zm.T
    return float((ZBZ * Ym).sum() - 0.5 * (ZBZ**2).sum())


def ideal_score(B, Y) -> tuple[float, CommunityMembership]:
    """Exact max of f over all equipartitions (ties broken by the
    lexicographically smallest label vector)."""
    Bm = _entries(B)
    Ym = _entries(Y)
    k = Bm.shape[0]
    n = Ym.shape[0]
    labels = enumerate_equipartitions(n, k)
    M = _block_sums(labels, Ym, k)
    vals = np.tensordot(M, Bm, axes=([1, 2], [0, 1])) - 0.5 * (n / k) ** 2 * (Bm**2).sum()
    best = int(np.argmax(vals))
    return float(vals[best]), CommunityMembership(labels[best].astype(np.int64), k)


# ---------------------------------------------------------------------------
# piecewise-linear (Lipschitz) score


def _cap_violators(Yin: np.ndarray, cap: float) -> np.ndarray:
    return np.where(Yin.sum(axis=1) > cap + 1e-12)[0]


def _violators_independent(Yin: np.ndarray, viol: np.ndarray) -> bool:
    if len(viol) <= 1:
        return True
    sub = Yin[np.ix_(viol, viol)]
    return bool((sub <= 1e-12).all())


def _knapsack_corrections(
    Yin: np.ndarray, cap: float, labels: np.ndarray, B_batch: np.ndarray, viol: np.ndarray
) -> np.ndarray:
    """Total objective loss (P, C) from capping each violating row, valid
    when the violators form an independent set in the support of Yin."""
    P, n = labels.shape
    C, k, _ = B_batch.shape
    onehot = (labels[:, :, None] == np.arange(k)[None, None, :]).astype(float)
    total = np.zeros((P, C))
    for v in viol:
        mass = np.einsum("j,pjb->pb", Yin[v], onehot)  # (P, k) class masses
        w = B_batch[:, labels[:, v], :]  # (C, P, k)
        w = np.ascontiguousarray(np.transpose(w, (1, 0, 2)))  # (P, C, k)
        order = np.argsort(-w, axis=2, kind="stable")
        m_sorted = np.take_along_axis(np.broadcast_to(mass[:, None, :], w.shape), order, axis=2)
        w_sorted = np.take_along_axis(w, order, axis=2)
        before = np.concatenate(
            [np.zeros(w.shape[:2] + (1,)), np.cumsum(m_sorted, axis=2)[:, :, :-1]], axis=2
        )
        take = np.clip(cap - before, 0.0, m_sorted)
        best = 2.0 * (w_sorted * take).sum(axis=2)
        full = 2.0 * (w * np.broadcast_to(mass[:, None, :], w.shape)).sum(axis=2)
        total += full - best
    return total


def _lp_scores(
    Yin: np.ndarray, cap: float, labels: np.ndarray, B_batch: np.ndarray
) -> np.ndarray:
    """Inner-maximum values max_{Y_-} <Z B Z^T, Y_-> for every (Z, B):
    shape (P, C)."""
    P, n = labels.shape
    B_batch = np.asarray(B_batch, dtype=float)
    C, k, _ = B_batch.shape
    if B_batch.min() < 0:
        raise ValueError("block matrices must be nonnegative")
    M = _block_sums(labels, Yin, k)
    base = np.tensordot(M, B_batch, axes=([1, 2], [1, 2]))  # (P, C)
    viol = _cap_violators(Yin, cap)
    if len(viol) == 0:
        return base
    if _violators_independent(Yin, viol):
        return base - _knapsack_corrections(Yin, cap, labels, B_batch, viol)
    # exact reduction: rows within the cap never bind (reductions only
    # shrink row sums), so only entries touching a violating row are LP
    # variables; the rest stay at capacity
    touch = np.zeros(n, dtype=bool)
    touch[viol] = True
    nbrs = (Yin[viol] > 1e-12).any(axis=0)
    keep = np.where(touch | nbrs)[0]
    sub = Yin[np.ix_(keep, keep)].copy()
    inV = np.isin(keep, viol)
    sub[np.ix_(~inV, ~inV)] = 0.0  # fixed at capacity, not variables
    caps_sub = np.where(inV, cap, np.inf)
    caps_sub = np.minimum(caps_sub, sub.sum() + 1.0)
    sub_labels = labels[:, keep].astype(np.int8)
    lp_sub = kernels.transport_batch(sub, caps_sub, sub_labels, B_batch)
    M_sub = _block_sums(sub_labels, sub, B_batch.shape[1])
    base_sub = np.tensordot(M_sub, B_batch, axes=([1, 2], [1, 2]))
    return base - (base_sub - lp_sub)


def lipschitz_score(B, Yin, R: float) -> float:
    """Piecewise-linear extension of the ideal score with row-average cap
    20*R on the inner variable."""
    Bm = _entries(B)
    Ym = _entries(Yin)
    n = Ym.shape[0]
    k = Bm.shape[0]
    labels = enumerate_equipartitions(n, k)
    inner = _lp_scores(Ym, 20.0 * R * n, labels, Bm[None, :, :])[:, 0]
    return float(inner.max() - 0.5 * (n / k) ** 2 * (Bm**2).sum())


def lipschitz_scores_grid(Yin, R: float, B_list) -> np.ndarray:
    """Vector of extension scores for a list of candidates (the grid loop
    of the exponential mechanism and the audits)."""
    Ym = _entries(Yin)
    n = Ym.shape[0]
    B_batch = np.stack([_entries(B) for B in B_list])
    k = B_batch.shape[1]
    labels = enumerate_equipartitions(n, k)
    inner = _lp_scores(Ym, 20.0 * R * n, labels, B_batch)
    const = 0.5 * (n / k) ** 2 * (B_batch**2).sum(axis=(1, 2))
    return inner.max(axis=0) - const


def ideal_scores_grid(Yin, k: int, B_list) -> np.ndarray:
    """Vector of ideal scores for a list of candidates."""
    Ym = _entries(Yin)
    n = Ym.shape[0]
    B_batch = np.stack([_entries(B) for B in B_list])
    labels = enumerate_equipartitions(n, k)
    M = _block_sums(labels, Ym, k)
    vals = np.tensordot(M, B_batch, axes=([1, 2], [1, 2]))
    const = 0.5 * (n / k) ** 2 * (B_batch**2).sum(axis=(1, 2))
    return vals.max(axis=0) - const


# ---------------------------------------------------------------------------
# moment-relaxation score


@dataclass
class RelaxedScore:
    value: float
    lower: float
    upper: float
    status: str  # "ok" | "unknown-interval"
    trace: list = field(default_factory=list)  # (t, verdict, lam)


SDP_CAP_N = 20


class ScoreRelaxation:
    """Cached level-`level` relaxation of the combined system for a fixed
    (B, Yin, R); feasibility is re-solved for each objective bound t
    without recompiling."""

    def __init__(self, B, Yin, R: float, level: int = 4):
        from . import sdp

        Bm = _entries(B)
        Ym = _entries(Yin)
        n, k = Ym.shape[0], Bm.shape[0]
        if n > SDP_CAP_N:
            raise CapacityError(f"moment relaxation capped at n = {SDP_CAP_N}")
        if level < 4 or level % 2 != 0:
            raise ValueError("level must be an even integer >= 4")
        est_basis = 1 + n * k + (n * (n - 1) // 2) * k * k + n * n
        if level > 4 and est_basis > 400:
            raise CapacityError("level > 4 only supported for very small systems")
        self.n, self.k, self.R = n, k, float(R)
        self.B, self.Yin = Bm, Ym
        cs = build_constraint_system(Bm, Ym, R, t=0.0)
        specs = sdp._parse_variables(cs)
        by_name = {s.name: s for s in specs}
        eqs, eq_labels, ineqs, ineq_labels = [], [], [], []
        objective = None
        for c in cs.constraints:
            if c.kind == "eq":
                monos = sorted(c.poly, key=len)
                if len(c.poly) == 2 and len(monos[0]) == 1 and monos[1] == (monos[0][0],) * 2:
                    continue
                eqs.append(c.poly)
                eq_labels.append(c.label)
            elif c.origin == "objective":
                objective = c.poly
            else:
                ineqs.append(c.poly)
                ineq_labels.append(c.label)
        # products of system constraints, imposed as scalar rows: they keep
        # point masses feasible and carry the extension/sensitivity
        # derivations at this level
        products = []
        for i in range(n):
            for j in range(i + 1, n):
                if Ym[i, j] <= 0:
                    continue
                y = yvar(i, j)
                products.append({(y, y): -1.0, (y,): float(Ym[i, j])})
                for a in range(k):
                    for b in range(k):
                        za, zb = zvar(i, a), zvar(j, b)
                        products.append({tuple(sorted((za, zb, y))): 1.0})
                        products.append(
                            {
                                tuple(sorted((za, zb))): float(Ym[i, j]),
                                tuple(sorted((za, zb, y))): -1.0,
                            }
                        )
        self.problem = sdp.build_problem(
            specs,
            eqs,
            ineqs,
            level,
            scalar_products=products,
            eq_labels=eq_labels,
            ineq_labels=ineq_labels,
            param_ineq=objective,
        )
        self._phase = sdp._PhaseOne(self.problem)
        self._sdp = sdp

    def feasible_at(self, t: float, tol: float | None = None, margin: float | None = None):
        from .sdp import DEFAULT_MARGIN, DEFAULT_TOL

        return self._sdp.solve_feasibility(
            self.problem,
            tol=DEFAULT_TOL if tol is None else tol,
            margin=DEFAULT_MARGIN if margin is None else margin,
            shift=-float(t),
            cache=self._phase,
        )


def score_bracket(B, Yin, R: float) -> tuple[float, float]:
    """A bracket containing every consistent objective bound: Y=0 makes
    the lower end feasible; the upper end exceeds any achievable <W, Y>."""
    Bm = _entries(B)
    Ym = _entries(Yin)
    n, k = Ym.shape[0], Bm.shape[0]
    lo = -0.5 * (n / k) ** 2 * R * R * k * k
    hi = R * min(float(Ym.sum()), 20.0 * R * n * n) + 1.0
    return lo, hi


def relaxed_score_detail(B, Yin, R: float, level: int = 4, t_tol: float | None = None) -> RelaxedScore:
    """Largest t for which the level-`level` relaxation of the combined
    system is consistent, located by binary search to within t_tol."""
    Ym = _entries(Yin)
    n = Ym.shape[0]
    t_tol = 1e-4 * n if t_tol is None else float(t_tol)
    rel = ScoreRelaxation(B, Yin, R, level=level)
    lo, hi = score_bracket(B, Yin, R)
    trace: list = []
    res_lo = rel.feasible_at(lo)
    trace.append((lo, res_lo.status, res_lo.lam))
    if res_lo.status != "feasible":
        raise SolverError(f"relaxation not feasible at bracket lower end (status {res_lo.status})")
    res_hi = rel.feasible_at(hi)
    trace.append((hi, res_hi.status, res_hi.lam))
    if res_hi.status == "feasible":
        return RelaxedScore(value=hi, lower=hi, upper=hi, status="ok", trace=trace)
    status = "ok"
    while hi - lo > t_tol:
        mid = 0.5 * (lo + hi)
        res = rel.feasible_at(mid)
        trace.append((mid, res.status, res.lam))
        if res.status == "feasible":
            lo = mid
        else:
            # an Unknown verdict narrows conservatively: the reported value
            # stays the verified-feasible end, the interval keeps the flag
            if res.status == "unknown":
                status = "unknown-interval"
            hi = mid
    return RelaxedScore(value=lo, lower=lo, upper=hi, status=status, trace=trace)


def relaxed_score(B, Yin, R: float, level: int = 4, t_tol: float | None = None) -> float:
    """Moment-relaxation score: largest consistent objective bound (the
    returned float is the verified-feasible end of the final bracket)."""
    return relaxed_score_detail(B, Yin, R, level=level, t_tol=t_tol).value


# ---------------------------------------------------------------------------
# polynomial constraint systems


@dataclass(frozen=True)
class Constraint:
    """Polynomial constraint `poly == 0` (eq) or `poly >= 0` (ineq) over
    variables named z_{i}_{a} and y_{i}_{j} (i <= j; y is symmetric by
    identification)."""

    kind: str  # "eq" | "ineq"
    poly: dict  # monomial tuple (sorted variable names) -> coefficient
    origin: str  # "A1" | "A2" | "objective"
    label: str = ""

    def evaluate(self, assignment: dict) -> float:
        total = 0.0
        for mono, coeff in self.poly.items():
            term = coeff
            for name in mono:
                term *= assignment[name]
            total += term
        return total


@dataclass
class ConstraintSystem:
    n: int
    k: int
    R: float
    t: float
    constraints: list[Constraint] = field(default_factory=list)

    def by_origin(self, origin: str) -> list[Constraint]:
        return [c for c in self.constraints if c.origin == origin]

    def evaluate_all(self, assignment: dict) -> list[float]:
        return [c.evaluate(assignment) for c in self.constraints]

    def to_json(self) -> str:
        return json.dumps(
            {
                "n": self.n,
                "k": self.k,
                "R": self.R,
                "t": self.t,
                "constraints": [
                    {
                        "kind": c.kind,
                        "origin": c.origin,
                        "label": c.label,
                        "poly": [[list(m), coeff] for m, coeff in c.poly.items()],
                    }
                    for c in self.constraints
                ],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "ConstraintSystem":
        data = json.loads(text)
        cons = [
            Constraint(
                kind=c["kind"],
                origin=c["origin"],
                label=c["label"],
                poly={tuple(m): coeff for m, coeff in c["poly"]},
            )
            for c in data["constraints"]
        ]
        return cls(n=data["n"], k=data["k"], R=data["R"], t=data["t"], constraints=cons)


def zvar(i: int, a: int) -> str:
    return f"z_{i}_{a}"


def yvar(i: int, j: int) -> str:
    i, j = min(i, j), max(i, j)
    return f"y_{i}_{j}"


def build_constraint_system(B, Yin, R: float, t: float) -> ConstraintSystem:
    """The combined system: equipartition constraints on Z, sandwich and
    row-average constraints on Y, and the objective bound f(Y, Z; B) >= t."""
    Bm = _entries(B)
    Ym = _entries(Yin)
    k = Bm.shape[0]
    n = Ym.shape[0]
    if n % k != 0:
        raise ValueError("k must divide n")
    cons: list[Constraint] = []
    # A1(Z)
    for i in range(n):
        for a in range(k):
            cons.append(
                Constraint("eq", {(zvar(i, a), zvar(i, a)): 1.0, (zvar(i, a),): -1.0}, "A1", f"idempotent z_{i}_{a}")
            )
    for i in range(n):
        poly = {(zvar(i, a),): 1.0 for a in range(k)}
        poly[()] = -1.0
        cons.append(Constraint("eq", poly, "A1", f"row sum {i}"))
    for a in range(k):
        poly = {(zvar(i, a),): 1.0 for i in range(n)}
        poly[()] = -float(n // k)
        cons.append(Constraint("eq", poly, "A1", f"column sum {a}"))
    for i in range(n):
        for a in range(k):
            cons.append(Constraint("ineq", {(zvar(i, a),): 1.0}, "A1", f"nonneg z_{i}_{a}"))
    # A2(Y; Yin)
    for i in range(n):
        for j in range(i, n):
            cons.append(Constraint("ineq", {(yvar(i, j),): 1.0}, "A2", f"y_{i}_{j} >= 0"))
            cons.append(
                Constraint("ineq", {(): float(Ym[i, j]), (yvar(i, j),): -1.0}, "A2", f"y_{i}_{j} <= Yin")
            )
    for i in range(n):
        poly = {(): 20.0 * R}
        for j in range(n):
            name = yvar(i, j)
            poly[(name,)] = poly.get((name,), 0.0) - 1.0 / n
        cons.append(Constraint("ineq", poly, "A2", f"row average {i}"))
    # objective: f(Y, Z; B) - t >= 0, with z_ia^2 terms kept explicit
    poly = {(): -float(t)}
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            for a in range(k):
                for b in range(k):
                    mono = tuple(sorted((zvar(i, a), zvar(j, b), yvar(i, j))))
                    poly[mono] = poly.get(mono, 0.0) + Bm[a, b]
    # diagonal of <ZBZ^T, Y>: y_ii terms
    for i in range(n):
        for a in range(k):
            for b in range(k):
                mono = tuple(sorted((zvar(i, a), zvar(i, b), yvar(i, i))))
                poly[mono] = poly.get(mono, 0.0) + Bm[a, b]
    # -(1/2) ||Z B Z^T||_F^2
    for i in range(n):
        for j in range(n):
            for a in range(k):
                for b in range(k):
                    for c in range(k):
                        for dd in range(k):
                            mono = tuple(
                                sorted((zvar(i, a), zvar(i, c), zvar(j, b), zvar(j, dd)))
                            )
                            poly[mono] = poly.get(mono, 0.0) - 0.5 * Bm[a, b] * Bm[c, dd]
    cons.append(Constraint("ineq", poly, "objective", "f(Y,Z;B) >= t"))
    return ConstraintSystem(n=n, k=k, R=float(R), t=float(t), constraints=cons)
