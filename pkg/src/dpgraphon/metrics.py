"""Graphon distances between block-connectivity matrices.

``delta_ds`` is the doubly-stochastic quadratic minimization

    min_{S in B_k} (1/k^2) sum_{a,a',b,b'} (B(a,b) - B0(a',b'))^2 S(a,a') S(b,b')

which equals the squared graphon distance delta_2^2 for nonnegative block
matrices.  The practical solver is multistart Frank-Wolfe with away steps
(permutation vertices plus random interior starts); exact oracles cover
k = 2 (analytic segment minimization) and permutation enumeration.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import CapacityError
from .rng import substream

FACTORIAL_CAP = 6


@dataclass(frozen=True)
class DoublyStochastic:
    """Feasible point of the Birkhoff polytope (tolerance 1e-9 on sums)."""

    entries: np.ndarray
    approximate: bool = False

    def __post_init__(self):
        S = np.array(self.entries, dtype=float)
        if S.min() < -1e-12:
            raise ValueError("negative entry in doubly stochastic matrix")
        S = np.clip(S, 0.0, None)
        if np.abs(S.sum(axis=0) - 1.0).max() > 1e-9 or np.abs(S.sum(axis=1) - 1.0).max() > 1e-9:
            raise ValueError("row/column sums must equal 1 within 1e-9")
        S.setflags(write=False)
        object.__setattr__(self, "entries", S)

    @property
    def k(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class QuadraticObjective:
    """The rounding objective p(S; B, B0) as a k^2-by-k^2 coefficient
    matrix acting on vec(S) (row-major, index a*k + a')."""

    B: np.ndarray
    B0: np.ndarray
    Q: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        B = np.asarray(self.B, dtype=float)
        B0 = np.asarray(self.B0, dtype=float)
        if B.shape != B0.shape or B.shape[0] != B.shape[1]:
            raise ValueError("B and B0 must be square with equal shape")
        k = B.shape[0]
        D = (B[:, :, None, None] - B0[None, None, :, :]) ** 2  # [a, b, a', b']
        Q = D.transpose(0, 2, 1, 3).reshape(k * k, k * k) / k**2
        Q = 0.5 * (Q + Q.T)
        Q.setflags(write=False)
        object.__setattr__(self, "Q", Q)

    @property
    def k(self) -> int:
        return np.asarray(self.B).shape[0]

    def value(self, S: np.ndarray) -> float:
        x = np.asarray(S, dtype=float).reshape(-1)
        return float(x @ self.Q @ x)


@dataclass(frozen=True)
class SolverOptions:
    restarts: int = 64
    max_iter: int = 10_000
    tol: float = 1e-8
    seed: int = 0


def _permutation_matrices(k: int) -> list[np.ndarray]:
    eye = np.eye(k)
    return [eye[list(p)] for p in itertools.permutations(range(k))]


def _starts(k: int, opts: SolverOptions) -> np.ndarray:
    starts: list[np.ndarray] = []
    if math.factorial(k) <= 1024:
        starts.extend(_permutation_matrices(k))
    gen = substream(opts.seed, "birkhoff-starts", k)
    eye = np.eye(k)
    for _ in range(max(0, opts.restarts)):
        perms = [eye[gen.permutation(k)] for _ in range(3)]
        w = gen.dirichlet(np.ones(3))
        starts.append(sum(wi * Pi for wi, Pi in zip(w, perms)))
    return np.array(starts)


def minimize_quadratic_birkhoff(
    objective: QuadraticObjective, restarts: int = 64, tol: float = 1e-8,
    max_iter: int = 10_000, seed: int = 0,
) -> tuple[float, DoublyStochastic]:
    """Best local minimum of p(S) over the Birkhoff polytope found by
    multistart away-step Frank-Wolfe (linear oracle: min-cost assignment).

    The returned matrix carries ``approximate=True`` when the duality-gap
    tolerance was not reached within the iteration cap.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    opts = SolverOptions(restarts=restarts, max_iter=max_iter, tol=tol, seed=seed)
    starts = _starts(objective.k, opts)
    val, S, converged = kernels.fw_birkhoff(objective.Q, starts, max_iter=opts.max_iter, tol=opts.tol)
    # the atom representation keeps iterates inside the polytope; repair
    # float dust so the feasibility invariant holds exactly
    S = _repair_doubly_stochastic(S)
    return float(val), DoublyStochastic(S, approximate=not converged)


def _repair_doubly_stochastic(S: np.ndarray, rounds: int = 50) -> np.ndarray:
    S = np.clip(np.asarray(S, dtype=float), 0.0, None)
    for _ in range(rounds):
        r = S.sum(axis=1)
        S = S / np.where(r[:, None] == 0, 1.0, r[:, None])
        c = S.sum(axis=0)
        S = S / np.where(c[None, :] == 0, 1.0, c[None, :])
        if max(np.abs(S.sum(axis=1) - 1).max(), np.abs(S.sum(axis=0) - 1).max()) < 1e-13:
            break
    return S


def delta_ds(
    B: np.ndarray, B0: np.ndarray, opts: SolverOptions | None = None
) -> tuple[float, DoublyStochastic]:
    """delta_2^2 between block matrices via the Birkhoff-polytope
    characterization.  Exact for k <= 2; multistart Frank-Wolfe with all
    permutation starts for larger k."""
    B = np.asarray(B, dtype=float)
    B0 = np.asarray(B0, dtype=float)
    if B.shape != B0.shape:
        raise ValueError("dimension mismatch")
    opts = opts or SolverOptions()
    k = B.shape[0]
    if k == 1:
        return float((B[0, 0] - B0[0, 0]) ** 2), DoublyStochastic(np.ones((1, 1)))
    # always the general multistart solver; the analytic k=2 oracle stays an
    # independent cross-check
    obj = QuadraticObjective(B, B0)
    return minimize_quadratic_birkhoff(
        obj, restarts=opts.restarts, tol=opts.tol, max_iter=opts.max_iter, seed=opts.seed
    )


def _exact_k2_with_argmin(B: np.ndarray, B0: np.ndarray) -> tuple[float, float]:
    """The Birkhoff polytope for k=2 is the segment S(s) = [[s,1-s],[1-s,s]];
    p(S(s)) is a univariate quadratic, minimized at a vertex or at the
    interior stationary point."""
    obj = QuadraticObjective(B, B0)

    def q(s: float) -> float:
        return obj.value(np.array([[s, 1 - s], [1 - s, s]]))

    q0, q1 = q(0.0), q(1.0)
    # q(s) = a s^2 + b s + c from three evaluations
    qh = q(0.5)
    a = 2 * q0 + 2 * q1 - 4 * qh
    b = q1 - q0 - a
    candidates = [(q0, 0.0), (q1, 1.0)]
    if a > 0:
        s_star = min(max(-b / (2 * a), 0.0), 1.0)
        candidates.append((q(s_star), s_star))
    return min(candidates, key=lambda t: t[0])


def delta_ds_exact_k2(B: np.ndarray, B0: np.ndarray) -> float:
    B = np.asarray(B, dtype=float)
    if B.shape != (2, 2):
        raise ValueError("exact oracle requires k = 2")
    return _exact_k2_with_argmin(B, np.asarray(B0, dtype=float))[0]


def delta_hat2(A: np.ndarray, B: np.ndarray) -> float:
    """min over permutation pairs of (1/k) ||P1 A P2 - B||_F (a lower
    bound on the graphon distance delta_2)."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    k = A.shape[0]
    if k > FACTORIAL_CAP:
        raise CapacityError(f"permutation enumeration capped at k = {FACTORIAL_CAP}")
    perms = list(itertools.permutations(range(k)))
    best = np.inf
    for p1 in perms:
        Ap = A[list(p1), :]
        for p2 in perms:
            best = min(best, float(((Ap[:, list(p2)] - B) ** 2).sum()))
    return math.sqrt(best) / k


def delta_p(B: np.ndarray, B0: np.ndarray) -> float:
    """min over single permutations pi of
    (1/k^2) sum_{ij} (B(pi(i), pi(j)) - B0(i, j))^2."""
    B = np.asarray(B, dtype=float)
    B0 = np.asarray(B0, dtype=float)
    k = B.shape[0]
    if k > FACTORIAL_CAP:
        raise CapacityError(f"permutation enumeration capped at k = {FACTORIAL_CAP}")
    best = np.inf
    for pi in itertools.permutations(range(k)):
        idx = list(pi)
        best = min(best, float(((B[np.ix_(idx, idx)] - B0) ** 2).sum()))
    return best / k**2


def refine_block_matrix(B: np.ndarray, times: int) -> np.ndarray:
    """Entries of the same step function on a `times`-finer partition."""
    return np.kron(np.asarray(B, dtype=float), np.ones((times, times)))


def delta2_block_graphons(B1: np.ndarray, B2: np.ndarray, opts: SolverOptions | None = None) -> float:
    """delta_2 between the step graphons W[B1], W[B2]: refine both to the
    lcm block count and take sqrt of the doubly-stochastic minimum."""
    B1 = np.asarray(B1, dtype=float)
    B2 = np.asarray(B2, dtype=float)
    k1, k2 = B1.shape[0], B2.shape[0]
    L = math.lcm(k1, k2)
    if L > 12:
        raise CapacityError("common refinement capped at 12 blocks")
    R1 = refine_block_matrix(B1, L // k1)
    R2 = refine_block_matrix(B2, L // k2)
    val, _ = delta_ds(R1, R2, opts)
    return math.sqrt(max(val, 0.0))


def delta2_sq(B: np.ndarray, B0: np.ndarray, opts: SolverOptions | None = None) -> float:
    """Convenience: delta_2^2(B, B0) = delta_ds value."""
    return delta_ds(B, B0, opts)[0]
