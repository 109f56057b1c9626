"""Moment relaxations of polynomial systems and SDP feasibility.

A level-L relaxation searches for a pseudo-expectation over monomials of
(weighted) degree <= L: the moment matrix over the degree-<= L/2 basis
must be PSD, every inequality g >= 0 contributes a localizing matrix over
the degree-<= (L - deg g)/2 basis, every equality h = 0 contributes the
linear constraints E[h q] = 0 for all monomials q with deg(h q) <= L, and
selected products of inequalities contribute scalar nonnegativity rows
(pseudo-distributions must pass nonnegativity tests on constraint
products, so adding them keeps every true solution feasible).

Idempotent variables are reduced by substitution (x^2 -> x), and products
of distinct variables in the same exclusion group (the one-hot block
indicators of a single vertex) reduce to zero.  Variables pinned to zero
by their bounds are eliminated.

Feasibility is decided in phase-I form: minimize lam subject to every
PSD block shifted by lam*I and every scalar row relaxed by lam.  The
optimum lam* is the infeasibility measure: lam* <= tol is Feasible
(re-verified independently on the returned moments), lam* > margin is
Infeasible, anything between is Unknown.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import SolverError

DEFAULT_TOL = 1e-7
DEFAULT_MARGIN = 1e-5


@dataclass(frozen=True)
class VarSpec:
    name: str
    weight: int = 1
    idempotent: bool = False
    group: object = None
    fixed_zero: bool = False


class MonomialAlgebra:
    """Canonical monomials (sorted tuples of variable ids with
    multiplicity) modulo idempotency, exclusion groups and eliminated
    variables.  ``None`` represents the zero monomial."""

    def __init__(self, variables: list[VarSpec]):
        self.vars = list(variables)
        self.index = {v.name: i for i, v in enumerate(self.vars)}
        if len(self.index) != len(self.vars):
            raise ValueError("duplicate variable names")

    def weight(self, mono: tuple) -> int:
        return sum(self.vars[v].weight for v in mono)

    def reduce(self, ids) -> tuple | None:
        counts: dict[int, int] = {}
        for v in ids:
            counts[v] = counts.get(v, 0) + 1
        groups: dict[object, int] = {}
        out: list[int] = []
        for v in sorted(counts):
            spec = self.vars[v]
            if spec.fixed_zero:
                return None
            mult = 1 if spec.idempotent else counts[v]
            if spec.group is not None:
                if spec.group in groups and groups[spec.group] != v:
                    return None
                groups[spec.group] = v
            out.extend([v] * mult)
        return tuple(out)

    def mul(self, a: tuple, b: tuple) -> tuple | None:
        return self.reduce(a + b)

    def reduce_poly(self, poly: dict) -> dict:
        """Name-tuple polynomial -> canonical id-monomial polynomial."""
        out: dict[tuple, float] = {}
        for mono, coeff in poly.items():
            ids = tuple(self.index[name] for name in mono)
            red = self.reduce(ids)
            if red is None:
                continue
            out[red] = out.get(red, 0.0) + float(coeff)
        return {m: c for m, c in out.items() if c != 0.0}

    def monomials_up_to(self, max_weight: int) -> list[tuple]:
        """Canonical monomials of weight <= max_weight in graded order."""
        found: list[tuple] = [()]

        def extend(mono: tuple, start: int, budget: int):
            for v in range(start, len(self.vars)):
                spec = self.vars[v]
                if spec.fixed_zero or spec.weight > budget:
                    continue
                cand = self.reduce(mono + (v,))
                if cand is None or cand == mono:
                    continue
                found.append(cand)
                extend(cand, v, budget - spec.weight)

        extend((), 0, max_weight)
        uniq = sorted(set(found), key=lambda m: (self.weight(m), m))
        return uniq

    def names(self, mono: tuple) -> tuple:
        return tuple(self.vars[v].name for v in mono)


@dataclass
class Block:
    """One PSD block: entries are affine in the moment vector."""

    label: str
    size: int
    rows: sp.csr_matrix  # (size*size, num_moments)
    const: np.ndarray  # (size*size,)
    scale: float = 1.0


@dataclass
class FeasibilityProblem:
    algebra: MonomialAlgebra
    level: int
    moment_ids: dict[tuple, int]
    moments: list[tuple]
    blocks: list[Block]
    eq_rows: sp.csr_matrix
    eq_rhs: np.ndarray
    eq_scales: np.ndarray
    param_rows: dict[str, int] = field(default_factory=dict)
    eq_labels: list[str] = field(default_factory=list)

    @property
    def num_moments(self) -> int:
        return len(self.moments)


@dataclass
class MomentVector:
    level: int
    values: dict  # name-tuple -> float

    def __getitem__(self, names: tuple) -> float:
        return self.values[tuple(sorted(names))]


@dataclass
class FeasibilityResult:
    status: str  # "feasible" | "infeasible" | "unknown"
    lam: float
    moments: MomentVector | None = None
    verified: bool = False


class _MomentRegistry:
    def __init__(self):
        self.ids: dict[tuple, int] = {}
        self.monos: list[tuple] = []

    def get(self, mono: tuple) -> int:
        if mono not in self.ids:
            self.ids[mono] = len(self.monos)
            self.monos.append(mono)
        return self.ids[mono]


def _poly_row(alg, reg, poly_ids: dict, extra: tuple = ()) -> tuple[dict[int, float], float]:
    """Linear form of E[poly * extra] over moment ids, plus constant."""
    coeffs: dict[int, float] = {}
    const = 0.0
    for mono, coeff in poly_ids.items():
        prod = alg.mul(mono, extra)
        if prod is None:
            continue
        if prod == ():
            const += coeff
        else:
            mid = reg.get(prod)
            coeffs[mid] = coeffs.get(mid, 0.0) + coeff
    return coeffs, const


def build_problem(
    variables: list[VarSpec],
    equalities: list[dict],
    inequalities: list[dict],
    level: int,
    scalar_products: list[dict] | None = None,
    eq_labels: list[str] | None = None,
    ineq_labels: list[str] | None = None,
    param_ineq: dict | None = None,
) -> FeasibilityProblem:
    """Assemble the level-`level` moment relaxation.

    ``scalar_products`` are additional polynomials (products of system
    constraints) imposed as scalar nonnegativity rows.  ``param_ineq``
    marks one scalar inequality whose constant term is adjusted at solve
    time (the binary-searched objective bound).
    """
    alg = MonomialAlgebra(variables)
    if level % 2 != 0:
        raise ValueError("level must be even")
    eqs = [alg.reduce_poly(p) for p in equalities]
    ineqs = [alg.reduce_poly(p) for p in inequalities]
    prods = [alg.reduce_poly(p) for p in (scalar_products or [])]
    max_deg = 0
    for p in eqs + ineqs + prods:
        for mono in p:
            max_deg = max(max_deg, alg.weight(mono))
    if level < max_deg:
        raise ValueError(f"level {level} below max constraint degree {max_deg}")

    reg = _MomentRegistry()
    blocks: list[Block] = []
    basis = alg.monomials_up_to(level // 2)

    def psd_block(label: str, bas: list[tuple], poly_ids: dict) -> Block:
        s = len(bas)
        data, rows_idx, cols_idx = [], [], []
        const = np.zeros(s * s)
        for p in range(s):
            for q in range(p, s):
                bp = alg.mul(bas[p], bas[q])
                if bp is None:
                    entry_coeffs: dict[int, float] = {}
                    entry_const = 0.0
                else:
                    entry_coeffs, entry_const = _poly_row(alg, reg, poly_ids, bp)
                for cell in ((p, q), (q, p)) if p != q else ((p, q),):
                    flat = cell[0] * s + cell[1]
                    const[flat] = entry_const
                    for mid, cf in entry_coeffs.items():
                        rows_idx.append(flat)
                        cols_idx.append(mid)
                        data.append(cf)
        mat = sp.csr_matrix((data, (rows_idx, cols_idx)), shape=(s * s, 10**9))
        return Block(label=label, size=s, rows=mat, const=const)

    one = {(): 1.0}
    blocks.append(psd_block("moment matrix", basis, one))
    ineq_labels = ineq_labels or [f"ineq {i}" for i in range(len(ineqs))]
    for i, g in enumerate(ineqs):
        dg = max((alg.weight(m) for m in g), default=0)
        loc_basis = alg.monomials_up_to((level - dg) // 2)
        blocks.append(psd_block(f"localizer: {ineq_labels[i]}", loc_basis, g))
    for i, g in enumerate(prods):
        blocks.append(psd_block(f"product row {i}", [()], g))

    param_rows: dict[str, int] = {}
    if param_ineq is not None:
        g = alg.reduce_poly(param_ineq)
        param_rows["objective"] = len(blocks)
        blocks.append(psd_block("objective row", [()], g))

    # equality rows: E[h * q] = 0 for q up to complementary degree
    eq_labels = eq_labels or [f"eq {i}" for i in range(len(eqs))]
    data, rows_idx, cols_idx, rhs, labels_out = [], [], [], [], []
    row = 0
    for i, h in enumerate(eqs):
        dh = max((alg.weight(m) for m in h), default=0)
        for q in alg.monomials_up_to(level - dh):
            coeffs, const = _poly_row(alg, reg, h, q)
            if not coeffs and const == 0.0:
                continue
            for mid, cf in coeffs.items():
                rows_idx.append(row)
                cols_idx.append(mid)
                data.append(cf)
            rhs.append(-const)
            labels_out.append(f"{eq_labels[i]} * {alg.names(q)}")
            row += 1
    num_moments = len(reg.monos)
    eq_rows = sp.csr_matrix((data, (rows_idx, cols_idx)), shape=(row, max(num_moments, 1)))
    eq_rhs = np.array(rhs)

    # normalize coefficient infinity-norms to 1 (recorded per block/row)
    for b in blocks:
        b.rows = sp.csr_matrix(b.rows[:, :num_moments])
        mx = max(
            float(np.abs(b.rows.data).max()) if b.rows.nnz else 0.0,
            float(np.abs(b.const).max()) if b.const.size else 0.0,
        )
        if mx > 0:
            b.scale = mx
            b.rows = b.rows / mx
            b.const = b.const / mx
    eq_scales = np.ones(eq_rows.shape[0])
    if eq_rows.nnz:
        absrows = sp.csr_matrix((np.abs(eq_rows.data), eq_rows.indices, eq_rows.indptr), shape=eq_rows.shape)
        row_max = np.maximum(absrows.max(axis=1).toarray().ravel(), np.abs(eq_rhs))
        row_max[row_max == 0] = 1.0
        eq_scales = row_max
        eq_rows = sp.diags(1.0 / row_max) @ eq_rows
        eq_rhs = eq_rhs / row_max

    return FeasibilityProblem(
        algebra=alg,
        level=level,
        moment_ids=dict(reg.ids),
        moments=list(reg.monos),
        blocks=blocks,
        eq_rows=sp.csr_matrix(eq_rows),
        eq_rhs=eq_rhs,
        eq_scales=eq_scales,
        param_rows=param_rows,
        eq_labels=labels_out,
    )


# ---------------------------------------------------------------------------
# solving


class _PhaseOne:
    """Cached cvxpy phase-I program; the objective-row constant is a
    parameter so binary search re-solves without recompiling."""

    def __init__(self, problem: FeasibilityProblem):
        import cvxpy as cp

        self.problem = problem
        p = problem.num_moments
        self.m = cp.Variable(p, name="moments")
        self.lam = cp.Variable(name="lam")
        self.shift = cp.Parameter(value=0.0, name="shift")
        cons = []
        if problem.eq_rows.shape[0]:
            cons.append(problem.eq_rows @ self.m == problem.eq_rhs)
        obj_row = problem.param_rows.get("objective")
        for bi, b in enumerate(problem.blocks):
            expr = b.rows @ self.m + b.const
            if bi == obj_row:
                expr = expr + self.shift / b.scale
            if b.size == 1:
                cons.append(expr[0] + self.lam >= 0)
            else:
                mat = cp.reshape(expr, (b.size, b.size), order="C")
                cons.append(mat + self.lam * np.eye(b.size) >> 0)
        cons.append(self.lam >= -1.0)
        self.prog = cp.Problem(cp.Minimize(self.lam), cons)

    def solve(self, shift: float = 0.0) -> tuple[float, np.ndarray | None]:
        import warnings

        import cvxpy as cp

        self.shift.value = float(shift)
        status = None
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                # requesting more than Clarabel can certify usually ends in
                # `optimal_inaccurate` at ~1e-9 quality, which is decisive
                # for the 1e-7 / 1e-5 verdict thresholds; Feasible answers
                # are re-verified independently regardless
                self.prog.solve(
                    solver=cp.CLARABEL,
                    tol_gap_abs=1e-10,
                    tol_gap_rel=1e-10,
                    tol_feas=1e-10,
                    max_iter=400,
                )
                status = self.prog.status
            except cp.error.SolverError:
                status = None
            if status not in ("optimal", "optimal_inaccurate"):
                try:
                    self.prog.solve(solver=cp.SCS, eps=1e-9, max_iters=200_000)
                    status = self.prog.status
                except cp.error.SolverError:
                    return np.inf, None
        if status not in ("optimal", "optimal_inaccurate"):
            return np.inf, None
        lam = float(self.lam.value)
        mvals = np.asarray(self.m.value).ravel() if self.m.value is not None else None
        return lam, mvals


def _moment_vector(problem: FeasibilityProblem, mvals: np.ndarray) -> MomentVector:
    values = {(): 1.0}
    alg = problem.algebra
    for mono, mid in problem.moment_ids.items():
        values[alg.names(mono)] = float(mvals[mid])
    return MomentVector(level=problem.level, values=values)


def verify_moments(
    problem: FeasibilityProblem, mvals: np.ndarray, tol: float, shift: float = 0.0
) -> tuple[bool, dict]:
    """Independent residual / PSD re-check of a candidate moment vector."""
    report: dict = {}
    ok = True
    if problem.eq_rows.shape[0]:
        resid = float(np.abs(problem.eq_rows @ mvals - problem.eq_rhs).max())
    else:
        resid = 0.0
    report["eq_residual"] = resid
    ok &= resid <= tol
    min_eig = np.inf
    obj_row = problem.param_rows.get("objective")
    for bi, b in enumerate(problem.blocks):
        vec = b.rows @ mvals + b.const
        if bi == obj_row:
            vec = vec + shift / b.scale
        if b.size == 1:
            ev = float(vec[0])
        else:
            mat = vec.reshape(b.size, b.size)
            ev = float(np.linalg.eigvalsh(0.5 * (mat + mat.T)).min())
        min_eig = min(min_eig, ev)
    report["min_eigenvalue"] = min_eig
    ok &= min_eig >= -tol
    return bool(ok), report


def solve_feasibility(
    problem: FeasibilityProblem,
    tol: float = DEFAULT_TOL,
    margin: float = DEFAULT_MARGIN,
    shift: float = 0.0,
    cache: _PhaseOne | None = None,
) -> FeasibilityResult:
    """Feasible / Infeasible / Unknown verdict for the relaxation.

    Feasible requires the phase-I optimum lam* <= tol and an independent
    re-verification of the returned moments; lam* > margin certifies
    infeasibility of the tol-relaxed system; the gap in between (and any
    solver failure) maps to Unknown, never to a silent Feasible.
    """
    phase = cache if cache is not None else _PhaseOne(problem)
    lam, mvals = phase.solve(shift)
    if mvals is not None:
        # Feasible is decided by the returned point itself: residuals and
        # minimum block eigenvalue within tol on the normalized data
        ok, _ = verify_moments(problem, mvals, tol=tol, shift=shift)
        if ok:
            return FeasibilityResult(
                status="feasible", lam=lam, moments=_moment_vector(problem, mvals), verified=True
            )
    if not np.isfinite(lam):
        return FeasibilityResult(status="unknown", lam=lam)
    if lam > margin:
        return FeasibilityResult(status="infeasible", lam=lam)
    return FeasibilityResult(status="unknown", lam=lam)


def pseudo_expectation(mv: MomentVector, poly: dict) -> float:
    """Linear-functional evaluation of a name-tuple polynomial."""
    total = 0.0
    for mono, coeff in poly.items():
        key = tuple(sorted(mono))
        if key == ():
            total += coeff
            continue
        if key not in mv.values:
            # try idempotent-style lookup after dropping duplicates
            raise ValueError(f"monomial {key} not tracked at level {mv.level}")
        total += coeff * mv.values[key]
    return float(total)


def point_mass_moments(problem: FeasibilityProblem, assignment: dict) -> MomentVector:
    """Moments of the point mass at a concrete assignment (oracle for
    completeness tests)."""
    alg = problem.algebra
    values = {(): 1.0}
    for mono in problem.moments:
        term = 1.0
        for v in mono:
            term *= assignment[alg.vars[v].name]
        values[alg.names(mono)] = term
    return MomentVector(level=problem.level, values=values)


def moments_array(problem: FeasibilityProblem, mv: MomentVector) -> np.ndarray:
    out = np.zeros(problem.num_moments)
    alg = problem.algebra
    for mono, mid in problem.moment_ids.items():
        out[mid] = mv.values[alg.names(mono)]
    return out


# ---------------------------------------------------------------------------
# generic entry point from a polynomial ConstraintSystem


def _parse_variables(cs) -> list[VarSpec]:
    """Variable specs from a ConstraintSystem: z-variables are idempotent
    one-hot indicators (weight 1, exclusion group per vertex), y-variables
    carry weight 2, and variables squeezed to zero by their bounds are
    eliminated."""
    names: set[str] = set()
    for c in cs.constraints:
        for mono in c.poly:
            names.update(mono)
    idempotent: set[str] = set()
    upper_zero: set[str] = set()
    for c in cs.constraints:
        if c.kind == "eq" and len(c.poly) == 2:
            items = sorted(c.poly.items(), key=lambda kv: len(kv[0]))
            (m1, c1), (m2, c2) = items
            if (
                len(m1) == 1
                and len(m2) == 2
                and m2 == (m1[0], m1[0])
                and abs(c1 + c2) < 1e-15
            ):
                idempotent.add(m1[0])
        if c.kind == "ineq":
            const = c.poly.get((), 0.0)
            linear = {m: v for m, v in c.poly.items() if m != ()}
            if len(linear) == 1:
                (mono, coeff), = linear.items()
                if len(mono) == 1 and coeff < 0 and const == 0.0:
                    upper_zero.add(mono[0])
    specs = []
    for name in sorted(names):
        if name.startswith("z_"):
            _, i, a = name.split("_")
            specs.append(VarSpec(name, weight=1, idempotent=True, group=("z", int(i))))
        elif name.startswith("y_"):
            specs.append(
                VarSpec(name, weight=2, idempotent=False, fixed_zero=name in upper_zero)
            )
        else:
            specs.append(VarSpec(name, weight=1, idempotent=name in idempotent))
    return specs


def build_moment_relaxation(cs, level: int) -> FeasibilityProblem:
    """Level-`level` moment relaxation of a ConstraintSystem (idempotency
    equalities become substitutions; remaining equalities become linear
    moment constraints; inequalities get localizing matrices)."""
    specs = _parse_variables(cs)
    by_name = {s.name: s for s in specs}
    eqs, eq_labels, ineqs, ineq_labels = [], [], [], []
    param = None
    for c in cs.constraints:
        if c.kind == "eq":
            if len(c.poly) == 2:
                monos = sorted(c.poly, key=len)
                if (
                    len(monos[0]) == 1
                    and monos[1] == (monos[0][0], monos[0][0])
                    and by_name[monos[0][0]].idempotent
                ):
                    continue  # encoded in the algebra
            eqs.append(c.poly)
            eq_labels.append(c.label)
        elif c.origin == "objective":
            param = c.poly
        else:
            ineqs.append(c.poly)
            ineq_labels.append(c.label)
    return build_problem(
        specs,
        eqs,
        ineqs,
        level,
        eq_labels=eq_labels,
        ineq_labels=ineq_labels,
        param_ineq=param,
    )
