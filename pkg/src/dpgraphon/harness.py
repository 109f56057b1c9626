"""Verification harness: privacy/sensitivity audits, oracle cross-checks,
inequality suites, and reproducible parameter sweeps.

Audit functions return structured reports (``passed``, worst margins,
per-case rows); the CLI maps failures to exit code 1.  The experiment
runner emits one CSV row per trial plus a JSON summary with per-point
means and standard errors; outputs are byte-identical for a fixed
(config, seed) except for the wall-clock column, which reproducibility
comparisons must strip.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import metrics, scoring
from .estimators import EstimatorConfig, private_sbm_estimate
from .graphs import (
    BlockMatrix,
    LabeledGraph,
    empirical_density,
    sample_equipartition,
    sample_sbm,
)
from .linalg import spectral_norm
from .mechanisms import MechanismConfig, build_grid, exact_em_distribution
from .rng import pair_uniforms, substream


def rewire_vertex(G: LabeledGraph, v: int, seed: int, p: float | None = None) -> LabeledGraph:
    """Node-adjacent graph: vertex v's edges are redrawn Bernoulli(p)
    (p defaults to the empirical density)."""
    A = G.adjacency.astype(np.uint8).copy()
    n = G.n
    p = empirical_density(G) if p is None else p
    gen = substream(seed, "rewire", v)
    row = (gen.uniform(size=n) < p).astype(np.uint8)
    row[v] = 0
    A[v, :] = row
    A[:, v] = row
    return LabeledGraph(A)


def _random_graph(n: int, seed: int, p: float = 0.4) -> LabeledGraph:
    U = pair_uniforms(seed, n, tag="audit-graph")
    upper = (U < p) & np.triu(np.ones((n, n), dtype=bool), k=1)
    A = upper | upper.T
    return LabeledGraph(A.astype(np.uint8))


# ---------------------------------------------------------------------------
# privacy audit


def audit_privacy(
    n: int = 6,
    k: int = 2,
    eps_list: tuple = (0.5, 1.0, 2.0),
    pairs: int = 20,
    R: float = 2.0,
    eta: float | None = None,
    seed: int = 0,
) -> dict:
    """Exact exponential-mechanism output distributions on node-adjacent
    pairs: max log probability ratio must not exceed eps (strict mode,
    sensitivity 40 n R^2)."""
    eta = R / 4.0 if eta is None else eta
    grid = build_grid(k, R, eta)
    delta = 40.0 * n * R * R
    worst = -np.inf
    rows = []
    for pi in range(pairs):
        G = _random_graph(n, seed=seed + 1000 + pi, p=0.3 + 0.4 * ((pi % 3) / 2))
        v = pi % n
        Gp = rewire_vertex(G, v, seed=seed + 2000 + pi, p=0.8)
        # three scaling regimes: extension-exact, mixed, cap-saturated
        # (divisor chosen so the max row sum is a known multiple of the cap)
        max_deg = max(int(G.degrees().max()), 1)
        factor = (0.5, 1.5, 4.0)[pi % 3]
        divisor = max_deg / (factor * 20.0 * R * n)
        s = scoring.lipschitz_scores_grid(G.adjacency / divisor, R, grid.candidates)
        sp = scoring.lipschitz_scores_grid(Gp.adjacency / divisor, R, grid.candidates)
        for eps in eps_list:
            cfg = MechanismConfig(eps=eps, sensitivity=delta, mode="strict")
            p1 = exact_em_distribution(s, cfg)
            p2 = exact_em_distribution(sp, cfg)
            ratio = float(np.max(np.abs(np.log(p1) - np.log(p2))))
            worst = max(worst, ratio - eps)
            rows.append({"pair": pi, "eps": eps, "max_log_ratio": ratio})
    return {
        "kind": "privacy",
        "passed": bool(worst <= 1e-9),
        "worst_margin": worst,
        "cases": rows,
        "grid_size": len(grid),
    }


# ---------------------------------------------------------------------------
# sensitivity audit


def audit_sensitivity(
    graphs: int = 50,
    n_choices: tuple = (6, 8, 10),
    k: int = 2,
    R_choices: tuple = (1.0, 2.0, 4.0),
    eta_divisions: int = 5,
    seed: int = 0,
) -> dict:
    """Exhaustive single-vertex rewirings: for every candidate B the
    extension score moves by at most 40 n R ||B||_inf."""
    worst = -np.inf
    cases = 0
    rows = []
    params = substream(seed, "sensitivity-params")
    for gi in range(graphs):
        n = int(params.choice(n_choices))
        R = float(params.choice(R_choices))
        factor = float(params.choice((0.5, 1.5, 4.0)))
        grid = build_grid(k, R, R / eta_divisions)
        binf = np.abs(grid.candidates).max(axis=(1, 2))
        G = _random_graph(n, seed=seed + gi, p=0.25 + 0.5 * ((gi % 4) / 3))
        max_deg = max(int(G.degrees().max()), 1)
        divisor = max_deg / (factor * 20.0 * R * n)
        Yin = G.adjacency / divisor
        s = scoring.lipschitz_scores_grid(Yin, R, grid.candidates)
        for v in range(n):
            Gp = rewire_vertex(G, v, seed=seed + 31 * gi + v)
            sp = scoring.lipschitz_scores_grid(Gp.adjacency / divisor, R, grid.candidates)
            margin = float(np.max(np.abs(s - sp) - 40.0 * n * R * binf))
            worst = max(worst, margin)
            cases += 1
            if margin > -np.inf:
                rows.append({"graph": gi, "vertex": v, "margin": margin})
    return {
        "kind": "sensitivity",
        "passed": bool(worst <= 1e-9),
        "worst_margin": worst,
        "cases_checked": cases,
        "worst_cases": sorted(rows, key=lambda r: -r["margin"])[:5],
    }


# ---------------------------------------------------------------------------
# metric oracle audit


def _ds_grid_search_k3(Q: np.ndarray, step: float = 0.02) -> float:
    """Exhaustive 4-parameter grid over the k=3 Birkhoff polytope."""
    vals = np.arange(0.0, 1.0 + step / 2, step)
    best = np.inf
    bs = len(vals)
    grid_ab = np.array(np.meshgrid(vals, vals, indexing="ij")).reshape(2, -1).T
    for a, b in grid_ab:
        if a + b > 1 + 1e-12:
            continue
        cd = grid_ab
        c, d = cd[:, 0], cd[:, 1]
        ok = (
            (c + d <= 1 + 1e-12)
            & (a + c <= 1 + 1e-12)
            & (b + d <= 1 + 1e-12)
            & (a + b + c + d >= 1 - 1e-12)
        )
        if not ok.any():
            continue
        c, d = c[ok], d[ok]
        m = c.shape[0]
        S = np.zeros((m, 9))
        S[:, 0] = a
        S[:, 1] = b
        S[:, 2] = 1 - a - b
        S[:, 3] = c
        S[:, 4] = d
        S[:, 5] = 1 - c - d
        S[:, 6] = 1 - a - c
        S[:, 7] = 1 - b - d
        S[:, 8] = a + b + c + d - 1
        v = np.einsum("mi,ij,mj->m", S, Q, S)
        best = min(best, float(v.min()))
    return best


def _random_block(k: int, R: float, gen) -> np.ndarray:
    B = gen.uniform(0, R, size=(k, k))
    return 0.5 * (B + B.T)


def audit_metrics_oracle(
    pairs_k2: int = 500, pairs_k3: int = 100, seed: int = 0, step: float = 0.02
) -> dict:
    """delta_ds against the analytic k=2 oracle and the k=3 grid search."""
    gen = substream(seed, "metrics-oracle")
    worst_k2 = 0.0
    for _ in range(pairs_k2):
        B = _random_block(2, 4.0, gen)
        B0 = _random_block(2, 4.0, gen)
        v, _ = metrics.delta_ds(B, B0)
        worst_k2 = max(worst_k2, abs(v - metrics.delta_ds_exact_k2(B, B0)))
    worst_hi = -np.inf
    worst_lo = -np.inf
    for _ in range(pairs_k3):
        B = _random_block(3, 2.0, gen)
        B0 = _random_block(3, 2.0, gen)
        v, _ = metrics.delta_ds(B, B0)
        gridv = _ds_grid_search_k3(metrics.QuadraticObjective(B, B0).Q, step)
        worst_hi = max(worst_hi, v - gridv - 1e-3)
        worst_lo = max(worst_lo, metrics.delta_hat2(B, B0) ** 2 - 1e-6 - v)
    passed = worst_k2 <= 1e-6 and worst_hi <= 0 and worst_lo <= 0
    return {
        "kind": "metrics-oracle",
        "passed": bool(passed),
        "worst_k2_gap": worst_k2,
        "worst_vs_grid": worst_hi,
        "worst_vs_lower": worst_lo,
    }


def audit_sandwich(pairs: int = 1000, seed: int = 0) -> dict:
    """delta_hat2^2 <= delta_ds <= delta_p and delta_p <= k^4 delta_ds."""
    gen = substream(seed, "sandwich")
    worst = -np.inf
    opts = metrics.SolverOptions(restarts=16)
    for i in range(pairs):
        k = 2 if i % 2 == 0 else 3
        R = float(gen.uniform(0.5, 4.0))
        B = _random_block(k, R, gen)
        B0 = _random_block(k, R, gen)
        ds, _ = metrics.delta_ds(B, B0, opts)
        dh = metrics.delta_hat2(B, B0)
        dp = metrics.delta_p(B, B0)
        worst = max(
            worst,
            dh**2 - ds - 1e-9,
            ds - dp - 1e-9,
            dp - k**4 * ds - 1e-9,
        )
    return {"kind": "sandwich", "passed": bool(worst <= 0), "worst_margin": worst}


# ---------------------------------------------------------------------------
# inequality audit (identifiability, spectral Hoelder)


def _random_orthonormal(n: int, k: int, gen) -> np.ndarray:
    M = gen.normal(size=(n, k))
    Q, _ = np.linalg.qr(M)
    return Q[:, :k]


def audit_spectral_hoelder(trials: int = 1000, seed: int = 0) -> dict:
    """<M, W> <= (3/2)||M||_F^2 + 2k ||W||^2 for M with
    (I - V V^T) M (I - V0 V0^T) = 0 and symmetric W."""
    gen = substream(seed, "hoelder")
    worst = -np.inf
    for _ in range(trials):
        n = int(gen.integers(4, 13))
        k = int(gen.integers(1, min(4, n)))
        V = _random_orthonormal(n, k, gen)
        V0 = _random_orthonormal(n, k, gen)
        M0 = gen.normal(size=(n, n)) * float(gen.uniform(0.2, 3.0))
        PV = V @ V.T
        P0 = V0 @ V0.T
        M = PV @ M0 + M0 @ P0 - PV @ M0 @ P0
        W = gen.normal(size=(n, n))
        W = 0.5 * (W + W.T) * float(gen.uniform(0.2, 3.0))
        lhs = float((M * W).sum())
        rhs = 1.5 * float((M**2).sum()) + 2 * k * spectral_norm(W) ** 2
        worst = max(worst, lhs - rhs)
    return {"kind": "spectral-hoelder", "passed": bool(worst <= 1e-9), "worst_margin": worst}


def audit_identifiability(instances: int = 1000, seed: int = 0) -> dict:
    """Identifiability I with constants (48k, 4) over every enumerated Z,
    and the robust version II with surrogate constant 100."""
    gen = substream(seed, "identifiability")
    worst1 = -np.inf
    worst2 = -np.inf
    for i in range(instances):
        n = int(gen.choice([4, 6, 8]))
        k = 2
        R = float(gen.uniform(0.5, 4.0))
        z0 = sample_equipartition(n, k, seed=seed + 17 * i)
        Z0 = z0.matrix()
        B0 = _random_block(k, R, gen)
        B = _random_block(k, R, gen)
        Y0 = Z0 @ B0 @ Z0.T
        Yin = Y0 + gen.normal(size=(n, n)) * float(gen.uniform(0.0, 1.0))
        Yin = 0.5 * (Yin + Yin.T)
        labels = scoring.enumerate_equipartitions(n, k)
        f0 = scoring.f_objective(Z0, B0, Yin)
        spec_err = spectral_norm(Yin - Y0) ** 2
        for lab in labels:
            Z = np.zeros((n, k))
            Z[np.arange(n), lab] = 1.0
            lhs = float(((Z @ B @ Z.T - Y0) ** 2).sum())
            rhs = 48 * k * spec_err + 4 * (f0 - scoring.f_objective(Z, B, Yin))
            worst1 = max(worst1, lhs - rhs - 1e-6)
        # robust version: intermediate matrices and the slack term nu
        Y1 = Y0 + gen.normal(size=(n, n)) * 0.3
        Y1 = 0.5 * (Y1 + Y1.T)
        Y2 = Y1 + gen.normal(size=(n, n)) * 0.3
        Y2 = 0.5 * (Y2 + Y2.T)
        t = f0 - float(gen.uniform(0.0, 2.0))
        nu = max(0.0, scoring.f_objective(Z0, B0, Y2) - t)
        bound_terms = (
            k * spectral_norm(Y1 - Y0) ** 2
            + float(((Y2 - Y1) ** 2).sum())
            + R * float(np.abs(Yin - Y2).sum())
            + nu
        )
        for lab in labels:
            Z = np.zeros((n, k))
            Z[np.arange(n), lab] = 1.0
            if scoring.f_objective(Z, B, Yin) < t:
                continue
            lhs = float(((Z @ B @ Z.T - Y0) ** 2).sum())
            worst2 = max(worst2, lhs - 100.0 * bound_terms - 1e-6)
    return {
        "kind": "identifiability",
        "passed": bool(worst1 <= 0 and worst2 <= 0),
        "worst_margin_I": worst1,
        "worst_margin_II": worst2,
    }


def audit_inequalities(seed: int = 0, instances: int = 200, trials: int = 200) -> dict:
    ident = audit_identifiability(instances=instances, seed=seed)
    hoelder = audit_spectral_hoelder(trials=trials, seed=seed)
    sandwich = audit_sandwich(pairs=max(100, instances), seed=seed)
    return {
        "kind": "inequality",
        "passed": ident["passed"] and hoelder["passed"] and sandwich["passed"],
        "identifiability": ident,
        "spectral_hoelder": hoelder,
        "sandwich": sandwich,
    }


AUDITS = {
    "privacy": audit_privacy,
    "sensitivity": audit_sensitivity,
    "metrics-oracle": audit_metrics_oracle,
    "inequality": audit_inequalities,
}


def run_audit(kind: str, **kwargs) -> dict:
    if kind not in AUDITS:
        raise ValueError(f"unknown audit kind {kind!r}; choose from {sorted(AUDITS)}")
    return AUDITS[kind](**kwargs)


# ---------------------------------------------------------------------------
# experiments


@dataclass
class ExperimentConfig:
    B0: list  # block matrix entries (normalized)
    k: int
    n_list: list
    d_list: list
    eps_list: list
    R: float = 4.0
    trials: int = 3
    seed: int = 0
    estimator: str = "private-sbm"
    scorer: str = "auto"
    eta: float | None = None
    out_prefix: str | None = None

    def validate(self) -> None:
        if not self.n_list or not self.d_list or not self.eps_list:
            raise ValueError("n, d and eps lists must be nonempty")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.estimator not in ("private-sbm",):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        np_B = np.array(self.B0, dtype=float)
        if np_B.shape != (self.k, self.k):
            raise ValueError("B0 must be k x k")

    @classmethod
    def from_toml(cls, path: str) -> "ExperimentConfig":
        try:
            import tomllib  # py >= 3.11
        except ModuleNotFoundError:
            import tomli as tomllib
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        return cls(**data)


@dataclass
class SweepResult:
    columns: list
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_csv(self, include_runtime: bool = True) -> str:
        buf = io.StringIO()
        cols = self.columns if include_runtime else [c for c in self.columns if c != "runtime"]
        writer = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            out = dict(row)
            for key, val in out.items():
                if isinstance(val, float):
                    out[key] = format(val, ".12g")
            writer.writerow(out)
        return buf.getvalue()


def _trial_seed(master: int, n: int, d: float, eps: float, trial: int) -> int:
    from .rng import _tag_hash

    return _tag_hash(master, "trial", n, int(d * 10**6), int(eps * 10**6), trial) % 2**63


def run_experiment(cfg: ExperimentConfig) -> SweepResult:
    """Deterministic sweep over (n, d, eps) x trials; one row per trial."""
    cfg.validate()
    B0 = BlockMatrix(np.array(cfg.B0, dtype=float), R=cfg.R, normalized=True)
    result = SweepResult(
        columns=["n", "d", "eps", "trial", "delta2_sq", "rho_error", "runtime", "flags"]
    )
    for n in cfg.n_list:
        for d in cfg.d_list:
            for eps in cfg.eps_list:
                for trial in range(cfg.trials):
                    seed = _trial_seed(cfg.seed, n, d, eps, trial)
                    row = {"n": n, "d": d, "eps": eps, "trial": trial}
                    import time as _time

                    t0 = _time.perf_counter()
                    try:
                        G = sample_sbm(B0, d, n, seed=seed)
                        est_cfg = EstimatorConfig(scorer=cfg.scorer, eta=cfg.eta, seed=seed)
                        report = private_sbm_estimate(G, cfg.k, eps, cfg.R, cfg=est_cfg, b0=B0)
                        row["delta2_sq"] = report.delta2_sq
                        row["rho_error"] = abs(report.rho["value"] - d / n)
                        row["flags"] = ";".join(report.flags)
                    except Exception as exc:  # capacity errors recorded, run continues
                        row["delta2_sq"] = float("nan")
                        row["rho_error"] = float("nan")
                        row["flags"] = f"error:{type(exc).__name__}"
                    row["runtime"] = _time.perf_counter() - t0
                    result.rows.append(row)
    result.summary = summarize(result, ["n", "d", "eps"], "delta2_sq")
    return result


def summarize(result: SweepResult, keys: list, value: str) -> dict:
    groups: dict = {}
    for row in result.rows:
        key = tuple(row[k] for k in keys)
        groups.setdefault(key, []).append(row[value])
    out = {}
    for key, vals in groups.items():
        arr = np.array([v for v in vals if v == v])  # drop NaN
        label = ",".join(str(k) for k in key)
        if len(arr) == 0:
            out[label] = {"mean": None, "stderr": None, "n_trials": 0}
        else:
            out[label] = {
                "mean": float(arr.mean()),
                "stderr": float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0,
                "n_trials": int(len(arr)),
            }
    return out


def emit_plotdata(result: SweepResult, x: str, y: str, groupby: str) -> str:
    """Tidy CSV (group, x, mean_y, stderr_y, n_trials)."""
    for fieldname in (x, y, groupby):
        if fieldname not in result.columns:
            raise ValueError(f"unknown field {fieldname!r}")
    groups: dict = {}
    for row in result.rows:
        key = (row[groupby], row[x])
        groups.setdefault(key, []).append(row[y])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([groupby, x, f"mean_{y}", f"stderr_{y}", "n_trials"])
    for (g, xv), vals in sorted(groups.items(), key=lambda kv: (str(kv[0][0]), str(kv[0][1]))):
        arr = np.array([v for v in vals if v == v])
        mean = float(arr.mean()) if len(arr) else float("nan")
        stderr = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0
        writer.writerow([g, xv, format(mean, ".12g"), format(stderr, ".12g"), len(arr)])
    return buf.getvalue()
