"""Primitive DP mechanisms: Laplace noise, the exponential mechanism over
a finite candidate grid, and exact output distributions for audits.

The `strict` coefficient eps/(2*Delta) makes the standard analysis give an
exact e^eps bound for sensitivity-Delta scores; `paper` mode eps/Delta
reproduces the algorithm box (which costs a factor 2 in the audit bound).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError
from .graphs import BlockMatrix

GRID_CAP = 10**6


@dataclass(frozen=True)
class CandidateGrid:
    """eta-net of symmetric k-by-k matrices with entries in {0, eta, ..., R}."""

    k: int
    R: float
    eta: float
    candidates: np.ndarray  # (C, k, k)
    normalized_only: bool = False

    def __len__(self) -> int:
        return self.candidates.shape[0]

    @staticmethod
    def full_size(k: int, R: float, eta: float) -> int:
        return (math.floor(R / eta + 1e-12) + 1) ** (k * (k + 1) // 2)


@dataclass(frozen=True)
class MechanismConfig:
    eps: float
    sensitivity: float
    mode: str = "strict"  # "strict" -> eps/(2 Delta); "paper" -> eps/Delta
    seed: int = 0

    def __post_init__(self):
        if self.eps <= 0 or self.sensitivity <= 0:
            raise ValueError("eps and sensitivity must be positive")
        if self.mode not in ("strict", "paper"):
            raise ValueError("mode must be 'strict' or 'paper'")

    @property
    def coefficient(self) -> float:
        if self.mode == "strict":
            return self.eps / (2.0 * self.sensitivity)
        return self.eps / self.sensitivity


def build_grid(
    k: int, R: float, eta: float, normalized_only: bool = False, cap: int = GRID_CAP
) -> CandidateGrid:
    """Full symmetric grid; the `normalized_only` filter keeps candidates
    whose entries average to 1 within eta."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    nvals = math.floor(R / eta + 1e-12) + 1
    free = k * (k + 1) // 2
    if nvals**free > cap:
        raise CapacityError(f"grid size {nvals**free} exceeds cap {cap}")
    values = np.arange(nvals) * eta
    iu = np.triu_indices(k)
    cands = []
    for combo in itertools.product(range(nvals), repeat=free):
        B = np.zeros((k, k))
        B[iu] = values[list(combo)]
        B = B + np.triu(B, 1).T
        if normalized_only and abs(B.mean() - 1.0) > eta + 1e-12:
            continue
        cands.append(B)
    return CandidateGrid(
        k=k, R=float(R), eta=float(eta), candidates=np.array(cands), normalized_only=normalized_only
    )


def laplace(scale: float, rng: np.random.Generator) -> float:
    """Laplace sample by inverse CDF (median draw maps to exactly 0)."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    u = rng.uniform()
    # F^{-1}(u) = -b sgn(u - 1/2) ln(1 - 2|u - 1/2|)
    s = u - 0.5
    if s == 0.0:
        return 0.0
    return -scale * math.copysign(1.0, s) * math.log(1.0 - 2.0 * abs(s))


def exact_em_distribution(scores, cfg: MechanismConfig) -> np.ndarray:
    """Exact output probabilities of the exponential mechanism, computed
    in log space."""
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise ValueError("empty score vector")
    logits = cfg.coefficient * scores
    logits = logits - logits.max()
    p = np.exp(logits)
    return p / p.sum()


def em_sample_index(scores, cfg: MechanismConfig, rng: np.random.Generator) -> int:
    """Inverse-CDF draw from the exact distribution (deterministic given
    the generator state)."""
    p = exact_em_distribution(scores, cfg)
    u = rng.uniform()
    c = np.cumsum(p)
    return int(np.searchsorted(c, u, side="right").clip(0, len(p) - 1))


def exponential_mechanism(
    grid: CandidateGrid, score, cfg: MechanismConfig, rng: np.random.Generator
) -> tuple[BlockMatrix, dict]:
    """Sample a candidate with probability proportional to
    exp(coefficient * score(B)); also returns audit info (scores, index)."""
    if len(grid) == 0:
        raise ValueError("empty candidate grid")
    scores = np.array([float(score(B)) for B in grid.candidates])
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    idx = em_sample_index(scores, cfg, rng)
    B = BlockMatrix(grid.candidates[idx], R=grid.R)
    return B, {"scores": scores, "index": idx}
