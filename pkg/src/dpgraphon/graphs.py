"""Random graph models: balanced SBM, block graphons, degree pruning.

Conventions: adjacency matrices are dense symmetric 0/1 arrays with zero
diagonal; a `k`-equipartition is stored as a length-n label vector with
exactly n/k occurrences of each label.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import pair_uniforms, substream


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class BlockMatrix:
    """Symmetric k-by-k nonnegative connectivity matrix with entries in [0, R]."""

    entries: np.ndarray
    R: float
    normalized: bool = False

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ValueError("block matrix must be square")
        if not np.allclose(entries, entries.T, atol=1e-12):
            raise ValueError("block matrix must be symmetric")
        entries = 0.5 * (entries + entries.T)
        if entries.min() < -1e-12 or entries.max() > self.R + 1e-12:
            raise ValueError("entries must lie in [0, R]")
        if self.normalized and abs(entries.mean() - 1.0) > 1e-12:
            raise ValueError("normalized block matrix must average to 1")
        object.__setattr__(self, "entries", _freeze(entries))

    @property
    def k(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class CommunityMembership:
    """Labels of a k-equipartition: each of the k labels occurs n/k times."""

    assignment: np.ndarray
    k: int

    def __post_init__(self):
        a = np.array(self.assignment, dtype=np.int64)
        n = a.shape[0]
        if n % self.k != 0:
            raise ValueError("k must divide n")
        counts = np.bincount(a, minlength=self.k)
        if counts.shape[0] != self.k or not np.all(counts == n // self.k):
            raise ValueError("assignment is not a balanced k-equipartition")
        object.__setattr__(self, "assignment", _freeze(a))

    @property
    def n(self) -> int:
        return self.assignment.shape[0]

    def matrix(self) -> np.ndarray:
        """n-by-k 0/1 incidence matrix Z."""
        Z = np.zeros((self.n, self.k))
        Z[np.arange(self.n), self.assignment] = 1.0
        return Z


@dataclass(frozen=True)
class LabeledGraph:
    """0/1 adjacency with optional latent structure and edge probabilities."""

    adjacency: np.ndarray
    latent: object = None  # CommunityMembership or array of positions
    edge_probs: np.ndarray | None = None

    def __post_init__(self):
        A = np.array(self.adjacency)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("adjacency must be square")
        if not np.array_equal(A, A.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(A) != 0):
            raise ValueError("adjacency must have zero diagonal")
        if not np.isin(A, (0, 1)).all():
            raise ValueError("adjacency must be 0/1")
        object.__setattr__(self, "adjacency", _freeze(A.astype(np.uint8)))
        if self.edge_probs is not None:
            Q = np.array(self.edge_probs, dtype=float)
            if Q.shape != A.shape or not np.allclose(Q, Q.T):
                raise ValueError("edge_probs must be symmetric, same shape")
            if Q.min() < 0 or Q.max() > 1:
                raise ValueError("edge_probs must lie in [0, 1]")
            object.__setattr__(self, "edge_probs", _freeze(Q))

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1).astype(np.int64)

    def num_edges(self) -> int:
        return int(self.adjacency.sum()) // 2


@dataclass(frozen=True)
class ScaledMatrix:
    """Adjacency divided entrywise by a positive scale (e.g. Y = A / rho)."""

    entries: np.ndarray
    scale: float

    def __post_init__(self):
        M = np.array(self.entries, dtype=float)
        if M.min() < 0:
            raise ValueError("scaled matrix must be nonnegative")
        object.__setattr__(self, "entries", _freeze(M))

    @property
    def n(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class BlockGraphon:
    """Step-function graphon W[B]: equals B(a, b) on I_a x I_b for the
    partition of [0,1] into k equal intervals."""

    B: BlockMatrix

    @property
    def k(self) -> int:
        return self.B.k

    @property
    def lam(self) -> float:
        """Essential sup of the graphon."""
        return float(self.B.entries.max())

    def block_of(self, x: np.ndarray) -> np.ndarray:
        return np.minimum((np.asarray(x) * self.k).astype(np.int64), self.k - 1)

    def value(self, x: float, y: float) -> float:
        return float(self.B.entries[self.block_of(x), self.block_of(y)])


def sample_equipartition(n: int, k: int, seed: int) -> CommunityMembership:
    """Uniformly random k-equipartition: Fisher-Yates shuffle of the label
    multiset (n/k copies of each label)."""
    if n % k != 0:
        raise ValueError("k must divide n")
    labels = np.repeat(np.arange(k), n // k)
    gen = substream(seed, "labels")
    return CommunityMembership(gen.permutation(labels), k)


def sample_sbm(
    B0: BlockMatrix,
    d: float,
    n: int,
    seed: int,
    membership: CommunityMembership | None = None,
) -> LabeledGraph:
    """Balanced (B0, d, n)-block model sample.

    Edges are independent with probability (d/n) * B0(a, b) conditioned on
    the equipartition (uniformly random unless ``membership`` is pinned).
    """
    k = B0.k
    if n % k != 0:
        raise ValueError("k must divide n")
    if not (0 < d <= n):
        raise ValueError("need 0 < d <= n")
    pmax = (d / n) * B0.entries.max()
    if pmax > 1 + 1e-12:
        raise ValueError(f"edge probability overflow: (d/n)*max(B0) = {pmax:.3g} > 1")
    z = membership if membership is not None else sample_equipartition(n, k, seed)
    if z.n != n:
        raise ValueError("membership size mismatch")
    Q = (d / n) * B0.entries[np.ix_(z.assignment, z.assignment)]
    np.fill_diagonal(Q, 0.0)
    U = pair_uniforms(seed, n)
    upper = (U < np.triu(Q, k=1)) & (np.triu(np.ones((n, n), dtype=bool), k=1))
    A = upper | upper.T
    return LabeledGraph(A.astype(np.uint8), latent=z, edge_probs=np.clip(Q, 0.0, 1.0))


def sample_graphon_graph(W: BlockGraphon, rho: float, n: int, seed: int) -> LabeledGraph:
    """(W, rho, n)-random graph: latent positions i.i.d. uniform on [0,1],
    edge probabilities rho * W(x_i, x_j)."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    if rho * W.lam > 1 + 1e-12:
        raise ValueError("edge probability overflow: rho * max(W) > 1")
    gen = substream(seed, "positions")
    x = gen.uniform(0.0, 1.0, size=n)
    blocks = W.block_of(x)
    Q = rho * W.B.entries[np.ix_(blocks, blocks)]
    np.fill_diagonal(Q, 0.0)
    U = pair_uniforms(seed, n)
    upper = (U < np.triu(Q, k=1)) & (np.triu(np.ones((n, n), dtype=bool), k=1))
    A = upper | upper.T
    return LabeledGraph(A.astype(np.uint8), latent=_freeze(x), edge_probs=np.clip(Q, 0.0, 1.0))


def prune_high_degree(
    G: LabeledGraph, threshold: float, iterated: bool = False
) -> tuple[LabeledGraph, frozenset]:
    """Remove all edges incident to vertices of degree > threshold.

    Single pass on the original degrees by default (the iterated variant
    repeats until no vertex exceeds the threshold).
    """
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    A = G.adjacency.astype(np.uint8).copy()
    removed: set[int] = set()
    while True:
        deg = A.sum(axis=1)
        over = np.where(deg > threshold)[0]
        over = [v for v in over if v not in removed]
        if not over:
            break
        for v in over:
            A[v, :] = 0
            A[:, v] = 0
            removed.add(v)
        if not iterated:
            break
    return LabeledGraph(A, latent=G.latent, edge_probs=G.edge_probs), frozenset(removed)


def empirical_density(G: LabeledGraph) -> float:
    """rho(G) = 2|E| / (n(n-1))."""
    n = G.n
    if n < 2:
        raise ValueError("need n >= 2")
    return 2.0 * G.num_edges() / (n * (n - 1))


def scale_adjacency(G: LabeledGraph, divisor: float) -> ScaledMatrix:
    if divisor <= 0:
        raise ValueError("divisor must be positive")
    return ScaledMatrix(G.adjacency.astype(float) / divisor, scale=divisor)


# ---------------------------------------------------------------------------
# graph file formats


def write_edge_list(G: LabeledGraph, path: str | Path, sidecar: bool = True) -> None:
    """Text edge list, one `u v` per line (0-indexed, sorted), header `n=<int>`.

    With ``sidecar=True`` latent labels and edge probabilities go to
    ``<path>.json`` / ``<path>.q.npy``.
    """
    path = Path(path)
    iu, ju = np.nonzero(np.triu(G.adjacency, k=1))
    lines = [f"n={G.n}"]
    lines += [f"{i} {j}" for i, j in zip(iu.tolist(), ju.tolist())]
    path.write_text("\n".join(lines) + "\n")
    if sidecar:
        meta: dict = {}
        if isinstance(G.latent, CommunityMembership):
            meta["labels"] = G.latent.assignment.tolist()
            meta["k"] = G.latent.k
        elif G.latent is not None:
            meta["positions"] = np.asarray(G.latent).tolist()
        if G.edge_probs is not None:
            qpath = path.with_suffix(path.suffix + ".q.npy")
            np.save(qpath, G.edge_probs)
            meta["edge_probs_path"] = qpath.name
        if meta:
            path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta))


def read_edge_list(path: str | Path) -> LabeledGraph:
    path = Path(path)
    lines = path.read_text().strip().splitlines()
    if not lines or not lines[0].startswith("n="):
        raise ValueError("edge list must start with a `n=<int>` header")
    n = int(lines[0][2:])
    A = np.zeros((n, n), dtype=np.uint8)
    for line in lines[1:]:
        i, j = map(int, line.split())
        A[i, j] = A[j, i] = 1
    latent = None
    edge_probs = None
    meta_path = path.with_suffix(path.suffix + ".json")
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        if "labels" in meta:
            latent = CommunityMembership(np.array(meta["labels"]), meta["k"])
        elif "positions" in meta:
            latent = np.array(meta["positions"])
        if "edge_probs_path" in meta:
            edge_probs = np.load(path.parent / meta["edge_probs_path"])
    return LabeledGraph(A, latent=latent, edge_probs=edge_probs)


def write_packed(G: LabeledGraph, path: str | Path) -> None:
    """Binary dump: 8-byte little-endian n, then row-major packed bits."""
    path = Path(path)
    bits = np.packbits(G.adjacency, axis=None)
    with open(path, "wb") as fh:
        fh.write(int(G.n).to_bytes(8, "little"))
        fh.write(bits.tobytes())


def read_packed(path: str | Path) -> LabeledGraph:
    with open(path, "rb") as fh:
        n = int.from_bytes(fh.read(8), "little")
        bits = np.frombuffer(fh.read(), dtype=np.uint8)
    A = np.unpackbits(bits, count=n * n).reshape(n, n)
    return LabeledGraph(A)
