"""Node-differentially-private estimation for stochastic block models and
block graphons, with exact brute-force oracles, moment-relaxation
scorers, and a verification harness."""

from .errors import CapacityError, SolverError
from .graphs import (
    BlockGraphon,
    BlockMatrix,
    CommunityMembership,
    LabeledGraph,
    ScaledMatrix,
    empirical_density,
    prune_high_degree,
    sample_graphon_graph,
    sample_sbm,
    scale_adjacency,
)
from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = [
    "BlockGraphon",
    "BlockMatrix",
    "CapacityError",
    "CommunityMembership",
    "KERNEL_BACKEND",
    "LabeledGraph",
    "ScaledMatrix",
    "SolverError",
    "empirical_density",
    "prune_high_degree",
    "sample_graphon_graph",
    "sample_sbm",
    "scale_adjacency",
]
