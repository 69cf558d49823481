"""Hierarchical low-rank representations of 3D kernel matrices.

Three structures are available: HODLR3D (vertex-sharing and well-separated
blocks compressed), HODLR (every off-diagonal block compressed) and a
strong-admissibility H-matrix (only well-separated blocks compressed).
"""
__version__ = "0.1.0"

from .exceptions import DegenerateGeometryError, NotConvergedWarning, UnsupportedKernelError
from .hmatrix import HierarchicalMatrix, RepStats, initialize, matvec, stats
from .kernels import (
    HELMHOLTZ_RE,
    INVERSE_QUARTIC,
    LAPLACE3D,
    KernelSpec,
    PointSet,
    eval_entry,
    generate_points,
    get_kernel,
)
from .lowrank import LowRankBlock, aca_compress, lr_apply, numerical_rank, rank_study
from .octree import (
    AdmissibilityClass,
    Cube,
    Octree,
    build_interaction_lists,
    build_tree,
    census,
    classify_pair,
)
from .parallel import CommLedger, PartitionPlan, parallel_matvec, plan_partition
from .solver import discretize_ie, gmres, ie_experiment

__all__ = [
    "AdmissibilityClass",
    "CommLedger",
    "Cube",
    "DegenerateGeometryError",
    "HELMHOLTZ_RE",
    "HierarchicalMatrix",
    "INVERSE_QUARTIC",
    "KernelSpec",
    "LAPLACE3D",
    "LowRankBlock",
    "NotConvergedWarning",
    "Octree",
    "PartitionPlan",
    "PointSet",
    "RepStats",
    "UnsupportedKernelError",
    "aca_compress",
    "build_interaction_lists",
    "build_tree",
    "census",
    "classify_pair",
    "discretize_ie",
    "eval_entry",
    "generate_points",
    "get_kernel",
    "gmres",
    "ie_experiment",
    "initialize",
    "lr_apply",
    "matvec",
    "numerical_rank",
    "parallel_matvec",
    "plan_partition",
    "rank_study",
    "stats",
]
