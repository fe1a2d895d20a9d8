"""Fast multipole summation for the 2-D Laplace half-plane Green's function
with Dirichlet, Neumann, or Robin (impedance) boundary conditions.

The library computes

    Phi(r_i) = sum_j Q_j G(r_i, r_j)

in O(N) time via truncated multipole/local expansions of the Sommerfeld
integral family I_n, alongside an O(N^2) direct oracle used for validation.
"""

from .errors import ConvergenceError, DomainError, SingularityError
from .specfun import (
    BoundaryKind,
    Impedance,
    Point,
    ei_pv,
    g_half_plane,
    g_reaction,
    g_reaction_closed,
    i0,
    i_sequence,
    sommerfeld_quadrature,
)
from .expansions import (
    LocalCoeffs,
    MultipoleCoeffs,
    SourceCluster,
    eval_le,
    eval_me,
    l2l,
    log_eval,
    log_s2m,
    log_translate,
    m2l,
    m2m,
    s2l,
    s2m,
)
from .quadtree import BoxNode, Quadtree, build_tree, compute_lists, locate_leaf
from .engine import (
    ChargeSystem,
    FmmParams,
    free_space_fmm,
    half_plane_fmm,
    reaction_fmm,
    reaction_fmm_plus,
)
from .oracle import OracleReport, compare, direct_reaction, direct_total

__version__ = "0.1.0"

__all__ = [
    "BoundaryKind",
    "BoxNode",
    "ChargeSystem",
    "ConvergenceError",
    "DomainError",
    "FmmParams",
    "Impedance",
    "LocalCoeffs",
    "MultipoleCoeffs",
    "OracleReport",
    "Point",
    "Quadtree",
    "SingularityError",
    "SourceCluster",
    "build_tree",
    "compare",
    "compute_lists",
    "direct_reaction",
    "direct_total",
    "ei_pv",
    "eval_le",
    "eval_me",
    "free_space_fmm",
    "g_half_plane",
    "g_reaction",
    "g_reaction_closed",
    "half_plane_fmm",
    "i0",
    "i_sequence",
    "l2l",
    "locate_leaf",
    "log_eval",
    "log_s2m",
    "log_translate",
    "m2l",
    "m2m",
    "reaction_fmm",
    "reaction_fmm_plus",
    "s2l",
    "s2m",
    "sommerfeld_quadrature",
]
