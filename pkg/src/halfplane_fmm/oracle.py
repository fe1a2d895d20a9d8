"""Brute-force O(N*M) direct summation used to validate the FMM.

The oracle must be trivially correct: plain pairwise loops over the
closed-form kernels, no tree, no expansions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .engine import ChargeSystem, _as_targets
from .errors import DomainError, SingularityError
from .specfun import BoundaryKind, Impedance

__all__ = ["OracleReport", "direct_reaction", "direct_total", "compare"]


@dataclass
class OracleReport:
    """Error summary of an FMM-vs-direct comparison.

    max_rel_err normalizes by the max magnitude of the reference vector
    (not entrywise), the project-wide error metric.
    """

    max_abs_err: float
    max_rel_err: float
    argmax_index: int
    n_pairs: int


def direct_reaction(targets, system: ChargeSystem, zeps: Impedance):
    """sum_j Q_j G_Z(r_i, r_j) by direct pairwise closed-form evaluation."""
    tg = _as_targets(targets, require_upper=True)
    out = np.empty(tg.shape[0], dtype=np.complex128)
    _kernels.direct_reaction_sum(
        np.ascontiguousarray(tg[:, 0]), np.ascontiguousarray(tg[:, 1]),
        system.positions[:, 0], system.positions[:, 1], system.charges,
        zeps.z, zeps.eps, out)
    return out


def direct_total(system: ChargeSystem, targets, kind: BoundaryKind,
                 zeps: Impedance | None = None):
    """Full potential sum_j Q_j G(r_i, r_j) by direct summation.

    The free-space term skips j = i when the target list is exactly the
    source list (the self-interaction convention of the N-body sum).
    """
    tg = _as_targets(targets, require_upper=True)
    exclude = (tg.shape[0] == len(system)
               and np.array_equal(tg, system.positions))
    tid = np.arange(tg.shape[0], dtype=np.int64)
    sid = np.arange(len(system), dtype=np.int64)
    if not exclude:
        sid = sid + tg.shape[0]
    tx = np.ascontiguousarray(tg[:, 0])
    ty = np.ascontiguousarray(tg[:, 1])
    sx = system.positions[:, 0]
    sy = system.positions[:, 1]
    free = np.zeros(tg.shape[0], dtype=np.float64)
    bad = _kernels.direct_log_sum(tx, ty, tid, sx, sy, system.charges, sid,
                                  exclude, 1.0, free)
    if bad:
        raise SingularityError(f"{bad} target(s) coincide with a distinct source")
    phi1 = np.zeros(tg.shape[0], dtype=np.float64)
    # Phi_1(r) = +(1/2pi) sum Q ln|r - r_im| = -free_kernel at (x, -y) targets
    _kernels.direct_log_sum(tx, -ty, tid, sx, sy, system.charges, sid + tg.shape[0],
                            False, -1.0, phi1)
    if kind is BoundaryKind.DIRICHLET:
        return (free + phi1).astype(np.complex128)
    if kind is BoundaryKind.NEUMANN:
        return (free - phi1).astype(np.complex128)
    if zeps is None:
        raise DomainError("Robin totals require an impedance")
    return free + phi1 + direct_reaction(tg, system, zeps)


def _direct_total_at(system: ChargeSystem, target_ids, kind: BoundaryKind,
                     zeps: Impedance | None = None):
    """direct_total at a subset of the source particles themselves.

    `target_ids` index into the system; the free-space term skips j = id_i
    for each selected particle (the same convention the full N-body sum
    uses), which direct_total cannot infer from coordinates alone.
    """
    ids = np.asarray(target_ids, dtype=np.int64)
    tg = system.positions[ids]
    tx = np.ascontiguousarray(tg[:, 0])
    ty = np.ascontiguousarray(tg[:, 1])
    sx = system.positions[:, 0]
    sy = system.positions[:, 1]
    sid = np.arange(len(system), dtype=np.int64)
    free = np.zeros(ids.size, dtype=np.float64)
    _kernels.direct_log_sum(tx, ty, ids, sx, sy, system.charges, sid,
                            True, 1.0, free)
    phi1 = np.zeros(ids.size, dtype=np.float64)
    _kernels.direct_log_sum(tx, -ty, ids, sx, sy, system.charges,
                            sid + len(system), False, -1.0, phi1)
    if kind is BoundaryKind.DIRICHLET:
        return (free + phi1).astype(np.complex128)
    if kind is BoundaryKind.NEUMANN:
        return (free - phi1).astype(np.complex128)
    if zeps is None:
        raise DomainError("Robin totals require an impedance")
    return free + phi1 + direct_reaction(tg, system, zeps)


def compare(a, b) -> OracleReport:
    """Max absolute/relative deviation of `a` from the reference `b`."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DomainError("compare requires equally long vectors")
    diff = np.abs(a - b)
    idx = int(np.argmax(diff)) if diff.size else 0
    mx = float(diff[idx]) if diff.size else 0.0
    scale = float(np.max(np.abs(b))) if b.size else 0.0
    rel = mx / scale if scale > 0 else (0.0 if mx == 0.0 else np.inf)
    return OracleReport(max_abs_err=mx, max_rel_err=rel, argmax_index=idx,
                        n_pairs=int(a.size))
