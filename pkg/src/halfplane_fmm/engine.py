"""FMM drivers: the reaction-field components Phi2+/Phi2-, the classic
free-space log-kernel FMM, and the combined half-plane potential.

The reaction driver builds one adaptive quadtree over the targets and the
image sources with the root square centered on y = 0, so every box lies in
a closed half-plane and every I_n argument produced by the M2L/S2L/ME
paths has a strictly positive y component.  Phi2- is computed by a second,
independently built tree on x-negated coordinates.

Upward and downward passes are vectorized per level; near-field and small
separated-box contributions run through the numba kernels in `_kernels`.
Serial execution is bit-reproducible; the optional thread pool only
distributes whole leaves, so parallel results are bit-identical too.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DomainError, SingularityError
from .expansions import (
    P_MAX,
    _BINOM,
    _l2l_matrix,
    _log_m2m_matrix,
    _m2l_apply,
    _m2m_matrix,
)
from .quadtree import adaptive_lists, build_tree, compute_lists
from .specfun import BoundaryKind, Impedance, _i_table

__all__ = [
    "ChargeSystem",
    "FmmParams",
    "reaction_fmm_plus",
    "reaction_fmm",
    "free_space_fmm",
    "half_plane_fmm",
]


@dataclass
class ChargeSystem:
    """Charged particles strictly inside the half-plane (all y > 0)."""

    positions: np.ndarray
    charges: np.ndarray

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=np.float64))
        self.charges = np.atleast_1d(np.asarray(self.charges, dtype=np.float64))
        if self.positions.shape != (self.charges.size, 2) or self.charges.size == 0:
            raise DomainError("positions must be (N, 2) matching nonempty charges")
        if not np.all(np.isfinite(self.positions)) or not np.all(np.isfinite(self.charges)):
            raise DomainError("positions and charges must be finite")
        if np.any(self.positions[:, 1] <= 0.0):
            raise DomainError("all source points must have y > 0")

    def __len__(self):
        return self.charges.size


@dataclass
class FmmParams:
    """Run parameters: truncation order, leaf capacity, boundary data."""

    order: int = 25
    leaf_capacity: int = 64
    impedance: Impedance = field(default_factory=lambda: Impedance(1.0, 0.0))
    boundary: BoundaryKind = BoundaryKind.ROBIN

    def __post_init__(self):
        if not (0 <= self.order <= P_MAX):
            raise DomainError(f"order must be in [0, {P_MAX}]")
        if self.leaf_capacity < 1:
            raise DomainError("leaf_capacity must be >= 1")


def _as_targets(targets, require_upper):
    t = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if t.shape[1] != 2 or not np.all(np.isfinite(t)):
        raise DomainError("targets must be finite points of shape (N, 2)")
    if require_upper and np.any(t[:, 1] < 0.0):
        raise DomainError("targets must satisfy y >= 0")
    return t


class _Phases:
    """Accumulates per-phase wall time into a shared dict."""

    def __init__(self, sink):
        self.sink = sink

    def add(self, key, t0):
        if self.sink is not None:
            self.sink[key] = self.sink.get(key, 0.0) + (time.perf_counter() - t0)
        return time.perf_counter()


def _prepare(tree, lists):
    """Shared per-tree bookkeeping for both kernel families."""
    n = tree.n_boxes
    has_src = tree.src_hi > tree.src_lo
    has_tgt = tree.tgt_hi > tree.tgt_lo
    leaves = np.flatnonzero(tree.is_leaf)
    src_leaves = leaves[has_src[leaves]]
    src_leaves = src_leaves[np.argsort(tree.src_lo[src_leaves], kind="stable")]
    tgt_leaves = leaves[has_tgt[leaves]]
    tgt_leaves = tgt_leaves[np.argsort(tree.tgt_lo[tgt_leaves], kind="stable")]

    leaf_of_tslot = np.empty(tree.tgt_perm.size, dtype=np.int64)
    for b in tgt_leaves:
        leaf_of_tslot[tree.tgt_lo[b]:tree.tgt_hi[b]] = b

    # near-field CSR over target leaves: sources of every U member
    u_src = []
    sptr = np.zeros(tgt_leaves.size + 1, dtype=np.int64)
    for i, b in enumerate(tgt_leaves):
        ids = [tree.leaf_sources(a) for a in lists.u[int(b)]]
        ids = np.concatenate(ids) if ids else np.empty(0, dtype=np.int64)
        u_src.append(ids)
        sptr[i + 1] = sptr[i] + ids.size
    u_src = np.concatenate(u_src) if u_src else np.empty(0, dtype=np.int64)

    return {
        "has_src": has_src,
        "has_tgt": has_tgt,
        "src_leaves": src_leaves,
        "tgt_leaves": tgt_leaves,
        "leaf_of_tslot": leaf_of_tslot,
        "near_ptr": sptr,
        "near_src": u_src,
    }


def _v_pairs(tree, prep, start, stop):
    """(target_box, source_box) interaction pairs for one level."""
    counts = np.diff(tree.inter_ptr[start:stop + 1])
    rows = np.repeat(np.arange(start, stop, dtype=np.int64), counts)
    cols = tree.inter_idx[tree.inter_ptr[start]:tree.inter_ptr[stop]]
    keep = prep["has_tgt"][rows] & prep["has_src"][cols]
    return rows[keep], cols[keep]


def _scatter_add_rows(dest, rows, vals):
    """dest[rows] += vals with repeated rows, deterministically.

    Pairs are aggregated per row with reduceat in stable-sorted order,
    which is far faster than np.add.at on wide complex rows.
    """
    if rows.size == 0:
        return
    order = np.argsort(rows, kind="stable")
    rs = rows[order]
    vs = vals[order]
    starts = np.flatnonzero(np.concatenate(([True], rs[1:] != rs[:-1])))
    dest[rs[starts]] += np.add.reduceat(vs, starts, axis=0)


def _child_classes(tree, start, stop):
    """Group the boxes of one level by their quadrant within the parent."""
    idx = np.arange(start, stop)
    qx = tree.coords[idx, 0] & 1
    qy = tree.coords[idx, 1] & 1
    cls = qx + 2 * qy
    return idx, cls


# ---------------------------------------------------------------------------
# reaction-kernel FMM (Algorithm for Phi2+)
# ---------------------------------------------------------------------------

def _reaction_tree(targets, images, leaf_capacity):
    pts = np.vstack([targets, images])
    xmid = 0.5 * (pts[:, 0].min() + pts[:, 0].max())
    hx = 0.5 * (pts[:, 0].max() - pts[:, 0].min())
    hy = float(np.max(np.abs(pts[:, 1])))
    h = max(hx, hy)
    h = h * (1.0 + 1e-12) + 1e-12 * (1.0 + abs(xmid)) + 1e-300
    return build_tree(targets, images, leaf_capacity,
                      root_center=(xmid, 0.0), root_half_width=h)


def _reaction_pass(targets, system, params, threads, timing):
    """Phi2+(r_i) = sum_j Q_j I0(x_i - x_j, y_i - y_j_im) via the FMM."""
    ph = _Phases(timing)
    t0 = time.perf_counter()
    tg = _as_targets(targets, require_upper=True)
    sx = system.positions[:, 0]
    sy = system.positions[:, 1]
    images = np.column_stack([sx, -sy])
    q = system.charges
    p = params.order
    zr, zi = params.impedance.z, params.impedance.eps

    tree = _reaction_tree(tg, images, params.leaf_capacity)
    compute_lists(tree)
    lists = adaptive_lists(tree)
    prep = _prepare(tree, lists)
    t0 = ph.add("setup", t0)

    nb = tree.n_boxes
    me = np.zeros((nb, p + 1), dtype=np.complex128)
    # S2M at source leaves: alpha_n = sum Q [i((xc-xj) + i(yc-yj_im))]^n
    sl = prep["src_leaves"]
    if sl.size:
        starts = tree.src_lo[sl]
        qs = q[tree.src_perm].astype(np.complex128)
        cx = np.repeat(tree.center[sl, 0], (tree.src_hi - tree.src_lo)[sl])
        cy = np.repeat(tree.center[sl, 1], (tree.src_hi - tree.src_lo)[sl])
        w = 1j * ((cx - sx[tree.src_perm]) + 1j * (cy - images[tree.src_perm, 1]))
        term = qs.copy()
        me[sl, 0] = np.add.reduceat(term, starts)
        for n in range(1, p + 1):
            term = term * w
            me[sl, n] = np.add.reduceat(term, starts)
    # M2M, deepest level first
    for (start, stop) in tree.level_slices[:0:-1]:
        idx, cls = _child_classes(tree, start, stop)
        mask = prep["has_src"][idx]
        idx, cls = idx[mask], cls[mask]
        if idx.size == 0:
            continue
        hp = 2.0 * tree.half_width[start]  # parent half width at this level
        for c in range(4):
            sel = idx[cls == c]
            if sel.size == 0:
                continue
            qx, qy = c & 1, c >> 1
            delta = complex(-(qx - 0.5) * hp, -(qy - 0.5) * hp)
            mat = _m2m_matrix(delta, p)
            par = tree.parent[sel]  # unique within one quadrant class
            me[par] += me[sel] @ mat.T
    t0 = ph.add("upward", t0)

    le = np.zeros((nb, p + 1), dtype=np.complex128)
    ipow_neg = (-1j) ** np.arange(p + 1)
    for li, (start, stop) in enumerate(tree.level_slices):
        if li == 0:
            continue
        idx, cls = _child_classes(tree, start, stop)
        hp = 2.0 * tree.half_width[start]
        # L2L from parents; the shift matrix takes old(parent) - new(child)
        for c in range(4):
            sel = idx[cls == c]
            if sel.size == 0:
                continue
            qx, qy = c & 1, c >> 1
            delta = complex(-(qx - 0.5) * hp, -(qy - 0.5) * hp)
            mat = _l2l_matrix(delta, p)
            le[sel] += le[tree.parent[sel]] @ mat.T
        # V: M2L over interaction pairs
        rows, cols = _v_pairs(tree, prep, start, stop)
        if rows.size:
            dx = np.ascontiguousarray(tree.center[rows, 0] - tree.center[cols, 0])
            dy = np.ascontiguousarray(tree.center[rows, 1] - tree.center[cols, 1])
            beta = np.empty((rows.size, p + 1), dtype=np.complex128)
            _kernels.reaction_m2l_batch(dx, dy, zr, zi,
                                        np.ascontiguousarray(me[cols]),
                                        _BINOM, p, beta)
            _scatter_add_rows(le, rows, beta)
        # X: coarse separated source leaves straight into the LE
        xs_px, xs_py, xs_w, xs_row = [], [], [], []
        for b in range(start, stop):
            if not prep["has_tgt"][b] or not lists.x[b]:
                continue
            for a in lists.x[b]:
                ids = tree.leaf_sources(a)
                if ids.size == 0:
                    continue
                xs_px.append(tree.center[b, 0] - sx[ids])
                xs_py.append(tree.center[b, 1] - images[ids, 1])
                xs_w.append(q[ids])
                xs_row.append(np.full(ids.size, b, dtype=np.int64))
        if xs_px:
            _kernels.s2l_batch(
                np.ascontiguousarray(np.concatenate(xs_px)),
                np.ascontiguousarray(np.concatenate(xs_py)),
                np.ascontiguousarray(np.concatenate(xs_w)).astype(np.complex128),
                np.concatenate(xs_row), zr, zi, p, le,
            )
    t0 = ph.add("downward", t0)

    # evaluation: LE at leaf targets, then W (small separated MEs), then U
    tgp = tg[tree.tgt_perm]
    out_perm = np.zeros(tgp.shape[0], dtype=np.complex128)
    if tgp.shape[0]:
        lot = prep["leaf_of_tslot"]
        u = ((tree.center[lot, 0] - tgp[:, 0])
             + 1j * (tree.center[lot, 1] - tgp[:, 1]))
        acc = le[lot, p].copy()
        for n in range(p - 1, -1, -1):
            acc = acc * u + le[lot, n]
        out_perm += acc
    w_px, w_py, w_rows, w_out = [], [], [], []
    for i, b in enumerate(prep["tgt_leaves"]):
        wl = [d for d in lists.w[int(b)] if prep["has_src"][d]]
        if not wl:
            continue
        slot = np.arange(tree.tgt_lo[b], tree.tgt_hi[b])
        for d in wl:
            w_px.append(tgp[slot, 0] - tree.center[d, 0])
            w_py.append(tgp[slot, 1] - tree.center[d, 1])
            w_rows.append(np.full(slot.size, d, dtype=np.int64))
            w_out.append(slot)
    if w_px:
        px = np.ascontiguousarray(np.concatenate(w_px))
        py = np.ascontiguousarray(np.concatenate(w_py))
        rows = np.concatenate(w_rows)
        outi = np.concatenate(w_out)
        vals = np.empty(px.size, dtype=np.complex128)
        _kernels.eval_me_batch(px, py, rows, me, zr, zi, p, vals)
        np.add.at(out_perm, outi, vals)
    t0 = ph.add("downward", t0)

    tl = prep["tgt_leaves"]
    near = _kernels.near_reaction_blocks_par if threads > 1 else _kernels.near_reaction_blocks
    if threads > 1:
        _kernels.set_threads(threads)
    near(tree.tgt_lo[tl], tree.tgt_hi[tl],
         np.ascontiguousarray(tgp[:, 0]), np.ascontiguousarray(tgp[:, 1]),
         prep["near_ptr"], prep["near_src"], sx, sy, q, zr, zi, out_perm)
    ph.add("near", t0)

    out = np.empty_like(out_perm)
    out[tree.tgt_perm] = out_perm
    return out


def reaction_fmm_plus(targets, system: ChargeSystem, params: FmmParams, *,
                      threads: int = 1, timing: dict | None = None):
    """Phi2+(r_i) = sum_j Q_j I0(x_i - x_j, y_i + y_j), computed in O(N)."""
    return _reaction_pass(targets, system, params, threads, timing)


def reaction_fmm(targets, system: ChargeSystem, params: FmmParams, *,
                 threads: int = 1, timing: dict | None = None):
    """Full reaction potential Phi2 = Phi2+ + Phi2-.

    Phi2- runs the same driver on x-negated targets and x-negated sources
    (a second, independently built tree).
    """
    tg = _as_targets(targets, require_upper=True)
    plus = _reaction_pass(tg, system, params, threads, timing)
    mirrored = ChargeSystem(np.column_stack([-system.positions[:, 0],
                                             system.positions[:, 1]]),
                            system.charges)
    minus = _reaction_pass(np.column_stack([-tg[:, 0], tg[:, 1]]),
                           mirrored, params, threads, timing)
    return plus + minus


# ---------------------------------------------------------------------------
# free-space log-kernel FMM
# ---------------------------------------------------------------------------

def _log_m2l_batch(alpha, t, p):
    """Batched log-kernel M2L: alpha (B, p+1), t = c_tgt - c_src (B,).

    b_0 = a_0 ln t + sum_{k>=1} a_k t^-k
    b_l = (-1)^l t^-l [ sum_{k>=1} C(k+l-1, l) a_k t^-k - a_0/l ],  l >= 1
    """
    tinv = 1.0 / t
    tp = np.empty((p + 1, t.size), dtype=np.complex128)  # tp[k] = t^-k
    tp[0] = 1.0
    for k in range(1, p + 1):
        tp[k] = tp[k - 1] * tinv
    g = alpha.T * tp                       # g[k, pair] = a_k t^-k
    out = np.empty((t.size, p + 1), dtype=np.complex128)
    out[:, 0] = alpha[:, 0] * np.log(t) + g[1:].sum(axis=0)
    if p > 0:
        ls = np.arange(1, p + 1)
        c2 = _BINOM[ls[:, None] + ls[None, :] - 1, ls[:, None]]  # C(k+l-1, l)
        core = np.einsum("lk,kb->bl", c2, g[1:], optimize=True)
        core = core - alpha[:, 0][:, None] / ls[None, :]
        out[:, 1:] = ((-1.0) ** ls)[None, :] * tp[1:].T * core
    return out


def _log_fmm(targets, spos, q, p, leaf_capacity, exclude_self, tid, sid,
             threads, timing):
    """-(1/2pi) sum q ln|r - r_s| at the targets, complex with zero imag."""
    ph = _Phases(timing)
    t0 = time.perf_counter()
    tree = build_tree(targets, spos, leaf_capacity)
    compute_lists(tree)
    lists = adaptive_lists(tree)
    prep = _prepare(tree, lists)
    sx, sy = spos[:, 0], spos[:, 1]
    t0 = ph.add("setup", t0)

    nb = tree.n_boxes
    me = np.zeros((nb, p + 1), dtype=np.complex128)
    sl = prep["src_leaves"]
    if sl.size:
        starts = tree.src_lo[sl]
        qs = q[tree.src_perm].astype(np.complex128)
        cx = np.repeat(tree.center[sl, 0], (tree.src_hi - tree.src_lo)[sl])
        cy = np.repeat(tree.center[sl, 1], (tree.src_hi - tree.src_lo)[sl])
        zj = (sx[tree.src_perm] - cx) + 1j * (sy[tree.src_perm] - cy)
        me[sl, 0] = np.add.reduceat(qs, starts)
        term = qs.copy()
        for n in range(1, p + 1):
            term = term * zj
            me[sl, n] = -np.add.reduceat(term, starts) / n
    for (start, stop) in tree.level_slices[:0:-1]:
        idx, cls = _child_classes(tree, start, stop)
        idx, cls = idx[prep["has_src"][idx]], cls[prep["has_src"][idx]]
        if idx.size == 0:
            continue
        hp = 2.0 * tree.half_width[start]
        for c in range(4):
            sel = idx[cls == c]
            if sel.size == 0:
                continue
            qx, qy = c & 1, c >> 1
            delta = complex((qx - 0.5) * hp, (qy - 0.5) * hp)  # old(child) - new(parent)
            mat = _log_m2m_matrix(delta, p)
            par = tree.parent[sel]  # unique within one quadrant class
            me[par] += me[sel] @ mat.T
    t0 = ph.add("upward", t0)

    le = np.zeros((nb, p + 1), dtype=np.complex128)
    for li, (start, stop) in enumerate(tree.level_slices):
        if li == 0:
            continue
        idx, cls = _child_classes(tree, start, stop)
        hp = 2.0 * tree.half_width[start]
        for c in range(4):
            sel = idx[cls == c]
            if sel.size == 0:
                continue
            qx, qy = c & 1, c >> 1
            h = complex((qx - 0.5) * hp, (qy - 0.5) * hp)  # new(child) - old(parent)
            mat = _l2l_matrix(h, p)
            le[sel] += le[tree.parent[sel]] @ mat.T
        rows, cols = _v_pairs(tree, prep, start, stop)
        if rows.size:
            tre = np.ascontiguousarray(tree.center[rows, 0] - tree.center[cols, 0])
            tim = np.ascontiguousarray(tree.center[rows, 1] - tree.center[cols, 1])
            beta = np.empty((rows.size, p + 1), dtype=np.complex128)
            _kernels.log_m2l_batch(tre, tim, np.ascontiguousarray(me[cols]),
                                   _BINOM, p, beta)
            _scatter_add_rows(le, rows, beta)
        # X: source leaf a -> LE of b:  Q ln(u - ts) = Q ln(-ts) - sum_l Q u^l/(l ts^l)
        for b in range(start, stop):
            if not prep["has_tgt"][b] or not lists.x[b]:
                continue
            for a in lists.x[b]:
                ids = tree.leaf_sources(a)
                if ids.size == 0:
                    continue
                ts = (sx[ids] - tree.center[b, 0]) + 1j * (sy[ids] - tree.center[b, 1])
                qq = q[ids].astype(np.complex128)
                le[b, 0] += np.sum(qq * np.log(-ts))
                tsp = np.ones_like(ts)
                for l in range(1, p + 1):
                    tsp = tsp * ts
                    le[b, l] += -np.sum(qq / tsp) / l
    t0 = ph.add("downward", t0)

    tgp = targets[tree.tgt_perm]
    phi_perm = np.zeros(tgp.shape[0], dtype=np.complex128)
    if tgp.shape[0]:
        lot = prep["leaf_of_tslot"]
        u = ((tgp[:, 0] - tree.center[lot, 0])
             + 1j * (tgp[:, 1] - tree.center[lot, 1]))
        acc = le[lot, p].copy()
        for n in range(p - 1, -1, -1):
            acc = acc * u + le[lot, n]
        phi_perm += acc
    # W: evaluate small separated MEs at the leaf targets
    for b in prep["tgt_leaves"]:
        wl = [d for d in lists.w[int(b)] if prep["has_src"][d]]
        if not wl:
            continue
        slot = np.arange(tree.tgt_lo[b], tree.tgt_hi[b])
        for d in wl:
            w = ((tgp[slot, 0] - tree.center[d, 0])
                 + 1j * (tgp[slot, 1] - tree.center[d, 1]))
            winv = 1.0 / w
            acc = np.zeros_like(w)
            for cc in me[d, :0:-1]:
                acc = (acc + cc) * winv
            phi_perm[slot] += acc + me[d, 0] * np.log(w)
    out_perm = -phi_perm.real / (2.0 * np.pi)
    t0 = ph.add("downward", t0)

    tl = prep["tgt_leaves"]
    near_out = np.zeros(tgp.shape[0], dtype=np.float64)
    near = _kernels.near_log_blocks_par if threads > 1 else _kernels.near_log_blocks
    if threads > 1:
        _kernels.set_threads(threads)
    bad = near(tree.tgt_lo[tl], tree.tgt_hi[tl],
               np.ascontiguousarray(tgp[:, 0]), np.ascontiguousarray(tgp[:, 1]),
               tid[tree.tgt_perm], prep["near_ptr"], prep["near_src"],
               sx, sy, q, sid, exclude_self, near_out)
    if bad:
        raise SingularityError(f"{bad} target(s) coincide with a distinct source")
    ph.add("near", t0)

    out = np.empty(targets.shape[0], dtype=np.complex128)
    out[tree.tgt_perm] = out_perm + near_out
    return out


def free_space_fmm(targets, system: ChargeSystem, params: FmmParams,
                   exclude_self: bool = False, *, threads: int = 1,
                   timing: dict | None = None):
    """Free-space potential -(1/2pi) sum_j Q_j ln|r_i - r_j| via the classic FMM.

    With `exclude_self`, targets and sources must be the same indexed set
    and the j = i term is skipped.
    """
    tg = _as_targets(targets, require_upper=False)
    if exclude_self and (tg.shape[0] != len(system)
                         or not np.array_equal(tg, system.positions)):
        raise DomainError("exclude_self requires targets identical to sources")
    tid = np.arange(tg.shape[0], dtype=np.int64)
    sid = np.arange(len(system), dtype=np.int64)
    if not exclude_self:
        sid = sid + tg.shape[0]  # disjoint ids: nothing is ever skipped
    return _log_fmm(tg, system.positions, system.charges, params.order,
                    params.leaf_capacity, exclude_self, tid, sid, threads, timing)


def _mirror_targets(targets):
    return np.column_stack([targets[:, 0], -targets[:, 1]])


def half_plane_fmm(system: ChargeSystem, targets, params: FmmParams, *,
                   threads: int = 1, timing: dict | None = None):
    """Total potential for the configured boundary condition.

    Robin: Phi = Phi_free + Phi_1 + Phi_2; Dirichlet/Neumann:
    Phi = Phi_free +/- Phi_1 (no reaction term).  The free-space term
    skips j = i when the target list is exactly the source list.
    Phi_1(r) = (1/2pi) sum Q ln|r - r_im| is evaluated as the negated
    free-space potential at the mirrored targets (|r - r'_im| = |r_im - r'|).
    """
    tg = _as_targets(targets, require_upper=True)
    exclude = (tg.shape[0] == len(system)
               and np.array_equal(tg, system.positions))
    phi = free_space_fmm(tg, system, params, exclude_self=exclude,
                         threads=threads, timing=timing)
    phi1 = -free_space_fmm(_mirror_targets(tg), system, params,
                           exclude_self=False, threads=threads, timing=timing)
    if params.boundary is BoundaryKind.DIRICHLET:
        out = phi + phi1
    elif params.boundary is BoundaryKind.NEUMANN:
        out = phi - phi1
    else:
        out = phi + phi1 + reaction_fmm(tg, system, params, threads=threads,
                                        timing=timing)
    if params.boundary is not BoundaryKind.ROBIN:
        assert np.all(out.imag == 0.0)
    return out
