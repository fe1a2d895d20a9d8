"""Adaptive quadtree over targets and (image) sources, with the
neighbor/interaction lists used by the FMM drivers.

A box splits while its combined target+source count exceeds the leaf
capacity (depth capped at 40); empty children are pruned.  Boundary
points follow the half-open convention: x < mid goes left, x >= mid goes
right, and likewise in y.  Boxes are stored level by level in flat
arrays; `box(i)` materializes a `BoxNode` view for inspection.

`compute_lists` fills the same-level colleague (neighbor) lists and the
standard interaction lists.  On an adaptive tree those two lists do not
cover every pair, so `adaptive_lists` additionally builds the classic
U/W/X lists (adjacent leaves at any level; small separated source boxes
whose MEs are evaluated directly; coarse separated source leaves fed
straight into local expansions).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .specfun import Point

__all__ = [
    "BoxNode",
    "Quadtree",
    "build_tree",
    "compute_lists",
    "locate_leaf",
    "adaptive_lists",
    "AdaptiveLists",
]

MAX_DEPTH = 40


@dataclass
class BoxNode:
    """Read-only view of one box (see `Quadtree.box`)."""

    index: int
    level: int
    center: Point
    half_width: float
    parent: int | None
    children: list[int]
    target_indices: np.ndarray
    source_indices: np.ndarray
    neighbor_list: list[int]
    interaction_list: list[int]


class Quadtree:
    """Flat-array quadtree; see module docstring for conventions."""

    def __init__(self, root_center, root_half_width, leaf_capacity):
        self.root_center = Point(float(root_center[0]), float(root_center[1]))
        self.root_half_width = float(root_half_width)
        self.leaf_capacity = int(leaf_capacity)
        # per-box arrays, filled by build_tree
        self.level = None          # (B,) int32
        self.center = None         # (B, 2) float64
        self.half_width = None     # (B,) float64
        self.parent = None         # (B,) int64, -1 for root
        self.children = None       # (B, 4) int64, -1 when missing
        self.coords = None         # (B, 2) int64 grid coordinates at own level
        self.is_leaf = None        # (B,) bool
        self.tgt_lo = self.tgt_hi = None   # subtree ranges into tgt_perm
        self.src_lo = self.src_hi = None
        self.tgt_perm = None       # permutation of target ids, leaf-contiguous
        self.src_perm = None
        self.level_slices = []     # [(start, stop)] box-index range per level
        # lists (compute_lists)
        self.colleague_ptr = self.colleague_idx = None
        self.inter_ptr = self.inter_idx = None
        self._lists_ready = False

    @property
    def n_boxes(self):
        return 0 if self.level is None else self.level.size

    @property
    def n_levels(self):
        return len(self.level_slices)

    def leaf_targets(self, b):
        return self.tgt_perm[self.tgt_lo[b]:self.tgt_hi[b]]

    def leaf_sources(self, b):
        return self.src_perm[self.src_lo[b]:self.src_hi[b]]

    def colleagues(self, b):
        return self.colleague_idx[self.colleague_ptr[b]:self.colleague_ptr[b + 1]]

    def interaction(self, b):
        return self.inter_idx[self.inter_ptr[b]:self.inter_ptr[b + 1]]

    def box(self, b) -> BoxNode:
        b = int(b)
        kids = [int(c) for c in self.children[b] if c >= 0]
        par = int(self.parent[b])
        return BoxNode(
            index=b,
            level=int(self.level[b]),
            center=Point(*self.center[b]),
            half_width=float(self.half_width[b]),
            parent=None if par < 0 else par,
            children=kids,
            target_indices=self.tgt_perm[self.tgt_lo[b]:self.tgt_hi[b]].copy(),
            source_indices=self.src_perm[self.src_lo[b]:self.src_hi[b]].copy(),
            neighbor_list=[] if not self._lists_ready else [int(i) for i in self.colleagues(b)],
            interaction_list=[] if not self._lists_ready else [int(i) for i in self.interaction(b)],
        )


def _as_points(a):
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        return a.reshape(0, 2)
    a = np.atleast_2d(a)
    if a.shape[1] != 2:
        raise DomainError("points must have shape (N, 2)")
    if not np.all(np.isfinite(a)):
        raise DomainError("points must be finite")
    return a


def build_tree(targets, sources, leaf_capacity, *, root_center=None,
               root_half_width=None) -> Quadtree:
    """Build the adaptive quadtree over targets and sources jointly.

    By default the root is the smallest axis-aligned square containing
    all points, expanded by a 1e-12 relative margin.  The FMM drivers
    override the root so the grid is aligned with y = 0 (no box then
    straddles the boundary, which keeps every I_n argument positive).
    """
    tp = _as_points(targets)
    sp = _as_points(sources)
    n_all = tp.shape[0] + sp.shape[0]
    if n_all == 0:
        raise DomainError("build_tree requires at least one point")
    if leaf_capacity < 1:
        raise DomainError("leaf_capacity must be >= 1")

    allp = np.vstack([tp, sp])
    if root_center is None or root_half_width is None:
        lo = allp.min(axis=0)
        hi = allp.max(axis=0)
        c = 0.5 * (lo + hi)
        h = 0.5 * float(np.max(hi - lo))
        h = h * (1.0 + 1e-12) + 1e-12 * (1.0 + float(np.max(np.abs(c))))
        cx, cy = float(c[0]), float(c[1])
    else:
        cx, cy = float(root_center[0]), float(root_center[1])
        h = float(root_half_width)
        if np.any(np.abs(allp[:, 0] - cx) > h) or np.any(np.abs(allp[:, 1] - cy) > h):
            raise DomainError("provided root square does not contain all points")

    tree = Quadtree((cx, cy), h, leaf_capacity)

    # growable per-box columns
    level = [0]
    center = [(cx, cy)]
    half = [h]
    parent = [-1]
    children = [[-1, -1, -1, -1]]
    coords = [(0, 0)]
    tlo, thi = [0], [tp.shape[0]]
    slo, shi = [0], [sp.shape[0]]
    tperm = np.arange(tp.shape[0], dtype=np.int64)
    sperm = np.arange(sp.shape[0], dtype=np.int64)

    level_slices = [(0, 1)]
    frontier = [0]
    depth = 0
    while frontier and depth < MAX_DEPTH:
        next_frontier = []
        start = len(level)
        for b in frontier:
            cnt = (thi[b] - tlo[b]) + (shi[b] - slo[b])
            if cnt <= leaf_capacity:
                continue
            bx, by = center[b]
            hh = 0.5 * half[b]
            # partition this box's segments by quadrant q = (x>=bx) + 2*(y>=by)
            seg_t = tperm[tlo[b]:thi[b]]
            seg_s = sperm[slo[b]:shi[b]]
            qt = (tp[seg_t, 0] >= bx).astype(np.int8) + 2 * (tp[seg_t, 1] >= by).astype(np.int8)
            qs = (sp[seg_s, 0] >= bx).astype(np.int8) + 2 * (sp[seg_s, 1] >= by).astype(np.int8)
            ot = np.argsort(qt, kind="stable")
            os_ = np.argsort(qs, kind="stable")
            tperm[tlo[b]:thi[b]] = seg_t[ot]
            sperm[slo[b]:shi[b]] = seg_s[os_]
            tcnt = np.bincount(qt, minlength=4)
            scnt = np.bincount(qs, minlength=4)
            toff = tlo[b] + np.concatenate([[0], np.cumsum(tcnt)])
            soff = slo[b] + np.concatenate([[0], np.cumsum(scnt)])
            for q in range(4):
                if tcnt[q] + scnt[q] == 0:
                    continue
                qx, qy = q & 1, q >> 1
                idx = len(level)
                level.append(depth + 1)
                center.append((bx + (qx - 0.5) * half[b], by + (qy - 0.5) * half[b]))
                half.append(hh)
                parent.append(b)
                children.append([-1, -1, -1, -1])
                coords.append((2 * coords[b][0] + qx, 2 * coords[b][1] + qy))
                tlo.append(int(toff[q])); thi.append(int(toff[q + 1]))
                slo.append(int(soff[q])); shi.append(int(soff[q + 1]))
                children[b][q] = idx
                next_frontier.append(idx)
        if len(level) > start:
            level_slices.append((start, len(level)))
        frontier = next_frontier
        depth += 1

    tree.level = np.asarray(level, dtype=np.int32)
    tree.center = np.asarray(center, dtype=np.float64)
    tree.half_width = np.asarray(half, dtype=np.float64)
    tree.parent = np.asarray(parent, dtype=np.int64)
    tree.children = np.asarray(children, dtype=np.int64)
    tree.coords = np.asarray(coords, dtype=np.int64)
    tree.is_leaf = np.all(tree.children < 0, axis=1)
    tree.tgt_lo = np.asarray(tlo, dtype=np.int64)
    tree.tgt_hi = np.asarray(thi, dtype=np.int64)
    tree.src_lo = np.asarray(slo, dtype=np.int64)
    tree.src_hi = np.asarray(shi, dtype=np.int64)
    tree.tgt_perm = tperm
    tree.src_perm = sperm
    tree.level_slices = level_slices
    return tree


def _pairs_to_csr(rows, cols, n):
    order = np.argsort(rows, kind="stable")
    rows = rows[order]
    cols = cols[order]
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(ptr, rows + 1, 1)
    np.cumsum(ptr, out=ptr)
    return ptr, cols


def _ragged_gather(ptr, idx, rows):
    """For each r in rows, the slice idx[ptr[r]:ptr[r+1]], flattened.

    Returns (owner, values): owner repeats each row per emitted value.
    """
    if rows.size == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    counts = (ptr[rows + 1] - ptr[rows]).astype(np.int64)
    total = int(counts.sum())
    owner = np.repeat(np.arange(rows.size, dtype=np.int64), counts)
    base = np.repeat(ptr[rows], counts)
    offset = np.arange(total, dtype=np.int64) - np.repeat(
        np.concatenate(([0], np.cumsum(counts[:-1]))), counts)
    return owner, idx[base + offset]


def compute_lists(tree: Quadtree) -> Quadtree:
    """Fill colleague (same-level adjacent, incl. self) and interaction lists.

    Interaction list of b: children of b's parent's colleagues that are
    not colleagues of b.  Every member is same-level and non-adjacent,
    so box-center separation is at least twice the box size.
    """
    n = tree.n_boxes
    c_rows = [np.zeros(1, dtype=np.int64)]
    c_cols = [np.zeros(1, dtype=np.int64)]   # root is its own colleague
    i_rows = [np.empty(0, dtype=np.int64)]
    i_cols = [np.empty(0, dtype=np.int64)]
    for (start, stop) in tree.level_slices[1:]:
        ids = np.arange(start, stop, dtype=np.int64)
        lvl = int(tree.level[start])
        if lvl <= 31:
            grid = np.int64(1) << lvl
            key = tree.coords[start:stop, 0] * grid + tree.coords[start:stop, 1]
            order = np.argsort(key, kind="stable")
            skey = key[order]
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    cand = key + dx * grid + dy
                    valid = ((tree.coords[start:stop, 0] + dx >= 0)
                             & (tree.coords[start:stop, 0] + dx < grid)
                             & (tree.coords[start:stop, 1] + dy >= 0)
                             & (tree.coords[start:stop, 1] + dy < grid))
                    pos = np.searchsorted(skey, cand)
                    pos_c = np.minimum(pos, skey.size - 1)
                    hit = valid & (skey[pos_c] == cand)
                    c_rows.append(ids[hit])
                    c_cols.append(ids[order[pos_c[hit]]])
        else:  # beyond 62-bit keys (degenerate depth); dict fallback
            where = {(int(tree.coords[b, 0]), int(tree.coords[b, 1])): b
                     for b in range(start, stop)}
            for b in range(start, stop):
                ix, iy = int(tree.coords[b, 0]), int(tree.coords[b, 1])
                for dx in (-1, 0, 1):
                    for dy in (-1, 0, 1):
                        nb = where.get((ix + dx, iy + dy))
                        if nb is not None:
                            c_rows.append(np.array([b], dtype=np.int64))
                            c_cols.append(np.array([nb], dtype=np.int64))
    rows = np.concatenate(c_rows)
    cols = np.concatenate(c_cols)
    tree.colleague_ptr, tree.colleague_idx = _pairs_to_csr(rows, cols, n)

    # interaction list: children of parent's colleagues, Chebyshev distance >= 2
    boxes = np.flatnonzero(tree.parent >= 0).astype(np.int64)
    owner, pcoll = _ragged_gather(tree.colleague_ptr, tree.colleague_idx,
                                  tree.parent[boxes])
    b_of = boxes[owner]
    kids = tree.children[pcoll]                       # (M, 4)
    b4 = np.repeat(b_of, 4)
    ch = kids.ravel()
    good = ch >= 0
    b4, ch = b4[good], ch[good]
    sep = np.maximum(np.abs(tree.coords[ch, 0] - tree.coords[b4, 0]),
                     np.abs(tree.coords[ch, 1] - tree.coords[b4, 1])) >= 2
    tree.inter_ptr, tree.inter_idx = _pairs_to_csr(b4[sep], ch[sep], n)
    tree._lists_ready = True
    return tree


def locate_leaf(tree: Quadtree, point) -> int:
    """Index of the leaf whose half-open extent contains `point`."""
    x, y = float(point[0]), float(point[1])
    cx, cy = tree.root_center
    h = tree.root_half_width
    if abs(x - cx) > h or abs(y - cy) > h:
        raise DomainError("point lies outside the root square")
    b = 0
    while not tree.is_leaf[b]:
        q = int(x >= tree.center[b, 0]) + 2 * int(y >= tree.center[b, 1])
        ch = tree.children[b, q]
        if ch < 0:
            raise DomainError("point falls in a pruned (empty) region of the tree")
        b = int(ch)
    return b


# ---------------------------------------------------------------------------
# adaptive (CGR) lists
# ---------------------------------------------------------------------------

@dataclass
class AdaptiveLists:
    """U/W/X lists; V is the interaction list already stored on the tree.

    u[leaf]: adjacent leaves at any level, including the leaf itself.
    w[leaf]: separated small boxes (descendants of colleagues whose parent
             is adjacent but which are not) whose MEs are evaluated at the
             leaf's targets.
    x[box]:  leaves a with box in w[a]; their sources are converted
             straight into the box's local expansion.
    """

    u: list
    w: list
    x: list


def _adjacent(tree, a, b):
    """Closure adjacency across levels, exact in integer grid coordinates."""
    la, lb = int(tree.level[a]), int(tree.level[b])
    if la > lb:
        a, b = b, a
        la, lb = lb, la
    shift = lb - la
    m = 1 << shift
    ax, ay = int(tree.coords[a, 0]), int(tree.coords[a, 1])
    bx, by = int(tree.coords[b, 0]), int(tree.coords[b, 1])
    # box a covers [ax*m, ax*m + m - 1] at level lb
    return (bx + 1 >= ax * m and bx - 1 <= ax * m + m - 1
            and by + 1 >= ay * m and by - 1 <= ay * m + m - 1)


def adaptive_lists(tree: Quadtree) -> AdaptiveLists:
    if not tree._lists_ready:
        compute_lists(tree)
    n = tree.n_boxes
    u = [[] for _ in range(n)]
    w = [[] for _ in range(n)]
    x = [[] for _ in range(n)]
    leaves = np.flatnonzero(tree.is_leaf)
    for b in leaves:
        b = int(b)
        # same level and deeper, reached by descending through adjacent boxes
        stack = []
        for c in tree.colleagues(b):
            c = int(c)
            if tree.is_leaf[c]:
                u[b].append(c)
            else:
                stack.append(c)
        while stack:
            d = int(stack.pop())
            for ch in tree.children[d]:
                if ch < 0:
                    continue
                ch = int(ch)
                if _adjacent(tree, ch, b):
                    if tree.is_leaf[ch]:
                        u[b].append(ch)
                    else:
                        stack.append(ch)
                else:
                    w[b].append(ch)   # parent adjacent, box itself separated
        # coarser adjacent leaves, via ancestors' colleagues
        anc = int(tree.parent[b])
        while anc >= 0:
            for c in tree.colleagues(anc):
                c = int(c)
                if c != anc and tree.is_leaf[c] and _adjacent(tree, c, b):
                    u[b].append(c)
            anc = int(tree.parent[anc])
    for a in leaves:
        for d in w[int(a)]:
            x[d].append(int(a))
    return AdaptiveLists(u=u, w=w, x=x)
