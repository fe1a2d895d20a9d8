"""Operator-level checks: formation, shifting, translation, and the
truncation-error envelopes of the error analysis."""

import numpy as np
import pytest

import halfplane_fmm.expansions as ex
from halfplane_fmm import DomainError
from halfplane_fmm.specfun import Impedance, i0, i_sequence

Z0 = Impedance(1.0, 0.0)

# the two-point operator-convergence geometry (child/parent box centers)
R_TGT = (0.625, 1.25)
R_IMG = (0.0, -0.375)
C_TGT, C_TGT_PAR = (0.65625, 1.09375), (0.8125, 0.9375)
C_SRC, C_SRC_PAR = (0.03125, -0.46875), (0.1875, -0.3125)
PHI_PLUS = -0.17989787555233418364 + 0.064590059893186346738j  # I0(0.625, 1.625)


def unit_cluster():
    return ex.SourceCluster([R_IMG], [1.0])


# ---------------------------------------------------------------------------
# s2m / eval_me
# ---------------------------------------------------------------------------

def test_s2m_single_charge_at_center():
    cl = ex.SourceCluster([(0.3, -0.4)], [1.0])
    me = ex.s2m(cl, (0.3, -0.4), 6)
    assert me.coeffs[0] == 1.0
    assert np.all(me.coeffs[1:] == 0.0)


def test_s2m_symmetric_pair_cancellation():
    d = 0.17
    cl = ex.SourceCluster([(d, -1.0), (-d, -1.0)], [1.0, 1.0])
    me = ex.s2m(cl, (0.0, -1.0), 8)
    ns = np.arange(9)
    expect = np.where(ns % 2 == 0, 2.0 * (1j * d) ** ns, 0.0)
    # offsets w = i*(c - r_j) = -i*(+-d): even powers add, odd cancel
    assert np.allclose(me.coeffs, expect, atol=1e-15)


def test_s2m_requires_nonempty():
    with pytest.raises(DomainError):
        ex.SourceCluster(np.empty((0, 2)), np.empty(0))


def test_example_geometry_me_convergence():
    errs = []
    for p in (2, 6, 10, 14):
        me = ex.s2m(unit_cluster(), C_SRC, p)
        errs.append(abs(ex.eval_me(me, R_TGT, Z0) - PHI_PLUS))
    assert errs[-1] < 1e-13
    assert all(errs[i + 1] < errs[i] for i in range(len(errs) - 1))


def test_eval_me_domain():
    me = ex.s2m(unit_cluster(), C_SRC, 4)
    with pytest.raises(DomainError):
        ex.eval_me(me, (0.5, C_SRC[1]), Z0)


# ---------------------------------------------------------------------------
# m2m
# ---------------------------------------------------------------------------

def test_m2m_zero_shift_identity():
    me = ex.s2m(unit_cluster(), C_SRC, 9)
    out = ex.m2m(me, C_SRC)
    assert np.allclose(out.coeffs, me.coeffs, rtol=0, atol=0)


def test_m2m_preserves_monopole(rng):
    pos = np.column_stack([rng.uniform(-1, 1, 10), rng.uniform(-2, -1, 10)])
    cl = ex.SourceCluster(pos, rng.uniform(-1, 1, 10))
    me = ex.s2m(cl, (0.0, -1.5), 7)
    out = ex.m2m(me, (0.4, -1.2))
    assert out.coeffs[0] == me.coeffs[0]


def test_m2m_equals_direct_s2m(rng):
    # child-to-parent style shifts: both centers within the cluster's box
    for _ in range(25):
        c0 = np.array([rng.uniform(-1, 1), rng.uniform(-2, -1)])
        pos = c0 + rng.uniform(-0.5, 0.5, (8, 2))
        cl = ex.SourceCluster(pos, rng.uniform(-1, 1, 8))
        c1 = tuple(c0 + rng.uniform(-0.25, 0.25, 2))
        c2 = tuple(c0 + rng.uniform(-0.25, 0.25, 2))
        a = ex.m2m(ex.s2m(cl, c1, 12), c2)
        b = ex.s2m(cl, c2, 12)
        scale = np.max(np.abs(b.coeffs)) + 1e-300
        assert np.max(np.abs(a.coeffs - b.coeffs)) < 1e-13 * scale


# ---------------------------------------------------------------------------
# s2l / eval_le / l2l
# ---------------------------------------------------------------------------

def test_s2l_single_charge_formula():
    le = ex.s2l(unit_cluster(), C_TGT, 6, Z0)
    seq = i_sequence(C_TGT[0] - R_IMG[0], C_TGT[1] - R_IMG[1], Z0, 6)
    expect = (-1j) ** np.arange(7) * seq
    assert np.allclose(le.coeffs, expect, rtol=1e-15)


def test_eval_le_at_center_is_beta0():
    le = ex.s2l(unit_cluster(), C_TGT, 5, Z0)
    assert ex.eval_le(le, C_TGT) == le.coeffs[0]


def test_s2l_convergence_to_direct():
    errs = []
    for p in (2, 6, 10, 14):
        le = ex.s2l(unit_cluster(), C_TGT, p, Z0)
        direct = i0(R_TGT[0] - R_IMG[0], R_TGT[1] - R_IMG[1], Z0)
        errs.append(abs(ex.eval_le(le, R_TGT) - direct))
    assert errs[-1] < 1e-12
    assert all(errs[i + 1] < errs[i] for i in range(len(errs) - 1))


def test_s2l_rejects_coincident_center():
    with pytest.raises(DomainError):
        ex.s2l(unit_cluster(), R_IMG, 3, Z0)


def test_l2l_zero_shift_and_top_coefficient(rng):
    le = ex.s2l(unit_cluster(), C_TGT, 7, Z0)
    same = ex.l2l(le, C_TGT)
    assert np.allclose(same.coeffs, le.coeffs, rtol=0, atol=0)
    shifted = ex.l2l(le, (0.7, 1.0))
    assert shifted.coeffs[-1] == le.coeffs[-1]


def test_l2l_polynomial_exactness(rng):
    """A degree-p polynomial field is shifted exactly (to rounding)."""
    p = 9
    coeffs = (rng.standard_normal(p + 1) + 1j * rng.standard_normal(p + 1))
    le = ex.LocalCoeffs((0.2, 0.9), p, coeffs)
    moved = ex.l2l(le, (0.05, 1.08))
    for tgt in [(0.1, 0.95), (0.4, 0.8), (-0.2, 1.3)]:
        a = ex.eval_le(le, tgt)
        b = ex.eval_le(moved, tgt)
        assert abs(a - b) < 1e-12 * max(1.0, abs(a))


# ---------------------------------------------------------------------------
# m2l
# ---------------------------------------------------------------------------

def test_m2l_p0_single_term():
    me = ex.s2m(unit_cluster(), C_SRC, 0)
    le = ex.m2l(me, C_TGT, Z0)
    expect = i0(C_TGT[0] - C_SRC[0], C_TGT[1] - C_SRC[1], Z0) * me.coeffs[0]
    assert abs(le.coeffs[0] - expect) < 1e-16


def test_m2l_requires_positive_dy():
    me = ex.s2m(unit_cluster(), C_SRC, 3)
    with pytest.raises(DomainError):
        ex.m2l(me, (1.0, C_SRC[1] - 0.5), Z0)
    with pytest.raises(DomainError):
        ex.m2l(me, C_SRC, Z0)


def test_chain_convergence_example_geometry():
    errs = []
    for p in (5, 10, 20, 30):
        me = ex.s2m(unit_cluster(), C_SRC, p)
        le = ex.l2l(ex.m2l(ex.m2m(me, C_SRC_PAR), C_TGT_PAR, Z0), C_TGT)
        errs.append(abs(ex.eval_le(le, R_TGT) - PHI_PLUS))
    assert errs[-1] < 1e-13
    assert all(errs[i + 1] < errs[i] for i in range(len(errs) - 1))


def test_m2l_random_admissible_geometry(rng):
    for _ in range(10):
        n = 12
        half = 0.25
        csrc = (rng.uniform(-1, 1), rng.uniform(-1.5, -0.6))
        ctgt = (csrc[0] + rng.uniform(-0.5, 0.5), csrc[1] + rng.uniform(2.0, 3.0))
        pos = np.column_stack([csrc[0] + rng.uniform(-half, half, n),
                               csrc[1] + rng.uniform(-half, half, n)])
        q = rng.uniform(-1, 1, n)
        cl = ex.SourceCluster(pos, q)
        tgt = (ctgt[0] + rng.uniform(-half, half), ctgt[1] + rng.uniform(-half, half))
        le = ex.m2l(ex.s2m(cl, csrc, 25), ctgt, Z0)
        approx = ex.eval_le(le, tgt)
        direct = sum(qq * i0(tgt[0] - px, tgt[1] - py, Z0)
                     for (px, py), qq in zip(pos, q))
        assert abs(approx - direct) < 1e-10 * abs(direct)


# ---------------------------------------------------------------------------
# theorem-bound envelopes
# ---------------------------------------------------------------------------

def _random_me_geometry(rng):
    """Image-source box in the lower half-plane, admissible upper target."""
    while True:
        d_s = rng.uniform(0.3, 0.8)
        cy = rng.uniform(-1.2, -0.1 - d_s / 2)
        c = np.array([rng.uniform(-1, 1), cy])
        tgt = np.array([rng.uniform(-1.5, 1.5), rng.uniform(0.1, 1.5)])
        dist = np.hypot(*(tgt - c))
        qq = np.sqrt(2.0) * d_s / (2.0 * dist)
        if 0.15 <= qq <= 0.65:
            break
    n = 14
    pos = c + rng.uniform(-d_s / 2, d_s / 2, (n, 2))
    pos[0] = c + d_s / 2          # pin the corners so the spread matches d_s
    pos[1] = c - d_s / 2
    q = rng.uniform(-1, 1, n)
    return ex.SourceCluster(pos, q), tuple(c), tuple(tgt), d_s


def test_me_truncation_bound_envelope(rng):
    """Measured ME error obeys C*Qs*max(|Z r|^2,1) q^{p+1}/((p+1)(1-q)) with
    one fitted C <= 10 over random geometries, and the measured decay rate
    is within 15% of log q."""
    ze = Impedance(1.0, 0.0)
    ratios = []
    slopes = []
    for _ in range(100):
        cl, c, tgt, d_s = _random_me_geometry(rng)
        dist = np.hypot(tgt[0] - c[0], tgt[1] - c[1])
        qgeo = np.sqrt(2.0) * d_s / (2.0 * dist)
        qs = np.sum(np.abs(cl.charges))
        cmax = max((abs(ze.value) * dist) ** 2, 1.0) / (1.0 - qgeo)
        direct = sum(qq * i0(tgt[0] - px, tgt[1] - py, ze)
                     for (px, py), qq in zip(cl.positions, cl.charges))
        ps = np.arange(0, 22)
        errs = np.array([abs(ex.eval_me(ex.s2m(cl, c, p), tgt, ze) - direct)
                         for p in ps])
        shape = qs * cmax * qgeo ** (ps + 1) / (ps + 1)
        sel = errs > 1e-13
        if sel.sum() >= 5:
            ratios.append(np.max(errs[sel] / shape[sel]))
            k = np.flatnonzero(sel)
            slope = np.polyfit(ps[k], np.log(errs[k]), 1)[0]
            slopes.append(slope / np.log(qgeo))
    assert np.max(ratios) <= 10.0
    slopes = np.asarray(slopes)
    # decay rate within 15% of log q for the corner-pinned geometries
    assert np.median(np.abs(slopes - 1.0)) < 0.15
    assert np.all(slopes > 0.8)


def test_le_truncation_bound_envelope(rng):
    ze = Impedance(1.0, 0.0)
    ratios = []
    for _ in range(100):
        cl, csrc, tgt, d_s = _random_me_geometry(rng)
        # LE about a center near the target, target inside
        c = (tgt[0] + rng.uniform(-0.05, 0.05), tgt[1] + rng.uniform(-0.05, 0.05) + 0.1)
        rmin = np.min(np.hypot(cl.positions[:, 0] - c[0], cl.positions[:, 1] - c[1]))
        qgeo = np.hypot(tgt[0] - c[0], tgt[1] - c[1]) / rmin
        if qgeo >= 0.95 or c[1] <= 0:
            continue
        qs = np.sum(np.abs(cl.charges))
        cmax = max((abs(ze.value) * rmin) ** 2, 1.0) / (1.0 - qgeo)
        direct = sum(qq * i0(tgt[0] - px, tgt[1] - py, ze)
                     for (px, py), qq in zip(cl.positions, cl.charges))
        ps = np.arange(0, 20)
        errs = np.array([abs(ex.eval_le(ex.s2l(cl, c, p, ze), tgt) - direct)
                         for p in ps])
        shape = qs * cmax * qgeo ** (ps + 1) / (ps + 1)
        sel = errs > 1e-13
        if sel.sum() >= 4:
            ratios.append(np.max(errs[sel] / shape[sel]))
    assert ratios and np.max(ratios) <= 10.0


def test_chain_error_below_summed_bounds(rng):
    """S2M -> M2M -> M2L -> L2L -> eval error is dominated by the sum of the
    per-operator envelopes (triangle inequality), single fitted constant."""
    ze = Z0
    cl = unit_cluster()
    direct = PHI_PLUS
    d_s, d_t = 0.3125, 0.3125
    dist_me = np.hypot(R_TGT[0] - C_SRC[0], R_TGT[1] - C_SRC[1])
    q_me = np.sqrt(2) * d_s / (2 * dist_me)
    dc = np.hypot(C_TGT_PAR[0] - C_SRC_PAR[0], C_TGT_PAR[1] - C_SRC_PAR[1])
    q_m2l = np.sqrt(2) * 2 * d_t / (2 * dc - np.sqrt(2) * 2 * d_s)
    rmin = np.hypot(R_IMG[0] - C_TGT[0], R_IMG[1] - C_TGT[1])
    q_l2l = np.hypot(R_TGT[0] - C_TGT[0], R_TGT[1] - C_TGT[1]) / rmin
    ps = np.arange(0, 26)
    errs = []
    for p in ps:
        me = ex.s2m(cl, C_SRC, p)
        le = ex.l2l(ex.m2l(ex.m2m(me, C_SRC_PAR), C_TGT_PAR, ze), C_TGT)
        errs.append(abs(ex.eval_le(le, R_TGT) - direct))
    errs = np.array(errs)
    shape = (q_me ** (ps + 1) + q_m2l ** (ps + 1) + q_l2l ** (ps + 1)) / (ps + 1)
    sel = errs > 1e-13
    c_fit = np.max(errs[sel] / shape[sel])
    assert c_fit <= 10.0
    assert np.all(errs[sel] <= c_fit * shape[sel] * (1 + 1e-9))


# ---------------------------------------------------------------------------
# free-space consistency of the reaction operators (Gamma-identity table)
# ---------------------------------------------------------------------------

def _gamma_identity_table(dx, dy, nmax):
    """I_n for Z_eps -> 0: I_0 = -(1/2pi) ln(y - ix), I_n = i^n/(2 pi n z^n)."""
    z = dx + 1j * dy
    tab = np.empty(nmax + 1, dtype=np.complex128)
    tab[0] = -np.log(dy - 1j * dx) / (2 * np.pi)
    for n in range(1, nmax + 1):
        tab[n] = 1j ** n / (2 * np.pi * n * z ** n)
    return tab


def test_reaction_operators_reduce_to_log_kernel(rng):
    """With the Gamma-identity I-table, the reaction ME and M2L reproduce the
    log-kernel image interaction."""
    p = 30
    n = 10
    csrc = (0.1, -1.2)
    pos = np.column_stack([csrc[0] + rng.uniform(-0.2, 0.2, n),
                           csrc[1] + rng.uniform(-0.2, 0.2, n)])
    q = rng.uniform(-1, 1, n)
    cl = ex.SourceCluster(pos, q)
    tgt = (0.6, 1.4)
    direct = float(sum(-qq * np.log(np.hypot(tgt[0] - px, tgt[1] - py)) / (2 * np.pi)
                       for (px, py), qq in zip(pos, q)))
    me = ex.s2m(cl, csrc, p)
    tab = _gamma_identity_table(tgt[0] - csrc[0], tgt[1] - csrc[1], p)
    val = complex(me.coeffs @ tab)
    assert abs(val.real - direct) < 1e-10
    # through the M2L route
    ctgt = (0.55, 1.3)
    tab2 = _gamma_identity_table(ctgt[0] - csrc[0], ctgt[1] - csrc[1], 2 * p)
    beta = ex._m2l_apply(me.coeffs[None, :], tab2[None, :])[0]
    le = ex.LocalCoeffs(ctgt, p, beta)
    assert abs(ex.eval_le(le, tgt).real - direct) < 1e-10


# ---------------------------------------------------------------------------
# log-kernel operators
# ---------------------------------------------------------------------------

def test_log_s2m_trivial():
    cl = ex.SourceCluster([(0.5, 0.5)], [1.0])
    me = ex.log_s2m(cl, (0.5, 0.5), 5)
    assert me.coeffs[0] == 1.0 and np.all(me.coeffs[1:] == 0.0)
    pair = ex.SourceCluster([(0.7, 0.5), (0.3, 0.5)], [1.0, -1.0])
    me = ex.log_s2m(pair, (0.5, 0.5), 5)
    assert me.coeffs[0] == 0.0


def test_log_me_matches_direct():
    cl = ex.SourceCluster([(0.1, 0.2)], [1.0])
    me = ex.log_s2m(cl, (0.0, 0.0), 30)
    tgt = (2.0, 0.7)
    direct = -np.log(np.hypot(tgt[0] - 0.1, tgt[1] - 0.2)) / (2 * np.pi)
    assert abs(ex.log_eval("me", me, tgt) - direct) < 1e-12


def test_log_me_inside_disk_rejected():
    cl = ex.SourceCluster([(0.4, 0.0), (-0.4, 0.0)], [1.0, 1.0])
    me = ex.log_s2m(cl, (0.0, 0.0), 8)
    with pytest.raises(DomainError):
        ex.log_eval("me", me, (0.1, 0.1))


def test_log_translate_chain(rng):
    n = 15
    pos = np.column_stack([rng.uniform(-0.4, 0.4, n), rng.uniform(-0.4, 0.4, n)])
    q = rng.uniform(-1, 1, n)
    cl = ex.SourceCluster(pos, q)
    tgt = (3.1, 0.4)
    direct = float(np.sum(-q * np.log(np.hypot(tgt[0] - pos[:, 0],
                                               tgt[1] - pos[:, 1])) / (2 * np.pi)))
    me = ex.log_s2m(cl, (0.0, 0.0), 28)
    me2 = ex.log_translate("m2m", me, (0.1, -0.1))
    le = ex.log_translate("m2l", me2, (3.0, 0.5))
    le2 = ex.log_translate("l2l", le, (3.05, 0.45))
    assert abs(ex.log_eval("me", me, tgt) - direct) < 1e-11
    assert abs(ex.log_eval("me", me2, tgt) - direct) < 1e-11
    assert abs(ex.log_eval("le", le, tgt) - direct) < 1e-9
    assert abs(ex.log_eval("le", le2, tgt) - direct) < 1e-9
    # zero-shift identity and monopole preservation
    same = ex.log_translate("m2m", me, (0.0, 0.0))
    assert np.allclose(same.coeffs, me.coeffs, atol=0)
    assert me2.coeffs[0] == me.coeffs[0]


def test_log_m2l_coincident_centers_rejected():
    me = ex.log_s2m(ex.SourceCluster([(0.0, 0.0)], [1.0]), (0.0, 0.0), 4)
    with pytest.raises(DomainError):
        ex.log_translate("m2l", me, (0.0, 0.0))


def test_log_me_sign_matches_neumann_image_kernel():
    """The image term of the Neumann kernel equals the log ME of a unit
    charge at the image point with negated sign."""
    from halfplane_fmm.specfun import BoundaryKind, g_half_plane
    rp = (0.2, 0.5)
    tgt = (1.7, 1.1)
    free = -np.log(np.hypot(tgt[0] - rp[0], tgt[1] - rp[1])) / (2 * np.pi)
    g_n = g_half_plane(tgt, rp, BoundaryKind.NEUMANN)
    me = ex.log_s2m(ex.SourceCluster([(rp[0], -rp[1])], [1.0]), (rp[0], -rp[1]), 20)
    image_term = ex.log_eval("me", me, tgt)   # = -(1/2pi) ln|r - r_im|
    # G_N = free - (1/2pi) ln|r - r_im| = free + image_term
    assert abs((g_n.real - free) - image_term) < 1e-12


def test_order_cap():
    with pytest.raises(DomainError):
        ex.s2m(unit_cluster(), C_SRC, 61)
