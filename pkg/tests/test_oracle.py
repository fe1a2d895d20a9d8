"""Direct-summation oracle checks."""

import numpy as np
import pytest

from halfplane_fmm import (
    BoundaryKind,
    ChargeSystem,
    DomainError,
    Impedance,
    compare,
    direct_reaction,
    direct_total,
    g_half_plane,
    g_reaction_closed,
    sommerfeld_quadrature,
)

Z0 = Impedance(1.0, 0.0)


def test_single_pair_equals_kernel():
    system = ChargeSystem([[0.2, 0.8]], [1.0])
    v = direct_reaction([[0.5, 0.3]], system, Z0)
    assert abs(v[0] - g_reaction_closed((0.5, 0.3), (0.2, 0.8), Z0)) < 1e-15
    t = direct_total(system, [[0.5, 0.3]], BoundaryKind.ROBIN, Z0)
    assert abs(t[0] - g_half_plane((0.5, 0.3), (0.2, 0.8),
                                   BoundaryKind.ROBIN, Z0)) < 1e-15


def test_mutual_matrix_symmetry():
    a, b = (0.1, 0.4), (0.9, 1.1)
    sys_a = ChargeSystem([a], [1.0])
    sys_b = ChargeSystem([b], [1.0])
    gab = direct_reaction([b], sys_a, Z0)[0]
    gba = direct_reaction([a], sys_b, Z0)[0]
    assert gab == gba


def test_direct_reaction_vs_quadrature_kernel(rng):
    """Closed-form direct sum agrees with the quadrature-kernel variant."""
    n = 6
    system = ChargeSystem(
        np.column_stack([rng.uniform(-1, 1, n), rng.uniform(0.2, 1.5, n)]),
        rng.uniform(-1, 1, n))
    tgt = (0.4, 0.7)
    v = direct_reaction([tgt], system, Z0)[0]
    ref = 0.0 + 0.0j
    for (px, py), q in zip(system.positions, system.charges):
        xx, yy = tgt[0] - px, tgt[1] + py
        ref += q * (sommerfeld_quadrature(xx, yy, Z0, 0)
                    + sommerfeld_quadrature(-xx, yy, Z0, 0))
    assert abs(v - ref) < 1e-10 * abs(ref)


def test_direct_total_reversed_accumulation(rng):
    n = 100
    system = ChargeSystem(
        np.column_stack([rng.uniform(0, 1, n), rng.uniform(0.05, 1, n)]),
        rng.uniform(-1, 1, n))
    tgt = np.column_stack([rng.uniform(0, 1, 20), rng.uniform(0.0, 1, 20)])
    a = direct_total(system, tgt, BoundaryKind.ROBIN, Z0)
    rev = ChargeSystem(system.positions[::-1].copy(), system.charges[::-1].copy())
    b = direct_total(rev, tgt, BoundaryKind.ROBIN, Z0)
    assert np.max(np.abs(a - b)) < 1e-12 * np.max(np.abs(a))


def test_direct_total_linearity(rng):
    n = 50
    system = ChargeSystem(
        np.column_stack([rng.uniform(0, 1, n), rng.uniform(0.05, 1, n)]),
        rng.uniform(-1, 1, n))
    tgt = system.positions[:10] + np.array([0.0, 0.3])
    a = direct_total(system, tgt, BoundaryKind.ROBIN, Z0)
    scaled = ChargeSystem(system.positions, 2.0 * system.charges)
    b = direct_total(scaled, tgt, BoundaryKind.ROBIN, Z0)
    assert np.array_equal(2.0 * a, b)


def test_direct_reaction_x_negation_invariance(rng):
    n = 40
    system = ChargeSystem(
        np.column_stack([rng.uniform(-1, 1, n), rng.uniform(0.05, 1, n)]),
        rng.uniform(-1, 1, n))
    tgt = np.column_stack([rng.uniform(-1, 1, 10), rng.uniform(0, 1, 10)])
    a = direct_reaction(tgt, system, Z0)
    neg = ChargeSystem(np.column_stack([-system.positions[:, 0],
                                        system.positions[:, 1]]),
                       system.charges)
    b = direct_reaction(np.column_stack([-tgt[:, 0], tgt[:, 1]]), neg, Z0)
    assert np.max(np.abs(a - b)) < 5e-15 * max(1.0, np.max(np.abs(a)))


def test_compare_reports():
    a = np.array([1.0 + 0j, 2.0, 3.0])
    rep = compare(a, a)
    assert rep.max_abs_err == 0.0 and rep.max_rel_err == 0.0
    assert rep.n_pairs == 3
    b = a.copy()
    b[1] += 1e-3
    rep = compare(b, a)
    assert rep.argmax_index == 1
    assert rep.max_abs_err == pytest.approx(1e-3)
    assert rep.max_rel_err == pytest.approx(1e-3 / 3.0)
    with pytest.raises(DomainError):
        compare(a, a[:2])


def test_compare_randomized_audit(rng):
    b = rng.standard_normal(50) + 1j * rng.standard_normal(50)
    a = b + 1e-6 * rng.standard_normal(50)
    rep = compare(a, b)
    assert rep.max_abs_err == np.max(np.abs(a - b))
    assert rep.max_rel_err == rep.max_abs_err / np.max(np.abs(b))
    assert rep.argmax_index == int(np.argmax(np.abs(a - b)))
