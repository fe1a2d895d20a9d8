"""Numba-compiled hot loops: Ei, I_n tables, and direct kernel sums.

Everything here is internal.  The public, validated entry points live in
`specfun`, `engine` and `oracle`; they delegate to these kernels for
speed.  Serial kernels accumulate per target in a fixed order, so results
are bit-reproducible run to run.  The *_par variants only distribute
whole leaves over threads (each target's sum is still the same serial
inner loop), so they produce identical bits as well.
"""

import cmath

import numpy as np
import numba
from numba import njit, prange

EULER = 0.5772156649015328606065120900824024
TWO_PI = 2.0 * np.pi

# region switches of the Ei evaluator (see specfun.ei_pv for the contract)
_SERIES_RADIUS = 8.0
_ASYMP_RADIUS = 40.0
_CANCEL_LIMIT = 4.0

_INV_K = 1.0 / np.arange(1.0, 600.0)


@njit(cache=True, fastmath=True)
def ei_scalar(z):
    """Principal-branch Ei(z) for complex z off the negative real axis."""
    az = abs(z)
    if az <= _SERIES_RADIUS or (az < _ASYMP_RADIUS and az - z.real <= _CANCEL_LIMIT):
        # power series  Ei(z) = gamma + ln z + sum z^k/(k k!)
        total = 0.0 + 0.0j
        term = 1.0 + 0.0j
        for k in range(1, 500):
            term = term * z * _INV_K[k - 1]
            contrib = term * _INV_K[k - 1]
            total += contrib
            if abs(contrib.real) + abs(contrib.imag) <= 1e-18 * (
                abs(total.real) + abs(total.imag) + 1.0
            ):
                break
        return EULER + cmath.log(z) + total
    sgn = 1.0 if z.imag > 0.0 else (-1.0 if z.imag < 0.0 else 0.0)
    if az >= _ASYMP_RADIUS:
        # asymptotic series e^z/z sum k!/z^k, truncated well before the
        # least term at k ~ |z|
        s = 1.0 + 0.0j
        term = 1.0 + 0.0j
        for k in range(1, 39):
            term = term * k / z
            s += term
        return cmath.exp(z) / z * s + 1j * np.pi * sgn
    # modified Lentz continued fraction for E1(-z); valid because -z stays
    # away from E1's branch cut in this region
    w = -z
    tiny = 1e-300
    b = w + 1.0
    c = b if b != 0 else complex(tiny, 0.0)
    d = 0.0 + 0.0j
    h = c
    for i in range(1, 800):
        a = -float(i) * float(i)
        b = b + 2.0
        d = b + a * d
        if d == 0:
            d = complex(tiny, 0.0)
        c = b + a / c
        if c == 0:
            c = complex(tiny, 0.0)
        d = 1.0 / d
        delta = c * d
        h = h * delta
        if abs(delta - 1.0) < 5e-16:
            break
    e1 = cmath.exp(-w) / h
    return -e1 + 1j * np.pi * sgn


@njit(cache=True, fastmath=True)
def ei_array(z):
    out = np.empty(z.shape, dtype=np.complex128)
    for i in range(z.size):
        out[i] = ei_scalar(z[i])
    return out


@njit(cache=True, fastmath=True)
def i0_scalar(x, y, zr, zi):
    """I_0(x, y) for impedance Z + i*eps, seeded from the principal Ei.

    Valid for all eps >= 0; the lossless case is the limiting-absorption
    value (p.v. integral plus +i*pi times the pole residue).
    """
    ze = complex(zr, zi)
    p = ze * complex(y, -x)
    return -cmath.exp(-p) * (ei_scalar(p) - 1j * np.pi) / TWO_PI


@njit(cache=True, fastmath=True)
def i0_array(dx, dy, zr, zi):
    out = np.empty(dx.shape, dtype=np.complex128)
    for j in range(dx.size):
        out[j] = i0_scalar(dx[j], dy[j], zr, zi)
    return out


@njit(cache=True, fastmath=True)
def i_table(dx, dy, zr, zi, nmax):
    """I_n(dx[j], dy[j]) for n = 0..nmax; shape (len(dx), nmax+1)."""
    m = dx.size
    ze = complex(zr, zi)
    out = np.empty((m, nmax + 1), dtype=np.complex128)
    for j in range(m):
        s = complex(dy[j], -dx[j])
        v = i0_scalar(dx[j], dy[j], zr, zi)
        out[j, 0] = v
        if nmax > 0:
            sinv = 1.0 / s
            spow = sinv
            for n in range(1, nmax + 1):
                v = spow / (TWO_PI * n) + ze * v / n
                out[j, n] = v
                spow = spow * sinv
    return out


# ---------------------------------------------------------------------------
# near-field sums over leaf blocks
# ---------------------------------------------------------------------------
# Targets are given in tree-permuted order: leaf L owns slots
# tlo[L]..thi[L].  sptr/sidx is a CSR of original source indices gathered
# from the leaf's U list.

@njit(cache=True, fastmath=True)
def near_reaction_blocks(tlo, thi, tx, ty, sptr, sidx, sx, sy, q, zr, zi, out):
    for L in range(tlo.size):
        for i in range(tlo[L], thi[L]):
            acc = 0.0 + 0.0j
            for kk in range(sptr[L], sptr[L + 1]):
                k = sidx[kk]
                acc += q[k] * i0_scalar(tx[i] - sx[k], ty[i] + sy[k], zr, zi)
            out[i] += acc


@njit(cache=True, fastmath=True, parallel=True)
def near_reaction_blocks_par(tlo, thi, tx, ty, sptr, sidx, sx, sy, q, zr, zi, out):
    for L in prange(tlo.size):
        for i in range(tlo[L], thi[L]):
            acc = 0.0 + 0.0j
            for kk in range(sptr[L], sptr[L + 1]):
                k = sidx[kk]
                acc += q[k] * i0_scalar(tx[i] - sx[k], ty[i] + sy[k], zr, zi)
            out[i] += acc


@njit(cache=True, fastmath=True)
def near_log_blocks(tlo, thi, tx, ty, tid, sptr, sidx, sx, sy, q, sid,
                    exclude_self, out):
    """out[i] += -(1/2pi) sum q ln|r_t - r_s|; returns #singular pairs."""
    bad = 0
    for L in range(tlo.size):
        for i in range(tlo[L], thi[L]):
            acc = 0.0
            for kk in range(sptr[L], sptr[L + 1]):
                k = sidx[kk]
                if exclude_self and tid[i] == sid[k]:
                    continue
                dx = tx[i] - sx[k]
                dy = ty[i] - sy[k]
                d2 = dx * dx + dy * dy
                if d2 == 0.0:
                    bad += 1
                    continue
                acc += q[k] * np.log(d2)
            out[i] += -acc / (2.0 * TWO_PI)
    return bad


@njit(cache=True, fastmath=True, parallel=True)
def near_log_blocks_par(tlo, thi, tx, ty, tid, sptr, sidx, sx, sy, q, sid,
                        exclude_self, out):
    badcnt = np.zeros(tlo.size, dtype=np.int64)
    for L in prange(tlo.size):
        nb = 0
        for i in range(tlo[L], thi[L]):
            acc = 0.0
            for kk in range(sptr[L], sptr[L + 1]):
                k = sidx[kk]
                if exclude_self and tid[i] == sid[k]:
                    continue
                dx = tx[i] - sx[k]
                dy = ty[i] - sy[k]
                d2 = dx * dx + dy * dy
                if d2 == 0.0:
                    nb += 1
                    continue
                acc += q[k] * np.log(d2)
            out[i] += -acc / (2.0 * TWO_PI)
        badcnt[L] = nb
    return int(badcnt.sum())


# ---------------------------------------------------------------------------
# O(N*M) direct sums (oracle)
# ---------------------------------------------------------------------------

@njit(cache=True, fastmath=True)
def direct_reaction_sum(tx, ty, sx, sy, q, zr, zi, out):
    """out[i] = sum_j q_j G_Z(r_i, r_j) via the closed form."""
    ze = complex(zr, zi)
    for i in range(tx.size):
        acc = 0.0 + 0.0j
        for j in range(sx.size):
            xx = tx[i] - sx[j]
            yy = ty[i] + sy[j]
            epref = cmath.exp(-ze * yy)
            t1 = cmath.exp(1j * ze * xx) * ei_scalar(ze * complex(yy, -xx))
            t2 = cmath.exp(-1j * ze * xx) * ei_scalar(ze * complex(yy, xx))
            acc += q[j] * (-epref * (t1 + t2) / TWO_PI + 1j * epref * cmath.cos(ze * xx))
        out[i] = acc


@njit(cache=True, fastmath=True)
def direct_log_sum(tx, ty, tid, sx, sy, q, sid, exclude_self, sign, out):
    """out[i] += sign * (-(1/2pi)) sum_j q_j ln|r_i - r_j|; returns #singular."""
    bad = 0
    for i in range(tx.size):
        acc = 0.0
        for j in range(sx.size):
            if exclude_self and tid[i] == sid[j]:
                continue
            dx = tx[i] - sx[j]
            dy = ty[i] - sy[j]
            d2 = dx * dx + dy * dy
            if d2 == 0.0:
                bad += 1
                continue
            acc += q[j] * np.log(d2)
        out[i] += -sign * acc / (2.0 * TWO_PI)
    return bad


# ---------------------------------------------------------------------------
# batched expansion helpers used by the downward pass
# ---------------------------------------------------------------------------

@njit(cache=True, fastmath=True)
def eval_me_batch(px, py, rows, coeffs, zr, zi, p_ord, vals):
    """vals[k] = sum_n coeffs[rows[k], n] * I_n(px[k], py[k])."""
    ze = complex(zr, zi)
    for k in range(px.size):
        s = complex(py[k], -px[k])
        v = i0_scalar(px[k], py[k], zr, zi)
        b = rows[k]
        acc = coeffs[b, 0] * v
        sinv = 1.0 / s
        spow = sinv
        for n in range(1, p_ord + 1):
            v = spow / (TWO_PI * n) + ze * v / n
            acc += coeffs[b, n] * v
            spow = spow * sinv
        vals[k] = acc
    return vals


@njit(cache=True, fastmath=True)
def s2l_batch(px, py, w, rows, zr, zi, p_ord, out):
    """out[rows[k], n] += w[k] * i^(-n) * I_n(px[k], py[k])  (scatter S2L)."""
    ze = complex(zr, zi)
    minus_i = complex(0.0, -1.0)
    for k in range(px.size):
        s = complex(py[k], -px[k])
        v = i0_scalar(px[k], py[k], zr, zi)
        r = rows[k]
        out[r, 0] += w[k] * v
        sinv = 1.0 / s
        spow = sinv
        ipow = minus_i
        for n in range(1, p_ord + 1):
            v = spow / (TWO_PI * n) + ze * v / n
            out[r, n] += w[k] * ipow * v
            spow = spow * sinv
            ipow = ipow * minus_i
    return out


@njit(cache=True, fastmath=True)
def reaction_m2l_batch(dx, dy, zr, zi, alpha, binom, p, out):
    """out[b, n] = (-i)^n sum_m C(n+m, n) I_{n+m}(dx[b], dy[b]) alpha[b, m]."""
    ze = complex(zr, zi)
    nmax = 2 * p
    tab = np.empty(nmax + 1, dtype=np.complex128)
    for b in range(dx.size):
        s = complex(dy[b], -dx[b])
        v = i0_scalar(dx[b], dy[b], zr, zi)
        tab[0] = v
        sinv = 1.0 / s
        spow = sinv
        for n in range(1, nmax + 1):
            v = spow / (TWO_PI * n) + ze * v / n
            tab[n] = v
            spow = spow * sinv
        ipow = 1.0 + 0.0j
        for n in range(p + 1):
            acc = 0.0 + 0.0j
            for m in range(p + 1):
                acc += binom[n + m, n] * tab[n + m] * alpha[b, m]
            out[b, n] = ipow * acc
            ipow = ipow * complex(0.0, -1.0)
    return out


@njit(cache=True, fastmath=True)
def log_m2l_batch(tre, tim, alpha, binom, p, out):
    """Log-kernel M2L for pair offsets t = tre + i*tim (see engine)."""
    tp = np.empty(p + 1, dtype=np.complex128)
    for b in range(tre.size):
        t = complex(tre[b], tim[b])
        tinv = 1.0 / t
        tp[0] = 1.0 + 0.0j
        for k in range(1, p + 1):
            tp[k] = tp[k - 1] * tinv
        a0 = alpha[b, 0]
        acc0 = a0 * cmath.log(t)
        for k in range(1, p + 1):
            acc0 += alpha[b, k] * tp[k]
        out[b, 0] = acc0
        sgn = -1.0
        for l in range(1, p + 1):
            acc = 0.0 + 0.0j
            for k in range(1, p + 1):
                acc += binom[k + l - 1, l] * alpha[b, k] * tp[k]
            out[b, l] = sgn * tp[l] * (acc - a0 / l)
            sgn = -sgn
    return out


def set_threads(n):
    if n and n > 1:
        numba.set_num_threads(min(int(n), numba.config.NUMBA_NUM_THREADS))
