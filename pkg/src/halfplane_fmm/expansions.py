"""Multipole/local expansions and their shifting/translation operators.

Two operator families share the coefficient containers:

* the reaction kernel I_0, expanded through the integral family I_n
  (`s2m`, `m2m`, `s2l`, `l2l`, `m2l`, `eval_me`, `eval_le`), and
* the classic free-space log kernel -(1/2pi) ln|r - r'|
  (`log_s2m`, `log_translate`, `log_eval`).

Coefficients are dense complex vectors indexed 0..p with a single
truncation order p per run (capped at 60 so every binomial/factorial
ratio stays comfortably inside double range; the shared table is built
by incremental products, never raw factorials).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DomainError
from .specfun import Impedance, Point, _i_table

__all__ = [
    "MultipoleCoeffs",
    "LocalCoeffs",
    "SourceCluster",
    "P_MAX",
    "s2m",
    "m2m",
    "s2l",
    "l2l",
    "m2l",
    "eval_me",
    "eval_le",
    "log_s2m",
    "log_translate",
    "log_eval",
]

P_MAX = 60

# binomial table up to the largest index m2l touches: C(2*P_MAX, .)
_BINOM = np.zeros((2 * P_MAX + 2, 2 * P_MAX + 2))
_BINOM[0, 0] = 1.0
for _n in range(1, 2 * P_MAX + 2):
    _BINOM[_n, 0] = 1.0
    _BINOM[_n, 1:_n + 1] = _BINOM[_n - 1, :_n] + _BINOM[_n - 1, 1:_n + 1]


def binom(n, k):
    return _BINOM[n, k]


def _as_point(p) -> Point:
    return Point(float(p[0]), float(p[1]))


def _check_order(p: int) -> int:
    p = int(p)
    if p < 0 or p > P_MAX:
        raise DomainError(f"expansion order must be in [0, {P_MAX}], got {p}")
    return p


@dataclass(frozen=True)
class MultipoleCoeffs:
    """Truncated multipole expansion about `center` (length order+1)."""

    center: Point
    order: int
    coeffs: np.ndarray
    radius: float = 0.0  # max source distance from center; used by log ME eval

    def __post_init__(self):
        object.__setattr__(self, "center", _as_point(self.center))
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.shape != (self.order + 1,):
            raise DomainError("coeffs length must equal order + 1")
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)


@dataclass(frozen=True)
class LocalCoeffs:
    """Truncated local expansion about `center` (length order+1)."""

    center: Point
    order: int
    coeffs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", _as_point(self.center))
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.shape != (self.order + 1,):
            raise DomainError("coeffs length must equal order + 1")
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)


@dataclass
class SourceCluster:
    """Point charges at `positions` (image coordinates for the reaction kernel)."""

    positions: np.ndarray
    charges: np.ndarray

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=np.float64))
        self.charges = np.atleast_1d(np.asarray(self.charges, dtype=np.float64))
        if self.positions.shape[0] == 0:
            raise DomainError("cluster must be nonempty")
        if self.positions.shape != (self.charges.size, 2):
            raise DomainError("positions must be (M, 2) matching charges (M,)")


def _powers(u: np.ndarray, p: int) -> np.ndarray:
    """pow[k, j] = u[j]**k for k = 0..p, built by repeated multiplication."""
    out = np.empty((p + 1, u.size), dtype=np.complex128)
    out[0] = 1.0
    for k in range(1, p + 1):
        out[k] = out[k - 1] * u
    return out


# ---------------------------------------------------------------------------
# reaction-kernel operators
# ---------------------------------------------------------------------------

def s2m(cluster: SourceCluster, center, p: int) -> MultipoleCoeffs:
    """Multipole coefficients alpha_n = sum_j Q_j [i((xc-xj) + i(yc-yj))]^n."""
    p = _check_order(p)
    c = _as_point(center)
    w = 1j * ((c.x - cluster.positions[:, 0]) + 1j * (c.y - cluster.positions[:, 1]))
    alpha = _powers(w, p) @ cluster.charges.astype(np.complex128)
    radius = float(np.max(np.abs(w))) if w.size else 0.0
    return MultipoleCoeffs(c, p, alpha, radius=radius)


def _m2m_matrix(delta: complex, p: int) -> np.ndarray:
    """Lower-triangular shift matrix M[n, m] = C(n, m) (i*delta)^{n-m}."""
    dpow = _powers(np.array([1j * delta]), p)[:, 0]
    idx = np.arange(p + 1)
    mat = _BINOM[idx[:, None], idx[None, :]] * dpow[np.maximum(idx[:, None] - idx[None, :], 0)]
    return np.tril(mat)


def _l2l_matrix(delta: complex, p: int) -> np.ndarray:
    """Upper-triangular shift matrix L[m, n] = C(n, m) delta^{n-m}."""
    dpow = _powers(np.array([delta]), p)[:, 0]
    idx = np.arange(p + 1)
    mat = _BINOM[idx[None, :], idx[:, None]] * dpow[np.maximum(idx[None, :] - idx[:, None], 0)]
    return np.triu(mat)


def m2m(me: MultipoleCoeffs, new_center) -> MultipoleCoeffs:
    """Exact shift: alpha~_n = sum_{m<=n} C(n,m) (i*delta)^{n-m} alpha_m."""
    nc = _as_point(new_center)
    d = (nc.x - me.center.x) + 1j * (nc.y - me.center.y)
    out = _m2m_matrix(d, me.order) @ me.coeffs
    return MultipoleCoeffs(nc, me.order, out, radius=me.radius + abs(d))


def s2l(cluster: SourceCluster, center, p: int, zeps: Impedance) -> LocalCoeffs:
    """Local coefficients beta_n = sum_j Q_j i^{-n} I_n(xc-xj, yc-yj)."""
    p = _check_order(p)
    c = _as_point(center)
    dx = c.x - cluster.positions[:, 0]
    dy = c.y - cluster.positions[:, 1]
    if np.any(dx * dx + dy * dy == 0.0):
        raise DomainError("cluster point coincides with the expansion center")
    table = _i_table(dx, dy, zeps, p)  # raises DomainError when any dy <= 0
    ipow = (-1j) ** np.arange(p + 1)
    beta = ipow * (cluster.charges @ table)
    return LocalCoeffs(c, p, beta)


def l2l(le: LocalCoeffs, new_center) -> LocalCoeffs:
    """Truncated shift: beta'_m = sum_{n=m}^p C(n, m) delta^{n-m} beta_n."""
    nc = _as_point(new_center)
    d = (le.center.x - nc.x) + 1j * (le.center.y - nc.y)
    out = _l2l_matrix(d, le.order) @ le.coeffs
    return LocalCoeffs(nc, le.order, out)


def m2l(me: MultipoleCoeffs, target_center, zeps: Impedance) -> LocalCoeffs:
    """Translate an ME into an LE about `target_center`.

    beta^_n = i^{-n} sum_{m=0}^p C(n+m, n) I_{n+m}(xc - xc', yc - yc') alpha_m,
    using one I-table of length 2p+1 per box pair.
    """
    tc = _as_point(target_center)
    p = me.order
    dx = tc.x - me.center.x
    dy = tc.y - me.center.y
    if dx == 0.0 and dy == 0.0:
        raise DomainError("m2l requires distinct centers")
    if dy <= 0.0:
        raise DomainError(
            "m2l requires the target center strictly above the source center"
        )
    table = _i_table(np.array([dx]), np.array([dy]), zeps, 2 * p)[0]
    beta = _m2l_apply(me.coeffs[None, :], table[None, :])[0]
    return LocalCoeffs(tc, p, beta)


def _m2l_apply(alpha: np.ndarray, tables: np.ndarray) -> np.ndarray:
    """Batched M2L: alpha (B, p+1), tables (B, 2p+1) -> beta (B, p+1)."""
    p = alpha.shape[1] - 1
    idx = np.arange(p + 1)
    hankel = tables[:, idx[:, None] + idx[None, :]]          # (B, n, m) = I_{n+m}
    cmat = _BINOM[idx[:, None] + idx[None, :], idx[:, None]]  # C(n+m, n)
    beta = np.einsum("bnm,nm,bm->bn", hankel, cmat, alpha, optimize=True)
    return beta * ((-1j) ** idx)[None, :]


def eval_me(me: MultipoleCoeffs, target, zeps: Impedance):
    """Evaluate the truncated ME: sum_n alpha_n I_n(x - xc', y - yc')."""
    t = _as_point(target)
    dy = t.y - me.center.y
    if dy <= 0.0:
        raise DomainError("eval_me requires the target strictly above the ME center")
    table = _i_table(np.array([t.x - me.center.x]), np.array([dy]), zeps, me.order)[0]
    return complex(me.coeffs @ table)


def eval_le(le: LocalCoeffs, target):
    """Evaluate the truncated LE by Horner in u = (xc - x) + i(yc - y)."""
    t = _as_point(target)
    u = (le.center.x - t.x) + 1j * (le.center.y - t.y)
    acc = 0.0 + 0.0j
    for c in le.coeffs[::-1]:
        acc = acc * u + c
    return complex(acc)


# ---------------------------------------------------------------------------
# classic log-kernel operators (free-space FMM)
# ---------------------------------------------------------------------------

def log_s2m(cluster: SourceCluster, center, p: int) -> MultipoleCoeffs:
    """Classic log-kernel ME: a_0 = sum Q_j, a_k = -sum Q_j (z_j - z_c)^k / k."""
    p = _check_order(p)
    c = _as_point(center)
    zj = (cluster.positions[:, 0] - c.x) + 1j * (cluster.positions[:, 1] - c.y)
    q = cluster.charges.astype(np.complex128)
    a = np.empty(p + 1, dtype=np.complex128)
    a[0] = q.sum()
    if p > 0:
        pw = _powers(zj, p)
        ks = np.arange(1, p + 1)
        a[1:] = -(pw[1:] @ q) / ks
    radius = float(np.max(np.abs(zj))) if zj.size else 0.0
    return MultipoleCoeffs(c, p, a, radius=radius)


def _log_m2m_matrix(delta: complex, p: int) -> np.ndarray:
    """a'_l = -a_0 d^l / l + sum_{k=1}^l C(l-1, k-1) d^{l-k} a_k, d = old - new."""
    mat = np.zeros((p + 1, p + 1), dtype=np.complex128)
    dpow = _powers(np.array([delta]), p)[:, 0]
    mat[0, 0] = 1.0
    for l in range(1, p + 1):
        mat[l, 0] = -dpow[l] / l
        for k in range(1, l + 1):
            mat[l, k] = _BINOM[l - 1, k - 1] * dpow[l - k]
    return mat


def _log_m2l_matrix(t: complex, p: int) -> np.ndarray:
    """LE about z_c from ME about z_c', t = z_c - z_c'.

    b_0 = a_0 ln t + sum_k a_k t^-k
    b_l = -a_0 (-1)^l / (l t^l) + (-1)^l sum_k C(k+l-1, l) a_k t^-(k+l)
    """
    mat = np.zeros((p + 1, p + 1), dtype=np.complex128)
    tinv = 1.0 / t
    tpow = _powers(np.array([tinv]), 2 * p + 1)[:, 0]
    mat[0, 0] = np.log(t)
    for k in range(1, p + 1):
        mat[0, k] = tpow[k]
    for l in range(1, p + 1):
        mat[l, 0] = -((-1.0) ** l) * tpow[l] / l
        for k in range(1, p + 1):
            mat[l, k] = ((-1.0) ** l) * _BINOM[k + l - 1, l] * tpow[k + l]
    return mat


def log_translate(kind: str, coeffs, new_center):
    """Shift/translate log-kernel expansions: kind in {'m2m', 'm2l', 'l2l'}."""
    kind = kind.lower()
    nc = _as_point(new_center)
    p = coeffs.order
    if kind == "m2m":
        d = (coeffs.center.x - nc.x) + 1j * (coeffs.center.y - nc.y)
        out = _log_m2m_matrix(d, p) @ coeffs.coeffs
        return MultipoleCoeffs(nc, p, out, radius=coeffs.radius + abs(d))
    if kind == "m2l":
        t = (nc.x - coeffs.center.x) + 1j * (nc.y - coeffs.center.y)
        if t == 0:
            raise DomainError("log m2l requires distinct centers")
        out = _log_m2l_matrix(t, p) @ coeffs.coeffs
        return LocalCoeffs(nc, p, out)
    if kind == "l2l":
        # LE shift: b'_m = sum_{l>=m} C(l, m) h^{l-m} b_l with h = new - old
        h = (nc.x - coeffs.center.x) + 1j * (nc.y - coeffs.center.y)
        out = _l2l_matrix(h, p) @ coeffs.coeffs
        return LocalCoeffs(nc, p, out)
    raise DomainError(f"unknown translation kind {kind!r}")


def log_eval(kind: str, coeffs, target) -> float:
    """Evaluate a log-kernel expansion: the real potential -(1/2pi) Re[series]."""
    kind = kind.lower()
    t = _as_point(target)
    w = (t.x - coeffs.center.x) + 1j * (t.y - coeffs.center.y)
    if kind == "me":
        if abs(w) <= coeffs.radius:
            raise DomainError("log ME evaluated inside its expansion disk")
        acc = 0.0 + 0.0j
        winv = 1.0 / w
        for c in coeffs.coeffs[:0:-1]:
            acc = (acc + c) * winv
        acc += coeffs.coeffs[0] * np.log(w)
        return float(-acc.real / (2.0 * np.pi))
    if kind == "le":
        u = w
        acc = 0.0 + 0.0j
        for c in coeffs.coeffs[::-1]:
            acc = acc * u + c
        return float(-acc.real / (2.0 * np.pi))
    raise DomainError(f"unknown evaluation kind {kind!r}")
