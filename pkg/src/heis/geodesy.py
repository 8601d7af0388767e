"""Geodesics of H^n from the origin, their inversion, and the CC distance.

The unit-time geodesic with horizontal datum chi in C^n and vertical angle
theta in [-2pi, 2pi] is

    Gamma_s(chi, theta) = ( i (e^{-i theta s} - 1) / theta * chi ,
                            2 |chi|^2 (theta s - sin(theta s)) / theta^2 )

and (s*chi, 0) for theta = 0.  This is the unique reading of the printed
formula that is continuous at theta = 0 and horizontal for the group law
used in `core` (t' = 2 sum Im(zeta conj(zeta'))).  Useful identities:

    Gamma_s(chi, theta) = Gamma_1(s*chi, s*theta)
    zeta(s) = s * sinc(theta*s / 2pi) * e^{-i theta s / 2} * chi
    |zeta(1)| = |chi| * sinc(theta / 2pi)

Inversion at s=1 reduces, for zeta != 0, to the scalar monotone equation

    t / |zeta|^2 = m(theta) := (theta - sin theta) / (2 sin^2(theta/2))

solved on (-2pi, 2pi) by bisection plus Newton polish.  Points on the
center (zeta = 0, t != 0) sit on the non-unique theta = +-2pi family with
|chi| = sqrt(pi |t|).

The CC distance is d(x, y) = |chi| of Gamma_1^{-1}(x^{-1} * y); the angle
theta(x, y) is the corresponding |theta|.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import core

__all__ = [
    "NonUniqueGeodesic",
    "GeodesicParam",
    "InversionResult",
    "MidpointSet",
    "gamma",
    "gamma_inverse",
    "cc_distance",
    "angle",
    "midpoint",
    "midpoint_set",
    "pair_table",
    "PairTable",
    "set_max_workers",
]

TWO_PI = 2.0 * np.pi

# |zeta| < CENTER_TOL * sqrt(|t|) routes to the theta = +-2pi branch, where
# the generic inversion is ill-conditioned but the branch formula is exact.
CENTER_TOL = 1e-10

_BISECT_ITERS = 22
_NEWTON_ITERS = 6
_CHUNK = 1 << 18

_max_workers = 1


class NonUniqueGeodesic(ValueError):
    """Raised when a unique geodesic is required but theta = +-2pi."""


def set_max_workers(k: int):
    """Cap worker threads for the bulk pair kernels (results are identical
    for any worker count; chunk boundaries are fixed)."""
    global _max_workers
    if k < 1:
        raise ValueError("worker count must be >= 1")
    _max_workers = int(k)


@dataclass(frozen=True)
class GeodesicParam:
    """Initial datum (chi, theta) of a geodesic from the origin."""

    chi: np.ndarray  # complex, shape (n,)
    theta: float

    def __post_init__(self):
        chi = np.atleast_1d(np.asarray(self.chi, dtype=complex))
        if abs(self.theta) > TWO_PI + 1e-15:
            raise ValueError(f"|theta| must be <= 2*pi, got {self.theta}")
        object.__setattr__(self, "chi", chi)

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.chi))


@dataclass(frozen=True)
class InversionResult:
    """Output of Gamma_1^{-1}.

    For |theta| < 2pi `params` holds the unique datum.  For center points
    the geodesic is not unique: `unique` is False and `params` holds one
    canonical representative (chi = |chi| * e_1) of the family
    {(chi, sign(t) 2pi) : |chi| = sqrt(pi |t|)}; callers must not treat it
    as a selection.
    """

    params: list
    unique: bool
    distance: float


# ---------------------------------------------------------------------------
# scalar auxiliary map m and the vectorized root solve
# ---------------------------------------------------------------------------

def _m(theta):
    """m(theta) = (theta - sin theta) / (2 sin^2(theta/2)), odd, increasing
    on (-2pi, 2pi); series near 0 avoids 0/0."""
    theta = np.asarray(theta, dtype=float)
    small = np.abs(theta) < 1e-3
    ts = np.where(small, theta, 0.0)
    series = ts / 3.0 * (1.0 + ts * ts / 30.0 + ts ** 4 / 840.0)
    tb = np.where(small, 1.0, theta)
    s2 = np.sin(tb / 2.0)
    direct = (tb - np.sin(tb)) / (2.0 * s2 * s2)
    return np.where(small, series, direct)


def _m_and_dm(theta):
    """m and m' sharing trig evaluations (for Newton)."""
    theta = np.asarray(theta, dtype=float)
    small = np.abs(theta) < 1e-3
    ts = np.where(small, theta, 0.0)
    m_ser = ts / 3.0 * (1.0 + ts * ts / 30.0 + ts ** 4 / 840.0)
    dm_ser = 1.0 / 3.0 + ts * ts / 30.0
    tb = np.where(small, 1.0, theta)
    s2 = np.sin(tb / 2.0)
    c2 = np.cos(tb / 2.0)
    num = tb - np.sin(tb)
    m_dir = num / (2.0 * s2 * s2)
    dm_dir = 1.0 - num * c2 / (2.0 * s2 ** 3)
    return np.where(small, m_ser, m_dir), np.where(small, dm_ser, dm_dir)


def _solve_theta(u):
    """Solve m(theta) = u for theta in (-2pi, 2pi), elementwise.

    Bisection brackets to ~1.5e-6, Newton polishes to relative residual
    <= 1e-12 (clipped to the bracket, so convergence is unconditional).
    """
    u = np.asarray(u, dtype=float)
    au = np.abs(u)
    lo = np.zeros_like(au)
    hi = np.full_like(au, TWO_PI * (1.0 - 1e-14))
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        take = _m(mid) < au
        lo = np.where(take, mid, lo)
        hi = np.where(take, hi, mid)
    th = 0.5 * (lo + hi)
    for _ in range(_NEWTON_ITERS):
        f, d = _m_and_dm(th)
        step = (f - au) / d
        th = np.clip(th - step, lo, hi)
    return np.where(u < 0, -th, th)


# ---------------------------------------------------------------------------
# forward map
# ---------------------------------------------------------------------------

def _v_factor(alpha):
    """V(a) = (a - sin a) / a^2, with series near 0."""
    alpha = np.asarray(alpha, dtype=float)
    small = np.abs(alpha) < 1e-3
    a_s = np.where(small, alpha, 0.0)
    series = a_s / 6.0 * (1.0 - a_s * a_s / 20.0 + a_s ** 4 / 840.0)
    a_b = np.where(small, 1.0, alpha)
    direct = (a_b - np.sin(a_b)) / (a_b * a_b)
    return np.where(small, series, direct)


def _gamma_arrays(s, chi, theta):
    """Gamma_s for arrays chi (..., n) complex, theta (...)."""
    theta = np.asarray(theta, dtype=float)
    chi = np.asarray(chi, dtype=complex)
    a = theta * s
    zfac = s * np.sinc(a / TWO_PI) * np.exp(-0.5j * a)
    zeta = chi * zfac[..., None]
    nchi2 = np.sum(chi.real ** 2 + chi.imag ** 2, axis=-1)
    t = 2.0 * nchi2 * (s * s) * _v_factor(a)
    return zeta, t


def gamma(s: float, p: GeodesicParam) -> np.ndarray:
    """Point gamma_{chi,theta}(s) as coordinates, s in [0, 1]."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"s must be in [0, 1], got {s}")
    if abs(p.theta) > TWO_PI + 1e-15:
        raise ValueError(f"|theta| must be <= 2*pi, got {p.theta}")
    zeta, t = _gamma_arrays(s, p.chi[None, :], np.array([p.theta]))
    return core.from_complex(zeta[0], t[0])


# ---------------------------------------------------------------------------
# inversion
# ---------------------------------------------------------------------------

def _invert_arrays(zeta, t):
    """Vectorized Gamma_1^{-1} for zeta (..., n) complex, t (...).

    Returns (chi, theta, dist, unique).  Center entries get the canonical
    representative chi = sqrt(pi|t|) e_1 and unique = False.
    """
    zeta = np.asarray(zeta, dtype=complex)
    t = np.asarray(t, dtype=float)
    az = np.sqrt(np.sum(zeta.real ** 2 + zeta.imag ** 2, axis=-1))
    at = np.abs(t)
    on_center = az < CENTER_TOL * np.sqrt(at)
    at_origin = (az == 0.0) & (t == 0.0)
    generic = ~(on_center | at_origin)

    theta = np.zeros_like(at)
    dist = np.zeros_like(at)
    chi = np.zeros_like(zeta)

    if np.any(generic):
        u = np.where(generic, t, 0.0) / np.where(generic, az, 1.0) ** 2
        th = _solve_theta(u)
        sc = np.sinc(th / TWO_PI)
        fac = np.exp(0.5j * th) / sc
        theta = np.where(generic, th, theta)
        dist = np.where(generic, az / sc, dist)
        chi = np.where(generic[..., None], zeta * fac[..., None], chi)

    if np.any(on_center):
        r = np.sqrt(np.pi * at)
        theta = np.where(on_center, np.sign(t) * TWO_PI, theta)
        dist = np.where(on_center, r, dist)
        rep = np.zeros_like(zeta)
        rep[..., 0] = r
        chi = np.where(on_center[..., None], rep, chi)

    return chi, theta, dist, ~on_center


def gamma_inverse(y) -> InversionResult:
    """Gamma_1^{-1}(y) for a single point (origin inverts to (0, 0))."""
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite input point")
    zeta, t = core.to_complex(y)
    chi, theta, dist, unique = _invert_arrays(zeta[None, :], np.array([t]))
    p = GeodesicParam(chi[0], float(theta[0]))
    return InversionResult(params=[p], unique=bool(unique[0]), distance=float(dist[0]))


def cc_distance(x, y) -> float:
    """Carnot-Caratheodory distance, via left invariance."""
    x, y = core.check_same_dim(x, y)
    return float(gamma_inverse(core.group_mul(core.group_inv(x), y)).distance)


def paired_invert(xs, ys):
    """Gamma_1^{-1}(x_k^{-1} * y_k) elementwise for matched clouds.

    Returns (theta, dist, unique) arrays of length len(xs)."""
    xs, ys = core.check_same_dim(np.atleast_2d(xs), np.atleast_2d(ys))
    zx, tx = core.to_complex(xs)
    zy, ty = core.to_complex(ys)
    dz = zy - zx
    tw = np.sum(zx.imag * zy.real - zx.real * zy.imag, axis=-1)
    dt = ty - tx - 2.0 * tw
    _, theta, dist, unique = _invert_arrays(dz, dt)
    return theta, dist, unique


def cc_distance_many(xs, ys) -> np.ndarray:
    """d(x_k, y_k) for matched point clouds."""
    return paired_invert(xs, ys)[1]


def angle(x, y) -> float:
    """|theta| of Gamma_1^{-1}(x^{-1} * y); 0 when x == y; symmetric."""
    x, y = core.check_same_dim(x, y)
    d = core.group_mul(core.group_inv(x), y)
    return float(abs(gamma_inverse(d).params[0].theta))


def midpoint(s: float, x, y) -> np.ndarray:
    """The s-intermediate point Z_s(x, y) = x * Gamma_s(Gamma_1^{-1}(x^{-1} y)).

    Raises NonUniqueGeodesic when theta(x, y) = 2pi (center case); callers
    must handle that branch explicitly.
    """
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"s must be in [0, 1], got {s}")
    x, y = core.check_same_dim(x, y)
    inv = gamma_inverse(core.group_mul(core.group_inv(x), y))
    if not inv.unique:
        raise NonUniqueGeodesic(
            "x^{-1} * y lies on the center: the s-intermediate point is not unique"
        )
    return core.group_mul(x, gamma(s, inv.params[0]))


# ---------------------------------------------------------------------------
# bulk pair kernel
# ---------------------------------------------------------------------------

@dataclass
class PairTable:
    """All-pairs inversion data between two point clouds.

    dist[i, j] and theta[i, j] describe Gamma_1^{-1}(x_i^{-1} * y_j);
    chi (complex, shape (N, M, n)) is kept only when requested.  unique is
    False exactly on center pairs.  The table is the shared input for cost
    matrices, midpoint sets, and the deviation functional.
    """

    dist: np.ndarray
    theta: np.ndarray
    unique: np.ndarray
    chi: np.ndarray | None = None
    xs: np.ndarray | None = None
    ys: np.ndarray | None = None

    def midpoints(self, s: float) -> np.ndarray:
        """Midpoint coordinates for every unique pair, shape (K, 2n+1)."""
        if self.chi is None or self.xs is None:
            raise ValueError("pair table was built without chi / endpoints")
        if not 0.0 <= s <= 1.0:
            raise ValueError(f"s must be in [0, 1], got {s}")
        mask = self.unique
        ii, jj = np.nonzero(mask)
        zeta, t = _gamma_arrays(s, self.chi[ii, jj], self.theta[ii, jj])
        g = core.from_complex(zeta, t)
        return core.group_mul(self.xs[ii], g)


def _pair_block(xs, ys, want_chi):
    zx, tx = core.to_complex(xs)
    zy, ty = core.to_complex(ys)
    dzeta = zy[None, :, :] - zx[:, None, :]
    # t part of x^{-1} * y: ty - tx - 2 sum Im(zeta_x conj(zeta_y))
    twist = 2.0 * (
        np.ascontiguousarray(zx.imag) @ zy.real.T
        - np.ascontiguousarray(zx.real) @ zy.imag.T
    )
    dt = ty[None, :] - tx[:, None] - twist
    chi, theta, dist, unique = _invert_arrays(dzeta, dt)
    if not want_chi:
        chi = None
    return dist, theta, unique, chi


def pair_table(xs, ys, want_chi: bool = False) -> PairTable:
    """Invert x_i^{-1} * y_j for all pairs, chunked over rows of xs.

    Thread workers (see set_max_workers) only split the fixed chunks, so
    the result is identical for any worker count.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    core.check_same_dim(xs, ys)
    n_rows = xs.shape[0]
    rows_per_chunk = max(1, _CHUNK // max(1, ys.shape[0]))
    starts = list(range(0, n_rows, rows_per_chunk))

    def work(start):
        stop = min(start + rows_per_chunk, n_rows)
        return _pair_block(xs[start:stop], ys, want_chi)

    if _max_workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=_max_workers) as pool:
            blocks = list(pool.map(work, starts))
    else:
        blocks = [work(s) for s in starts]

    dist = np.concatenate([b[0] for b in blocks], axis=0)
    theta = np.concatenate([b[1] for b in blocks], axis=0)
    unique = np.concatenate([b[2] for b in blocks], axis=0)
    chi = np.concatenate([b[3] for b in blocks], axis=0) if want_chi else None
    return PairTable(dist=dist, theta=theta, unique=unique, chi=chi, xs=xs, ys=ys)


@dataclass
class MidpointSet:
    """Deduplicated s-intermediate points of A x B with a skip count for
    non-unique (center) pairs."""

    points: np.ndarray
    skipped: int = 0
    tol: float = 1e-12


def _dedup(points, tol):
    if len(points) == 0:
        return points
    keys = np.round(points / tol).astype(np.int64)
    order = np.lexsort(keys.T[::-1])
    sk = keys[order]
    first = np.empty(len(sk), dtype=bool)
    first[0] = True
    first[1:] = np.any(sk[1:] != sk[:-1], axis=1)
    return points[np.sort(order[first])]


def midpoint_set(s: float, A, B, tol: float = 1e-12,
                 table: PairTable | None = None) -> MidpointSet:
    """Z_s(A, B) over sample clouds: all |A|*|B| midpoints, deduplicated
    within absolute coordinate tolerance `tol` (canonical order, so the
    result is deterministic).  Center pairs are skipped and counted."""
    if table is None:
        table = pair_table(A, B, want_chi=True)
    pts = table.midpoints(s)
    skipped = int(table.unique.size - np.count_nonzero(table.unique))
    return MidpointSet(points=_dedup(pts, tol), skipped=skipped, tol=tol)
