"""Exact arithmetic of the Heisenberg group H^n.

A point is stored as a flat float array [xi_1, eta_1, ..., xi_n, eta_n, t]
of length 2n+1, where zeta_j = xi_j + i*eta_j.  The group product is

    (zeta, t) * (zeta', t') = (zeta + zeta', t + t' + 2 sum_j Im(zeta_j conj(zeta'_j)))

with neutral element 0, inverse (-zeta, -t), and dilations
delta_lam(zeta, t) = (lam*zeta, lam^2*t).

All functions accept arrays of shape (..., 2n+1) and broadcast; they never
mutate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "HPoint",
    "dim_to_n",
    "origin",
    "zeta_t_split",
    "to_complex",
    "from_complex",
    "group_mul",
    "group_inv",
    "left_translate",
    "right_translate",
    "dilate",
    "check_same_dim",
]


def dim_to_n(coords) -> int:
    """n from a coordinate array of length 2n+1."""
    d = np.shape(coords)[-1]
    if d < 3 or d % 2 == 0:
        raise ValueError(f"coordinate length must be odd and >= 3, got {d}")
    return (d - 1) // 2


def check_same_dim(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1] != y.shape[-1]:
        raise ValueError(
            f"dimension mismatch: {x.shape[-1]} vs {y.shape[-1]} coordinates"
        )
    return x, y


def origin(n: int = 1) -> np.ndarray:
    return np.zeros(2 * n + 1)


def zeta_t_split(coords):
    """(zeta as interleaved reals, t)."""
    coords = np.asarray(coords, dtype=float)
    return coords[..., :-1], coords[..., -1]


def to_complex(coords) -> tuple[np.ndarray, np.ndarray]:
    """Coordinates -> (zeta complex array of shape (..., n), t)."""
    zr, t = zeta_t_split(coords)
    return zr[..., 0::2] + 1j * zr[..., 1::2], t


def from_complex(zeta, t) -> np.ndarray:
    """(zeta complex (..., n), t) -> interleaved real coordinates."""
    zeta = np.asarray(zeta, dtype=complex)
    t = np.asarray(t, dtype=float)
    n = zeta.shape[-1]
    out = np.empty(np.broadcast_shapes(zeta.shape[:-1], t.shape) + (2 * n + 1,))
    out[..., 0:-1:2] = zeta.real
    out[..., 1:-1:2] = zeta.imag
    out[..., -1] = t
    return out


def _twist(x, y):
    """2 sum_j Im(zeta_j conj(zeta'_j)) = 2 sum_j (eta_j xi'_j - xi_j eta'_j)."""
    xi, eta = x[..., 0:-1:2], x[..., 1:-1:2]
    xip, etap = y[..., 0:-1:2], y[..., 1:-1:2]
    return 2.0 * np.sum(eta * xip - xi * etap, axis=-1)


def group_mul(x, y) -> np.ndarray:
    """Group product x * y."""
    x, y = check_same_dim(x, y)
    out = x + y
    out[..., -1] = x[..., -1] + y[..., -1] + _twist(x, y)
    return out


def group_inv(x) -> np.ndarray:
    """Group inverse (-zeta, -t)."""
    return -np.asarray(x, dtype=float)


def left_translate(z, x) -> np.ndarray:
    """L_z(x) = z * x."""
    return group_mul(z, x)


def right_translate(z, x) -> np.ndarray:
    """R_z(x) = x * z."""
    return group_mul(x, z)


def dilate(lam: float, x) -> np.ndarray:
    """delta_lam(zeta, t) = (lam*zeta, lam^2*t), lam > 0."""
    if not lam > 0:
        raise ValueError(f"dilation factor must be positive, got {lam}")
    x = np.asarray(x, dtype=float)
    out = lam * x
    out[..., -1] = lam * lam * x[..., -1]
    return out


@dataclass(frozen=True)
class HPoint:
    """A point of H^n with convenience operators around the array functions."""

    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float)
        if c.ndim != 1:
            raise ValueError("HPoint wraps a single coordinate vector")
        if not np.all(np.isfinite(c)):
            raise ValueError("coordinates must be finite")
        dim_to_n(c)
        object.__setattr__(self, "coords", c)
        self.coords.setflags(write=False)

    @property
    def n(self) -> int:
        return dim_to_n(self.coords)

    @property
    def t(self) -> float:
        return float(self.coords[-1])

    @property
    def zeta(self) -> np.ndarray:
        return to_complex(self.coords)[0]

    @classmethod
    def origin(cls, n: int = 1) -> "HPoint":
        return cls(origin(n))

    @classmethod
    def of(cls, *vals) -> "HPoint":
        return cls(np.array(vals, dtype=float))

    def __mul__(self, other: "HPoint") -> "HPoint":
        return HPoint(group_mul(self.coords, other.coords))

    def inv(self) -> "HPoint":
        return HPoint(group_inv(self.coords))

    def dilated(self, lam: float) -> "HPoint":
        return HPoint(dilate(lam, self.coords))

    def in_center(self, tol: float = 0.0) -> bool:
        return bool(np.max(np.abs(self.coords[:-1]), initial=0.0) <= tol)

    def to_json(self) -> list:
        return [float(v) for v in self.coords]

    @classmethod
    def from_json(cls, data) -> "HPoint":
        return cls(np.asarray(data, dtype=float))

    def __repr__(self):
        return f"HPoint({list(self.coords)})"
