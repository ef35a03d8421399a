"""Polar coordinates on the nonnegative orthant, axis-aligned boxes, and
linear minimization over boxes.

Angles follow the convention

    x_1 = r cos(a_1)
    x_j = r cos(a_j) * sin(a_1) * ... * sin(a_{j-1})
    x_m = r sin(a_1) * ... * sin(a_{m-1})

so a point on the first axis has all angles zero.  The origin is mapped to
radius 0 with all angles 0.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

HALF_PI = math.pi / 2


@dataclass(frozen=True)
class PolarPoint:
    radius: float
    angles: tuple[float, ...]

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError(f"radius must be nonnegative, got {self.radius}")
        for a in self.angles:
            if not 0.0 <= a <= HALF_PI:
                raise ValueError(f"angle {a} outside [0, pi/2]")

    @property
    def dim(self) -> int:
        return len(self.angles) + 1


@dataclass(frozen=True)
class AxisBox:
    """Closed box ``[lo_1, hi_1] x ... x [lo_m, hi_m]``."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box bounds must be 1-D arrays of equal length")
        if np.any(lo > hi):
            raise ValueError("box has lo > hi in some coordinate")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    def contains(self, x, rtol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        slack = rtol * np.maximum(np.abs(self.hi), 1.0)
        return bool(np.all(x >= self.lo - slack) and np.all(x <= self.hi + slack))

    def corners(self) -> np.ndarray:
        """All ``2**m`` vertices, one per row."""
        pick = np.array(list(itertools.product((0, 1), repeat=self.dim)), dtype=bool)
        return np.where(pick, self.hi, self.lo)


def _cos(a):
    # cos(pi/2) is 6e-17 in binary64; axis points should sit exactly on the axis
    c = np.cos(a)
    return np.where(np.asarray(a) == HALF_PI, 0.0, c)


def trig_vector(angles) -> np.ndarray:
    """Unit direction for the given angle vector (length m-1 gives m coords)."""
    angles = np.asarray(angles, dtype=float).reshape(-1)
    m = angles.size + 1
    out = np.empty(m)
    sin_prod = 1.0
    for j in range(m - 1):
        out[j] = sin_prod * _cos(angles[j])
        sin_prod *= math.sin(angles[j])
    out[m - 1] = sin_prod
    return out


def trig_vectors(angles: np.ndarray) -> np.ndarray:
    """Row-wise :func:`trig_vector` for an ``(n, m-1)`` array."""
    angles = np.atleast_2d(np.asarray(angles, dtype=float))
    n, k = angles.shape
    out = np.empty((n, k + 1))
    sin_prod = np.ones(n)
    for j in range(k):
        out[:, j] = sin_prod * _cos(angles[:, j])
        sin_prod = sin_prod * np.sin(angles[:, j])
    out[:, k] = sin_prod
    return out


def to_polar(v) -> PolarPoint:
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size < 1:
        raise ValueError("need at least one coordinate")
    if np.any(v < 0):
        raise ValueError("coordinates must be nonnegative")
    radius = float(np.linalg.norm(v))
    angles = []
    for j in range(v.size - 1):
        # tail norm of coordinates after j, measured against coordinate j
        tail = float(np.linalg.norm(v[j + 1:]))
        angles.append(math.atan2(tail, v[j]) if (tail or v[j]) else 0.0)
    return PolarPoint(radius, tuple(angles))


def polar_angles(points: np.ndarray) -> np.ndarray:
    """Vectorised angle extraction for an ``(n, m)`` array of nonnegative rows."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    tails = np.sqrt(np.cumsum(points[:, ::-1] ** 2, axis=1)[:, ::-1])
    return np.arctan2(tails[:, 1:], points[:, :-1])


def from_polar(p: PolarPoint) -> np.ndarray:
    return p.radius * trig_vector(p.angles)


def box_min_dot(box: AxisBox, w) -> float:
    """Minimum of ``x . w`` over ``x`` in ``box``.

    The objective separates by coordinate, so each coordinate independently
    takes its lower end when ``w_j >= 0`` and its upper end otherwise.
    """
    w = np.asarray(w, dtype=float)
    if w.shape != box.lo.shape:
        raise ValueError(f"dimension mismatch: box {box.dim}, weights {w.shape}")
    return float(np.where(w >= 0, box.lo, box.hi) @ w)


def box_min_dots(lo: np.ndarray, hi: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Broadcasting form of :func:`box_min_dot` over leading axes."""
    return np.sum(np.where(w >= 0, lo, hi) * w, axis=-1)


def _gauss_legendre_half_pi(power: int, nodes: int) -> tuple[float, float]:
    """Integral of sin^power over [0, pi/2] and a crude error estimate."""
    def rule(n):
        x, w = np.polynomial.legendre.leggauss(n)
        t = (x + 1.0) * (HALF_PI / 2)
        return float(np.sum(w * np.sin(t) ** power) * (HALF_PI / 2))

    fine = rule(nodes)
    coarse = rule(max(nodes // 2, 2))
    return fine, abs(fine - coarse)


def sin_power_integral(m: int, quadrature_points: int = 256) -> tuple[float, float]:
    """Integral over ``[0, pi/2]^(m-1)`` of ``prod_{j=1}^{m-2} sin(a_j)^(m-j-1)``.

    The integrand factors over angles, so the result is a product of 1-D
    Gauss-Legendre integrals; the last angle contributes a factor pi/2.
    Returns ``(value, error_estimate)``.
    """
    if m < 2:
        raise ValueError("m must be at least 2")
    if quadrature_points < 64:
        raise ValueError("use at least 64 quadrature points")
    value, rel_err = HALF_PI, 0.0
    for j in range(1, m - 1):
        factor, err = _gauss_legendre_half_pi(m - j - 1, quadrature_points)
        value *= factor
        rel_err += err / factor
    return value, value * rel_err + 4 * np.finfo(float).eps * value * m


def sin_power_integral_closed_form(m: int) -> float:
    """``(pi/2) * (sqrt(pi)/2)^(m-2) / Gamma(m/2)``, evaluated through logs."""
    return math.exp(
        math.log(HALF_PI) + (m - 2) * math.log(math.sqrt(math.pi) / 2) - gammaln(m / 2)
    )


def sin_power_integral_bound(m: int) -> float:
    """Upper bound ``(sqrt(pi e / 2))^m * m / sqrt(m)^m``."""
    return math.sqrt(math.pi * math.e / 2) ** m * m / math.sqrt(m) ** m
