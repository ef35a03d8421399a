"""Smoothing models: deterministic maps from (point, normalized noise) to a
perturbed point, plus the box and ray queries built on them."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .geometry import HALF_PI, AxisBox, polar_angles, to_polar, trig_vector


class Kind(str, enum.Enum):
    RECTANGLE = "rectangle"
    SQUARE = "square"
    ANGLE = "angle"
    ADDITIVE = "additive"


class RegionNotABox(ValueError):
    """Raised for queries that need a box image under the angle model."""


@dataclass(frozen=True)
class PerturbationModel:
    kind: Kind
    delta: float
    v_max: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if not self.delta >= 0:
            raise ValueError(f"delta must be nonnegative, got {self.delta}")
        if self.kind is Kind.ADDITIVE and not self.v_max > 0:
            raise ValueError("additive noise needs v_max > 0")

    @property
    def has_box_image(self) -> bool:
        return self.kind is not Kind.ANGLE

    def noise_dim(self, m: int) -> int:
        return 1 if self.kind is Kind.ANGLE else m

    def widths(self, v: np.ndarray) -> np.ndarray:
        """Per-coordinate spread of the image box (last axis is the item axis)."""
        v = np.asarray(v, dtype=float)
        if self.kind is Kind.RECTANGLE:
            return self.delta * v
        if self.kind is Kind.SQUARE:
            top = np.max(v, axis=-1, keepdims=True) if v.size else v
            return np.broadcast_to(self.delta * top, v.shape).copy()
        if self.kind is Kind.ADDITIVE:
            return np.full(v.shape, self.delta * self.v_max)
        raise RegionNotABox("angle-shift image is an arc, not a box")


def rectangle(delta: float) -> PerturbationModel:
    return PerturbationModel(Kind.RECTANGLE, delta)


def square(delta: float) -> PerturbationModel:
    return PerturbationModel(Kind.SQUARE, delta)


def angle(delta: float) -> PerturbationModel:
    return PerturbationModel(Kind.ANGLE, delta)


def additive(delta: float, v_max: float = 1.0) -> PerturbationModel:
    return PerturbationModel(Kind.ADDITIVE, delta, v_max)


def apply(model: PerturbationModel, v, noise) -> np.ndarray:
    """Perturb ``v`` with normalized noise.

    Noise lies in [0, 1] per coordinate for the box models and is a single
    number in [-1, 1] for the angle model.
    """
    v = np.asarray(v, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if model.kind is Kind.ANGLE:
        return _rotate(model.delta, v, noise)
    if noise.shape != v.shape:
        raise ValueError(f"noise shape {noise.shape} does not match value shape {v.shape}")
    if np.any(noise < 0) or np.any(noise > 1):
        raise ValueError("noise must lie in [0, 1]")
    return v + model.widths(v) * noise


def apply_many(model: PerturbationModel, values: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Row-wise :func:`apply` without per-row validation."""
    values = np.asarray(values, dtype=float)
    if model.kind is Kind.ANGLE:
        radius = np.linalg.norm(values, axis=1)
        theta = polar_angles(values)[:, 0]
        theta = np.clip(theta + model.delta * noise.reshape(-1), 0.0, HALF_PI)
        return radius[:, None] * np.column_stack([np.cos(theta), np.sin(theta)])
    return values + model.widths(values) * noise


def _rotate(delta: float, v: np.ndarray, noise: np.ndarray) -> np.ndarray:
    if v.size != 2:
        raise ValueError("angle shift is defined for two items only")
    eps = float(noise.reshape(-1)[0]) if noise.size else 0.0
    if not -1.0 <= eps <= 1.0:
        raise ValueError("angle noise must lie in [-1, 1]")
    p = to_polar(v)
    if p.radius == 0:
        return v.copy()
    theta = min(max(p.angles[0] + delta * eps, 0.0), HALF_PI)
    return p.radius * trig_vector([theta])


def image_region(model: PerturbationModel, v) -> AxisBox:
    """Box of every point ``v`` can be perturbed to."""
    v = np.asarray(v, dtype=float)
    return AxisBox(v, v + model.widths(v))


def preimage_contains(model: PerturbationModel, v, v_hat, rtol: float = 0.0) -> bool:
    """Whether ``v`` can be perturbed to ``v_hat``."""
    return image_region(model, v).contains(v_hat, rtol=rtol)


def radial_interval(model: PerturbationModel, x, theta) -> tuple[float, float] | None:
    """Radii at which the ray in direction ``theta`` meets the image box of ``x``.

    Slab method: intersect the per-coordinate parameter ranges.  Returns
    ``None`` when the ray misses the box.
    """
    if model.kind not in (Kind.RECTANGLE, Kind.SQUARE):
        raise RegionNotABox("radial interval is defined for rectangle and square shifts")
    x = np.asarray(x, dtype=float)
    if not np.any(x > 0):
        raise ValueError("x must be nonzero")
    box = image_region(model, x)
    d = trig_vector(np.atleast_1d(theta))
    r_lo, r_hi = 0.0, math.inf
    for lo, hi, dj in zip(box.lo, box.hi, d):
        if dj == 0.0:
            if lo > 0.0:
                return None
            continue
        # a near-axis direction overflows to inf, which is the right limit
        with np.errstate(over="ignore"):
            r_lo = max(r_lo, lo / dj)
            r_hi = min(r_hi, hi / dj)
    if r_lo > r_hi:
        return None
    return r_lo, r_hi


def angle_deviation_bound(theta: float, delta: float) -> tuple[float, float]:
    """Range of polar angles reachable from angle ``theta`` under rectangle shift."""
    return max(0.0, theta * (1 - delta)), min(HALF_PI, theta * (1 + delta))
