"""Finite-support value distributions, their smoothed versions, exact bundle
tails, sampling and discretization.

Atoms may carry a log scale: atom ``k`` sits at ``exp(ln_scales[k]) * values[k]``
with probability ``exp(ln_probs[k])``.  This keeps constructions whose
magnitudes and probabilities leave the binary64 range exact.  Mass missing
from the atoms sits at the origin.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .geometry import HALF_PI, polar_angles
from .perturbation import Kind, PerturbationModel, apply_many

MASS_TOL = 1e-12
MAX_EXACT_ITEMS = 8
# widths below this fraction of the largest width are replaced by their mean
WIDTH_GUARD = 1e-12


@dataclass(frozen=True)
class Violation:
    """First broken invariant found by :func:`validate`."""

    message: str
    index: int | None = None

    def __str__(self):
        where = f" (index {self.index})" if self.index is not None else ""
        return self.message + where


@dataclass(frozen=True)
class DiscreteDistribution:
    values: np.ndarray
    ln_probs: np.ndarray
    ln_scales: np.ndarray = field(default=None)

    def __post_init__(self):
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        ln_probs = np.asarray(self.ln_probs, dtype=float).reshape(-1)
        if self.ln_scales is None:
            ln_scales = np.zeros(ln_probs.size)
        else:
            ln_scales = np.asarray(self.ln_scales, dtype=float).reshape(-1)
        if values.shape[0] != ln_probs.size or ln_scales.size != ln_probs.size:
            raise ValueError("values, probabilities and scales must align")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "ln_probs", ln_probs)
        object.__setattr__(self, "ln_scales", ln_scales)

    @classmethod
    def from_atoms(cls, values, probs, m: int | None = None) -> "DiscreteDistribution":
        probs = np.asarray(probs, dtype=float).reshape(-1)
        values = np.asarray(values, dtype=float)
        if values.size == 0:
            width = values.shape[1] if values.ndim == 2 and values.shape[1] else 1
            values = np.zeros((0, m or width))
        with np.errstate(divide="ignore"):
            return cls(values, np.log(probs))

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def size(self) -> int:
        return self.values.shape[0]

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.ln_probs)

    @property
    def total_mass(self) -> float:
        return float(np.exp(logsumexp(self.ln_probs))) if self.size else 0.0

    @property
    def residual(self) -> float:
        return max(0.0, 1.0 - self.total_mass)

    def scaled_values(self) -> np.ndarray:
        """Atom locations in linear units (overflows for huge log scales)."""
        with np.errstate(over="ignore"):
            return np.exp(self.ln_scales)[:, None] * self.values

    def with_origin(self) -> "DiscreteDistribution":
        """Same distribution with the residual made an explicit origin atom."""
        rest = self.residual
        if rest <= 0:
            return self
        return DiscreteDistribution(
            np.vstack([self.values, np.zeros((1, self.m))]),
            np.append(self.ln_probs, math.log(rest)),
            np.append(self.ln_scales, 0.0),
        )


@dataclass(frozen=True)
class JointDiscreteDistribution:
    """Correlated profiles of ``n`` buyers over ``m`` items."""

    profiles: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        profiles = np.asarray(self.profiles, dtype=float)
        if profiles.ndim == 2:
            profiles = profiles[:, :, None]
        probs = np.asarray(self.probs, dtype=float).reshape(-1)
        if profiles.ndim != 3 or profiles.shape[0] != probs.size:
            raise ValueError("profiles must be (count, n, m) aligned with probs")
        object.__setattr__(self, "profiles", profiles)
        object.__setattr__(self, "probs", probs)

    @property
    def n(self) -> int:
        return self.profiles.shape[1]

    @property
    def m(self) -> int:
        return self.profiles.shape[2]

    def bundle_values(self) -> np.ndarray:
        """``(count, n)`` grand-bundle value of each buyer in each profile."""
        return self.profiles.sum(axis=2)


@dataclass(frozen=True)
class SmoothedDistribution:
    base: DiscreteDistribution | JointDiscreteDistribution
    model: PerturbationModel

    @property
    def m(self) -> int:
        return self.base.m


def validate(dist) -> Violation | None:
    """Return the first violated invariant, or ``None`` when ``dist`` is sound."""
    if isinstance(dist, SmoothedDistribution):
        problem = validate(dist.base)
        if problem:
            return problem
        model = dist.model
        if model.kind is Kind.ANGLE and dist.base.m != 2:
            return Violation(f"angle shift needs 2 items, got {dist.base.m}")
        if model.kind is Kind.ADDITIVE:
            top = _max_coordinate(dist.base)
            if top > model.v_max * (1 + MASS_TOL):
                return Violation(f"support exceeds v_max={model.v_max}: max coordinate {top}")
        return None
    if isinstance(dist, JointDiscreteDistribution):
        bad = np.flatnonzero(~np.isfinite(dist.profiles).all(axis=(1, 2))
                             | (dist.profiles < 0).any(axis=(1, 2)))
        if bad.size:
            return Violation("negative or non-finite value", int(bad[0]))
        bad = np.flatnonzero(~(dist.probs >= 0))
        if bad.size:
            return Violation("negative probability", int(bad[0]))
        total = float(dist.probs.sum())
        if abs(total - 1) > MASS_TOL:
            return Violation(f"mass {total:.12g} != 1")
        return None
    if not isinstance(dist, DiscreteDistribution):
        return Violation(f"not a distribution: {type(dist).__name__}")
    bad = np.flatnonzero(~np.isfinite(dist.values).all(axis=1) | (dist.values < 0).any(axis=1))
    if bad.size:
        return Violation("negative or non-finite value", int(bad[0]))
    bad = np.flatnonzero(np.isnan(dist.ln_probs) | (dist.ln_probs > MASS_TOL))
    if bad.size:
        return Violation("probability outside [0, 1]", int(bad[0]))
    total = dist.total_mass
    if total > 1 + MASS_TOL:
        return Violation(f"mass {total:.12g} > 1")
    return None


def ensure_valid(dist) -> None:
    problem = validate(dist)
    if problem:
        raise ValueError(str(problem))


def _max_coordinate(dist) -> float:
    if isinstance(dist, JointDiscreteDistribution):
        return float(dist.profiles.max(initial=0.0))
    if dist.size == 0:
        return 0.0
    per_atom = dist.values.max(axis=1)
    with np.errstate(divide="ignore"):
        logs = np.log(per_atom) + dist.ln_scales
    return float(np.exp(np.max(logs)))


# ---------------------------------------------------------------- sampling

def spawn_streams(seed: int, count: int) -> list[np.random.Generator]:
    """Independent generators derived from one seed.

    Stream ``i`` is always the ``i``-th child of ``SeedSequence(seed)``, so a
    budget split over ``count`` streams does not depend on who runs them.
    """
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def _draw_noise(model: PerturbationModel, values: np.ndarray, rng) -> np.ndarray:
    count, m = values.shape
    if model.kind is not Kind.ANGLE:
        return rng.random((count, m))
    # uniform on the clipped angle window, expressed as noise in [-1, 1]
    theta = polar_angles(values)[:, 0]
    lo = np.maximum(theta - model.delta, 0.0)
    hi = np.minimum(theta + model.delta, HALF_PI)
    target = lo + (hi - lo) * rng.random(count)
    if model.delta == 0:
        return np.zeros(count)
    return np.clip((target - theta) / model.delta, -1.0, 1.0)


def sample(smoothed: SmoothedDistribution, rng: np.random.Generator, size: int | None = None):
    """Draw from the two-stage process: pick an atom, then perturb it."""
    count = 1 if size is None else size
    base = smoothed.base
    if isinstance(base, JointDiscreteDistribution):
        idx = rng.choice(base.probs.size, size=count, p=base.probs / base.probs.sum())
        chosen = base.profiles[idx]
        flat = chosen.reshape(-1, base.m)
        out = apply_many(smoothed.model, flat, _draw_noise(smoothed.model, flat, rng))
        out = out.reshape(chosen.shape)
        return out[0] if size is None else out
    probs = base.probs
    weights = np.append(probs, max(0.0, 1.0 - probs.sum()))
    idx = rng.choice(weights.size, size=count, p=weights / weights.sum())
    values = np.zeros((count, base.m))
    hit = idx < base.size
    with np.errstate(over="ignore"):
        values[hit] = np.exp(base.ln_scales[idx[hit]])[:, None] * base.values[idx[hit]]
    out = apply_many(smoothed.model, values, _draw_noise(smoothed.model, values, rng))
    return out[0] if size is None else out


def discretize(smoothed: SmoothedDistribution, k: int, rng) -> DiscreteDistribution:
    """Empirical distribution of ``k`` draws; identical draws are merged."""
    if k < 1:
        raise ValueError("k must be positive")
    draws = sample(smoothed, rng, size=k)
    if draws.ndim == 3:
        raise ValueError("discretize expects a single-buyer distribution")
    atoms, counts = np.unique(draws, axis=0, return_counts=True)
    return DiscreteDistribution.from_atoms(atoms, counts / k)


# ------------------------------------------------------------ uniform sums

def uniform_sum_cdf(x, widths) -> np.ndarray:
    """``P(sum_j widths_j U_j <= x)`` for independent ``U_j ~ U[0, 1]``.

    Piecewise polynomial with breakpoints at the subset sums of ``widths``.
    One and two effective widths use cancellation-free closed forms; more
    widths use inclusion-exclusion over subsets, in exact rational
    arithmetic when the widths are badly scaled.
    """
    x = np.asarray(x, dtype=float)
    w, shift = _effective_widths(widths)
    x = x - shift
    total = float(w.sum())
    if w.size == 0:
        return (x >= 0).astype(float)
    if w.size == 1:
        return np.clip(x / w[0], 0.0, 1.0)
    if w.size == 2:
        return _two_width_cdf(x, w[0], w[1])
    out = np.empty_like(x, dtype=float)
    flat_x, flat_out = x.reshape(-1), out.reshape(-1)
    exact = w.min() / w.max() < 1e-3
    for i, xi in enumerate(flat_x):
        if xi <= 0:
            flat_out[i] = 0.0
        elif xi >= total:
            flat_out[i] = 1.0
        elif xi > total / 2:
            # reflect to keep the alternating sum short and well-conditioned
            flat_out[i] = 1.0 - _inclusion_exclusion(total - xi, w, exact)
        else:
            flat_out[i] = _inclusion_exclusion(xi, w, exact)
    return np.clip(out, 0.0, 1.0)


def _effective_widths(widths) -> tuple[np.ndarray, float]:
    w = np.asarray(widths, dtype=float).reshape(-1)
    w = w[w > 0]
    if w.size == 0:
        return w, 0.0
    tiny = w <= WIDTH_GUARD * w.max()
    shift = 0.5 * float(w[tiny].sum())
    return np.sort(w[~tiny])[::-1], shift


def _two_width_cdf(x: np.ndarray, big: float, small: float) -> np.ndarray:
    lower = x * x / (2 * big * small)
    middle = (x - small / 2) / big
    upper = 1.0 - (big + small - x) ** 2 / (2 * big * small)
    out = np.where(x <= small, lower, np.where(x <= big, middle, upper))
    out = np.where(x <= 0, 0.0, np.where(x >= big + small, 1.0, out))
    return out


def _inclusion_exclusion(x: float, w: np.ndarray, exact: bool) -> float:
    k = w.size
    if exact:
        xf = Fraction(x)
        wf = [Fraction(float(v)) for v in w]
        total = Fraction(0)
        for subset in itertools.product((0, 1), repeat=k):
            s = sum((wi for wi, b in zip(wf, subset) if b), Fraction(0))
            if s < xf:
                term = (xf - s) ** k
                total += -term if sum(subset) % 2 else term
        denom = math.factorial(k)
        for wi in wf:
            denom *= wi
        return float(total / denom)
    total = 0.0
    for subset in itertools.product((0, 1), repeat=k):
        s = float(np.dot(w, subset))
        if s < x:
            term = (x - s) ** k
            total += -term if sum(subset) % 2 else term
    return total / (math.factorial(k) * float(np.prod(w)))


def uniform_sum_breakpoints(widths) -> np.ndarray:
    """Sorted distinct subset sums where the CDF changes polynomial piece."""
    w, shift = _effective_widths(widths)
    sums = {0.0}
    for wi in w:
        sums |= {s + wi for s in sums}
    return np.array(sorted(sums)) + shift


def uniform_sum_piece(x_mid: float, widths) -> np.polynomial.Polynomial:
    """CDF polynomial (in ``x``) on the piece containing ``x_mid``."""
    P = np.polynomial.Polynomial
    w, shift = _effective_widths(widths)
    total = float(w.sum())
    xm = x_mid - shift
    X = P([-shift, 1.0])
    if w.size == 0:
        return P([float(xm >= 0)])
    if xm <= 0:
        return P([0.0])
    if xm >= total:
        return P([1.0])
    if w.size == 1:
        return X / w[0]
    if w.size == 2:
        big, small = w
        if xm <= small:
            return X ** 2 / (2 * big * small)
        if xm <= big:
            return (X - small / 2) / big
        return 1.0 - (big + small - X) ** 2 / (2 * big * small)
    k = w.size
    poly = P([0.0])
    for subset in itertools.product((0, 1), repeat=k):
        s = float(np.dot(w, subset))
        if s < xm:
            term = (X - s) ** k
            poly = poly - term if sum(subset) % 2 else poly + term
    return poly / (math.factorial(k) * float(np.prod(w)))


# ------------------------------------------------------------ bundle tails

@dataclass(frozen=True)
class AtomBundles:
    """Per-atom description of the smoothed grand-bundle value.

    Bundle value of atom ``k`` is ``exp(ln_scale[k]) * (offset[k] + sum_j
    widths[k, j] U_j)`` for the box models.  For the angle model it is
    ``exp(ln_scale[k]) * radius[k] * (cos T + sin T)`` with ``T`` uniform on
    ``[theta_lo[k], theta_hi[k]]``.
    """

    kind: Kind
    ln_probs: np.ndarray
    ln_scales: np.ndarray
    offset: np.ndarray
    widths: np.ndarray
    radius: np.ndarray
    theta_lo: np.ndarray
    theta_hi: np.ndarray


def atom_bundles(smoothed: SmoothedDistribution, include_origin: bool = True) -> AtomBundles:
    base = smoothed.base
    if not isinstance(base, DiscreteDistribution):
        raise TypeError("bundle tails need a single-buyer distribution")
    model = smoothed.model
    # an unperturbed origin only matters at prices <= 0, so it can be dropped
    if include_origin and model.kind is Kind.ADDITIVE:
        base = base.with_origin()
    values = base.values
    count = base.size
    empty = np.zeros(count)
    if model.kind is Kind.ANGLE:
        radius = np.linalg.norm(values, axis=1)
        theta = polar_angles(values)[:, 0] if count else empty
        lo = np.maximum(theta - model.delta, 0.0)
        hi = np.minimum(theta + model.delta, HALF_PI)
        return AtomBundles(model.kind, base.ln_probs, base.ln_scales, empty,
                           np.zeros((count, 0)), radius, lo, hi)
    if model.kind is Kind.ADDITIVE:
        widths = model.delta * model.v_max * np.exp(-base.ln_scales)[:, None] * np.ones_like(values)
    else:
        widths = model.widths(values)
    return AtomBundles(model.kind, base.ln_probs, base.ln_scales, values.sum(axis=1),
                       widths, empty, empty, empty)


def _angle_window_tail(level: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """P(cos T + sin T >= level) for T uniform on [lo, hi] (degenerate allowed)."""
    level = np.asarray(level, dtype=float)
    ratio = np.clip(level / math.sqrt(2), -1.0, 1.0)
    beta = np.arccos(ratio)
    a = np.maximum(lo, math.pi / 4 - beta)
    b = np.minimum(hi, math.pi / 4 + beta)
    span = hi - lo
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(span > 0, np.clip(b - a, 0.0, None) / np.where(span > 0, span, 1.0),
                        (np.cos(lo) + np.sin(lo) >= level).astype(float))
    frac = np.where(level <= 0, 1.0, frac)
    frac = np.where(level > math.sqrt(2), 0.0, frac)
    return np.clip(frac, 0.0, 1.0)


def atom_support_logs(bundles: AtomBundles) -> tuple[np.ndarray, np.ndarray]:
    """Log of the lowest and highest bundle value of every atom."""
    with np.errstate(divide="ignore"):
        if bundles.kind is Kind.ANGLE:
            lo, hi = bundles.theta_lo, bundles.theta_hi
            f_lo, f_hi = np.cos(lo) + np.sin(lo), np.cos(hi) + np.sin(hi)
            inside = (lo <= math.pi / 4) & (math.pi / 4 <= hi)
            top = np.where(inside, math.sqrt(2), np.maximum(f_lo, f_hi))
            ln_r = np.log(bundles.radius) + bundles.ln_scales
            return ln_r + np.log(np.minimum(f_lo, f_hi)), ln_r + np.log(top)
        low = bundles.offset.copy()
        high = bundles.offset.copy()
        for i, w in enumerate(bundles.widths):
            eff, shift = _effective_widths(w)
            low[i] += shift
            high[i] += shift + eff.sum()
        return np.log(low) + bundles.ln_scales, np.log(high) + bundles.ln_scales


def atom_tails(bundles: AtomBundles, ln_price: float, idx=None, support=None) -> np.ndarray:
    """``P(bundle value of atom k >= exp(ln_price))`` for the selected atoms.

    Support endpoints are compared in log space, so a price equal to an
    atom's lowest value always sells to it.
    """
    sel = np.arange(bundles.ln_probs.size) if idx is None else np.asarray(idx)
    ln_lo, ln_hi = atom_support_logs(bundles) if support is None else support
    ln_lo, ln_hi = ln_lo[sel], ln_hi[sel]
    out = np.where(ln_price <= ln_lo, 1.0, 0.0)
    inner = np.flatnonzero((ln_price > ln_lo) & (ln_price < ln_hi))
    if inner.size == 0:
        return out
    k = sel[inner]
    level = np.exp(ln_price - bundles.ln_scales[k])
    if bundles.kind is Kind.ANGLE:
        out[inner] = _angle_window_tail(level / bundles.radius[k],
                                        bundles.theta_lo[k], bundles.theta_hi[k])
        return out
    for j, atom, x in zip(inner, k, level):
        # continuous inside the support, so P(sum >= x) = 1 - P(sum <= x)
        out[j] = 1.0 - float(uniform_sum_cdf(x - bundles.offset[atom], bundles.widths[atom]))
    return out


def bundle_tail(smoothed: SmoothedDistribution, p: float) -> float:
    """Exact ``P(sum_j v_hat_j >= p)``."""
    if smoothed.m > MAX_EXACT_ITEMS and smoothed.model.kind is not Kind.ANGLE:
        raise NotImplementedError("exact tails support at most 8 items; use bundle_tail_mc")
    if p <= 0:
        return 1.0
    bundles = atom_bundles(smoothed)
    if bundles.ln_probs.size == 0:
        return 0.0
    tails = atom_tails(bundles, math.log(p))
    with np.errstate(divide="ignore"):
        terms = bundles.ln_probs + np.log(tails)
    return float(min(1.0, np.exp(logsumexp(terms)))) if np.isfinite(terms).any() else 0.0


def base_bundle_tail(dist: DiscreteDistribution, p: float) -> float:
    """``P(sum_j v_j >= p)`` for the unperturbed distribution."""
    if p <= 0:
        return 1.0
    if dist.size == 0:
        return 0.0
    with np.errstate(divide="ignore"):
        ln_sums = np.log(dist.values.sum(axis=1)) + dist.ln_scales
    hit = ln_sums >= math.log(p)
    return float(np.exp(logsumexp(dist.ln_probs[hit]))) if hit.any() else 0.0


def bundle_tail_mc(smoothed: SmoothedDistribution, p: float, samples: int, rng) -> tuple[float, float]:
    """Monte Carlo estimate of the bundle tail and its standard error."""
    if samples < 1000:
        raise ValueError("use at least 1000 samples")
    if p <= 0:
        return 1.0, 0.0
    draws = sample(smoothed, rng, size=samples)
    hits = draws.sum(axis=-1) >= p
    est = float(hits.mean())
    return est, math.sqrt(max(est * (1 - est), 0.0) / samples)


def expected_welfare(dist) -> float:
    """Expected grand-bundle value (summed over buyers for joint inputs)."""
    if isinstance(dist, JointDiscreteDistribution):
        return float(dist.probs @ dist.bundle_values().sum(axis=1))
    if isinstance(dist, DiscreteDistribution):
        if dist.size == 0:
            return 0.0
        with np.errstate(divide="ignore"):
            logs = dist.ln_probs + dist.ln_scales + np.log(dist.values.sum(axis=1))
        return float(np.exp(logsumexp(logs)))
    base, model = dist.base, dist.model
    if isinstance(base, JointDiscreteDistribution):
        flat = base.profiles.reshape(-1, base.m)
        unit = DiscreteDistribution.from_atoms(flat, np.full(len(flat), 1.0 / len(flat)))
        bundles = atom_bundles(SmoothedDistribution(unit, model), include_origin=False)
        means = _bundle_means(bundles).reshape(base.profiles.shape[:2])
        return float(base.probs @ means.sum(axis=1))
    bundles = atom_bundles(dist)
    if bundles.ln_probs.size == 0:
        return 0.0
    with np.errstate(divide="ignore"):
        logs = bundles.ln_probs + bundles.ln_scales + np.log(_bundle_means(bundles))
    return float(np.exp(logsumexp(logs)))


def _bundle_means(bundles: AtomBundles) -> np.ndarray:
    """Mean smoothed bundle value of each atom, before its log scale."""
    if bundles.kind is not Kind.ANGLE:
        return bundles.offset + 0.5 * bundles.widths.sum(axis=1)
    lo, hi = bundles.theta_lo, bundles.theta_hi
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    avg = np.where(span > 0,
                   (np.sin(hi) - np.sin(lo) - np.cos(hi) + np.cos(lo)) / safe,
                   np.cos(lo) + np.sin(lo))
    return bundles.radius * avg


# -------------------------------------------------------------------- JSON

def to_json(dist) -> dict:
    if isinstance(dist, JointDiscreteDistribution):
        return {"n": dist.n, "m": dist.m,
                "profiles": [{"v": prof.tolist(), "p": float(p)}
                             for prof, p in zip(dist.profiles, dist.probs)]}
    atoms = []
    for v, lp, ls in zip(dist.values, dist.ln_probs, dist.ln_scales):
        atom = {"v": v.tolist(), "p": float(math.exp(lp))}
        if ls != 0.0:
            atom["ln_scale"] = float(ls)
        if atom["p"] == 0.0 or lp < -700:
            atom["ln_p"] = float(lp)
        atoms.append(atom)
    return {"m": dist.m, "atoms": atoms}


def from_json(obj: dict):
    """Build and validate a distribution from its JSON form."""
    if "profiles" in obj:
        n, m = int(obj["n"]), int(obj["m"])
        profiles = np.array([np.asarray(p["v"], dtype=float).reshape(n, m) for p in obj["profiles"]])
        dist = JointDiscreteDistribution(profiles.reshape(-1, n, m), [p["p"] for p in obj["profiles"]])
    else:
        m = int(obj["m"])
        atoms = obj["atoms"]
        values = np.array([a["v"] for a in atoms], dtype=float).reshape(-1, m)
        with np.errstate(divide="ignore"):
            ln_probs = [a["ln_p"] if "ln_p" in a else math.log(a["p"]) if a["p"] > 0 else -math.inf
                        for a in atoms]
        ln_scales = [a.get("ln_scale", 0.0) for a in atoms]
        dist = DiscreteDistribution(values, ln_probs, ln_scales)
    problem = validate(dist)
    if problem:
        raise ValueError(f"invalid distribution: {problem}")
    return dist


def load(path: str | Path):
    return from_json(json.loads(Path(path).read_text()))


def dump(dist, path: str | Path) -> None:
    Path(path).write_text(json.dumps(to_json(dist), indent=1) + "\n")
