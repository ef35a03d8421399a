"""Theorem constants and the experiments that check revenue against them."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constructions import (
    gap_sequence,
    lottery_distribution,
    shell_points,
    tailored_menu,
)
from .distributions import (
    DiscreteDistribution,
    SmoothedDistribution,
    atom_bundles,
    atom_support_logs,
    bundle_tail,
    discretize,
    expected_welfare,
)
from .mechanisms import brev_smoothed, menu_ic_verify, optimal_menu_lp
from .perturbation import Kind, PerturbationModel, rectangle

SQRT_PI_E_HALF = math.sqrt(math.pi * math.e / 2)


class UnsupportedBound(ValueError):
    pass


@dataclass(frozen=True)
class BoundSpec:
    kind: Kind
    n: int
    m: int
    delta: float
    constant: float
    tag: str

    def __post_init__(self):
        if not self.constant > 0:
            raise ValueError("bound constant must be positive")


def _kind(model) -> Kind:
    if isinstance(model, PerturbationModel):
        return model.kind
    return Kind(model)


def theorem_constant(model, n: int, m: int, delta: float) -> BoundSpec:
    """Constant ``c`` in ``Rev <= c * BRev`` for the smoothed distribution.

    Natural logarithms throughout.
    """
    kind = _kind(model)
    if not delta > 0:
        raise ValueError("delta must be positive")
    if n < 1 or m < 2:
        raise ValueError("need at least one buyer and two items")
    if kind is Kind.RECTANGLE:
        raise UnsupportedBound("no finite constant under rectangle shift: Rev can be infinite "
                               "while BRev stays bounded")
    if kind is Kind.ANGLE:
        if (n, m) != (1, 2):
            raise UnsupportedBound("angle shift is bounded for one buyer and two items only")
        return BoundSpec(kind, n, m, delta, math.pi / (2 * delta), "angle-1x2")
    if kind is not Kind.SQUARE:
        raise UnsupportedBound(f"no constant for {kind.value} noise")
    trailer = (1 + delta) ** 3 * math.log1p(delta) / delta ** 2
    if m == 2:
        if n == 1:
            return BoundSpec(kind, n, m, delta, math.sqrt(2) * math.pi * trailer, "square-1x2")
        return BoundSpec(kind, n, m, delta, 9 * math.sqrt(2) * trailer, "square-nx2")
    power = (SQRT_PI_E_HALF * (1 + delta) / delta) ** m
    tail = (1 + delta) * math.log1p(delta) * m * math.sqrt(m)
    if n == 1:
        return BoundSpec(kind, n, m, delta, power * tail, "square-1xm")
    return BoundSpec(kind, n, m, delta, 4 * power * tail, "square-nxm")


# ---------------------------------------------------------------- ratios

@dataclass(frozen=True)
class RatioReport:
    kind: Kind
    delta: float
    types: int
    lp_revenue: float
    brev: float
    ratio: float
    constant: float
    passed: bool

    def row(self) -> dict:
        return {"experiment": f"ratio-{self.kind.value}", "delta": self.delta, "types": self.types,
                "lp_revenue": self.lp_revenue, "brev": self.brev, "value": self.ratio,
                "bound": self.constant, "pass": self.passed}


def smoothed_ratio_experiment(base: DiscreteDistribution, model: PerturbationModel, k_discretize: int,
                              rng, solver: str = "highs") -> RatioReport:
    """LP revenue of a ``k``-sample discretization over the exact smoothed BRev.

    The LP value stands in for ``Rev``, so the check is one-sided:
    PASS iff the ratio does not exceed the constant.
    """
    if k_discretize > 400:
        raise ValueError("k_discretize must be at most 400")
    bound = theorem_constant(model, 1, base.m, model.delta)
    smoothed = SmoothedDistribution(base, model)
    sample = discretize(smoothed, k_discretize, rng)
    _, lp = optimal_menu_lp(sample, solver=solver)
    brev = brev_smoothed(smoothed).revenue
    ratio = lp.revenue / brev if brev > 0 else math.inf
    return RatioReport(model.kind, model.delta, sample.size, lp.revenue, brev, ratio,
                       bound.constant, ratio <= bound.constant)


# ------------------------------------------------------------ divergence

@dataclass(frozen=True)
class DivergenceRow:
    shells: int
    points: int
    partial_sum: float
    brev: float
    ic_pass: bool
    ic_worst: float
    ratio: float

    def row(self, delta: float) -> dict:
        return {"experiment": "rect-lb", "delta": delta, "shells": self.shells, "points": self.points,
                "partial_sum": self.partial_sum, "value": self.brev, "bound": 4 * (1 + delta),
                "ic": "PASS" if self.ic_pass else "FAIL", "ratio": self.ratio,
                "pass": self.ic_pass and self.brev <= 4 * (1 + delta)}


def divergence_report(delta: float, checkpoints) -> list[DivergenceRow]:
    """Partial gap sums, smoothed BRev and IC status of the truncated lottery.

    One row per checkpoint (a shell count), in increasing order.
    """
    if not 0 < delta < 0.5:
        raise ValueError("delta must lie in (0, 1/2)")
    checkpoints = sorted(set(int(c) for c in checkpoints))
    model = rectangle(delta)
    seq = shell_points(delta, checkpoints[-1])
    gaps = gap_sequence(seq, model)
    rows = []
    for shells in checkpoints:
        count = int(np.searchsorted(seq.shell_of, shells, side="right"))
        menu = tailored_menu(seq, gaps, truncate=count)
        cert = menu_ic_verify(menu, seq, gaps, model, truncate=count)
        dist = lottery_distribution(seq, gaps, truncate=count)
        brev = brev_smoothed(SmoothedDistribution(dist, model)).revenue
        total = math.fsum(gaps.gaps[:count])
        rows.append(DivergenceRow(shells, count, total, brev, cert.passed, cert.worst,
                                  total / brev if brev > 0 else math.inf))
    return rows


# --------------------------------------------------------- additive noise

@dataclass(frozen=True)
class AdditiveNoiseReport:
    delta: float
    brev: float
    welfare: float
    welfare_bound: float
    worst_tail_ratio: float
    floor_ok: bool
    welfare_ok: bool
    tail_ok: bool

    @property
    def passed(self) -> bool:
        return self.floor_ok and self.welfare_ok and self.tail_ok

    def rows(self, label: str = "additive") -> list[dict]:
        return [
            {"experiment": f"{label}:floor", "delta": self.delta, "value": self.brev,
             "bound": self.delta, "pass": self.floor_ok},
            {"experiment": f"{label}:welfare", "delta": self.delta, "value": self.welfare,
             "bound": self.welfare_bound, "pass": self.welfare_ok},
            {"experiment": f"{label}:tail", "delta": self.delta, "value": self.worst_tail_ratio,
             "bound": 1 + 1e-9, "pass": self.tail_ok},
        ]


def additive_noise_check(smoothed: SmoothedDistribution, grid: int = 100) -> AdditiveNoiseReport:
    """Executable form of the bundling argument under additive noise.

    (a) ``BRev >= delta``; (b) welfare ``<= BRev (1 + ln(2 / BRev))`` when
    ``BRev <= 2``; (c) ``x P(bundle >= x) <= BRev`` on a price grid above
    ``BRev``.  BRev is always that of the smoothed distribution.
    """
    model = smoothed.model
    if model.kind is not Kind.ADDITIVE:
        raise ValueError("additive_noise_check needs the additive model")
    if model.v_max != 1.0:
        raise ValueError("additive_noise_check expects v_max = 1")
    values = smoothed.base.scaled_values()
    if values.size and (values.min() < 0 or values.max() > 1 + 1e-12 or smoothed.m != 2):
        raise ValueError("base support must lie in [0, 1]^2")
    brev = brev_smoothed(smoothed).revenue
    welfare = expected_welfare(smoothed)
    floor_ok = brev >= model.delta
    if brev <= 2:
        welfare_bound = brev * (1 + math.log(2 / brev))
        welfare_ok = welfare <= welfare_bound * (1 + 1e-12)
    else:
        welfare_bound, welfare_ok = math.nan, True
    _, ln_hi = atom_support_logs(atom_bundles(smoothed))
    top = float(np.exp(ln_hi[np.isfinite(ln_hi)].max()))
    worst = 0.0
    for x in np.linspace(brev, max(top, brev), grid):
        if x > 0:
            worst = max(worst, x * bundle_tail(smoothed, float(x)) / brev)
    return AdditiveNoiseReport(model.delta, brev, welfare, welfare_bound, worst,
                               floor_ok, welfare_ok, worst <= 1 + 1e-9)


__all__ = [
    "AdditiveNoiseReport",
    "BoundSpec",
    "DivergenceRow",
    "RatioReport",
    "UnsupportedBound",
    "additive_noise_check",
    "divergence_report",
    "smoothed_ratio_experiment",
    "theorem_constant",
]
