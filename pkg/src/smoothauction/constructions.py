"""Adversarial instances: shell point sequences, smoothed gaps, lottery
distributions with their tailored menus, the hn67 packing, the subset
construction and the scaled additive-noise instance."""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, zeta

from .distributions import DiscreteDistribution, SmoothedDistribution
from .geometry import HALF_PI, _cos, box_min_dots
from .mechanisms import Menu
from .perturbation import Kind, PerturbationModel, additive, rectangle

SUM_CUTOFF = 10 ** 8


class LogScaled:
    """Positive number stored as its natural log.

    Products, quotients and comparisons stay in log space, so magnitudes
    like ``4**i / prod(gaps)`` never overflow.
    """

    __slots__ = ("ln_value",)

    def __init__(self, ln_value: float):
        self.ln_value = float(ln_value)

    @classmethod
    def of(cls, x: float) -> "LogScaled":
        if not x > 0:
            raise ValueError(f"LogScaled needs a positive value, got {x}")
        return cls(math.log(x))

    def __mul__(self, other):
        other = other if isinstance(other, LogScaled) else LogScaled.of(other)
        return LogScaled(self.ln_value + other.ln_value)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = other if isinstance(other, LogScaled) else LogScaled.of(other)
        return LogScaled(self.ln_value - other.ln_value)

    def __add__(self, other):
        other = other if isinstance(other, LogScaled) else LogScaled.of(other)
        hi, lo = max(self.ln_value, other.ln_value), min(self.ln_value, other.ln_value)
        return LogScaled(hi + math.log1p(math.exp(lo - hi)))

    __radd__ = __add__

    def _cmp_key(self, other):
        return other.ln_value if isinstance(other, LogScaled) else (
            math.log(other) if other > 0 else -math.inf)

    def __lt__(self, other):
        return self.ln_value < self._cmp_key(other)

    def __le__(self, other):
        return self.ln_value <= self._cmp_key(other)

    def __gt__(self, other):
        return self.ln_value > self._cmp_key(other)

    def __ge__(self, other):
        return self.ln_value >= self._cmp_key(other)

    def __eq__(self, other):
        if not isinstance(other, (LogScaled, int, float)):
            return NotImplemented
        return self.ln_value == self._cmp_key(other)

    def __hash__(self):
        return hash(self.ln_value)

    def __float__(self):
        if self.ln_value > 709.0:
            raise OverflowError(f"exp({self.ln_value}) exceeds binary64")
        return math.exp(self.ln_value)

    def __repr__(self):
        return f"LogScaled(ln={self.ln_value:.6g})"


# ------------------------------------------------------------ shell points

@functools.lru_cache(maxsize=None)
def series_bracket(cutoff: int = SUM_CUTOFF) -> tuple[float, float]:
    """Bounds on ``sum_{k>=2} 1/(k ln^2 k)``.

    The partial sum up to ``cutoff`` is a lower bound; adding the integral
    tail ``1/ln(cutoff)`` gives an upper bound.
    """
    chunk = 10 ** 7
    parts = []
    for start in range(2, cutoff + 1, chunk):
        k = np.arange(start, min(start + chunk, cutoff + 1), dtype=float)
        lk = np.log(k)
        parts.append(float(np.sum(1.0 / (k * lk * lk))))
    partial = math.fsum(parts)
    return partial, partial + 1.0 / math.log(cutoff)


def shell_weight(n) -> np.ndarray:
    """``1 / (N ln^2 N)``."""
    n = np.asarray(n, dtype=float)
    return 1.0 / (n * np.log(n) ** 2)


@dataclass(frozen=True)
class PointSequence:
    points: np.ndarray
    shell_of: np.ndarray
    angles: np.ndarray
    shell_radii: np.ndarray
    first_shell: int = 2
    delta: float = 0.0

    def __len__(self):
        return self.points.shape[0]

    def radius_of_shell(self, shell: int) -> float:
        return float(self.shell_radii[shell - self.first_shell])

    def truncated(self, count: int) -> "PointSequence":
        last = int(self.shell_of[count - 1]) if count else self.first_shell
        return PointSequence(self.points[:count], self.shell_of[:count], self.angles[:count],
                             self.shell_radii[: last - self.first_shell + 1],
                             self.first_shell, self.delta)


def shell_points(delta: float, max_shell: int, cutoff: int = SUM_CUTOFF) -> PointSequence:
    """Points on shells ``N = 2..max_shell`` with geometrically shrinking angles.

    Shell ``N`` has radius ``sum_{k=2}^N c_k / alpha`` where ``c_k = 1/(k ln^2 k)``
    and ``alpha`` is the upper end of the series bracket, so every radius is
    at most 1.  Its angles are ``pi/2 (1 - 3 delta)^(k-1)`` for as long as they
    stay at or above ``sqrt(c_N)``, listed from the largest down.
    """
    if not 0 < delta < 0.5:
        raise ValueError("shell construction needs 0 < delta < 1/2")
    if max_shell < 2:
        raise ValueError("max_shell must be at least 2")
    _, alpha_high = series_bracket(cutoff)
    shells = np.arange(2, max_shell + 1)
    weights = shell_weight(shells)
    radii = np.cumsum(weights) / alpha_high
    floors = np.sqrt(weights)

    ratio = 1.0 - 3.0 * delta
    ladder = [HALF_PI]
    while ratio > 0:
        nxt = HALF_PI * ratio ** len(ladder)
        if nxt < floors[-1]:
            break
        ladder.append(nxt)
    ladder = np.array(ladder)
    counts = np.searchsorted(-ladder, -floors, side="right")

    shell_of = np.repeat(shells, counts)
    angles = np.concatenate([ladder[:c] for c in counts])
    radius = np.repeat(radii, counts)
    points = radius[:, None] * np.column_stack([_cos(angles), np.sin(angles)])
    return PointSequence(points, shell_of, angles, radii, 2, delta)


def shell_count_estimate(delta: float, shell: int) -> float:
    """Closed-form point count of a shell: ``ln(1/c_N) / (-2 ln(1-3 delta)) + 1``."""
    return math.log(1.0 / float(shell_weight(shell))) / (-2.0 * math.log(1 - 3 * delta)) + 1.0


# ------------------------------------------------------------------- gaps

class InvalidSequence(ValueError):
    """A gap came out nonpositive, so no menu can separate the types."""

    def __init__(self, i: int, j: int, value: float):
        super().__init__(f"gap of point {i} against point {j} is {value:.3e} <= 0")
        self.i, self.j, self.value = i, j, value


@dataclass(frozen=True)
class GapSequence:
    gaps: np.ndarray
    partner: np.ndarray
    model: PerturbationModel

    def __len__(self):
        return self.gaps.size


def _corners(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    pick = np.array(list(itertools.product((0, 1), repeat=lo.size)), dtype=bool)
    return np.where(pick, hi, lo)


def gap_sequence(seq, model: PerturbationModel) -> GapSequence:
    """Exact smoothed gaps against every earlier point and the origin.

    ``gap_i = min_{j<i} min_{x in box_i} x . (x_i - x_j)`` with ``x_0 = 0``.
    The inner minimum is concave in ``x``, so it is attained at a corner of
    the box.  Corners are nonnegative, hence a point dominated coordinatewise
    by a later point can never be the maximiser of ``x . x_j``; only the
    running Pareto front of earlier points is scanned.
    """
    if not model.has_box_image:
        raise ValueError("gaps need a model whose image is a box")
    points = seq.points if hasattr(seq, "points") else np.asarray(seq, dtype=float)
    count, m = points.shape
    gaps = np.empty(count)
    partner = np.empty(count, dtype=int)
    front = np.empty((0, m))
    front_idx = np.empty(0, dtype=int)
    for i in range(count):
        x = points[i]
        corners = _corners(x, x + model.widths(x))
        if front_idx.size == 0:
            vals = corners @ x
            g, j = float(vals.min()), -1
        else:
            diffs = corners @ (x - front).T
            flat = int(np.argmin(diffs))
            g, j = float(diffs.flat[flat]), int(front_idx[flat % front_idx.size])
        if not g > 0:
            raise InvalidSequence(i, j, g)
        gaps[i], partner[i] = g, j
        keep = ~np.all(front <= x, axis=1)
        front, front_idx = front[keep], front_idx[keep]
        if not np.any(np.all(front >= x, axis=1)):
            front = np.vstack([front, x])
            front_idx = np.append(front_idx, i)
    return GapSequence(gaps, partner, model)


def pairwise_smoothed_dot(points: np.ndarray, model: PerturbationModel, i: int, j) -> np.ndarray:
    """``min_{x in box_i} x . (x_i - x_j)`` for one ``i`` and any ``j`` (index or array)."""
    x = points[i]
    lo, hi = x, x + model.widths(x)
    return box_min_dots(lo, hi, x - points[np.atleast_1d(j)])


def same_shell_check(seq: PointSequence, model: PerturbationModel, up_to_shell: int):
    """Compare every same-shell pair against ``(2/pi^2) l_N^2 delta^2 theta_i^2``.

    Pairs are ``(i, j)`` with ``j`` listed earlier on the shell.  Returns
    ``(pairs_checked, worst_ratio)`` where the ratio is exact dot over bound;
    the claim holds iff ``worst_ratio >= 1``.
    """
    delta = model.delta
    pairs, worst = 0, math.inf
    mask = seq.shell_of <= up_to_shell
    shells = seq.shell_of[mask]
    starts = np.flatnonzero(np.r_[True, shells[1:] != shells[:-1]])
    ends = np.r_[starts[1:], shells.size]
    for a, b in zip(starts, ends):
        radius = seq.radius_of_shell(int(shells[a]))
        for i in range(a + 1, b):
            dots = pairwise_smoothed_dot(seq.points, model, i, np.arange(a, i))
            bound = (2 / math.pi ** 2) * radius ** 2 * delta ** 2 * seq.angles[i] ** 2
            worst = min(worst, float(dots.min() / bound))
            pairs += i - a
    return pairs, worst


def partial_sums_by_shell(seq: PointSequence, gaps: GapSequence) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative gap sum at the end of each shell: ``(shells, S(shell))``."""
    totals = np.cumsum(gaps.gaps)
    ends = np.flatnonzero(np.r_[seq.shell_of[1:] != seq.shell_of[:-1], True])
    return seq.shell_of[ends], totals[ends]


# ----------------------------------------------------- lottery distribution

def log_multipliers(gaps: np.ndarray, truncate: int, base: float = 4.0,
                    include_own: bool = False) -> np.ndarray:
    """``ln M_i`` with ``M_i = base^i / prod gap_j``.

    The product runs over ``j < i`` by default and over ``j <= i`` when
    ``include_own`` is set.  Indices are 1-based in the formula.
    """
    gaps = np.asarray(gaps, dtype=float)[:truncate]
    i = np.arange(1, gaps.size + 1)
    ln_gaps = np.cumsum(np.log(gaps))
    if not include_own:
        ln_gaps = np.r_[0.0, ln_gaps[:-1]] if gaps.size else ln_gaps
    return i * math.log(base) - ln_gaps


def multipliers(gaps: np.ndarray, truncate: int, **kw) -> list[LogScaled]:
    return [LogScaled(v) for v in log_multipliers(gaps, truncate, **kw)]


def lottery_distribution(seq, gaps, truncate: int | None = None, base: float = 4.0,
                         include_own: bool = False) -> DiscreteDistribution:
    """Atoms ``M_i x_i`` with probability ``1/M_i``; the rest of the mass at the origin."""
    points = seq.points if hasattr(seq, "points") else np.asarray(seq, dtype=float)
    g = gaps.gaps if isinstance(gaps, GapSequence) else np.asarray(gaps, dtype=float)
    truncate = len(g) if truncate is None else truncate
    if truncate > min(len(g), len(points)):
        raise ValueError("truncate exceeds the sequence length")
    if np.any(g[:truncate] <= 0):
        raise ValueError("all gaps must be positive")
    ln_m = log_multipliers(g, truncate, base, include_own)
    if truncate and logsumexp(-ln_m) > 0:
        raise ValueError("probabilities 1/M_i sum above 1")
    return DiscreteDistribution(points[:truncate], -ln_m, ln_m)


def tailored_menu(seq, gaps, truncate: int | None = None, base: float = 4.0,
                  include_own: bool = False) -> Menu:
    """Entry ``i`` sells lottery ``x_i`` for ``M_i gap_i``."""
    points = seq.points if hasattr(seq, "points") else np.asarray(seq, dtype=float)
    g = gaps.gaps if isinstance(gaps, GapSequence) else np.asarray(gaps, dtype=float)
    truncate = len(g) if truncate is None else truncate
    alloc = points[:truncate]
    if np.any(alloc > 1.0):
        raise ValueError("lottery allocation has a coordinate above 1")
    ln_m = log_multipliers(g, truncate, base, include_own)
    return Menu(alloc, ln_m + np.log(g[:truncate]))


def menu_revenue_identity(menu: Menu, dist: DiscreteDistribution, gaps) -> tuple[float, float]:
    """``(sum price_i prob_i, sum gap_i)`` over the menu entries.

    Entry ``i`` is assumed to be bought by atom ``i``; the two sides agree
    because each price is its multiplier times its gap.
    """
    g = gaps.gaps if hasattr(gaps, "gaps") else np.asarray(gaps, dtype=float)
    terms = menu.ln_prices + dist.ln_probs[: menu.size]
    lhs = float(np.exp(logsumexp(terms))) if menu.size else 0.0
    return lhs, math.fsum(g[: menu.size])


# ---------------------------------------------------------------- hn67

@dataclass(frozen=True)
class PackingReport:
    sequence: PointSequence
    gaps: np.ndarray
    constant: float


def hn67_points(count: int) -> PackingReport:
    """Shell packing whose plain gaps decay like ``k^(-6/7)``.

    Shell ``N`` carries ``ceil(N^(3/4))`` points at equally spaced angles on
    ``[0, pi/2]`` (endpoints included; a lone point sits at ``pi/4``), with
    radius ``sum_{l<=N} l^(-3/2) / zeta(3/2)``.  Gaps are
    ``q_k . q_k - max_{j<k} q_j . q_k``; the reported constant is
    ``min_k gap_k k^(6/7)``.
    """
    if count < 1:
        raise ValueError("count must be positive")
    norm = float(zeta(1.5))
    pts, shell_of, angles, radii = [], [], [], []
    shell, partial = 0, 0.0
    while len(pts) < count:
        shell += 1
        partial += shell ** -1.5
        radius = partial / norm
        radii.append(radius)
        k = math.ceil(shell ** 0.75 - 1e-12)
        thetas = [math.pi / 4] if k == 1 else list(np.linspace(HALF_PI, 0.0, k))
        for t in thetas[: count - len(pts)]:
            pts.append(radius * np.array([float(_cos(t)), math.sin(t)]))
            shell_of.append(shell)
            angles.append(t)
    seq = PointSequence(np.array(pts), np.array(shell_of), np.array(angles), np.array(radii), 1, 0.0)
    gaps = gap_sequence(seq, rectangle(0.0)).gaps
    ks = np.arange(1, count + 1)
    return PackingReport(seq, gaps, float(np.min(gaps * ks ** (6 / 7))))


# -------------------------------------------------------------- subsets

def subset_construction(m: int, j_max: int, delta: float | None = None):
    """Types that each want one half-size subset, priced so each prefers its own.

    Type ``j`` values every item of ``S_j`` at ``2 m^(2j)`` and has
    probability ``m^(-2j)/C`` with ``C = sum_{j<=j_max} m^(-2j)``.  Entry ``j``
    sells ``S_j`` for ``m^(2j)``.  Returns ``(distribution, menu)``.
    """
    if m % 2 or not 4 <= m <= 12:
        raise ValueError("m must be even and in [4, 12]")
    subsets = list(itertools.combinations(range(m), m // 2))
    if not 1 <= j_max <= len(subsets):
        raise ValueError(f"j_max must be in [1, {len(subsets)}]")
    ind = np.zeros((j_max, m))
    for row, s in enumerate(subsets[:j_max]):
        ind[row, list(s)] = 1.0
    j = np.arange(1, j_max + 1)
    ln_level = 2 * j * math.log(m)
    ln_c = float(logsumexp(-ln_level))
    dist = DiscreteDistribution(2.0 * ind, -ln_level - ln_c, ln_level)
    return dist, Menu(ind, ln_level)


def subset_normalizer(m: int, j_max: int) -> LogScaled:
    j = np.arange(1, j_max + 1)
    return LogScaled(float(logsumexp(-2 * j * math.log(m))))


# ------------------------------------------------------ additive instance

def additive_default_size(delta: float) -> int:
    return max(1, math.ceil(math.log(1.0 / delta)))


def additive_scaled_distribution(n: int, delta: float, v_max: float = 1.0) -> SmoothedDistribution:
    """hn67 lottery over ``n`` points, shrunk into ``[0, v_max]^2``, with additive noise.

    ``M_k = 4^k / prod_{j<=k} gap_j``; atoms ``M_k q_k`` are divided by
    ``max(4^(n+1), largest coordinate)`` so the support fits the box even
    when the gaps multiply to less than 1/2.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if not 0 < delta < 0.25:
        raise ValueError("delta must lie in (0, 1/4)")
    packing = hn67_points(n)
    ln_m = log_multipliers(packing.gaps, n, 4.0, include_own=True)
    points = packing.sequence.points
    with np.errstate(divide="ignore"):
        ln_top = float(np.max(ln_m + np.log(points.max(axis=1))))
    ln_div = max((n + 1) * math.log(4.0), ln_top) - math.log(v_max)
    base = DiscreteDistribution(points, -ln_m, ln_m - ln_div)
    return SmoothedDistribution(base, additive(delta, v_max))


def additive_divisor_log(n: int) -> tuple[float, float]:
    """``(ln 4^(n+1), ln of the largest unscaled coordinate)`` for diagnostics."""
    packing = hn67_points(n)
    ln_m = log_multipliers(packing.gaps, n, 4.0, include_own=True)
    return (n + 1) * math.log(4.0), float(np.max(ln_m + np.log(packing.sequence.points.max(axis=1))))
