"""Menus, revenue evaluation, incentive certificates and optimal mechanisms.

Prices travel as natural logs so constructions with astronomically large
prices and tiny probabilities stay exact.  The linear programs run on a
condensed-tableau simplex: most-negative reduced cost pricing that falls back to
Bland's rule after a run of degenerate pivots, plus a dual simplex for
re-optimising after rows are appended.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.linalg.blas import dger
from scipy.optimize import linprog, minimize_scalar
from scipy.special import logsumexp

from .distributions import (
    MAX_EXACT_ITEMS,
    DiscreteDistribution,
    JointDiscreteDistribution,
    SmoothedDistribution,
    atom_bundles,
    atom_support_logs,
    atom_tails,
    sample,
    uniform_sum_breakpoints,
    uniform_sum_piece,
)
from .geometry import box_min_dots
from .perturbation import Kind, PerturbationModel

# relative tolerance for treating utilities or revenues as tied
TIE_RTOL = 1e-12
IC_TOL = 1e-9
IC_LP_TOL = 1e-9
MAX_LP_TYPES = 400
MAX_PROFILES = 10 ** 6
CUTS_PER_TYPE = 3

# ------------------------------------------------------------ simplex

COST_TOL = 1e-9
PIVOT_TOL = 1e-9
RESIDUAL_TOL = 1e-7
MAX_ITERATIONS = 10 ** 6
DEGENERATE_RUN = 50


class LPError(ArithmeticError):
    pass


class UnboundedError(LPError):
    pass


class InfeasibleError(LPError):
    pass


class IterationLimitError(LPError):
    pass


@dataclass
class LinearProgram:
    """``max c.x`` subject to ``A_ub x <= b_ub``, ``A_eq x = b_eq``, ``x >= 0``."""

    c: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = self.c.size
        self.A_ub = np.zeros((0, n)) if self.A_ub is None else np.asarray(self.A_ub, dtype=float).reshape(-1, n)
        self.b_ub = np.zeros(0) if self.b_ub is None else np.asarray(self.b_ub, dtype=float).reshape(-1)
        self.A_eq = np.zeros((0, n)) if self.A_eq is None else np.asarray(self.A_eq, dtype=float).reshape(-1, n)
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, dtype=float).reshape(-1)
        if self.A_ub.shape[0] != self.b_ub.size or self.A_eq.shape[0] != self.b_eq.size:
            raise ValueError("constraint matrices and right-hand sides disagree")

    def residual(self, x: np.ndarray) -> float:
        """Largest violation of any constraint at ``x``."""
        worst = float(max(0.0, -x.min(initial=0.0)))
        if self.b_ub.size:
            worst = max(worst, float(np.max(self.A_ub @ x - self.b_ub, initial=0.0)))
        if self.b_eq.size:
            worst = max(worst, float(np.max(np.abs(self.A_eq @ x - self.b_eq), initial=0.0)))
        return worst


@dataclass
class LinearProgramSolution:
    objective: float
    x: np.ndarray
    status: str = "optimal"
    iterations: int = 0
    residual: float = 0.0


class Tableau:
    """Condensed simplex tableau holding only the nonbasic columns.

    Row ``r`` reads ``x[basis[r]] = D[r, -1] - sum_c D[r, c] * x[nonbasic[c]]``.
    The last row holds reduced costs in the form ``c_B B^-1 a - c``, so a
    maximisation is optimal once every entry is ``>= -COST_TOL``.  Appending
    constraints adds rows but never columns.
    """

    def __init__(self, D: np.ndarray, basis: np.ndarray, nonbasic: np.ndarray, n_struct: int):
        self.D = np.asfortranarray(D)
        self.basis = basis
        self.nonbasic = nonbasic
        self.n_struct = n_struct
        self.n_vars = int(max(basis.max(initial=-1), nonbasic.max(initial=-1))) + 1
        self.iterations = 0

    @classmethod
    def from_slack_form(cls, c: np.ndarray, A: np.ndarray, b: np.ndarray) -> "Tableau":
        """``max c.x, A x <= b, x >= 0`` with ``b >= 0``: slacks form the first basis."""
        if np.any(b < 0):
            raise ValueError("slack form needs a nonnegative right-hand side")
        rows, n = A.shape
        D = np.zeros((rows + 1, n + 1))
        D[:rows, :n] = A
        D[:rows, -1] = b
        D[-1, :n] = -c
        return cls(D, np.arange(n, n + rows), np.arange(n), n)

    @property
    def rows(self) -> int:
        return self.D.shape[0] - 1

    def pivot(self, r: int, col: int) -> None:
        D = self.D
        p = D[r, col]
        pivot_row = D[r] / p
        factors = D[:, col].copy()
        factors[r] = 0.0
        # rank-one update in place; D is kept column-major so BLAS skips the copy
        D = self.D = dger(-1.0, factors, pivot_row, a=D, overwrite_a=1)
        D[:, col] = -factors / p
        D[r] = pivot_row
        D[r, col] = 1.0 / p
        self.basis[r], self.nonbasic[col] = self.nonbasic[col], self.basis[r]
        self.iterations += 1
        if self.iterations > MAX_ITERATIONS:
            raise IterationLimitError(f"simplex exceeded {MAX_ITERATIONS} pivots")

    def primal(self, bland: bool = False) -> None:
        D = self.D
        degenerate = 0
        while True:
            costs = D[-1, :-1]
            open_ = costs < -COST_TOL
            if not open_.any():
                return
            if bland:
                eligible = np.flatnonzero(open_)
                col = int(eligible[np.argmin(self.nonbasic[eligible])])
            else:
                col = int(np.argmin(costs))
            column = D[:-1, col]
            ok = column > PIVOT_TOL
            if not ok.any():
                raise UnboundedError(f"variable {self.nonbasic[col]} is unbounded")
            ratios = np.full(column.size, np.inf)
            ratios[ok] = D[:-1, -1][ok] / column[ok]
            best = ratios.min()
            ties = np.flatnonzero(ratios <= best + 1e-12 * max(1.0, abs(best)))
            r = int(ties[np.argmin(self.basis[ties])])
            if best <= 1e-12:
                degenerate += 1
                if degenerate >= DEGENERATE_RUN:
                    bland = True
            else:
                degenerate = 0
            self.pivot(r, col)

    def dual(self) -> None:
        """Restore primal feasibility while keeping reduced costs nonnegative."""
        D = self.D
        while True:
            rhs = D[:-1, -1]
            r = int(np.argmin(rhs))
            if rhs[r] >= -RESIDUAL_TOL * 1e-2:
                return
            row = D[r, :-1]
            ok = row < -PIVOT_TOL
            if not ok.any():
                raise InfeasibleError("dual simplex found an infeasible row")
            ratios = np.full(row.size, np.inf)
            ratios[ok] = np.maximum(D[-1, :-1][ok], 0.0) / -row[ok]
            best = ratios.min()
            ties = np.flatnonzero(ratios <= best + 1e-12 * max(1.0, best))
            col = int(ties[np.argmin(self.nonbasic[ties])])
            self.pivot(r, col)

    def add_rows(self, A_new: np.ndarray, b_new: np.ndarray) -> None:
        """Append ``A_new x <= b_new`` (structural columns only) with fresh basic slacks."""
        k = A_new.shape[0]
        if k == 0:
            return
        D = self.D
        in_basis = np.flatnonzero(self.basis < self.n_struct)
        coef = A_new[:, self.basis[in_basis]]
        block = np.zeros((k, D.shape[1]))
        struct = self.nonbasic < self.n_struct
        block[:, :-1][:, struct] = A_new[:, self.nonbasic[struct]]
        block[:, :-1] -= coef @ D[in_basis, :-1]
        block[:, -1] = b_new - coef @ D[in_basis, -1]
        self.D = np.asfortranarray(np.vstack([D[:-1], block, D[-1:]]))
        self.basis = np.concatenate([self.basis, np.arange(self.n_vars, self.n_vars + k)])
        self.n_vars += k

    def drop_rows(self, rows: np.ndarray) -> None:
        """Remove constraints whose slack is basic; the basis stays optimal for the relaxation."""
        if rows.size == 0:
            return
        if np.any(self.basis[rows] < self.n_struct):
            raise ValueError("only rows with a basic slack can be dropped")
        keep = np.ones(self.rows + 1, dtype=bool)
        keep[rows] = False
        self.D = np.asfortranarray(self.D[keep])
        self.basis = self.basis[keep[:-1]]

    def solution(self) -> np.ndarray:
        x = np.zeros(self.n_vars)
        x[self.basis] = self.D[:-1, -1]
        return x[: self.n_struct]

    @property
    def objective(self) -> float:
        return float(self.D[-1, -1])

    def set_objective(self, c: np.ndarray) -> None:
        """Price the current basis for ``max c.x`` (``c`` indexed by variable)."""
        cb = c[self.basis]
        self.D[-1, :-1] = cb @ self.D[:-1, :-1] - c[self.nonbasic]
        self.D[-1, -1] = cb @ self.D[:-1, -1]


def lp_solve(lp: LinearProgram, bland: bool = False) -> LinearProgramSolution:
    """Two-phase simplex.

    Raises :class:`InfeasibleError`, :class:`UnboundedError` or
    :class:`IterationLimitError`.
    """
    n = lp.c.size
    A = np.vstack([lp.A_ub, lp.A_eq])
    b = np.concatenate([lp.b_ub, lp.b_eq])
    n_ub, rows = lp.b_ub.size, b.size
    sign = np.where(b < 0, -1.0, 1.0)
    # variables: structural, slacks (one per inequality), artificials
    art_rows = np.flatnonzero(np.r_[b[:n_ub] < 0, np.ones(rows - n_ub, dtype=bool)])
    first_art = n + n_ub
    n_vars = first_art + art_rows.size
    full = np.zeros((rows, n_vars))
    full[:, :n] = A * sign[:, None]
    full[np.arange(n_ub), n + np.arange(n_ub)] = sign[:n_ub]
    full[art_rows, first_art + np.arange(art_rows.size)] = 1.0
    basis = n + np.arange(rows)
    basis[art_rows] = first_art + np.arange(art_rows.size)
    nonbasic = np.setdiff1d(np.arange(n_vars), basis)
    D = np.zeros((rows + 1, nonbasic.size + 1))
    D[:rows, :-1] = full[:, nonbasic]
    D[:rows, -1] = b * sign
    tab = Tableau(D, basis, nonbasic, n)
    tab.n_vars = n_vars

    if art_rows.size:
        # phase 1: maximise -sum(artificials)
        phase1 = np.zeros(n_vars)
        phase1[first_art:] = -1.0
        tab.set_objective(phase1)
        tab.primal(bland)
        if tab.objective < -1e-7 * max(1.0, float(np.abs(b).max(initial=0.0))):
            raise InfeasibleError(f"phase 1 ended at {tab.objective:.3e}")
        _drive_out_artificials(tab, first_art)
    cost = np.zeros(tab.n_vars)
    cost[:n] = lp.c
    tab.set_objective(cost)
    tab.primal(bland)
    x = tab.solution()
    return LinearProgramSolution(float(lp.c @ x), x, "optimal", tab.iterations, lp.residual(x))


def _drive_out_artificials(tab: Tableau, first_art: int) -> None:
    keep = np.ones(tab.rows, dtype=bool)
    for r in range(tab.rows):
        if tab.basis[r] < first_art:
            continue
        cand = np.flatnonzero((np.abs(tab.D[r, :-1]) > PIVOT_TOL) & (tab.nonbasic < first_art))
        if cand.size:
            tab.pivot(r, int(cand[0]))
        else:
            keep[r] = False
    # artificials never re-enter: drop their columns and any redundant rows
    cols = np.r_[np.flatnonzero(tab.nonbasic < first_art), tab.D.shape[1] - 1]
    rows = np.r_[np.flatnonzero(keep), tab.rows]
    tab.D = np.asfortranarray(tab.D[np.ix_(rows, cols)])
    tab.basis = tab.basis[keep]
    tab.nonbasic = tab.nonbasic[cols[:-1]]


# ------------------------------------------------------------------ menus

@dataclass(frozen=True)
class Menu:
    """Lottery menu; the free null entry is implicit.

    ``ln_prices`` holds natural logs of the prices (``-inf`` for a free
    entry), so prices far outside the binary64 range are fine.
    """

    allocations: np.ndarray
    ln_prices: np.ndarray

    def __post_init__(self):
        alloc = np.asarray(self.allocations, dtype=float)
        if alloc.ndim == 1:
            alloc = alloc.reshape(0 if alloc.size == 0 else 1, -1)
        ln_prices = np.asarray(self.ln_prices, dtype=float).reshape(-1)
        if alloc.shape[0] != ln_prices.size:
            raise ValueError("one price per allocation")
        if np.any(alloc < -1e-12) or np.any(alloc > 1 + 1e-12):
            raise ValueError("allocations must lie in [0, 1]")
        object.__setattr__(self, "allocations", alloc)
        object.__setattr__(self, "ln_prices", ln_prices)

    @classmethod
    def from_prices(cls, allocations, prices) -> "Menu":
        prices = np.asarray(prices, dtype=float).reshape(-1)
        if np.any(prices < 0):
            raise ValueError("prices must be nonnegative")
        with np.errstate(divide="ignore"):
            return cls(allocations, np.log(prices))

    @property
    def size(self) -> int:
        return self.ln_prices.size

    @property
    def prices(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.ln_prices)

    def to_json(self) -> dict:
        entries = []
        for q, lp in zip(self.allocations, self.ln_prices):
            price = math.exp(lp) if lp < 709 else math.inf
            entries.append({"q": q.tolist(), "price": price if math.isfinite(price) else None,
                            "ln_price": float(lp) if math.isfinite(lp) else None})
        return {"entries": entries}

    @classmethod
    def from_json(cls, obj: dict) -> "Menu":
        entries = obj["entries"]
        alloc = [e["q"] for e in entries]
        ln_prices = []
        for e in entries:
            if e.get("ln_price") is not None:
                ln_prices.append(float(e["ln_price"]))
            else:
                ln_prices.append(math.log(e["price"]) if e["price"] > 0 else -math.inf)
        return cls(np.array(alloc, dtype=float), ln_prices)


@dataclass(frozen=True)
class RevenueReport:
    revenue: float
    optimizer: object = None
    method: str = "exact"
    stderr: float = 0.0
    samples: int = 0
    ln_revenue: float | None = None


def _tie_scale(*xs) -> float:
    return TIE_RTOL * max(1.0, *(abs(float(x)) for x in xs if np.isfinite(x)))


def best_response(menu: Menu, v) -> int:
    """Index of the entry maximising ``v.q - price`` (``-1`` for the null entry).

    Ties go to the higher price, then to the lower index.
    """
    v = np.asarray(v, dtype=float)
    if menu.size == 0:
        return -1
    if menu.allocations.shape[1] != v.size:
        raise ValueError("menu and valuation dimensions differ")
    prices = menu.prices
    util = menu.allocations @ v - prices
    best_u = max(0.0, float(np.max(util)))
    tol = _tie_scale(best_u, float(np.max(np.abs(menu.allocations @ v))))
    near = np.flatnonzero(util >= best_u - tol)
    if near.size == 0:
        return -1
    top = near[prices[near] == prices[near].max()]
    return int(top[0])


def _best_responses_scaled(menu: Menu, values: np.ndarray, ln_scales: np.ndarray) -> np.ndarray:
    """Best response of every atom ``exp(ln_scale) * value``, in per-atom units."""
    out = np.full(values.shape[0], -1, dtype=int)
    if menu.size == 0:
        return out
    # dense price ranks: free entries (ln price -inf) must still beat masked ones
    rank = np.unique(menu.ln_prices, return_inverse=True)[1].reshape(-1)
    for start in range(0, values.shape[0], 512):
        v = values[start:start + 512]
        ls = ln_scales[start:start + 512]
        gross = v @ menu.allocations.T
        with np.errstate(over="ignore"):
            rel_price = np.exp(np.minimum(menu.ln_prices[None, :] - ls[:, None], 709.0))
        util = gross - rel_price
        best = np.maximum(util.max(axis=1), 0.0)
        tol = TIE_RTOL * np.maximum(1.0, np.maximum(best, np.abs(gross).max(axis=1)))
        near = util >= (best - tol)[:, None]
        # among near-optimal entries prefer the highest price, then the lowest index
        keyed = np.where(near, rank[None, :], -1)
        pick = np.argmax(keyed, axis=1)
        has = near.any(axis=1)
        out[start:start + 512] = np.where(has, pick, -1)
    return out


def menu_revenue_discrete(menu: Menu, dist: DiscreteDistribution) -> RevenueReport:
    """Exact expected payment when every atom picks its best entry."""
    if menu.size == 0 or dist.size == 0:
        return RevenueReport(0.0, menu, "exact", ln_revenue=-math.inf)
    choice = _best_responses_scaled(menu, dist.values, dist.ln_scales)
    bought = choice >= 0
    if not bought.any():
        return RevenueReport(0.0, menu, "exact", ln_revenue=-math.inf)
    ln_rev = float(logsumexp(dist.ln_probs[bought] + menu.ln_prices[choice[bought]]))
    return RevenueReport(_exp(ln_rev), menu, "exact", ln_revenue=ln_rev)


def menu_revenue_smoothed(menu: Menu, smoothed: SmoothedDistribution, samples: int, rng) -> RevenueReport:
    """Monte Carlo expected payment under the smoothed distribution."""
    if samples < 1000:
        raise ValueError("use at least 1000 samples")
    if menu.size == 0:
        return RevenueReport(0.0, menu, "monte-carlo", 0.0, samples)
    draws = sample(smoothed, rng, size=samples)
    choice = _best_responses_scaled(menu, draws, np.zeros(samples))
    paid = np.where(choice >= 0, menu.prices[np.maximum(choice, 0)], 0.0)
    return RevenueReport(float(paid.mean()), menu, "monte-carlo",
                         float(paid.std(ddof=1) / math.sqrt(samples)), samples)


def _exp(x: float) -> float:
    return math.exp(x) if x < 709.78 else math.inf


# ------------------------------------------------------- IC certificates

@dataclass(frozen=True)
class ICCertificate:
    passed: bool
    margins: np.ndarray
    partners: np.ndarray
    failure: tuple | None = None

    @property
    def worst(self) -> float:
        return float(self.margins.min(initial=math.inf))


def menu_ic_verify(menu: Menu, seq, gaps, model: PerturbationModel, truncate: int | None = None,
                   tol: float = IC_TOL) -> ICCertificate:
    """Certify that every perturbation of type ``i`` prefers entry ``i``.

    For each type ``i`` and each ``x`` in its image box:

    * earlier entries ``j < i`` (and the null entry): ``x.x_i - gap_i >= x.x_j``
    * later entries ``j > i``: ``x.x_j < price_j / M_i`` with ``M_i = price_i / gap_i``

    Both sides are linear in ``x``, so box corners suffice.  Earlier entries
    are scanned through the running Pareto front of allocations (a dominated
    allocation never maximises ``x.x_j`` for nonnegative ``x``); later entries
    are scanned until the remaining prices provably exceed any reachable
    value.  Margins are relative; the certificate passes when all are
    ``>= -tol``.
    """
    points = menu.allocations
    g = gaps.gaps if hasattr(gaps, "gaps") else np.asarray(gaps, dtype=float)
    count = menu.size if truncate is None else truncate
    if count > min(menu.size, g.size):
        raise ValueError("truncate exceeds the menu or gap sequence")
    if not model.has_box_image:
        raise ValueError("certificate needs a model whose image is a box")
    m = points.shape[1]
    g = g[:count]
    ln_price = menu.ln_prices[:count]
    ln_mult = ln_price - np.log(g)
    margins = np.full(count, math.inf)
    partners = np.full(count, -2, dtype=int)
    failure = None

    # suffix minimum of log prices: every later entry costs at least this much
    suffix_min = np.minimum.accumulate(ln_price[::-1])[::-1]
    norms = np.linalg.norm(points[:count], axis=1)
    top_norm = float(norms.max(initial=0.0))

    front = np.empty((0, m))
    front_idx = np.empty(0, dtype=int)
    pick = np.array(list(itertools.product((0, 1), repeat=m)), dtype=bool)
    for i in range(count):
        x = points[i]
        hi = x + model.widths(x)
        corners = np.where(pick, hi, x)
        own = corners @ x
        scale = max(float(own.max()), g[i])
        # earlier entries and the null entry
        if front_idx.size:
            diffs = corners @ (x - front).T - g[i]
            flat = int(np.argmin(diffs))
            worst, j = float(diffs.flat[flat]), int(front_idx[flat % front_idx.size])
        else:
            worst, j = float((own - g[i]).min()), -1
        rel = worst / scale
        if rel < margins[i]:
            margins[i], partners[i] = rel, j
        # later entries, in blocks until the rest are out of reach
        reach = math.log(np.linalg.norm(hi) * top_norm) if top_norm > 0 else -math.inf
        start = i + 1
        while start < count:
            if suffix_min[start] - ln_mult[i] > reach + math.log(2.0):
                bound = 1.0 - math.exp(reach - (suffix_min[start] - ln_mult[i]))
                if bound < margins[i]:
                    margins[i], partners[i] = bound, start
                break
            stop = min(start + 16, count)
            best_val = points[start:stop] @ hi
            with np.errstate(over="ignore"):
                cap = np.exp(np.minimum(ln_price[start:stop] - ln_mult[i], 709.0))
            rel_b = 1.0 - best_val / cap
            k = int(np.argmin(rel_b))
            if rel_b[k] < margins[i]:
                margins[i], partners[i] = float(rel_b[k]), start + k
            start = stop
        if failure is None and margins[i] < -tol:
            failure = (i, int(partners[i]), float(margins[i]))
        keep = ~np.all(front <= x, axis=1)
        front, front_idx = front[keep], front_idx[keep]
        if not np.any(np.all(front >= x, axis=1)):
            front = np.vstack([front, x])
            front_idx = np.append(front_idx, i)
    return ICCertificate(failure is None, margins, partners, failure)


def menu_ic_certificate(menu: Menu, dist: DiscreteDistribution, model: PerturbationModel,
                        assignment=None, tol: float = IC_TOL) -> ICCertificate:
    """Generic corner check that atom ``a`` prefers entry ``assignment[a]`` under smoothing.

    Compares against every other entry and the null entry; quadratic in the
    menu size, so meant for moderate instances.
    """
    if not model.has_box_image:
        raise ValueError("certificate needs a model whose image is a box")
    count = dist.size
    assignment = np.arange(count) if assignment is None else np.asarray(assignment)
    alloc = np.vstack([menu.allocations, np.zeros((1, dist.m))])
    ln_prices = np.append(menu.ln_prices, -math.inf)
    margins = np.full(count, math.inf)
    partners = np.full(count, -2, dtype=int)
    failure = None
    for a in range(count):
        e = int(assignment[a])
        v = dist.values[a]
        if model.kind is Kind.ADDITIVE:
            widths = np.full(v.shape, model.delta * model.v_max * math.exp(-dist.ln_scales[a]))
        else:
            widths = model.widths(v)
        lo, hi = v, v + widths
        own_price = _exp(ln_prices[e] - dist.ln_scales[a])
        with np.errstate(over="ignore"):
            other_price = np.exp(np.minimum(ln_prices - dist.ln_scales[a], 709.0))
        diff = alloc[e][None, :] - alloc
        gain = box_min_dots(lo, hi, diff) - own_price + other_price
        scale = max(float(hi @ alloc[e]), own_price, 1e-300)
        with np.errstate(over="ignore"):
            rel = gain / scale
        rel[e] = math.inf
        k = int(np.argmin(rel))
        margins[a] = rel[k]
        partners[a] = -1 if k == menu.size else k
        if failure is None and rel[k] < -tol:
            failure = (a, int(partners[a]), float(rel[k]))
    return ICCertificate(failure is None, margins, partners, failure)


# ------------------------------------------------------------ posted prices

def _best_posted(ln_values: np.ndarray, ln_probs: np.ndarray) -> tuple[float, float]:
    """Best take-it-or-leave-it price among the support values, all in logs.

    Returns ``(ln_price, ln_revenue)``; ties go to the lowest price.
    """
    ok = np.isfinite(ln_values) & np.isfinite(ln_probs)
    if not ok.any():
        return -math.inf, -math.inf
    lv, lp = ln_values[ok], ln_probs[ok]
    order = np.argsort(-lv, kind="stable")
    lv, lp = lv[order], lp[order]
    # mass at or above each value, grouping equal values
    cum = np.logaddexp.accumulate(lp)
    last = np.r_[lv[1:] != lv[:-1], True]
    lv, cum = lv[last], cum[last]
    ln_rev = lv + cum
    best = ln_rev.max()
    near = np.flatnonzero(ln_rev >= best + math.log1p(-TIE_RTOL))
    k = near[np.argmin(lv[near])]
    return float(lv[k]), float(ln_rev[k])


def brev_discrete(dist: DiscreteDistribution) -> RevenueReport:
    """Best grand-bundle posted price of the unperturbed distribution."""
    with np.errstate(divide="ignore"):
        ln_sums = np.log(dist.values.sum(axis=1)) + dist.ln_scales
    ln_price, ln_rev = _best_posted(ln_sums, dist.ln_probs)
    return RevenueReport(_exp(ln_rev) if np.isfinite(ln_rev) else 0.0,
                         _exp(ln_price) if np.isfinite(ln_price) else 0.0, "exact", ln_revenue=ln_rev)


def srev_discrete(dist: DiscreteDistribution) -> RevenueReport:
    """Sum of per-item monopoly revenues on the marginals."""
    total, prices = 0.0, []
    for j in range(dist.m):
        with np.errstate(divide="ignore"):
            ln_vals = np.log(dist.values[:, j]) + dist.ln_scales
        ln_price, ln_rev = _best_posted(ln_vals, dist.ln_probs)
        total += _exp(ln_rev) if np.isfinite(ln_rev) else 0.0
        prices.append(_exp(ln_price) if np.isfinite(ln_price) else 0.0)
    return RevenueReport(total, prices, "exact")


def monopoly_price(values, floor: float = 0.0) -> tuple[float, float]:
    """Revenue-maximising price at or above ``floor`` for a discrete value law.

    ``values`` is a sequence of ``(value, prob)``.  Candidates are the floor
    and every support value above it; ties go to the lowest price.
    """
    vals = np.array([v for v, _ in values], dtype=float)
    probs = np.array([p for _, p in values], dtype=float)
    if probs.sum() > 1 + 1e-9:
        raise ValueError("probabilities sum above 1")
    cands = np.unique(np.r_[floor, vals[vals >= floor]])
    revenue = np.array([c * probs[vals >= c].sum() for c in cands])
    best = revenue.max()
    k = int(np.flatnonzero(revenue >= best - _tie_scale(best))[0])
    return float(cands[k]), float(revenue[k])


# ----------------------------------------------------- smoothed bundling

def _lse(terms) -> float:
    terms = [t for t in terms if t != -math.inf]
    if not terms:
        return -math.inf
    top = max(terms)
    return top + math.log(math.fsum(math.exp(t - top) for t in terms))


class _BundleCurve:
    """Exact revenue curve ``p * P(bundle >= p)`` of a smoothed distribution."""

    def __init__(self, smoothed: SmoothedDistribution):
        self.bundles = atom_bundles(smoothed)
        self.kind = self.bundles.kind
        lo, hi = atom_support_logs(self.bundles)
        self.live = np.flatnonzero(np.isfinite(hi) & np.isfinite(self.bundles.ln_probs))
        self.ln_lo, self.ln_hi = lo, hi
        self.support = (lo, hi)
        self.eff = {}
        order = self.live[np.argsort(lo[self.live], kind="stable")]
        self.lo_sorted = lo[order]
        self.order = order
        lp = self.bundles.ln_probs[order]
        self.suffix = np.r_[np.logaddexp.accumulate(lp[::-1])[::-1], -np.inf] if order.size else np.array([-np.inf])

    def ln_above(self, ln_price: float) -> float:
        """Log of the mass whose whole support sits at or above the price."""
        return float(self.suffix[np.searchsorted(self.lo_sorted, ln_price, side="left")])

    def breakpoints(self, k: int) -> np.ndarray:
        b = self.bundles
        if self.kind is Kind.ANGLE:
            f = lambda t: math.cos(t) + math.sin(t)  # noqa: E731
            extra = [math.log(b.radius[k] * f(b.theta_lo[k])), math.log(b.radius[k] * f(b.theta_hi[k]))]
            return np.r_[self.ln_lo[k], self.ln_hi[k], np.array(extra) + b.ln_scales[k]]
        return np.log(b.offset[k] + uniform_sum_breakpoints(b.widths[k])) + b.ln_scales[k]

    def tail(self, k: int, ln_price: float) -> float:
        return float(atom_tails(self.bundles, ln_price, [k], self.support)[0])

    def ln_revenue(self, ln_price: float, ln_above: float, partial) -> float:
        terms = [ln_above]
        for k in partial:
            t = self.tail(k, ln_price)
            if t > 0:
                terms.append(self.bundles.ln_probs[k] + math.log(t))
        return ln_price + _lse(terms)

    def piece_candidates(self, ln_p0: float, ln_p1: float, ln_above: float, active) -> list[float]:
        """Log prices of interior stationary points on one polynomial piece."""
        b = self.bundles
        if self.kind is Kind.ANGLE:
            def neg(p):
                return -math.exp(self.ln_revenue(math.log(p), ln_above, active) - ln_p1)
            p0, p1 = math.exp(ln_p0 - ln_p1), 1.0
            res = minimize_scalar(lambda t: neg(t * math.exp(ln_p1)), bounds=(p0, p1),
                                  method="bounded", options={"xatol": 1e-13})
            return [math.log(res.x) + ln_p1]
        P = np.polynomial.Polynomial
        norm = max([ln_above] + [b.ln_probs[k] for k in active])
        t_mid = 0.5 * (math.exp(ln_p0 - ln_p1) + 1.0)
        inner = P([math.exp(ln_above - norm)])
        for k in active:
            ratio = math.exp(ln_p1 - b.ln_scales[k])
            piece = uniform_sum_piece(t_mid * ratio - b.offset[k], b.widths[k])
            # substitute x = ratio * t - offset
            comp = piece(P([-b.offset[k], ratio]))
            inner = inner + math.exp(b.ln_probs[k] - norm) * (1.0 - comp)
        curve = P([0.0, 1.0]) * inner
        roots = curve.deriv().roots()
        t0 = math.exp(ln_p0 - ln_p1)
        out = []
        for r in roots:
            if abs(r.imag) <= 1e-12 * max(1.0, abs(r.real)) and t0 < r.real < 1.0:
                out.append(math.log(r.real) + ln_p1)
        return out


def brev_smoothed(smoothed: SmoothedDistribution, samples: int = 200_000, rng=None) -> RevenueReport:
    """Best grand-bundle posted price under smoothing, maximised exactly.

    The revenue curve is piecewise smooth between per-atom support
    breakpoints.  Candidates are every breakpoint plus every interior
    stationary point (polynomial roots for the box models, a bounded scalar
    search on the concave pieces of the angle model).  Pieces whose revenue
    cannot beat the incumbent are skipped.  More than 8 items falls back to
    Monte Carlo.
    """
    if smoothed.model.kind is not Kind.ANGLE and smoothed.m > MAX_EXACT_ITEMS:
        return _brev_monte_carlo(smoothed, samples, rng or np.random.default_rng(0))
    curve = _BundleCurve(smoothed)
    live = curve.live
    if live.size == 0:
        return RevenueReport(0.0, 0.0, "exact", ln_revenue=-math.inf)
    with np.errstate(divide="ignore"):
        bps = np.concatenate([curve.breakpoints(k) for k in live])
    bps = np.unique(bps[np.isfinite(bps)])
    if not np.all(np.isfinite(curve.ln_lo[live])):
        # supports reaching down to 0 need a first piece below every breakpoint
        bps = np.r_[bps[0] - 60.0, bps]
    by_lo = curve.order
    heap: list[tuple[float, int]] = []
    ptr = 0
    best_ln, best_price = -math.inf, 0.0
    pieces = []
    for g, lp in enumerate(bps):
        while ptr < by_lo.size and curve.ln_lo[by_lo[ptr]] <= lp:
            k = int(by_lo[ptr])
            heapq.heappush(heap, (float(curve.ln_hi[k]), k))
            ptr += 1
        while heap and heap[0][0] <= lp:
            heapq.heappop(heap)
        active = [k for _, k in heap]
        partial = [k for k in active if curve.ln_lo[k] < lp]
        ln_rev = curve.ln_revenue(lp, curve.ln_above(lp), partial)
        # breakpoints arrive in increasing order, so ties keep the lowest price
        if ln_rev > best_ln + math.log1p(TIE_RTOL):
            best_ln, best_price = ln_rev, lp
        if active and g + 1 < bps.size:
            nxt = bps[g + 1]
            above = curve.ln_above(nxt)
            bound = nxt + _lse([above] + [curve.bundles.ln_probs[k] for k in active])
            pieces.append((bound, lp, nxt, above, active))
    pieces.sort(key=lambda item: -item[0])
    for bound, lp0, lp1, above, active in pieces:
        if bound <= best_ln:
            break
        for cand in curve.piece_candidates(lp0, lp1, above, active):
            ln_rev = curve.ln_revenue(cand, above, active)
            if ln_rev > best_ln + math.log1p(TIE_RTOL):
                best_ln, best_price = ln_rev, cand
    return RevenueReport(_exp(best_ln), _exp(best_price), "exact", ln_revenue=best_ln)


def _brev_monte_carlo(smoothed: SmoothedDistribution, samples: int, rng) -> RevenueReport:
    draws = sample(smoothed, rng, size=samples).sum(axis=-1)
    draws = np.sort(draws)[::-1]
    sold = np.arange(1, samples + 1) / samples
    revenue = draws * sold
    k = int(np.argmax(revenue))
    stderr = draws[k] * math.sqrt(sold[k] * (1 - sold[k]) / samples)
    return RevenueReport(float(revenue[k]), float(draws[k]), "monte-carlo", stderr, samples)


# ------------------------------------------------------------ menu LP

class SizeLimitError(ValueError):
    pass


def optimal_menu_lp(dist: DiscreteDistribution, truncate_types: int | None = None,
                    max_types: int = MAX_LP_TYPES, solver: str = "simplex") -> tuple[Menu, RevenueReport]:
    """Revenue-optimal menu for a finite type space.

    Variables are the allocation ``q_i`` in ``[0,1]^m`` and the buyer surplus
    ``u_i >= 0`` of each type (price ``t_i = v_i.q_i - u_i``), which makes
    individual rationality a sign constraint.  Incentive constraints read
    ``u_j - u_i + (v_i - v_j).q_j <= 0``.

    ``solver="simplex"`` runs the built-in simplex with lazily added
    incentive constraints; ``solver="highs"`` hands the full program to
    scipy's HiGHS, which is much faster for a few hundred types.
    Truncation keeps the first atoms and moves the dropped mass to the origin.
    """
    if truncate_types is not None:
        dist = DiscreteDistribution(dist.values[:truncate_types], dist.ln_probs[:truncate_types],
                                    dist.ln_scales[:truncate_types])
    types = dist.with_origin() if dist.residual > 1e-12 else dist
    count = types.size
    if count > max_types:
        raise SizeLimitError(f"{count} types exceed the LP limit of {max_types}")
    values = types.scaled_values()
    if not np.all(np.isfinite(values)):
        raise SizeLimitError("type values overflow binary64; truncate the distribution")
    probs = types.probs
    scale = float(values.max(initial=0.0)) or 1.0
    v = values / scale
    if solver == "simplex":
        q, u, rounds = _menu_lp_simplex(v, probs)
    elif solver == "highs":
        q, u, rounds = _menu_lp_highs(v, probs)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    q = np.clip(q, 0.0, 1.0)
    u = np.maximum(u, 0.0)
    t = np.einsum("ij,ij->i", v, q) - u
    revenue = float(probs @ t) * scale
    menu = Menu.from_prices(q, np.maximum(t, 0.0) * scale)
    return menu, RevenueReport(revenue, menu, "exact", samples=rounds)


def _menu_lp_simplex(v: np.ndarray, probs: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    """Cutting planes: solve, add the worst incentive constraints of each
    type, re-optimise with the dual simplex, repeat until none is violated.
    The last point is feasible for the full program and optimal for a
    relaxation of it, hence optimal."""
    count, m = v.shape
    n = count * (m + 1)
    qi = lambda i: slice(i * m, (i + 1) * m)  # noqa: E731
    ui = lambda i: count * m + i  # noqa: E731
    c = np.zeros(n)
    for i in range(count):
        c[qi(i)] = probs[i] * v[i]
        c[ui(i)] = -probs[i]
    c /= float(np.abs(c).max(initial=0.0)) or 1.0
    bounds = np.zeros((count * m, n))
    bounds[np.arange(count * m), np.arange(count * m)] = 1.0
    tab = Tableau.from_slack_form(c, bounds, np.ones(count * m))
    tab.primal()
    first_cut = tab.n_vars
    cut_of: dict[int, tuple[int, int]] = {}
    rounds = 0
    while True:
        x = tab.solution()
        q = x[: count * m].reshape(count, m)
        u = x[count * m:]
        gross = v @ q.T
        own = np.diag(gross)
        # violation[i, j] = u_j - u_i + v_i.q_j - v_j.q_j
        viol = u[None, :] - u[:, None] + gross - own[None, :]
        np.fill_diagonal(viol, -np.inf)
        need = np.flatnonzero(viol.max(axis=1) > IC_LP_TOL)
        if need.size == 0:
            break
        # forget cuts that went slack so the tableau stays small
        slack_rows = np.flatnonzero((tab.basis >= first_cut) & (tab.D[:-1, -1] > IC_LP_TOL))
        for r in slack_rows:
            del cut_of[int(tab.basis[r])]
        tab.drop_rows(slack_rows)
        active = set(cut_of.values())
        rows = []
        for i in need:
            for j in np.argsort(-viol[i])[:CUTS_PER_TYPE]:
                if viol[i, j] <= IC_LP_TOL or (int(i), int(j)) in active:
                    continue
                row = np.zeros(n)
                row[ui(j)] += 1.0
                row[ui(i)] -= 1.0
                row[qi(j)] += v[i] - v[j]
                cut_of[tab.n_vars + len(rows)] = (int(i), int(j))
                rows.append(row)
        if not rows:
            raise LPError("cutting planes stalled on a violated constraint")
        tab.add_rows(np.array(rows), np.zeros(len(rows)))
        tab.dual()
        tab.primal()
        rounds += 1
    x = tab.solution()
    return x[: count * m].reshape(count, m), x[count * m:], rounds


def _menu_lp_highs(v: np.ndarray, probs: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    count, m = v.shape
    n = count * (m + 1)
    c = np.concatenate([-(probs[:, None] * v).reshape(-1), probs])
    i, j = np.nonzero(~np.eye(count, dtype=bool))
    r = np.arange(i.size)
    rows = [r, r] + [r] * m
    cols = [count * m + j, count * m + i] + [j * m + k for k in range(m)]
    vals = [np.ones(r.size), -np.ones(r.size)] + [v[i, k] - v[j, k] for k in range(m)]
    A = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(r.size, n))
    bounds = [(0.0, 1.0)] * (count * m) + [(0.0, None)] * count
    res = linprog(c, A_ub=A if r.size else None, b_ub=np.zeros(r.size) if r.size else None,
                  bounds=bounds, method="highs")
    if res.status == 2:
        raise InfeasibleError(res.message)
    if res.status == 3:
        raise UnboundedError(res.message)
    if res.status != 0:
        raise LPError(res.message)
    return res.x[: count * m].reshape(count, m), res.x[count * m:], res.nit


def menu_lp_residual(dist: DiscreteDistribution, menu: Menu) -> float:
    """Largest IC or IR violation of a one-entry-per-type menu (in value units)."""
    types = dist.with_origin() if dist.residual > 1e-12 else dist
    v = types.scaled_values()
    q, t = menu.allocations, menu.prices
    util = v @ q.T - t[None, :]
    own = np.diag(util)
    return float(max(0.0, (util.max(axis=1) - own).max(initial=0.0), (-own).max(initial=0.0)))


# ----------------------------------------------------- multi-buyer auctions

def _support_values(joint: JointDiscreteDistribution) -> tuple[np.ndarray, list[np.ndarray]]:
    bundle = joint.bundle_values()
    return bundle, [np.unique(bundle[:, i]) for i in range(joint.n)]


def second_price_bundle(joint: JointDiscreteDistribution) -> RevenueReport:
    """Second-price auction for the grand bundle, ties to the lowest index."""
    if joint.n < 2:
        raise ValueError("second-price needs at least two buyers")
    bundle = joint.bundle_values()
    second = np.sort(bundle, axis=1)[:, -2]
    return RevenueReport(float(joint.probs @ second), None, "exact")


class Lookahead:
    """Lookahead auction on grand-bundle values.

    The top bidder (ties to the lowest index) is offered the monopoly price
    of their value conditioned on everyone else's value, floored at the
    second-highest bid.
    """

    def __init__(self, joint: JointDiscreteDistribution):
        if joint.n < 2:
            raise ValueError("lookahead needs at least two buyers")
        if joint.probs.size > MAX_PROFILES:
            raise SizeLimitError("too many profiles to enumerate")
        self.joint = joint
        self.bundle = joint.bundle_values()
        self._conditional = {}
        for i in range(joint.n):
            table: dict = {}
            others = np.delete(self.bundle, i, axis=1)
            for row, prob, own in zip(others, joint.probs, self.bundle[:, i]):
                table.setdefault(tuple(row), []).append((float(own), float(prob)))
            self._conditional[i] = table

    def offer(self, i: int, others: tuple, floor: float) -> float:
        law = self._conditional[i].get(others, [])
        mass = sum(p for _, p in law)
        if mass <= 0:
            return floor
        price, _ = monopoly_price([(v, p / mass) for v, p in law], floor)
        return price

    def outcome(self, bids: np.ndarray) -> tuple[int, float]:
        """``(winner, payment)`` for one bid profile; winner ``-1`` when unsold."""
        top = int(np.argmax(bids))
        floor = float(np.max(np.delete(bids, top)))
        price = self.offer(top, tuple(np.delete(bids, top)), floor)
        return (top, price) if bids[top] >= price - _tie_scale(price) else (-1, 0.0)


def ronen_lookahead(joint: JointDiscreteDistribution) -> RevenueReport:
    """Exact expected revenue of the lookahead auction."""
    auction = Lookahead(joint)
    total = 0.0
    for bids, prob in zip(auction.bundle, joint.probs):
        _, pay = auction.outcome(bids)
        total += prob * pay
    return RevenueReport(total, auction, "exact")


def dsic_optimal_lp(joint: JointDiscreteDistribution, max_support: int = 6, max_buyers: int = 3) -> RevenueReport:
    """Optimal revenue over randomized DSIC, ex-post IR single-item mechanisms.

    Bundle values act as the single item's values.  The mechanism is defined
    on the product of per-buyer supports; profiles outside the joint support
    carry zero weight but still face the incentive constraints.  Variables
    per buyer and report profile are the win probability ``x`` and the
    surplus ``u = v x - p >= 0``.
    """
    bundle, supports = _support_values(joint)
    if joint.n > max_buyers or max(len(s) for s in supports) > max_support:
        raise SizeLimitError("instance too large for the DSIC program")
    n = joint.n
    grid = list(itertools.product(*[range(len(s)) for s in supports]))
    index = {g: k for k, g in enumerate(grid)}
    weight = np.zeros(len(grid))
    for row, prob in zip(bundle, joint.probs):
        key = tuple(int(np.searchsorted(supports[i], row[i])) for i in range(n))
        weight[index[key]] += prob
    P = len(grid)
    xv = lambda k, i: k * n + i  # noqa: E731
    uv = lambda k, i: P * n + k * n + i  # noqa: E731
    nvar = 2 * P * n
    c = np.zeros(nvar)
    rows, rhs = [], []
    for k, g in enumerate(grid):
        feas = np.zeros(nvar)
        for i in range(n):
            val = supports[i][g[i]]
            c[xv(k, i)] = weight[k] * val
            c[uv(k, i)] = -weight[k]
            feas[xv(k, i)] = 1.0
        rows.append(feas)
        rhs.append(1.0)
    for k, g in enumerate(grid):
        for i in range(n):
            for alt in range(len(supports[i])):
                if alt == g[i]:
                    continue
                h = list(g)
                h[i] = alt
                kk = index[tuple(h)]
                # truthful surplus beats reporting supports[i][alt]
                row = np.zeros(nvar)
                row[uv(kk, i)] += 1.0
                row[uv(k, i)] -= 1.0
                row[xv(kk, i)] += supports[i][g[i]] - supports[i][alt]
                rows.append(row)
                rhs.append(0.0)
    sol = lp_solve(LinearProgram(c, np.array(rows), np.array(rhs)))
    return RevenueReport(sol.objective, sol, "exact")
