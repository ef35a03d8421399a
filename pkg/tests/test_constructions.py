import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import logsumexp

from smoothauction.constructions import (
    InvalidSequence,
    LogScaled,
    additive_default_size,
    additive_scaled_distribution,
    gap_sequence,
    hn67_points,
    log_multipliers,
    lottery_distribution,
    menu_revenue_identity,
    multipliers,
    pairwise_smoothed_dot,
    partial_sums_by_shell,
    same_shell_check,
    series_bracket,
    shell_count_estimate,
    shell_points,
    shell_weight,
    subset_construction,
    subset_normalizer,
    tailored_menu,
)
from smoothauction.distributions import SmoothedDistribution, validate
from smoothauction.geometry import HALF_PI
from smoothauction.mechanisms import (
    brev_discrete,
    brev_smoothed,
    menu_ic_certificate,
    menu_revenue_discrete,
)
from smoothauction.perturbation import rectangle, square


@pytest.fixture(scope="module")
def shells():
    seq = shell_points(0.1, 120)
    return seq, gap_sequence(seq, rectangle(0.1))


def brute_gaps(points, model):
    """Every earlier point and the origin, all box corners, no pruning."""
    out = []
    for i, x in enumerate(points):
        others = np.vstack([np.zeros(points.shape[1]), points[:i]])
        lo, hi = x, x + model.widths(x)
        corners = np.array([[a, b] for a in (lo[0], hi[0]) for b in (lo[1], hi[1])])
        out.append(float((corners @ (x - others).T).min()))
    return np.array(out)


# ----------------------------------------------------------------- shells

def test_second_shell_has_two_points(shells):
    seq, _ = shells
    first = seq.angles[seq.shell_of == 2]
    np.testing.assert_allclose(first, [HALF_PI, 0.7 * HALF_PI])
    assert 0.49 * HALF_PI < math.sqrt(float(shell_weight(2)))


def test_radii_in_range_and_increasing(shells):
    seq, _ = shells
    assert np.all(seq.shell_radii > 0.25) and np.all(seq.shell_radii < 1)
    assert np.all(np.diff(seq.shell_radii) > 0)
    norms = np.linalg.norm(seq.points, axis=1)
    np.testing.assert_allclose(norms, seq.shell_radii[seq.shell_of - 2], rtol=1e-12)


def test_points_ordered_by_shell_then_decreasing_angle(shells):
    seq, _ = shells
    assert np.all(np.diff(seq.shell_of) >= 0)
    same = np.diff(seq.shell_of) == 0
    assert np.all(np.diff(seq.angles)[same] < 0)


def test_shell_counts_track_log_growth():
    seq = shell_points(0.1, 2000)
    shells, counts = np.unique(seq.shell_of, return_counts=True)
    est = np.array([shell_count_estimate(0.1, n) for n in shells])
    ratio = counts / est
    assert ratio.min() >= 1 / 3 and ratio.max() <= 3
    # the factor settles as shells grow
    assert abs(ratio[-100:] - 1).max() < 0.2


def test_series_bracket_is_tight_enough():
    low, high = series_bracket()
    assert low < high
    assert high - low == pytest.approx(1 / math.log(10 ** 8))
    assert 2.0 < low < 2.2


def test_shell_points_rejects_bad_delta():
    for d in (0.0, 0.5, 0.7):
        with pytest.raises(ValueError):
            shell_points(d, 10)
    with pytest.raises(ValueError):
        shell_points(0.1, 1)


def test_large_delta_gives_single_point_shells():
    seq = shell_points(0.4, 20)
    assert np.all(seq.angles == HALF_PI)


# ------------------------------------------------------------------- gaps

def test_first_gap_is_squared_norm(shells):
    seq, gaps = shells
    assert gaps.gaps[0] == pytest.approx(seq.points[0] @ seq.points[0], rel=1e-14)
    assert gaps.partner[0] == -1


def test_gaps_positive_and_below_squared_norm(shells):
    seq, gaps = shells
    assert np.all(gaps.gaps > 0)
    assert np.all(gaps.gaps <= np.sum(seq.points ** 2, axis=1) * (1 + 1e-12))


def test_gaps_match_unpruned_scan(shells):
    seq, gaps = shells
    brute = brute_gaps(seq.points, rectangle(0.1))
    np.testing.assert_allclose(gaps.gaps, brute, rtol=1e-12)


def test_same_angle_previous_shell_contribution(shells):
    seq, _ = shells
    _, alpha = series_bracket()
    model = rectangle(0.1)
    for i in range(len(seq)):
        n = int(seq.shell_of[i])
        prev = np.flatnonzero((seq.shell_of == n - 1) & (seq.angles == seq.angles[i]))
        if n == 2 or prev.size == 0:
            continue
        got = float(pairwise_smoothed_dot(seq.points, model, i, prev[0])[0])
        expect = seq.radius_of_shell(n) * float(shell_weight(n)) / alpha
        assert got == pytest.approx(expect, rel=1e-10)


def test_grid_oracle_never_beats_corners(shells, rng):
    seq, gaps = shells
    model = rectangle(0.1)
    for i in rng.choice(len(seq), 25, replace=False):
        x = seq.points[i]
        hi = x + model.widths(x)
        gx, gy = np.meshgrid(np.linspace(x[0], hi[0], 50), np.linspace(x[1], hi[1], 50))
        grid = np.column_stack([gx.ravel(), gy.ravel()])
        others = np.vstack([np.zeros(2), seq.points[:i]])
        grid_min = float((grid @ (x - others).T).min())
        assert grid_min >= gaps.gaps[i] - 1e-14
        # the exact minimiser is a corner, and the grid contains all corners
        assert grid_min == pytest.approx(gaps.gaps[i], abs=1e-14)


def test_invalid_sequence_reports_pair():
    pts = np.array([[0.0, 1.0], [0.0, 0.5]])
    with pytest.raises(InvalidSequence) as err:
        gap_sequence(pts, rectangle(0.1))
    assert (err.value.i, err.value.j) == (1, 0)


def test_gaps_reject_angle_model():
    from smoothauction.perturbation import angle
    with pytest.raises(ValueError):
        gap_sequence(np.array([[1.0, 0.0]]), angle(0.1))


def test_same_shell_pairs_meet_bound():
    seq = shell_points(0.1, 300)
    pairs, worst = same_shell_check(seq, rectangle(0.1), 300)
    assert pairs > 0 and worst >= 1


def test_consecutive_angles_separated(shells):
    seq, _ = shells
    same = np.diff(seq.shell_of) == 0
    gap = -np.diff(seq.angles)[same]
    assert np.all(gap >= 3 * 0.1 * seq.angles[:-1][same] * (1 - 1e-12))


def test_partial_sums_strictly_increase(shells):
    seq, gaps = shells
    shell_ids, sums = partial_sums_by_shell(seq, gaps)
    assert np.array_equal(shell_ids, np.arange(2, 121))
    assert np.all(np.diff(sums) > 0)


# ------------------------------------------------------- lottery and menu

def test_multipliers(shells):
    _, gaps = shells
    ln_m = log_multipliers(gaps.gaps, 10)
    assert ln_m[0] == pytest.approx(math.log(4))
    np.testing.assert_allclose(np.exp(-np.diff(-ln_m)), 4 / gaps.gaps[:9], rtol=1e-12)
    assert float(multipliers(gaps.gaps, 1)[0]) == pytest.approx(4)


def test_lottery_mass_and_decay(shells):
    seq, gaps = shells
    dist = lottery_distribution(seq, gaps)
    assert validate(dist) is None
    assert float(logsumexp(dist.ln_probs)) < 0
    ratio = np.exp(np.diff(dist.ln_probs))
    assert np.all(ratio <= 0.25 + 1e-15)
    # differences of large logs keep about 1e-12 absolute accuracy
    np.testing.assert_allclose(np.diff(dist.ln_probs), np.log(gaps.gaps[:-1] / 4), rtol=0, atol=1e-10)


def test_lottery_rejects_bad_input(shells):
    seq, gaps = shells
    with pytest.raises(ValueError):
        lottery_distribution(seq, gaps, truncate=len(seq) + 1)
    with pytest.raises(ValueError):
        lottery_distribution(seq.points[:2], [0.1, -0.1])


def test_tailored_menu_revenue_identity(shells):
    seq, gaps = shells
    menu = tailored_menu(seq, gaps)
    dist = lottery_distribution(seq, gaps)
    lhs, rhs = menu_revenue_identity(menu, dist, gaps)
    assert lhs == pytest.approx(rhs, rel=1e-10)
    assert menu_revenue_discrete(menu, dist).revenue == pytest.approx(rhs, rel=1e-10)


def test_single_point_and_empty_menus(shells):
    seq, gaps = shells
    one = tailored_menu(seq, gaps, truncate=1)
    d1 = lottery_distribution(seq, gaps, truncate=1)
    assert one.size == 1
    assert menu_revenue_discrete(one, d1).revenue == pytest.approx(seq.points[0] @ seq.points[0])
    empty = tailored_menu(seq, gaps, truncate=0)
    d0 = lottery_distribution(seq, gaps, truncate=0)
    assert empty.size == 0
    assert menu_revenue_discrete(empty, d0).revenue == 0.0
    assert menu_revenue_identity(empty, d0, gaps) == (0.0, 0.0)


def test_menu_rejects_allocations_above_one():
    with pytest.raises(ValueError):
        tailored_menu(np.array([[1.2, 0.0]]), [0.5])


# ------------------------------------------------------------------ hn67

def test_hn67_shell_sizes():
    report = hn67_points(200)
    _, counts = np.unique(report.sequence.shell_of, return_counts=True)
    assert counts[0] == 1
    assert counts[15] == 8
    assert all(c == math.ceil(n ** 0.75) for n, c in zip(range(1, len(counts)), counts[:-1]))


def test_hn67_radii_and_constant():
    report = hn67_points(2000)
    radii = report.sequence.shell_radii
    assert np.all(np.diff(radii) > 0) and radii[-1] <= 1
    assert report.constant > 0
    assert len(report.gaps) == 2000


# --------------------------------------------------------------- subsets

def test_subset_revenue():
    dist, menu = subset_construction(4, 6)
    c = sum(16.0 ** -j for j in range(1, 7))
    assert math.exp(subset_normalizer(4, 6).ln_value) == pytest.approx(c, rel=1e-14)
    rev = menu_revenue_discrete(menu, dist).revenue
    assert rev == pytest.approx(6 / c, rel=1e-12)
    assert rev >= 4 * 2 ** 4


def test_subset_incentive_compatible_under_smoothing():
    for m, j_max in ((4, 6), (6, 20), (8, 30)):
        dist, menu = subset_construction(m, j_max)
        cert = menu_ic_certificate(menu, dist, square(0.05))
        assert cert.passed and cert.worst > 0


def test_subset_bundle_bound_small_instance():
    delta = 0.05
    dist, _ = subset_construction(4, 6)
    c = math.exp(subset_normalizer(4, 6).ln_value)
    brev = brev_smoothed(SmoothedDistribution(dist, square(delta))).revenue
    assert brev <= 4 * (1 + 2 * delta) / c


def test_subset_rejects_bad_sizes():
    for m, j in ((5, 1), (2, 1), (14, 1), (4, 7), (4, 0)):
        with pytest.raises(ValueError):
            subset_construction(m, j)


# -------------------------------------------------------------- additive

@pytest.mark.parametrize("delta", [0.2, 0.05, 0.01])
def test_additive_scaled_distribution(delta):
    n = additive_default_size(delta)
    assert n == math.ceil(math.log(1 / delta))
    smoothed = additive_scaled_distribution(n, delta)
    assert validate(smoothed) is None
    values = smoothed.base.scaled_values()
    assert values.min() >= 0 and values.max() <= 1 + 1e-12
    assert brev_discrete(smoothed.base).revenue <= 4.0 ** -n


def test_additive_rejects_bad_input():
    with pytest.raises(ValueError):
        additive_scaled_distribution(0, 0.1)
    with pytest.raises(ValueError):
        additive_scaled_distribution(2, 0.3)


# --------------------------------------------------------------- LogScaled

finite = st.floats(-300, 300)


@given(finite, finite)
def test_logscaled_matches_linear(a, b):
    x, y = LogScaled(a), LogScaled(b)
    assert float(x * y) == pytest.approx(math.exp(a) * math.exp(b), rel=1e-12)
    assert float(x / y) == pytest.approx(math.exp(a) / math.exp(b), rel=1e-12)
    assert float(x + y) == pytest.approx(math.exp(a) + math.exp(b), rel=1e-12)
    assert (x < y) == (a < b) and (x >= y) == (a >= b)


def test_logscaled_never_materialises_huge_values():
    big = LogScaled(5000.0) * LogScaled(3000.0)
    assert big.ln_value == 8000.0
    assert (big / LogScaled(7999.0)).ln_value == pytest.approx(1.0)
    assert big > 1e300
    with pytest.raises(OverflowError):
        float(big)
    with pytest.raises(ValueError):
        LogScaled.of(0.0)
