import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from smoothauction.geometry import (
    HALF_PI,
    AxisBox,
    PolarPoint,
    box_min_dot,
    box_min_dots,
    from_polar,
    polar_angles,
    sin_power_integral,
    sin_power_integral_bound,
    sin_power_integral_closed_form,
    to_polar,
    trig_vector,
)

nonneg = st.floats(0, 1e3, allow_nan=False, allow_subnormal=False)
angle = st.floats(0, HALF_PI)


@pytest.mark.parametrize("v, radius, theta", [
    ((1, 0), 1.0, 0.0),
    ((1, 1), math.sqrt(2), math.pi / 4),
    ((3, 4), 5.0, 0.927295218),
])
def test_to_polar_examples(v, radius, theta):
    p = to_polar(v)
    assert p.radius == pytest.approx(radius, rel=1e-12)
    assert p.angles[0] == pytest.approx(theta, abs=1e-9)
    np.testing.assert_allclose(from_polar(p), v, atol=1e-12)


def test_from_polar_examples():
    np.testing.assert_array_equal(from_polar(PolarPoint(1, (0.0,))), [1, 0])
    np.testing.assert_array_equal(from_polar(PolarPoint(2, (HALF_PI,))), [0, 2])
    x = from_polar(PolarPoint(1, (math.pi / 4, math.pi / 3)))
    np.testing.assert_allclose(x, [0.70711, 0.35355, 0.61237], atol=1e-5)
    assert np.sum(x ** 2) == pytest.approx(1, abs=1e-12)


def test_origin_has_zero_angles():
    p = to_polar([0, 0, 0])
    assert p.radius == 0 and p.angles == (0.0, 0.0)


def test_polar_rejects_bad_input():
    with pytest.raises(ValueError):
        to_polar([1, -1])
    with pytest.raises(ValueError):
        PolarPoint(-1, (0.0,))
    with pytest.raises(ValueError):
        PolarPoint(1, (2.0,))


def test_round_trip_bulk(rng):
    for m in range(2, 9):
        v = rng.exponential(size=(100_000 // 7, m))
        v[rng.random(v.shape) < 0.1] = 0.0
        angles = polar_angles(v)
        radius = np.linalg.norm(v, axis=1)
        sines = np.cumprod(np.sin(angles), axis=1)
        back = np.empty_like(v)
        back[:, 0] = np.cos(angles[:, 0])
        back[:, 1:-1] = sines[:, :-1] * np.cos(angles[:, 1:])
        back[:, -1] = sines[:, -1]
        back *= radius[:, None]
        np.testing.assert_allclose(back, v, rtol=1e-10, atol=1e-12 * radius.max())


@given(arrays(float, st.integers(2, 8), elements=nonneg))
def test_round_trip_property(v):
    back = from_polar(to_polar(v))
    np.testing.assert_allclose(back, v, rtol=1e-10, atol=1e-10 * max(1.0, np.linalg.norm(v)))


@given(st.lists(angle, min_size=1, max_size=9))
def test_trig_vector_unit_and_large_coordinate(angles):
    t = trig_vector(angles)
    assert np.linalg.norm(t) == pytest.approx(1, abs=1e-12)
    assert t.max() >= 1 / math.sqrt(t.size) - 1e-12


def test_trig_vector_examples():
    np.testing.assert_allclose(trig_vector([math.pi / 4]), [0.70711, 0.70711], atol=1e-5)
    assert trig_vector([math.pi / 4, math.pi / 3]).max() == pytest.approx(0.70711, abs=1e-5)
    np.testing.assert_array_equal(trig_vector([0.0]), [1, 0])


def test_box_examples():
    box = AxisBox([1, 2], [1.1, 2.2])
    assert box_min_dot(box, [1, -1]) == pytest.approx(-1.2)
    assert box_min_dot(box, [0, 0]) == 0
    x = np.array([0.3, 0.7, 2.0])
    w = np.array([1.5, -2.0, 0.25])
    assert box_min_dot(AxisBox(x, x), w) == pytest.approx(x @ w)


def test_box_rejects_inverted_bounds():
    with pytest.raises(ValueError):
        AxisBox([1, 1], [0, 2])
    with pytest.raises(ValueError):
        box_min_dot(AxisBox([0, 0], [1, 1]), [1, 1, 1])


@given(st.integers(1, 10), st.integers(0, 2 ** 32 - 1))
def test_box_min_dot_matches_corners(m, seed):
    gen = np.random.default_rng(seed)
    lo = gen.normal(size=m)
    hi = lo + gen.exponential(size=m)
    w = gen.normal(size=m)
    box = AxisBox(lo, hi)
    brute = min(np.array(c) @ w for c in box.corners())
    assert box_min_dot(box, w) == pytest.approx(brute, abs=1e-12)
    assert box_min_dots(lo, hi, w) == pytest.approx(brute, abs=1e-12)
    assert len(box.corners()) == 2 ** m


def test_corners_enumerate_each_vertex_once():
    box = AxisBox([0, 0, 0], [1, 2, 3])
    got = {tuple(c) for c in box.corners()}
    assert got == set(itertools.product((0, 1), (0, 2), (0, 3)))


@pytest.mark.parametrize("m", [2, 3])
def test_sin_power_integral_low_dimensions(m):
    value, err = sin_power_integral(m)
    assert value == pytest.approx(math.pi / 2, abs=1e-12)
    assert err < 1e-10


@pytest.mark.parametrize("m", range(2, 9))
def test_sin_power_integral_against_closed_form_and_bound(m):
    value, err = sin_power_integral(m)
    assert value == pytest.approx(sin_power_integral_closed_form(m), rel=1e-12)
    assert value <= sin_power_integral_bound(m) + err


def test_bound_values():
    assert sin_power_integral_bound(2) == pytest.approx(4.2699, abs=1e-4)
    assert sin_power_integral_bound(4) == pytest.approx(4.5579, abs=1e-4)


def test_quadrature_needs_enough_nodes():
    with pytest.raises(ValueError):
        sin_power_integral(3, quadrature_points=8)
    with pytest.raises(ValueError):
        sin_power_integral(1)
