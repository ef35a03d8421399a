import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from hypothesis.extra.numpy import arrays

from smoothauction.geometry import HALF_PI, polar_angles, to_polar
from smoothauction.perturbation import (
    Kind,
    PerturbationModel,
    RegionNotABox,
    additive,
    angle,
    angle_deviation_bound,
    apply,
    apply_many,
    image_region,
    preimage_contains,
    radial_interval,
    rectangle,
    square,
)

deltas = st.floats(0, 0.49)
value = st.floats(0, 100, allow_subnormal=False)
box_kinds = st.sampled_from([Kind.RECTANGLE, Kind.SQUARE, Kind.ADDITIVE])


def test_apply_examples():
    np.testing.assert_allclose(apply(rectangle(0.1), [4, 2], [1, 1]), [4.4, 2.2])
    np.testing.assert_allclose(apply(square(0.1), [4, 2], [0.5, 1]), [4.2, 2.4])


@pytest.mark.parametrize("model", [rectangle(0.3), square(0.3), additive(0.3)])
def test_zero_noise_is_identity(model):
    np.testing.assert_array_equal(apply(model, [4, 2], [0, 0]), [4, 2])


def test_zero_angle_noise_is_identity():
    np.testing.assert_allclose(apply(angle(0.3), [4, 2], [0.0]), [4, 2], rtol=1e-15)


def test_apply_rejects_bad_noise():
    with pytest.raises(ValueError):
        apply(rectangle(0.1), [1, 1], [1.5, 0])
    with pytest.raises(ValueError):
        apply(rectangle(0.1), [1, 1], [0.5])
    with pytest.raises(ValueError):
        apply(angle(0.1), [1, 1], [2.0])
    with pytest.raises(ValueError):
        apply(angle(0.1), [1, 1, 1], [0.0])
    with pytest.raises(ValueError):
        PerturbationModel(Kind.SQUARE, -0.1)


def test_image_region_examples():
    box = image_region(rectangle(0.1), [4, 2])
    np.testing.assert_allclose(box.lo, [4, 2])
    np.testing.assert_allclose(box.hi, [4.4, 2.2])
    box = image_region(square(0.1), [4, 2])
    np.testing.assert_allclose(box.hi, [4.4, 2.4])
    for model in (rectangle(0.1), square(0.1)):
        box = image_region(model, [0, 0])
        np.testing.assert_array_equal(box.lo, box.hi)
    with pytest.raises(RegionNotABox):
        image_region(angle(0.1), [1, 1])


def test_additive_region_uses_v_max():
    box = image_region(additive(0.1, v_max=2.0), [0.5, 0])
    np.testing.assert_allclose(box.hi, [0.7, 0.2])


def test_preimage_examples():
    model = rectangle(0.1)
    assert preimage_contains(model, [4, 2], [4.3, 2.1])
    assert not preimage_contains(model, [4, 2], [4.5, 2.1])
    assert preimage_contains(model, [4, 2], [4, 2])
    with pytest.raises(RegionNotABox):
        preimage_contains(angle(0.1), [4, 2], [4, 2])


def test_radial_interval_examples():
    lo, hi = radial_interval(square(0.1), [1, 1], math.pi / 4)
    assert lo == pytest.approx(math.sqrt(2), rel=1e-14)
    assert hi == pytest.approx(1.1 * math.sqrt(2), rel=1e-14)
    assert hi / lo == pytest.approx(1.1, rel=1e-14)
    assert radial_interval(square(0.1), [1, 1], 0.0) is None
    with pytest.raises(RegionNotABox):
        radial_interval(angle(0.1), [1, 1], 0.3)


def test_angle_deviation_examples():
    assert angle_deviation_bound(0.0, 0.3) == (0.0, 0.0)
    lo, hi = angle_deviation_bound(0.4, 0.1)
    assert (lo, hi) == (pytest.approx(0.36), pytest.approx(0.44))
    assert angle_deviation_bound(1.5, 0.1)[1] == HALF_PI


@given(box_kinds, deltas, arrays(float, st.integers(1, 6), elements=value), st.data())
def test_box_models_dominate_and_stay_in_region(kind, delta, v, data):
    model = PerturbationModel(kind, delta)
    noise = data.draw(arrays(float, v.shape, elements=st.floats(0, 1)))
    v_hat = apply(model, v, noise)
    assert np.all(v_hat >= v)
    assert image_region(model, v).contains(v_hat, rtol=1e-12)
    assert preimage_contains(model, v, v_hat, rtol=1e-12)


@given(st.sampled_from([Kind.RECTANGLE, Kind.SQUARE]), st.floats(0.001, 0.49),
       arrays(float, st.integers(2, 4), elements=st.floats(0, 10)),
       st.lists(st.floats(0, HALF_PI), min_size=3, max_size=3))
def test_radial_ratio_bounded(kind, delta, x, theta):
    assume(x.max() > 1e-3)
    model = PerturbationModel(kind, delta)
    found = radial_interval(model, x, theta[: x.size - 1])
    if found is not None:
        lo, hi = found
        assert lo <= hi
        assert hi <= (1 + delta) * lo * (1 + 1e-12) + 1e-300


@given(st.floats(0, 0.5), st.floats(0.01, 10), st.floats(0, HALF_PI), st.floats(-1, 1))
def test_angle_shift_preserves_norm(delta, radius, theta, eps):
    v = radius * np.array([math.cos(theta), math.sin(theta)])
    v_hat = apply(angle(delta), v, [eps])
    assert np.linalg.norm(v_hat) == pytest.approx(radius, rel=1e-12)
    got = to_polar(v_hat).angles[0]
    assert max(0, theta - delta) - 1e-12 <= got <= min(HALF_PI, theta + delta) + 1e-12


def test_apply_many_matches_apply(rng):
    values = rng.uniform(0, 5, size=(50, 2))
    for model in (rectangle(0.2), square(0.2), additive(0.2)):
        noise = rng.random((50, 2))
        rows = np.array([apply(model, v, n) for v, n in zip(values, noise)])
        np.testing.assert_allclose(apply_many(model, values, noise), rows, rtol=1e-15)
    noise = rng.uniform(-1, 1, size=50)
    rows = np.array([apply(angle(0.2), v, [n]) for v, n in zip(values, noise)])
    np.testing.assert_allclose(apply_many(angle(0.2), values, noise), rows, rtol=1e-12, atol=1e-12)


def test_rectangle_corner_angles_within_deviation_bound(rng):
    delta = 0.2
    model = rectangle(delta)
    theta = rng.uniform(0, HALF_PI, 10_000)
    v = np.column_stack([np.cos(theta), np.sin(theta)])
    for noise in ((0, 0), (0, 1), (1, 0), (1, 1)):
        got = polar_angles(apply_many(model, v, np.array(noise, dtype=float)))[:, 0]
        lo, hi = np.maximum(0, theta * (1 - delta)), np.minimum(HALF_PI, theta * (1 + delta))
        assert np.all(got >= lo - 1e-12) and np.all(got <= hi + 1e-12)
