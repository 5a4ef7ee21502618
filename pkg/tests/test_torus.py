import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mftg import torus
from mftg.errors import DimensionMismatchError, InvalidInputError

coords = st.floats(min_value=-5, max_value=5, allow_nan=False, allow_infinity=False)


def test_canonicalize_examples():
    assert torus.canonicalize([0.3, 0.7]).coords == (0.3, 0.7)
    assert torus.canonicalize([1.25, -0.5]).coords == (0.25, 0.5)
    assert torus.canonicalize([3.0]).coords == (0.0,)


def test_canonicalize_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        torus.canonicalize([np.nan])
    with pytest.raises(InvalidInputError):
        torus.canonicalize([])
    with pytest.raises(InvalidInputError):
        torus.TorusPoint((1.0,))


def test_wrap_tiny_negative_stays_below_one():
    assert torus.wrap(-1e-20) == 0.0


def test_ell_examples():
    x, y = torus.canonicalize([0.1]), torus.canonicalize([0.9])
    assert torus.ell(x, y).vector == pytest.approx((0.2,), abs=1e-15)
    assert torus.ell(x, x).vector == (0.0,)
    tie = torus.ell(torus.canonicalize([0.75, 0.0]), torus.canonicalize([0.25, 0.5]))
    assert tie.vector == (0.5, 0.5)


def test_distance_examples():
    assert torus.distance(torus.canonicalize([0.1]), torus.canonicalize([0.9])) == pytest.approx(0.2)
    p = torus.canonicalize([0.4, 0.2])
    assert torus.distance(p, p) == 0.0


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        torus.ell(torus.canonicalize([0.1]), torus.canonicalize([0.1, 0.2]))
    with pytest.raises(DimensionMismatchError):
        torus.pairwise_dist(np.zeros((2, 1)), np.zeros((2, 2)))


def test_distance_matches_shift_enumeration(rng):
    shifts = np.array(list(itertools.product([-1, 0, 1], repeat=2)))
    for _ in range(200):
        x, y = rng.random(2), rng.random(2)
        brute = np.min(np.linalg.norm(x - y + shifts, axis=1))
        assert torus.dist(x, y) == pytest.approx(brute, abs=1e-14)


@given(st.lists(coords, min_size=2, max_size=2), st.lists(coords, min_size=2, max_size=2))
def test_displacement_is_a_short_representative(a, b):
    d = torus.displacement(a, b)
    assert np.all(d > -0.5) and np.all(d <= 0.5)
    # x - y - d is an integer vector
    resid = np.asarray(a) - np.asarray(b) - d
    assert np.allclose(resid, np.round(resid), atol=1e-9)


@given(*[st.lists(st.floats(0, 1, exclude_max=True), min_size=2, max_size=2)] * 3)
def test_triangle_inequality_and_symmetry(a, b, c):
    assert torus.dist(a, b) == pytest.approx(torus.dist(b, a), abs=1e-15)
    assert torus.dist(a, c) <= torus.dist(a, b) + torus.dist(b, c) + 1e-12
    assert torus.dist(a, b) <= np.sqrt(2) / 2 + 1e-12


def test_format_coord_round_trips(rng):
    for v in rng.random(50):
        assert float(torus.format_coord(v)) == v
