import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mftg import oracle
from mftg.errors import DimensionMismatchError, InvalidInputError
from mftg.measures import (CSV_HEADER, DiscreteMeasure, Lattice, SimplexVector, disintegrate, embed,
                           lattice_from_csv, lattice_to_csv, measure_from_csv, measure_to_csv, metric_comparison,
                           project, recombine, resample_counts, wasserstein)


def test_measure_canonical_form():
    a = DiscreteMeasure([[0.75], [1.25], [0.25]], [0.5, 0.25, 0.25])
    b = DiscreteMeasure([[0.25], [0.75]], [0.5, 0.5])
    assert a == b and hash(a) == hash(b)
    assert a.points[:, 0].tolist() == [0.25, 0.75]


def test_measure_drops_zero_weights_and_rejects_negative():
    m = DiscreteMeasure([[0.1], [0.2]], [1.0, 0.0])
    assert m.size == 1
    with pytest.raises(InvalidInputError):
        DiscreteMeasure([[0.1], [0.2]], [1.0, -0.1])
    with pytest.raises(InvalidInputError):
        DiscreteMeasure([[0.1]], [0.0])


def test_measure_arrays_are_read_only():
    m = DiscreteMeasure.dirac([0.3])
    with pytest.raises(ValueError):
        m.weights[0] = 2.0


def test_regular_lattice_order_and_covering():
    lat = Lattice.regular(0.25, 2)
    assert lat.size == 16
    assert lat.points[1].tolist() == [0.0, 0.25]
    assert lat.fineness == pytest.approx(0.25)
    assert lat.covering_radius == pytest.approx(math.sqrt(2) * 0.125)
    assert Lattice([[0.0], [0.5]]).covering_radius == pytest.approx(0.25)


def test_simplex_vector_validation():
    lat = Lattice.regular(0.25, 1)
    with pytest.raises(DimensionMismatchError):
        SimplexVector(lat, [1.0])
    with pytest.raises(InvalidInputError):
        SimplexVector(lat, [0.5, 0.5, 0.5, -0.5])
    with pytest.raises(InvalidInputError):
        SimplexVector(lat, [0.5, 0.5, 0.5, 0.5])


def test_embed_examples():
    lat = Lattice.regular(0.25, 1)
    assert embed(SimplexVector.vertex(lat, 2)) == DiscreteMeasure.dirac([0.5])
    assert embed(SimplexVector.uniform(lat)).size == 4
    two = embed(SimplexVector(lat, [0.5, 0.5, 0, 0]))
    assert two.size == 2 and two.weights.tolist() == [0.5, 0.5]


def test_project_examples():
    lat = Lattice.regular(0.25, 1)
    assert project(DiscreteMeasure.dirac([0.24]), lat).values.tolist() == [0, 1, 0, 0]
    m = DiscreteMeasure([[0.25], [0.75]], [0.3, 0.7])
    assert wasserstein(2, m, embed(project(m, lat)))[0] == 0.0


def test_project_is_the_closest_lattice_measure(rng):
    lat = Lattice.regular(0.125, 1)
    m = DiscreteMeasure(rng.random((10, 1)), rng.dirichlet(np.ones(10)))
    proj_cost = wasserstein(2, m, embed(project(m, lat)))[0] ** 2
    # brute force: any coupling onto S costs at least sum_i w_i dist(x_i, S)^2
    nearest = np.min(np.abs(((m.points - lat.points.T) + 0.5) % 1.0 - 0.5), axis=1) ** 2
    assert proj_cost == pytest.approx(float(m.weights @ nearest), abs=1e-12)


def test_wasserstein_trivial_cases():
    m = DiscreteMeasure([[0.1], [0.6]], [0.3, 0.7])
    value, plan = wasserstein(2, m, m)
    assert value == 0.0
    assert np.allclose(plan.matrix(), np.diag(m.weights))
    assert wasserstein(2, DiscreteMeasure.dirac([0.0]), DiscreteMeasure.dirac([0.5]))[0] == pytest.approx(0.5)
    assert wasserstein(1, DiscreteMeasure.dirac([0.1]), DiscreteMeasure.dirac([0.9]))[0] == pytest.approx(0.2)


def test_wasserstein_plan_marginals_and_cost(rng):
    for _ in range(20):
        m1 = DiscreteMeasure(rng.random((6, 2)), rng.dirichlet(np.ones(6)))
        m2 = DiscreteMeasure(rng.random((5, 2)), rng.dirichlet(np.ones(5)))
        value, plan = wasserstein(2, m1, m2)
        row_err, col_err = plan.marginal_errors()
        assert row_err <= 1e-12 and col_err <= 1e-10
        assert plan.cost(2) == pytest.approx(value ** 2, abs=1e-12)
        assert abs(plan.dual_gap) <= 1e-9


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 7), min_size=8, max_size=8), st.lists(st.integers(0, 7), min_size=8, max_size=8))
def test_wasserstein_matches_assignment_oracle(a, b):
    lat = Lattice.regular(0.125, 1)
    m1 = embed(SimplexVector(lat, np.bincount(a, minlength=8) / 8))
    m2 = embed(SimplexVector(lat, np.bincount(b, minlength=8) / 8))
    for p in (1, 2):
        assert wasserstein(p, m1, m2)[0] == pytest.approx(oracle.ot_assignment(m1, m2, 8, p), abs=1e-10)


def test_wasserstein_four_atom_measures_against_oracle(rng):
    for _ in range(10):
        counts = rng.multinomial(8, np.ones(4) / 4)
        m1 = DiscreteMeasure(rng.random((4, 1)), np.maximum(counts, 0) / 8)
        counts2 = rng.multinomial(8, np.ones(4) / 4)
        m2 = DiscreteMeasure(rng.random((4, 1)), counts2 / 8)
        assert wasserstein(2, m1, m2)[0] == pytest.approx(oracle.ot_assignment(m1, m2, 8), abs=1e-10)


def test_metric_comparison_adjacent_vertices():
    lat = Lattice.regular(0.125, 1)
    for p in (1, 2):
        rep = metric_comparison(p, SimplexVector.vertex(lat, 0), SimplexVector.vertex(lat, 1))
        assert rep.w_p == pytest.approx(lat.fineness)
        assert rep.norm_p == pytest.approx(2 ** (1 / p))
        assert rep.ok


def test_metric_comparison_equal_vectors():
    lat = Lattice.regular(0.25, 1)
    mu = SimplexVector.uniform(lat)
    rep = metric_comparison(2, mu, mu)
    assert rep.w_p == 0 and rep.lower_bound == 0 and rep.ok


def test_metric_comparison_random(rng):
    lat = Lattice.regular(0.25, 2)
    for _ in range(40):
        mu1 = SimplexVector(lat, rng.dirichlet(np.ones(lat.size)))
        mu2 = SimplexVector(lat, rng.dirichlet(np.ones(lat.size)))
        assert metric_comparison(1, mu1, mu2).ok and metric_comparison(2, mu1, mu2).ok


def test_metric_comparison_needs_same_lattice():
    with pytest.raises(DimensionMismatchError):
        metric_comparison(2, SimplexVector.uniform(Lattice.regular(0.25, 1)),
                          SimplexVector.uniform(Lattice.regular(0.125, 1)))


def test_disintegration_examples(rng):
    m1 = DiscreteMeasure([[0.1], [0.4]], [0.5, 0.5])
    m2 = DiscreteMeasure([[0.2], [0.8], [0.9]], [0.2, 0.3, 0.5])
    # a product plan is forced when one side is a single atom
    single = DiscreteMeasure.dirac([0.3])
    _, plan = wasserstein(2, single, m2)
    assert disintegrate(plan)[0] == m2
    _, ident = wasserstein(2, m1, m1)
    conds = disintegrate(ident)
    assert all(c.size == 1 for c in conds.values())
    _, plan = wasserstein(2, m1, m2)
    back = recombine(disintegrate(plan), m1, m2)
    assert np.abs(back - plan.matrix()).max() <= 1e-12
    back2 = recombine(disintegrate(plan, "second"), m2, m1, "second")
    assert np.abs(back2 - plan.matrix()).max() <= 1e-12
    with pytest.raises(InvalidInputError):
        disintegrate(plan, "middle")


@given(st.lists(st.floats(0.001, 1), min_size=1, max_size=12), st.integers(1, 600))
def test_resample_counts_apportions_exactly(weights, n):
    w = np.asarray(weights) / np.sum(weights)
    counts = resample_counts(w, n)
    assert counts.sum() == n
    assert np.all(np.abs(counts - w * n) < 1.0 + 1e-9)


def test_csv_round_trips(rng):
    m = DiscreteMeasure(rng.random((5, 2)), rng.dirichlet(np.ones(5)))
    text = measure_to_csv(m)
    assert text.startswith(CSV_HEADER + "\n")
    back = measure_from_csv(text)
    assert np.array_equal(back.points, m.points)
    assert np.allclose(back.weights, m.weights, rtol=0, atol=1e-15)
    lat = Lattice.regular(0.25, 2)
    assert lattice_from_csv(lattice_to_csv(lat)).same_as(lat)
