import math

import numpy as np
import pytest

from mftg.dynamics import (GameDynamics, TerminalCost, certify_constants, check_isaacs, crowd_push,
                           game_security_levels, make_cost, make_game)
from mftg.errors import CertificationError, InvalidInputError
from mftg.measures import DiscreteMeasure


def test_catalog_constants():
    g = make_game("pursuit-1d")
    assert (g.bound_R, g.lipschitz_L, g.horizon) == (2.0, 0.0, 1.0)
    assert g.n_u == 3 and g.n_v == 3 and not g.measure_dependent
    crowd = make_game("crowd-averse-1d")
    assert crowd.measure_dependent and crowd.lipschitz_L == 0.5
    assert make_game("pursuit-2d").controls_u.shape == (5, 2)


def test_unknown_game_and_parameter():
    with pytest.raises(InvalidInputError):
        make_game("tag")
    with pytest.raises(InvalidInputError):
        make_game("pursuit-1d", speed=3)
    assert make_game("pursuit-1d", horizon=0.5).horizon == 0.5


def test_velocity_table_shape_and_values():
    g = make_game("pursuit-1d")
    tab = g.velocity_table(0.0, np.array([[0.1], [0.7]]), None)
    assert tab.shape == (2, 3, 3, 1)
    assert tab[0, 0, 2, 0] == pytest.approx(-1.1 + 0.9)


def test_crowd_push_matches_direct_sum(rng):
    m = DiscreteMeasure(rng.random((4, 1)), rng.dirichlet(np.ones(4)))
    x = rng.random((6, 1))
    direct = np.array([[np.sum(m.weights * np.sin(2 * np.pi * (xi - m.points[:, 0]))) / (2 * np.pi)]
                       for xi in x[:, 0]])
    assert np.allclose(crowd_push(x, m), direct, atol=1e-14)


def test_separated_games_satisfy_isaacs(rng):
    for name in ("pursuit-1d", "crowd-averse-1d", "pursuit-2d"):
        assert check_isaacs(make_game(name), 200, rng).ok()
    assert check_isaacs(make_game("pursuit-1d"), 1000, rng).max_discrepancy < 1e-12


def test_product_game_security_levels():
    # f = u v with U = V = {-1, 1} and w = 1: payoff[u, v] = u v
    payoff = np.array([[1.0, -1.0], [-1.0, 1.0]])
    upper, lower = game_security_levels(payoff)
    assert (upper, lower) == (1.0, -1.0)

    def f(t, x, m, u, v):
        return np.broadcast_to(u * v, np.broadcast_shapes(np.shape(x), np.shape(u), np.shape(v)))

    dyn = GameDynamics("product", 1, [-1.0, 1.0], [-1.0, 1.0], f, 1.0, 0.0, 1.0)
    rep = check_isaacs(dyn, 50, rng=np.random.default_rng(1))
    assert rep.max_discrepancy > 0 and not rep.ok()


def test_certify_constants(rng):
    def const(t, x, m, u, v):
        return np.broadcast_to(np.array([0.3]), np.broadcast_shapes(np.shape(x), np.shape(u)))

    dyn = GameDynamics("const", 1, [0.0], [0.0], const, 1.0, 0.0, 0.3)
    rep = certify_constants(dyn, 50, rng)
    assert rep.R_observed == pytest.approx(0.3) and rep.L_observed == 0.0

    def sum_f(t, x, m, u, v):
        return np.broadcast_to(u + v, np.broadcast_shapes(np.shape(x), np.shape(u), np.shape(v)))

    assert certify_constants(GameDynamics("sum", 1, [-1, 1], [-1, 1], sum_f, 1.0, 0.0, 2.0), 50, rng).R_observed <= 2
    crowd = make_game("crowd-averse-1d")
    assert certify_constants(crowd, 300, rng).L_observed <= crowd.lipschitz_L
    with pytest.raises(CertificationError):
        certify_constants(GameDynamics("liar", 1, [0.0], [0.0], const, 1.0, 0.0, 0.1), 20, rng)


def test_costs():
    c = make_cost("sin2")
    assert c(DiscreteMeasure([[0.0], [0.5]], [0.5, 0.5])) == pytest.approx(0.5)
    assert c.lip_c == pytest.approx(math.pi)
    assert make_cost("cos", 2).lip_c == pytest.approx(2 * math.pi * math.sqrt(2))
    shifted = c.shifted(1.0)
    assert shifted(DiscreteMeasure.dirac([0.5])) == pytest.approx(2.0)
    assert isinstance(shifted, TerminalCost)
    with pytest.raises(InvalidInputError):
        make_cost("nope")
