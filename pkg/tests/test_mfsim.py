import math

import numpy as np
import pytest

from mftg.dynamics import make_cost, make_game
from mftg.errors import InvalidInputError
from mftg.hj import solve_linear_value
from mftg.markov import build_split_chain
from mftg.measures import DiscreteMeasure
from mftg.mfsim import (ADVERSARY_KINDS, c_star, estimate_value, make_adversary, realized_joint, resample,
                        residual_proxy, simulate_flow, outcome_bound, water_fill)
from mftg.strategy import ExtremalShiftStrategy, partition

M0 = DiscreteMeasure([[0.35], [0.5], [0.65]], [0.25, 0.5, 0.25])
COST = make_cost("sin2")


def _setup(h=1 / 8, **params):
    dyn = make_game("pursuit-1d", **params)
    chain = build_split_chain(dyn, h)
    return dyn, chain, solve_linear_value(chain, COST)


@pytest.fixture(scope="module")
def pursuit():
    return _setup()


def _run(setup, adversary, n=64, spacing=0.25):
    dyn, chain, value = setup
    strat = ExtremalShiftStrategy(chain, value, partition(0.0, 1.0, spacing), COST)
    return simulate_flow(dyn, COST, strat, adversary, M0, n)


def test_growth_constant():
    assert c_star(1.0, 0.0) == pytest.approx(math.sqrt(3) * math.exp(0.5), abs=1e-12)
    assert c_star(1.0, 0.0) == pytest.approx(2.8558, abs=2e-4)


def test_resample_apportions_by_largest_remainder():
    x = resample(DiscreteMeasure([[0.1], [0.2], [0.3]], [0.5, 0.3, 0.2]), 7)
    assert np.bincount(np.searchsorted([0.1, 0.2, 0.3], x[:, 0])).tolist() == [4, 2, 1]


def test_water_fill_realizes_entry_masses():
    counts = np.array([3, 2])
    atoms = np.array([0, 0, 1, 1])
    mass = np.array([0.25, 0.35, 0.1, 0.3])
    comp = water_fill(counts, atoms, mass, 5)
    got = np.bincount(comp.entry, weights=comp.weight) / 5
    assert got == pytest.approx(mass, abs=1e-15)
    per_particle = np.bincount(comp.particle, weights=comp.weight)
    assert per_particle == pytest.approx(np.ones(5), abs=1e-15)
    comp.u_idx = np.array([0, 1, 0, 2])[comp.entry]
    x = np.array([[0.1], [0.1], [0.1], [0.6], [0.6]])
    joint = realized_joint(x, comp, 3)
    assert sum(joint.values()) == pytest.approx(1.0)


def test_unknown_adversary():
    with pytest.raises(InvalidInputError):
        make_adversary("psychic")
    assert ADVERSARY_KINDS == ("constant", "random", "extremal", "gradient")


def test_motionless_game_keeps_the_initial_distribution():
    setup = _setup(kappa_u=0.0, kappa_v=0.0)
    res = _run(setup, make_adversary("extremal"))
    assert res.final_measure() == DiscreteMeasure.from_particles(res.positions[0])
    assert res.outcome == pytest.approx(COST(M0), abs=1e-14)


def test_powerless_second_player_makes_adversaries_equal():
    setup = _setup(kappa_v=0.0)
    outcomes = {_run(setup, make_adversary(kind, seed=2, index=1, cost=COST)).outcome for kind in ADVERSARY_KINDS}
    assert max(outcomes) - min(outcomes) <= 1e-12


def test_extremal_is_strongest_of_the_simple_adversaries(pursuit):
    dyn, chain, value = pursuit
    strat = ExtremalShiftStrategy(chain, value, partition(0.0, 1.0, 0.25), COST)
    advs = [make_adversary("constant", index=i) for i in range(3)]
    advs += [make_adversary("random", seed=s) for s in range(3)] + [make_adversary("extremal")]
    est = estimate_value(dyn, COST, strat, advs, M0, 64)
    assert est.strongest == "extremal"
    assert est.upper == max(est.outcomes.values())


def test_results_do_not_share_guide_state(pursuit):
    dyn, chain, value = pursuit
    strat = ExtremalShiftStrategy(chain, value, partition(0.0, 1.0, 0.25), COST)
    est = estimate_value(dyn, COST, strat, [make_adversary("extremal"), make_adversary("gradient", cost=COST)], M0, 64)
    alone = _run(pursuit, make_adversary("extremal"))
    assert residual_proxy(est.results["extremal"]) == residual_proxy(alone)


def test_flow_respects_speed_bound(pursuit):
    res = _run(pursuit, make_adversary("gradient", cost=COST))
    assert res.speed_violations(pursuit[0].bound_R) == []


def test_random_adversary_is_reproducible(pursuit):
    a = _run(pursuit, make_adversary("random", seed=9))
    b = _run(pursuit, make_adversary("random", seed=9))
    assert a.trajectory_csv() == b.trajectory_csv()
    assert a.adversary == "random(9)"


def test_outcome_stays_below_bound(pursuit):
    dyn, chain, value = pursuit
    bound = outcome_bound(dyn, COST, chain, value, M0)
    assert bound.epsilon == chain.epsilon
    assert bound.c_star == c_star(1.0, 0.0)
    assert bound.bound == pytest.approx(bound.phi + math.pi * bound.c_star * bound.epsilon)
    res = _run(pursuit, make_adversary("extremal"))
    assert res.outcome <= bound.bound + residual_proxy(res)


def test_projection_gap_within_covering_radius():
    dyn, chain, value = _setup(h=1 / 16)
    bound = outcome_bound(dyn, COST, chain, value, M0)
    assert bound.epsilon == pytest.approx(0.25 * math.sqrt(2), abs=1e-15)
    assert bound.projection_gap <= math.sqrt(dyn.dim) * chain.h / 2
