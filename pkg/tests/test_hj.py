import numpy as np
import pytest

from mftg import oracle
from mftg.dynamics import TerminalCost, make_cost, make_game
from mftg.errors import InvalidInputError
from mftg.hj import (FrozenValueField, SimplexGrid, hamiltonian, hj_residual, solve_by_supports, solve_grid,
                     solve_linear_value, solve_matrix_game, state_payoffs, verify_supersolution)
from mftg.markov import build_lattice_chain, build_split_chain, constant_model, two_state_model
from mftg.measures import Lattice

Q3 = np.array([[-0.5, 0.3, 0.2], [0.1, -0.4, 0.3], [0.6, 0.0, -0.6]])


def test_two_by_two_closed_form():
    a = np.array([[3.0, -1.0], [-2.0, 4.0]])
    res = solve_matrix_game(a)
    # value (ad - bc) / (a + d - b - c)
    assert res.value == pytest.approx((12 - 2) / (3 + 4 + 1 + 2), abs=1e-12)
    assert res.mixed_u == pytest.approx([0.6, 0.4])
    assert res.mixed_v == pytest.approx([0.5, 0.5])
    assert not res.pure and res.saddle_gap <= 1e-12


def test_pure_saddle_is_detected():
    res = solve_matrix_game([[1.0, 2.0], [0.0, 3.0]])
    # row maxima 2, 3; column minima 0, 2 -> saddle at (0, 1)
    assert res.pure and res.value == 2.0


def test_matching_pennies_lp():
    res = solve_matrix_game([[1.0, -1.0], [-1.0, 1.0]], force_lp=True)
    assert res.value == pytest.approx(0.0, abs=1e-10)
    assert res.mixed_u == pytest.approx([0.5, 0.5], abs=1e-9)


def test_supports_agree_with_lp(rng):
    games = np.concatenate([rng.normal(size=(40, 3, 3)), rng.integers(-2, 3, size=(40, 3, 3)).astype(float)])
    vals, gu, gv, solved = solve_by_supports(games)
    for a, v, ok in zip(games, vals, solved):
        if ok:
            assert v == pytest.approx(solve_matrix_game(a, force_lp=True).value, abs=1e-9)
    assert solved.mean() > 0.9
    assert np.allclose(gu.sum(axis=1), 1) and np.allclose(gv.sum(axis=1), 1)


def test_matrix_game_rejects_vectors():
    with pytest.raises(InvalidInputError):
        solve_matrix_game([1.0, 2.0])


def test_constant_weights_give_zero_hamiltonian(rng):
    chain = build_lattice_chain(make_game("crowd-averse-1d"), 1 / 8)
    mu = rng.dirichlet(np.ones(8))
    assert np.all(state_payoffs(chain, 0.3, mu, np.full(8, 0.37)) == 0)
    assert hamiltonian(chain, 0.3, mu, np.full(8, 2.0))[0] == 0.0


def test_single_control_hamiltonian_is_linear(rng):
    model = constant_model(Q3)
    mu, w = rng.dirichlet(np.ones(3)), rng.normal(size=3)
    assert hamiltonian(model, 0.0, mu, w)[0] == pytest.approx(mu @ Q3 @ w, abs=1e-14)


def test_zero_rates_keep_terminal_cost():
    model = constant_model(np.zeros((3, 3)))
    cost = make_cost("sin2")
    field = solve_linear_value(model, cost, dt=0.25)
    assert np.array_equal(field.weights(0.0), cost.linear_c(model.lattice.points))


def test_linear_solver_matches_exponential():
    model = constant_model(Q3)
    cost = make_cost("sin2")
    field = solve_linear_value(model, cost, dt=1 / 512)
    c = cost.linear_c(model.lattice.points)
    for t in (0.0, 0.3, 0.75):
        assert np.abs(field.weights(t) - oracle.expm_series(Q3, 1 - t) @ c).max() <= 1e-8


def test_constant_cost_gives_constant_value():
    chain = build_split_chain(make_game("pursuit-1d"), 1 / 8)
    flat = TerminalCost.linear(lambda p: np.full(np.shape(p)[:-1], 0.7), 0.0)
    field = solve_linear_value(chain, flat)
    assert np.abs(field.weights(0.0) - 0.7).max() <= 1e-14
    assert field.value(0.5, np.full(8, 1 / 8)) == pytest.approx(0.7, abs=1e-14)


def test_linear_solver_rejects_measure_dependent_rates():
    with pytest.raises(InvalidInputError):
        solve_linear_value(build_lattice_chain(make_game("crowd-averse-1d"), 1 / 4), make_cost("sin2"))


def test_grid_and_linear_solvers_agree():
    two = two_state_model()
    cost = make_cost("sin2")
    lin = solve_linear_value(two, cost, dt=1 / 512)
    grid = solve_grid(two, cost, dt=1 / 100, resolution=100)
    for p in np.linspace(0, 1, 11):
        assert lin.value(0.0, [p, 1 - p]) == pytest.approx(grid.value(0.0, [p, 1 - p]), abs=5e-3)


def test_grid_rejects_large_state_space():
    with pytest.raises(InvalidInputError):
        SimplexGrid(4, 10)


@pytest.mark.parametrize("n", [2, 3])
def test_simplex_grid_reproduces_affine_functions(n, rng):
    grid = SimplexGrid(n, 7)
    coef = rng.normal(size=n)
    values = grid.nodes @ coef
    mu = rng.dirichlet(np.ones(n), size=50)
    assert np.abs(grid.interpolate(values, mu) - mu @ coef).max() <= 1e-12


def test_value_field_is_a_supersolution_of_its_own_equation():
    chain = build_split_chain(make_game("pursuit-1d"), 1 / 8)
    cost = make_cost("sin2")
    field = solve_linear_value(chain, cost)
    assert hj_residual(field, chain, samples=20) <= 1e-6
    assert verify_supersolution(field, chain, cost, samples=4, rng=np.random.default_rng(1)).ok


def test_frozen_cost_is_not_a_supersolution():
    chain = build_split_chain(make_game("pursuit-1d"), 1 / 8)
    cost = make_cost("sin2")
    # the maximizer can raise ∫ c dμ from the valleys of c, so the frozen field must increase somewhere
    frozen = FrozenValueField(chain.lattice, cost.linear_c(chain.lattice.points), 1.0)
    rep = verify_supersolution(frozen, chain, cost, samples=6, rng=np.random.default_rng(2))
    assert not rep.terminal_violations
    assert rep.flow_violations


def test_shifted_field_moves_by_constant():
    model = constant_model(Q3)
    field = solve_linear_value(model, make_cost("cos"), dt=1 / 64)
    mu = np.array([0.2, 0.5, 0.3])
    assert field.shifted(0.25).value(0.1, mu) == pytest.approx(field.value(0.1, mu) + 0.25, abs=1e-14)


def test_pursuit_value_tracks_agent_oracle():
    dyn = make_game("pursuit-1d")
    cost = make_cost("sin2")
    agent = oracle.agent_hji_1d(dyn, cost)
    errors = []
    for h in (1 / 8, 1 / 16):
        chain = build_lattice_chain(dyn, h)
        field = solve_linear_value(chain, cost)
        err = np.abs(field.weights(0.0) - agent.at(chain.lattice.points[:, 0])).max()
        assert err <= chain.epsilon
        errors.append(err)
    assert errors[1] < errors[0]


def test_csv_has_one_column_per_point():
    model = constant_model(Q3, lattice=Lattice(np.array([[0.0], [0.25], [0.5]])))
    field = solve_linear_value(model, make_cost("sin2"), dt=0.5)
    header = field.to_csv().splitlines()[1]
    assert header.count(",") == 3


def test_grid_solver_is_monotone_in_the_cost():
    two = two_state_model()
    base = make_cost("sin2")
    bigger = TerminalCost.linear(lambda p: base.linear_c(p) + np.abs(np.cos(2 * np.pi * np.asarray(p)[..., 0])), 8.0)
    low = solve_grid(two, base, dt=1 / 50, resolution=40)
    high = solve_grid(two, bigger, dt=1 / 50, resolution=40)
    assert np.all(high.values >= low.values)


def test_constant_shifts_and_supersolutions():
    chain = build_split_chain(make_game("pursuit-1d"), 1 / 8)
    cost = make_cost("sin2")
    field = solve_linear_value(chain, cost)
    up = verify_supersolution(field.shifted(0.05), chain, cost, samples=3, rng=np.random.default_rng(3))
    down = verify_supersolution(field.shifted(-0.05), chain, cost, samples=3, rng=np.random.default_rng(3))
    assert up.ok
    assert down.terminal_violations and not down.flow_violations
