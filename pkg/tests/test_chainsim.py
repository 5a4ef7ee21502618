import math

import numpy as np
import pytest

from mftg import oracle
from mftg.chainsim import (RelaxedFeedback, averaged_rates, control_schedules, law_speed_violations,
                           deterministic_flow_violations, integrate_kolmogorov, moment_bounds_check, r_one,
                           sample_chain, sample_states, time_grid, varsigma_one)
from mftg.dynamics import make_game
from mftg.errors import InvalidInputError, StepSizeError
from mftg.markov import build_lattice_chain, build_split_chain, constant_model

DIRAC1 = RelaxedFeedback.dirac(2, 1, 0)


def test_constants():
    assert r_one(2.0, 1) == 7.0
    assert varsigma_one(0.04, 2.0, 1) == pytest.approx(4 / 3 * 3 * 7 * 0.2)


def test_time_grid_shortens_last_step():
    ts = time_grid(0.0, 1.0, 0.3)
    assert ts[0] == 0.0 and ts[-1] == 1.0 and np.all(np.diff(ts) <= 0.3 + 1e-15)
    assert time_grid(0.5, 0.5, 0.1).tolist() == [0.5]


def test_feedback_validation():
    with pytest.raises(InvalidInputError):
        RelaxedFeedback.constant_rows([[0.5, 0.6]])
    with pytest.raises(InvalidInputError):
        RelaxedFeedback.piecewise([0.0, 0.0], [np.eye(2), np.eye(2)])
    pw = RelaxedFeedback.piecewise([0.0, 0.5], [np.eye(2), np.eye(2)[::-1]])
    assert pw.at(0.7, None).tolist() == [[0.0, 1.0], [1.0, 0.0]]


def test_zero_chain_keeps_law():
    model = constant_model(np.zeros((3, 3)))
    mu0 = np.array([0.2, 0.3, 0.5])
    traj = integrate_kolmogorov(model, mu0, RelaxedFeedback.dirac(3, 1, 0), RelaxedFeedback.dirac(3, 1, 0),
                                (0.0, 1.0), tau=0.1)
    assert np.array_equal(traj.final().values, mu0)
    path = sample_chain(model, 1, None, RelaxedFeedback.dirac(3, 1, 0), RelaxedFeedback.dirac(3, 1, 0),
                        (0.0, 1.0), seed=4)
    assert path.jump_times == [] and path.state_at(0.9) == 1


def test_two_state_relaxation_matches_closed_form():
    a, b = 1.3, 0.4
    model = constant_model(np.array([[-a, a], [b, -b]]))
    traj = integrate_kolmogorov(model, [0.25, 0.75], DIRAC1, DIRAC1, (0.0, 3.0), tau=1 / 128)
    for t, law in zip(traj.times, traj.values):
        assert np.abs(law - oracle.two_state_law(a, b, 0.25, t)).max() <= 1e-8
    assert np.abs(traj.values.sum(axis=1) - 1).max() <= 1e-13


def test_large_step_is_rejected():
    model = constant_model(np.array([[-40.0, 40.0], [40.0, -40.0]]))
    with pytest.raises(StepSizeError):
        integrate_kolmogorov(model, [1.0, 0.0], DIRAC1, DIRAC1, (0.0, 1.0), tau=0.5)


def test_measure_dependent_flow_conserves_mass(rng):
    chain = build_lattice_chain(make_game("crowd-averse-1d"), 1 / 8)
    gam = RelaxedFeedback.uniform(8, 3)
    traj = integrate_kolmogorov(chain, rng.dirichlet(np.ones(8)), gam, gam, (0.0, 1.0))
    assert np.abs(traj.values.sum(axis=1) - 1).max() <= 1e-13
    assert traj.values.min() >= 0


def test_averaged_rates_accepts_feedback_objects():
    chain = build_lattice_chain(make_game("pursuit-1d"), 1 / 8)
    g = RelaxedFeedback.dirac(8, 3, 1)
    assert np.array_equal(averaged_rates(chain, 0.0, None, g, g), chain.rates(0.0, None)[1, 1])


def test_sampling_is_reproducible_and_matches_law():
    a, b = 0.9, 0.6
    model = constant_model(np.array([[-a, a], [b, -b]]))
    n = 10_000
    times = [0.25, 0.5, 1.0]
    s1, _ = sample_states(model, np.zeros(n, dtype=int), None, DIRAC1, DIRAC1, (0.0, 1.0), times,
                          np.random.default_rng(8))
    s2, _ = sample_states(model, np.zeros(n, dtype=int), None, DIRAC1, DIRAC1, (0.0, 1.0), times,
                          np.random.default_rng(8))
    assert np.array_equal(s1, s2)
    for row, t in zip(s1, times):
        p = oracle.two_state_law(a, b, 1.0, t)[1]
        freq = row.mean()
        assert abs(freq - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_sample_chain_paths_jump_to_neighbours():
    chain = build_lattice_chain(make_game("pursuit-1d"), 1 / 8)
    g = RelaxedFeedback.uniform(8, 3)
    path = sample_chain(chain, 0, None, g, g, (0.0, 1.0), seed=5)
    assert path.jump_times == sorted(path.jump_times)
    for a, b in zip(path.states[:-1], path.states[1:]):
        assert (b - a) % 8 in (1, 7)


def test_record_times_must_be_inside_span():
    with pytest.raises(InvalidInputError):
        sample_states(constant_model(np.zeros((2, 2))), [0], None, DIRAC1, DIRAC1, (0.0, 1.0), [2.0],
                      np.random.default_rng(0))


def test_moment_bounds_hold(rng):
    chain = build_lattice_chain(make_game("pursuit-1d"), 1 / 8)
    rep = moment_bounds_check(chain, 10_000, [0.05], rng, starts=[0, 3])
    assert rep.ok
    row = rep.rows[0]
    assert row.bound_eps == pytest.approx(chain.epsilon ** 2 * 0.05 + varsigma_one(0.05, 2.0, 1) * 0.05)


def test_moment_bound_trivial_gap():
    chain = build_split_chain(make_game("pursuit-1d"), 1 / 8)
    g = RelaxedFeedback.uniform(8, 3)
    states, _ = sample_states(chain, [2] * 50, None, g, g, (0.0, 0.1), [0.0], np.random.default_rng(0))
    assert np.all(states == 2)


def test_control_schedules_cover_pure_pairs(rng):
    chain = build_lattice_chain(make_game("pursuit-1d"), 1 / 8)
    names = [name for name, _, _ in control_schedules(chain, rng, (0.0, 1.0))]
    assert len(names) == 10 and names[-1] == "random"


def test_law_speed_bound_along_schedules(rng):
    dyn = make_game("pursuit-1d")
    chain = build_lattice_chain(dyn, 1 / 8)
    for _, g, th in control_schedules(chain, rng, (0.0, 0.5)):
        traj = integrate_kolmogorov(chain, rng.dirichlet(np.ones(8)), g, th, (0.0, 0.5))
        idx = np.linspace(0, len(traj.times) - 1, 5).astype(int)
        pairs = [(int(i), int(j)) for i in idx for j in idx if i < j]
        assert law_speed_violations(traj, dyn.bound_R, 1, pairs) == []


def test_deterministic_flow_bound():
    times = np.array([0.0, 0.1, 0.2])
    pos = [np.array([[0.0]]), np.array([[0.1]]), np.array([[0.2]])]
    assert deterministic_flow_violations(times, pos, 1.0 + 1e-9) == []
    assert deterministic_flow_violations(times, pos, 0.5) != []


def test_law_csv_layout():
    model = constant_model(np.zeros((2, 2)))
    traj = integrate_kolmogorov(model, [0.5, 0.5], DIRAC1, DIRAC1, (0.0, 1.0), tau=0.25)
    lines = traj.to_csv().splitlines()
    assert lines[0] == "# mftg-csv v1" and lines[1] == "t,mu_1,mu_2"
    assert lines[-1] == "1,0.5,0.5"


def test_zero_gap_and_monotone_bounds(rng):
    chain = build_lattice_chain(make_game("pursuit-1d"), 1 / 8)
    rep = moment_bounds_check(chain, 200, [0.0, 0.01, 0.05, 0.1], rng, starts=[0])
    rows = [r for r in rep.rows if r.schedule == rep.rows[0].schedule]
    assert rows[0].mean == 0.0 and rows[0].bound_eps == 0.0 and rows[0].bound_r1 == 0.0
    assert all(b.bound_eps > a.bound_eps and b.bound_r1 > a.bound_r1 for a, b in zip(rows, rows[1:]))


def test_uniform_mixture_averages_all_pairs():
    chain = build_lattice_chain(make_game("pursuit-1d"), 1 / 8)
    g = RelaxedFeedback.uniform(8, 3)
    q = chain.rates(0.0, None)
    assert np.abs(averaged_rates(chain, 0.0, None, g, g) - q.mean(axis=(0, 1))).max() <= 1e-14
