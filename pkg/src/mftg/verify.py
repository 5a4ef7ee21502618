"""Acceptance suites shared by ``mftg verify`` and the test-suite.

Each suite returns a :class:`SuiteResult` whose ``lines`` are human-readable
and whose ``rows`` are deterministic (no timings) so they can go into CSV.
"""

from __future__ import annotations

import contextlib
import io
import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import oracle
from .chainsim import (RelaxedFeedback, law_speed_violations, integrate_kolmogorov, moment_bounds_check,
                       r_one)
from .dynamics import make_cost, make_game
from .hj import (hamiltonian, solve_grid, solve_linear_value, solve_matrix_game, state_payoffs,
                 verify_supersolution)
from .markov import (build_lattice_chain, build_split_chain, certify_epsilon, constant_model, lattice_epsilon,
                     two_state_model)
from .measures import DiscreteMeasure, Lattice, SimplexVector, embed, metric_comparison, random_simplex, wasserstein
from .mfsim import (c_star, estimate_value, make_adversary, residual_proxy, simulate_flow, outcome_bound)
from .strategy import ExtremalShiftStrategy, partition


@dataclass
class SuiteResult:
    name: str
    criterion: int
    ok: bool
    lines: list = field(default_factory=list)
    rows: list = field(default_factory=list)  # (key, value) pairs
    seconds: float = 0.0

    def summary(self) -> str:
        return f"[{'PASS' if self.ok else 'FAIL'}] criterion {self.criterion} ({self.name}) in {self.seconds:.1f}s"


# reference initial distribution for the end-to-end studies
REFERENCE_M0 = DiscreteMeasure([[0.35], [0.5], [0.65]], [0.25, 0.5, 0.25])


def _metrics(rng) -> SuiteResult:
    res = SuiteResult("metrics", 1, True)
    lattices = [Lattice.regular(0.25, 1), Lattice.regular(0.125, 1), Lattice.regular(0.0625, 1),
                Lattice.regular(0.25, 2)]
    violations, checked, worst = 0, 0, math.inf
    for k in range(1000):
        lat = lattices[k % len(lattices)]
        mu1 = SimplexVector(lat, random_simplex(rng, lat.size))
        mu2 = SimplexVector(lat, random_simplex(rng, lat.size))
        for p in (1, 2):
            rep = metric_comparison(p, mu1, mu2)
            checked += 1
            wp = rep.w_p ** p
            worst = min(worst, rep.upper_bound - wp, wp - rep.lower_bound)
            violations += not rep.ok
    cross = 0.0
    lat8 = Lattice.regular(0.125, 1)
    for _ in range(50):
        counts = [rng.multinomial(8, np.ones(8) / 8) for _ in range(2)]
        m1, m2 = (embed(SimplexVector(lat8, c / 8)) for c in counts)
        for p in (1, 2):
            cross = max(cross, abs(wasserstein(p, m1, m2)[0] - oracle.ot_assignment(m1, m2, 8, p)))
    res.ok = violations == 0 and cross <= 1e-10
    res.rows = [("comparisons", checked), ("violations", violations), ("worst_margin", worst),
                ("assignment_max_diff", cross)]
    res.lines = [f"{checked} metric comparisons, {violations} violations, worst margin {worst:.3e}",
                 f"exact LP vs 8-particle assignment on 50 pairs: max diff {cross:.2e}"]
    return res


CHAIN_CASES = [("pursuit-1d", h) for h in (0.25, 0.125, 0.0625)] + \
              [("crowd-averse-1d", h) for h in (0.25, 0.125, 0.0625)] + \
              [("pursuit-2d", h) for h in (0.25, 0.125)]


def _chain(rng) -> SuiteResult:
    res = SuiteResult("chain", 2, True)
    for game, h in CHAIN_CASES:
        rep = certify_epsilon(build_lattice_chain(make_game(game), h), samples=8, rng=rng)
        ok = (rep.row_sum_error <= 1e-12 and rep.drift_defect <= 1e-10 and rep.ok)
        res.ok &= ok
        res.rows.append((f"{game}@{h:g}", f"eps={rep.epsilon:.6g};cover={rep.covering_radius:.6g};"
                                          f"drift={rep.drift_defect:.3e};moment={rep.second_moment:.6g};"
                                          f"rows={rep.row_sum_error:.3e}"))
        res.lines.append(f"{game:16s} h={h:<7g} eps={rep.epsilon:.5f} cover={rep.covering_radius:.5f} "
                         f"drift={rep.drift_defect:.1e} moment={rep.second_moment:.5f} "
                         f"rows={rep.row_sum_error:.1e} {'ok' if ok else 'FAILED'}")
    return res


def _random_schedule(rng, n, nu, nv, horizon, pieces=4):
    times = np.linspace(0.0, horizon, pieces + 1)[:-1]
    gam = RelaxedFeedback.piecewise(times, [rng.dirichlet(np.ones(nu), size=n) for _ in times])
    th = RelaxedFeedback.piecewise(times, [rng.dirichlet(np.ones(nv), size=n) for _ in times])
    return gam, th


def _kolmogorov(rng) -> SuiteResult:
    res = SuiteResult("kolmogorov", 3, True)
    a, b = 0.7, 0.4
    q = np.array([[-a, a], [b, -b]])
    model = constant_model(q)
    mu0 = np.array([0.9, 0.1])
    traj = integrate_kolmogorov(model, mu0, RelaxedFeedback.dirac(2, 1, 0), RelaxedFeedback.dirac(2, 1, 0),
                                (0.0, 2.0), tau=1.0 / 256)
    law_err = max(float(np.abs(traj.values[j] - oracle.expm_law(q, mu0, t)).max())
                  for j, t in enumerate(traj.times))
    mass_err = float(np.abs(traj.values.sum(axis=1) - 1.0).max()) / 2.0
    res.ok &= law_err <= 1e-8 and mass_err <= 1e-13

    dyn = make_game("pursuit-1d")
    chain = build_lattice_chain(dyn, 0.125)
    r1 = r_one(dyn.bound_R, dyn.dim)
    bad, pairs_checked, drift_mass = 0, 0, 0.0
    for _ in range(100):
        gam, th = _random_schedule(rng, chain.n, chain.n_u, chain.n_v, dyn.horizon)
        start = random_simplex(rng, chain.n)
        law = integrate_kolmogorov(chain, start, gam, th, (0.0, dyn.horizon))
        drift_mass = max(drift_mass, float(np.abs(law.values.sum(axis=1) - 1.0).max()) / dyn.horizon)
        nodes = np.linspace(0, len(law.times) - 1, 6).astype(int)
        pairs = [(int(i), int(j)) for i in nodes for j in nodes if i < j]
        pairs_checked += len(pairs)
        bad += len(law_speed_violations(law, dyn.bound_R, dyn.dim, pairs))
    res.ok &= bad == 0 and drift_mass <= 1e-13
    res.rows = [("expm_max_diff", law_err), ("mass_error_per_time", max(mass_err, drift_mass)),
                ("law_speed_pairs", pairs_checked), ("law_speed_violations", bad)]
    res.lines = [f"2-state chain vs series exponential: max diff {law_err:.2e}",
                 f"mass drift per unit time: {max(mass_err, drift_mass):.2e}",
                 f"W2^2 <= R1^2 (t-s) with R1 = {r1:g}: {bad} violations over {pairs_checked} pairs (100 schedules)"]
    return res


def _moments(rng, paths: int = 10_000) -> SuiteResult:
    res = SuiteResult("moments", 4, True)
    chain = build_lattice_chain(make_game("pursuit-1d"), 0.125)
    rep = moment_bounds_check(chain, paths, [0.01, 0.05, 0.1], rng)
    res.ok = rep.ok
    res.rows = [("rows", len(rep.rows)), ("violations", sum(not r.ok for r in rep.rows)),
                ("worst_margin", rep.worst_margin)]
    res.lines = [f"{len(rep.rows)} (start, schedule, gap) cells with {paths} paths each; "
                 f"worst 3-sigma margin {rep.worst_margin:.4f}"]
    return res


def _hamiltonian(rng) -> SuiteResult:
    res = SuiteResult("hamiltonian", 5, True)
    model = build_lattice_chain(make_game("crowd-averse-1d"), 0.125)
    worst_gap = 0.0
    for k in range(1000):
        if k % 2:
            payoff = rng.normal(size=(int(rng.integers(2, 5)), int(rng.integers(2, 5))))
        else:
            t = float(rng.uniform(0, 1))
            mu = rng.dirichlet(np.ones(model.n))
            payoff = state_payoffs(model, t, mu, rng.normal(size=model.n))[int(rng.integers(model.n))]
        game = solve_matrix_game(payoff, force_lp=True)
        worst_gap = max(worst_gap, game.saddle_gap)
    shift_diff = 0.0
    for _ in range(50):
        t, mu = float(rng.uniform(0, 1)), rng.dirichlet(np.ones(model.n))
        w = rng.integers(-2 ** 20, 2 ** 20, size=model.n) / 2.0 ** 20
        c = float(rng.integers(-64, 64)) / 8.0
        shift_diff = max(shift_diff, abs(hamiltonian(model, t, mu, w)[0] - hamiltonian(model, t, mu, w + c)[0]))
    a, b, c, d = 3.0, -1.0, -2.0, 4.0
    closed = (a * d - b * c) / (a + d - b - c)
    mixed = abs(solve_matrix_game([[a, b], [c, d]]).value - closed)
    res.ok = worst_gap <= 1e-8 and shift_diff == 0.0 and mixed <= 1e-10
    res.rows = [("minmax_maxmin_gap", worst_gap), ("shift_difference", shift_diff), ("closed_form_diff", mixed)]
    res.lines = [f"min-max vs max-min over 1000 games: worst gap {worst_gap:.2e}",
                 f"H(w + c) - H(w): {shift_diff!r} (must be exactly 0)",
                 f"2x2 mixed value {closed:g}: diff {mixed:.2e}"]
    return res


def _value(rng) -> SuiteResult:
    res = SuiteResult("value", 6, True)
    two = two_state_model()
    cost = make_cost("sin2")
    lin = solve_linear_value(two, cost, dt=1.0 / 1024)
    grid = solve_grid(two, cost, dt=1.0 / 200, resolution=200)
    probes = [np.array([p, 1 - p]) for p in np.linspace(0, 1, 41)]
    grid_diff = max(abs(lin.value(t, mu) - grid.value(t, mu)) for t in (0.0, 0.5) for mu in probes)

    q = np.array([[-0.5, 0.3, 0.2], [0.1, -0.4, 0.3], [0.6, 0.0, -0.6]])
    single = constant_model(q, epsilon=1.0)
    one = solve_linear_value(single, cost, dt=1.0 / 512)
    c = cost.linear_c(single.lattice.points)
    expm_diff = max(float(np.abs(one.weights(t) - oracle.expm_series(q, 1.0 - t) @ c).max())
                    for t in (0.0, 0.25, 0.5, 0.75))

    chain = build_split_chain(make_game("pursuit-1d"), 0.0625)
    own = solve_linear_value(chain, cost)
    sup = verify_supersolution(own, chain, cost, samples=6, rng=rng)
    res.ok = grid_diff <= 2e-3 and expm_diff <= 1e-8 and sup.ok
    res.rows = [("linear_vs_grid", grid_diff), ("linear_vs_expm", expm_diff),
                ("terminal_violations", len(sup.terminal_violations)), ("flow_violations", len(sup.flow_violations)),
                ("max_flow_increase", sup.max_flow_increase)]
    res.lines = [f"|S|=2 linear vs 200x200 grid: max diff {grid_diff:.2e}",
                 f"single-control linear solver vs series exponential: {expm_diff:.2e}",
                 f"supersolution check: {sup.terminal_checked} terminal + {sup.flow_checked} flow probes, "
                 f"{len(sup.terminal_violations) + len(sup.flow_violations)} violations, max increase {sup.max_flow_increase:.2e}"]
    return res


GUIDE_SPACINGS = (0.1, 0.05, 0.025)


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def _guide(rng, h: float = 0.0625, particles: int = 512) -> SuiteResult:
    res = SuiteResult("guide", 7, True)
    dyn, cost = make_game("pursuit-1d"), make_cost("sin2")
    chain = build_split_chain(dyn, h)
    field_ = solve_linear_value(chain, cost)
    gaps = []
    for spacing in GUIDE_SPACINGS:
        st = ExtremalShiftStrategy(chain, field_, partition(0.0, dyn.horizon, spacing), cost)
        simulate_flow(dyn, cost, st, make_adversary("extremal"), REFERENCE_M0, particles)
        gaps.append(st.guide_gap())
    slope = loglog_slope(GUIDE_SPACINGS, gaps)
    monotone = all(b < a for a, b in zip(gaps, gaps[1:]))
    res.ok = slope >= 0.8 and monotone
    res.rows = [(f"gap@{s:g}", g) for s, g in zip(GUIDE_SPACINGS, gaps)] + [("slope", slope)]
    res.lines = [f"|mu(T) - eta(T)| at spacing {s:g}: {g:.4e}" for s, g in zip(GUIDE_SPACINGS, gaps)]
    res.lines.append(f"log-log slope {slope:.3f}, monotone {'yes' if monotone else 'no'}")
    return res


VALUE_LEVELS = ((0.125, 0.1), (0.0625, 0.05), (0.03125, 0.025))
VALUE_ADVERSARIES = (("constant", 0), ("constant", 1), ("constant", 2), ("random", 0), ("extremal", 0),
                     ("gradient", 0))


def value_study(levels=VALUE_LEVELS, particles: int = 512, seed: int = 0, game: str = "pursuit-1d",
                cost_name: str = "sin2", m0: DiscreteMeasure = REFERENCE_M0):
    """Estimated game value at nested (h, spacing) levels against the per-agent oracle.

    Returns the oracle integral and one dict per level.
    """
    dyn, cost = make_game(game), make_cost(cost_name, 1)
    target = oracle.agent_hji_1d(dyn, cost).integrate(m0)
    rows = []
    for h, spacing in levels:
        chain = build_split_chain(dyn, h) if dyn.separated is not None else build_lattice_chain(dyn, h)
        field_ = solve_linear_value(chain, cost)
        st = ExtremalShiftStrategy(chain, field_, partition(0.0, dyn.horizon, spacing), cost)
        advs = []
        for kind, index in VALUE_ADVERSARIES:
            advs.append(make_adversary(kind, seed=seed, index=index, cost=cost))
        est = estimate_value(dyn, cost, st, advs, m0, particles)
        rows.append({"h": h, "spacing": spacing, "epsilon": chain.epsilon, "estimate": est.upper,
                     "strongest": est.strongest, "oracle": target, "error": abs(est.upper - target)})
    return target, rows


def _outcome(rng, particles: int = 512) -> SuiteResult:
    res = SuiteResult("outcome", 8, True)
    dyn, cost = make_game("pursuit-1d"), make_cost("sin2")
    chain = build_split_chain(dyn, 0.0625)
    field_ = solve_linear_value(chain, cost)
    bound = outcome_bound(dyn, cost, chain, field_, REFERENCE_M0)
    residuals, bound_ok = [], True
    for spacing in GUIDE_SPACINGS:
        st = ExtremalShiftStrategy(chain, field_, partition(0.0, dyn.horizon, spacing), cost)
        flow = simulate_flow(dyn, cost, st, make_adversary("extremal"), REFERENCE_M0, particles)
        resid = residual_proxy(flow)
        residuals.append(resid)
        ok = flow.outcome <= bound.bound + resid
        bound_ok &= ok
        res.lines.append(f"spacing {spacing:g}: g(m(T)) = {flow.outcome:.4f} <= {bound.phi:.4f} + "
                         f"{bound.modulus_term:.4f} + {resid:.4f} {'ok' if ok else 'VIOLATED'}")
    resid_down = all(b < a for a, b in zip(residuals, residuals[1:]))
    target, rows = value_study(particles=particles)
    errors = [r["error"] for r in rows]
    err_down = all(b < a for a, b in zip(errors, errors[1:]))
    finest_cap = math.pi * c_star(dyn.horizon, dyn.lipschitz_L) * lattice_epsilon(0.03125, 1, dyn.bound_R) * 1.5
    res.ok = bound_ok and resid_down and err_down and errors[-1] <= finest_cap
    res.lines.append(f"residual proxy {', '.join(f'{r:.4f}' for r in residuals)}: "
                     f"{'decreasing' if resid_down else 'NOT decreasing'}")
    for r in rows:
        res.lines.append(f"h={r['h']:g} spacing={r['spacing']:g}: estimate {r['estimate']:.4f} "
                         f"({r['strongest']}) vs oracle {target:.4f}, error {r['error']:.4f}")
    res.lines.append(f"finest error {errors[-1]:.4f} <= cap {finest_cap:.4f}: {'yes' if errors[-1] <= finest_cap else 'no'}")
    res.rows = ([("bound", bound.bound)] + [(f"residual@{s:g}", r) for s, r in zip(GUIDE_SPACINGS, residuals)]
                + [(f"error@h={r['h']:g}", r["error"]) for r in rows] + [("finest_cap", finest_cap)])
    return res


DETERMINISM_RUNS = (
    ["lattice", "--game", "pursuit-1d", "--h", "1/8"],
    ["lattice", "--game", "crowd-averse-1d", "--h", "1/8", "--split"],
    ["chain-sim", "--game", "pursuit-1d", "--h", "1/8", "--paths", "500"],
    ["solve", "--game", "pursuit-1d", "--h", "1/8"],
    ["simulate", "--game", "pursuit-1d", "--h", "1/8", "--particles", "64", "--partition", "10",
     "--adversary", "random"],
    ["convergence", "--game", "pursuit-1d", "--levels", "2", "--particles", "64"],
    ["verify", "--suite", "hamiltonian"],
)


def _determinism(rng, seed: int = 11) -> SuiteResult:
    from .cli import run  # the CLI imports this module

    res = SuiteResult("determinism", 9, True)
    with tempfile.TemporaryDirectory() as tmp:
        for case, argv in enumerate(DETERMINISM_RUNS):
            outs, codes = [], []
            for rep in range(2):
                out = Path(tmp) / f"{case}-{argv[0]}-{rep}"
                with contextlib.redirect_stdout(io.StringIO()):
                    codes.append(run(argv + ["--seed", str(seed), "--out", str(out), "--quiet"]))
                outs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
            same = bool(outs[0]) and outs[0] == outs[1] and codes == [0, 0]
            res.ok &= same
            res.rows.append((" ".join(argv), f"{len(outs[0])} csv {'identical' if same else 'DIFFERENT'}"))
            res.lines.append(f"{' '.join(argv)}: {len(outs[0])} CSV files {'identical' if same else 'DIFFER'}")
    return res


SUITES: dict = {
    "metrics": _metrics,
    "chain": _chain,
    "kolmogorov": _kolmogorov,
    "moments": _moments,
    "hamiltonian": _hamiltonian,
    "value": _value,
    "guide": _guide,
    "outcome": _outcome,
    "determinism": _determinism,
}


def run_suite(name: str, seed: int = 0) -> SuiteResult:
    fn: Callable = SUITES[name]
    start = time.perf_counter()
    out = fn(np.random.default_rng(seed))
    out.seconds = time.perf_counter() - start
    return out
