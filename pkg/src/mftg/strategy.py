"""Extremal-shift strategy with memory driven by two finite-state guides.

The guide μ follows the Kolmogorov flow under the first player's minimax
feedback and keeps the supersolution non-increasing.  The guide η tracks the
real distribution: on each partition interval it averages Kolmogorov flows
started at the lattice atoms of the current optimal plan, each with the
second player's control replaced by the extremal response at its own atom.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import torus
from .chainsim import rk4_step, time_grid
from .dynamics import GameDynamics, TerminalCost
from .errors import InvalidInputError, SequencingError, SupersolutionDefectError
from .hj import state_games
from .markov import KolmogorovModel
from .measures import CSV_HEADER, DiscreteMeasure, SimplexVector, embed, project, wasserstein


def _payoff_tables(dyn: GameDynamics, t, xs, ys, m) -> np.ndarray:
    """⟨ℓ(x, y), f(t, x, m, u, v)⟩ for every pair, shape (P, nU, nV)."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    disp = torus.displacement(xs, ys)
    return np.einsum("puvd,pd->puv", dyn.velocity_table(t, xs, m), disp)


def extremal_indices(dyn: GameDynamics, t, xs, ys, m):
    """Indices of û (argmin max) and v̂ (argmax min) for each pair; ties go to the first control."""
    tab = _payoff_tables(dyn, t, xs, ys, m)
    return np.argmin(tab.max(axis=2), axis=1), np.argmax(tab.min(axis=1), axis=1)


def extremal_u(t, x, y, m, dyn: GameDynamics):
    iu, _ = extremal_indices(dyn, t, np.atleast_1d(np.asarray(x, float))[None], np.atleast_1d(np.asarray(y, float))[None], m)
    return dyn.controls_u[iu[0]]


def extremal_v(t, x, y, m, dyn: GameDynamics):
    _, iv = extremal_indices(dyn, t, np.atleast_1d(np.asarray(x, float))[None], np.atleast_1d(np.asarray(y, float))[None], m)
    return dyn.controls_v[iv[0]]


def swap_players(dyn: GameDynamics, cost: TerminalCost):
    """The same game seen from the second player: controls exchanged, payoff negated.

    Running the first-player construction on the swapped game, with a
    subsolution of the original problem negated, yields the second player's strategy.
    """
    f = dyn.f

    def swapped(t, x, m, u, v):
        return f(t, x, m, v, u)

    sep = None
    if dyn.separated is not None:
        f1, f2 = dyn.separated
        sep = (f2, f1)
    game = replace(dyn, name=f"{dyn.name}-swapped", controls_u=dyn.controls_v, controls_v=dyn.controls_u,
                   f=swapped, separated=sep)
    if cost.linear_c is not None:
        c = cost.linear_c
        neg = TerminalCost.linear(lambda p: -c(p), cost.lip_c, f"-{cost.name}")
    else:
        g = cost.g
        neg = TerminalCost(g=lambda m: -g(m), modulus=cost.modulus, name=f"-{cost.name}")
    return game, neg


@dataclass
class ControlDistribution:
    """Finitely supported joint law of (position, control index)."""

    points: np.ndarray
    controls: np.ndarray
    weights: np.ndarray
    control_set: np.ndarray

    def pairs(self):
        return [(torus.TorusPoint(tuple(float(c) for c in p)), tuple(self.control_set[i].tolist()), float(w))
                for p, i, w in zip(self.points, self.controls, self.weights)]

    def first_marginal(self) -> DiscreteMeasure:
        return DiscreteMeasure(self.points, self.weights)


@dataclass
class PlanStep:
    """Bookkeeping of one partition node: plan entries with their extremal controls."""

    k: int
    time: float
    measure: DiscreteMeasure
    rows: np.ndarray  # atom index in ``measure``
    guide_states: np.ndarray  # lattice index of the paired guide atom
    mass: np.ndarray
    u_idx: np.ndarray
    v_idx: np.ndarray
    w2: float


@dataclass
class TraceRow:
    t: float
    guide_gap: float  # ‖μ − η‖₂
    w2_to_guide: float  # W₂(m_k, η̃(t_k))
    phi: float  # φ⁺(t_k, μ(t_k))


def partition(t0: float, T: float, spacing: float) -> np.ndarray:
    """Uniform partition with mesh at most ``spacing``."""
    n = max(int(math.ceil((T - t0) / spacing - 1e-9)), 1)
    return np.linspace(t0, T, n + 1)


class ExtremalShiftStrategy:
    def __init__(self, model: KolmogorovModel, value, times, cost: Optional[TerminalCost] = None,
                 tau: Optional[float] = None, tol: float = 1e-6):
        if model.dynamics is None:
            raise InvalidInputError("the strategy needs a model built from game dynamics")
        self.model = model
        self.dyn = model.dynamics
        self.value = value
        self.times = np.asarray(times, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise InvalidInputError("partition times must increase")
        self.cost = cost
        self.tau = model.default_step() if tau is None else float(tau)
        self.tol = tol
        self._point_index = {tuple(p): i for i, p in enumerate(model.lattice.points.tolist())}
        self.k = None
        self.mu = None
        self.eta = None
        self._pending: Optional[PlanStep] = None
        self.steps: list = []
        self.trace: list = []
        self.guide_mu_path: list = []
        self.guide_eta_path: list = []
        self.step_slack: list = []
        self.pair_odes = 0

    @property
    def mesh(self) -> float:
        return float(np.max(np.diff(self.times)))

    def start(self, m0: DiscreteMeasure):
        p = project(m0, self.model.lattice).values
        self.mu = p.copy()
        self.eta = p.copy()
        self.k = 0
        self._pending = None
        self.steps, self.trace, self.step_slack = [], [], []
        self.guide_mu_path = [(self.times[0], self.mu.copy())]
        self.guide_eta_path = [(self.times[0], self.eta.copy())]
        return self

    def guide_measure(self) -> DiscreteMeasure:
        return embed(SimplexVector(self.model.lattice, self.eta))

    def step_first_player(self, k: int, m_k: DiscreteMeasure) -> ControlDistribution:
        if self.k is None:
            raise SequencingError("call start(m0) first")
        if k != self.k or self._pending is not None or k >= len(self.times) - 1:
            raise SequencingError(f"expected step {self.k} with guides advanced, got step {k}")
        t = self.times[k]
        guide = self.guide_measure()
        w2, plan = wasserstein(2, m_k, guide)
        states = np.array([self._point_index[tuple(p)] for p in guide.points[plan.cols].tolist()], dtype=int)
        iu, iv = extremal_indices(self.dyn, t, m_k.points[plan.rows], guide.points[plan.cols], m_k)
        self._pending = PlanStep(k, t, m_k, plan.rows, states, plan.mass, iu, iv, w2)
        # merge entries with equal (atom, control)
        key = plan.rows * self.dyn.n_u + iu
        uniq, inv = np.unique(key, return_inverse=True)
        weights = np.bincount(inv, weights=plan.mass)
        atoms, ctrl = uniq // self.dyn.n_u, uniq % self.dyn.n_u
        return ControlDistribution(m_k.points[atoms], ctrl, weights, self.dyn.controls_u)

    @property
    def pending(self) -> Optional[PlanStep]:
        return self._pending

    def second_player_law(self) -> np.ndarray:
        """ϑ_k: disintegration of β_k over the guide; unsupported states get the first control."""
        st = self._pending
        n, nv = self.model.n, self.dyn.n_v
        theta = np.zeros((n, nv))
        np.add.at(theta, (st.guide_states, st.v_idx), st.mass)
        tot = theta.sum(axis=1)
        empty = tot <= 0
        theta[empty, 0] = 1.0
        theta[~empty] /= tot[~empty, None]
        return theta

    def advance_guides(self, k: int, m_k: DiscreteMeasure):
        st = self._pending
        if st is None or st.k != k:
            raise SequencingError(f"step_first_player({k}) must precede advance_guides({k})")
        if m_k is not st.measure and m_k != st.measure:
            raise SequencingError("advance_guides received a different distribution than step_first_player")
        model = self.model
        s, r = self.times[k], self.times[k + 1]
        theta = self.second_player_law()
        phi_before = self.value.value(s, self.mu)
        self.trace.append(TraceRow(s, float(np.linalg.norm(self.mu - self.eta)), st.w2, phi_before))

        # one pair ODE per distinct (guide state, extremal response)
        gkey = st.guide_states * self.dyn.n_v + st.v_idx
        groups, entry_group = np.unique(gkey, return_inverse=True)
        g_state, g_v = groups // self.dyn.n_v, groups % self.dyn.n_v
        self.pair_odes += len(groups)
        G, n = len(groups), model.n
        E0 = np.zeros((G, n))
        E0[np.arange(G), g_state] = 1.0
        pinned = np.zeros((G, self.dyn.n_v))
        pinned[np.arange(G), g_v] = 1.0

        def deriv(t, y):
            mu = y[:n]
            E = y[n:].reshape(G, n)
            gamma = state_games(model, t, mu, self.value.gradient(t, mu))[1]
            qbase = model.averaged(t, mu, gamma, theta)
            mod_rows = self._rows_with(t, mu, gamma, g_state, pinned)
            dE = E @ qbase + E[np.arange(G), g_state][:, None] * (mod_rows - qbase[g_state])
            return np.concatenate([mu @ qbase, dE.ravel()])

        y = np.concatenate([self.mu, E0.ravel()])
        ts = time_grid(s, r, self.tau)
        for a, b in zip(ts[:-1], ts[1:]):
            y = rk4_step(deriv, a, y, b - a)
            y = np.maximum(y, 0.0)
        mu_new = y[:n] / y[:n].sum()
        E = y[n:].reshape(G, n)
        E /= E.sum(axis=1, keepdims=True)
        eta_new = np.bincount(entry_group, weights=st.mass, minlength=G) @ E
        eta_new /= eta_new.sum()
        phi_after = self.value.value(r, mu_new)
        if phi_after > phi_before + self.tol:
            raise SupersolutionDefectError(
                f"value rose from {phi_before:.9g} to {phi_after:.9g} along the guide on step {k}",
                step=k, mu=self.mu.copy())
        self.mu, self.eta = mu_new, eta_new
        self.guide_mu_path.append((r, mu_new.copy()))
        self.guide_eta_path.append((r, eta_new.copy()))
        self.steps.append(st)
        self._pending = None
        self.k = k + 1

    def _rows_with(self, t, mu, gamma, states, pinned_v):
        """Rows 𝒬[ȳ, :] at the given states when the second player plays ``pinned_v`` there."""
        model = self.model
        if model.is_split:
            q1, q2 = model.split_rates(t, mu)
            return (np.einsum("uxy,xu->xy", q1[:, states], gamma[states])
                    + np.einsum("vxy,xv->xy", q2[:, states], pinned_v))
        q = model.rates(t, mu)
        return np.einsum("uvxy,xu,xv->xy", q[:, :, states], gamma[states], pinned_v)

    def finish(self, m_T: DiscreteMeasure):
        """Record the terminal node and the per-step inequality residuals."""
        if self.k != len(self.times) - 1:
            raise SequencingError("the strategy has not reached the final partition node")
        w2 = wasserstein(2, m_T, self.guide_measure())[0]
        self.trace.append(TraceRow(self.times[-1], float(np.linalg.norm(self.mu - self.eta)), w2,
                                   self.value.value(self.times[-1], self.mu)))
        L, eps = self.dyn.lipschitz_L, self.model.epsilon
        self.step_slack = []
        for a, b in zip(self.trace[:-1], self.trace[1:]):
            dt = b.t - a.t
            excess = b.w2_to_guide ** 2 - a.w2_to_guide ** 2 * (1 + (4 * L + 1) * dt) - 2 * eps ** 2 * dt
            self.step_slack.append(excess / dt)
        return self.trace[-1]

    def guide_gap(self) -> float:
        """‖μ − η‖₂ at the current node."""
        return float(np.linalg.norm(self.mu - self.eta))

    def guide_w2(self) -> float:
        return wasserstein(2, embed(SimplexVector(self.model.lattice, self.mu)), self.guide_measure())[0]

    def trace_csv(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        buf.write("t,guide_gap,w2_to_guide,phi\n")
        for row in self.trace:
            buf.write(",".join(torus.format_coord(v) for v in (row.t, row.guide_gap, row.w2_to_guide, row.phi)) + "\n")
        return buf.getvalue()
