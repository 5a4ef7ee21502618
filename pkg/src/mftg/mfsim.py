"""Particle simulation of the distribution of agents under the extremal-shift strategy."""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import torus
from .chainsim import deterministic_flow_violations, rk4_step, time_grid
from .dynamics import GameDynamics, TerminalCost, measure_view
from .errors import ContractError, InvalidInputError
from .measures import CSV_HEADER, DiscreteMeasure, embed, project, resample_counts, wasserstein
from .strategy import ControlDistribution, ExtremalShiftStrategy


def c_star(horizon: float, lipschitz_L: float) -> float:
    """C* = √(1 + 2T) · e^{(2L + 1/2) T}."""
    return math.sqrt(1.0 + 2.0 * horizon) * math.exp((2.0 * lipschitz_L + 0.5) * horizon)


def resample(m0: DiscreteMeasure, n: int) -> np.ndarray:
    """N particle positions whose empirical measure apportions m0 by largest remainder."""
    counts = resample_counts(m0.weights, n)
    return np.repeat(m0.points, counts, axis=0)


def sort_particles(x: np.ndarray) -> np.ndarray:
    return x[np.lexsort(x.T[::-1])]


# --- adversaries ----------------------------------------------------------

class Adversary:
    """Second-player reaction to (step, particle position, assigned first-player control)."""

    kind = "base"

    def respond(self, k, t, x, u_idx, guide_x, guide_v, dyn, m) -> np.ndarray:
        raise NotImplementedError

    def stage(self, t, x, m, u_idx, v_idx, dyn) -> np.ndarray:
        return v_idx


class ConstantAdversary(Adversary):
    kind = "constant"

    def __init__(self, index: int = 0):
        self.index = int(index)
        self.name = f"constant({index})"

    def respond(self, k, t, x, u_idx, guide_x, guide_v, dyn, m):
        if not 0 <= self.index < dyn.n_v:
            raise InvalidInputError(f"control index {self.index} out of range")
        return np.full(len(u_idx), self.index, dtype=int)


class RandomAdversary(Adversary):
    """Piecewise-constant random responses, a function of (seed, step, position, u) only."""

    kind = "random"

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.name = f"random({seed})"

    def respond(self, k, t, x, u_idx, guide_x, guide_v, dyn, m):
        out = np.empty(len(u_idx), dtype=int)
        for i, (p, u) in enumerate(zip(x, u_idx)):
            digest = hashlib.blake2b(
                np.asarray([self.seed, k, int(u)], dtype=np.int64).tobytes() + np.ascontiguousarray(p).tobytes(),
                digest_size=8).digest()
            out[i] = int.from_bytes(digest, "little") % dyn.n_v
        return out


class ExtremalAdversary(Adversary):
    """Plays v̂ against the guide atom each particle is paired with."""

    kind = "extremal"
    name = "extremal"

    def respond(self, k, t, x, u_idx, guide_x, guide_v, dyn, m):
        return np.asarray(guide_v, dtype=int)


class GradientAdversary(Adversary):
    """Greedy ascent of a cost density c: maximizes ⟨∇c(x), f⟩, re-evaluated at every integration stage."""

    kind = "gradient"

    def __init__(self, cost: TerminalCost, step: float = 1e-6):
        if cost.linear_c is None:
            raise InvalidInputError("the gradient adversary needs a cost density")
        self.c = cost.linear_c
        self.step = step
        self.name = "gradient"

    def _choose(self, t, x, m, u_idx, dyn):
        d = x.shape[1]
        grad = np.empty_like(x)
        for i in range(d):
            e = np.zeros(d)
            e[i] = self.step
            grad[:, i] = (self.c(torus.wrap(x + e)) - self.c(torus.wrap(x - e))) / (2 * self.step)
        vel = dyn.velocity_table(t, x, m)[np.arange(len(x)), u_idx]  # (C, nV, d)
        return np.argmax(np.einsum("cvd,cd->cv", vel, grad), axis=1)

    def respond(self, k, t, x, u_idx, guide_x, guide_v, dyn, m):
        return self._choose(t, x, m, u_idx, dyn)

    def stage(self, t, x, m, u_idx, v_idx, dyn):
        return self._choose(t, x, m, u_idx, dyn)


ADVERSARY_KINDS = ("constant", "random", "extremal", "gradient")


def make_adversary(kind: str, *, seed: int = 0, index: int = 0, cost: Optional[TerminalCost] = None) -> Adversary:
    if kind == "constant":
        return ConstantAdversary(index)
    if kind == "random":
        return RandomAdversary(seed)
    if kind == "extremal":
        return ExtremalAdversary()
    if kind == "gradient":
        return GradientAdversary(cost)
    raise InvalidInputError(f"unknown adversary {kind!r}; choose from {', '.join(ADVERSARY_KINDS)}")


# --- control assignment ---------------------------------------------------

@dataclass
class Components:
    """Per-particle mixtures: component c belongs to particle ``particle[c]`` with fraction ``weight[c]``."""

    particle: np.ndarray
    weight: np.ndarray
    u_idx: np.ndarray
    entry: np.ndarray


def water_fill(counts: np.ndarray, atom_of_entry: np.ndarray, entry_mass: np.ndarray, n: int) -> Components:
    """Split particles among plan entries so that every entry receives exactly mass·N particle units.

    Particles of atom i occupy a contiguous block; entries of atom i pour their
    units into that block in order, each particle holding one unit.
    """
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    atom_of_entry = np.asarray(atom_of_entry, dtype=int)
    entry_mass = np.asarray(entry_mass, dtype=float)
    parts, weights, entries = [], [], []
    for i in np.unique(atom_of_entry):
        idx = np.flatnonzero(atom_of_entry == i)
        bounds = np.concatenate([[0.0], np.cumsum(entry_mass[idx])])
        # the atom holds exactly counts[i] units; rescale away LP roundoff
        bounds = bounds * (counts[i] / bounds[-1])
        bounds[-1] = counts[i]
        for e, lo, hi in zip(idx, bounds[:-1], bounds[1:]):
            for p in range(int(math.floor(lo)), min(int(math.ceil(hi)), int(counts[i]))):
                take = min(hi, p + 1) - max(lo, p)
                if take > 1e-15:
                    parts.append(starts[i] + p)
                    weights.append(take)
                    entries.append(e)
    parts = np.array(parts, dtype=int)
    weights = np.array(weights)
    return Components(parts, weights, np.zeros(len(parts), dtype=int), np.array(entries, dtype=int))


def realized_joint(x: np.ndarray, comp: Components, n_u: int) -> dict:
    """Joint law of (position, u) carried by the particles."""
    out = {}
    for p, w, u in zip(comp.particle, comp.weight, comp.u_idx):
        key = (x[p].tobytes(), int(u))
        out[key] = out.get(key, 0.0) + w / len(x)
    return out


# --- simulation -----------------------------------------------------------

@dataclass
class FlowResult:
    times: np.ndarray
    positions: list
    outcome: float
    adversary: str
    w2_to_guide: list = field(default_factory=list)
    # snapshots of the guide state at T; the strategy object itself is reused across runs
    guide_trace: list = field(default_factory=list)
    guide_w2_final: float = 0.0
    step_slack: list = field(default_factory=list)

    def final_measure(self) -> DiscreteMeasure:
        return DiscreteMeasure.from_particles(self.positions[-1])

    def speed_violations(self, bound_R: float):
        return deterministic_flow_violations(self.times, self.positions, bound_R)

    def trajectory_csv(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        buf.write("t,atoms,mean_x,digest,w2_to_guide\n")
        for t, x, w in zip(self.times, self.positions, self.w2_to_guide):
            m = DiscreteMeasure.from_particles(x)
            digest = hashlib.sha256(m.points.tobytes() + m.weights.tobytes()).hexdigest()[:16]
            mean = ";".join(torus.format_coord(v) for v in np.mean(x, axis=0))
            buf.write(f"{torus.format_coord(t)},{m.size},{mean},{digest},{torus.format_coord(w)}\n")
        return buf.getvalue()


def _velocities(dyn, t, x, m, comp: Components, v_idx) -> np.ndarray:
    xs = x[comp.particle]
    f = dyn.f(t, xs, m, dyn.controls_u[comp.u_idx], dyn.controls_v[v_idx])
    f = np.broadcast_to(f, xs.shape)
    out = np.zeros_like(x)
    np.add.at(out, comp.particle, comp.weight[:, None] * f)
    return out


def simulate_flow(dyn: GameDynamics, cost: TerminalCost, strategy: ExtremalShiftStrategy, adversary: Adversary,
                  m0: DiscreteMeasure, n_particles: int, dt: Optional[float] = None) -> FlowResult:
    """Run the strategy against the adversary; returns the particle flow at partition nodes and g(m(T))."""
    times = strategy.times
    x = sort_particles(resample(m0, n_particles))
    n = n_particles
    strategy.start(DiscreteMeasure.from_particles(x))
    dt = strategy.tau if dt is None else float(dt)
    positions = [x.copy()]
    w2s = []
    for k in range(len(times) - 1):
        m_k = DiscreteMeasure.from_particles(x)
        alpha = strategy.step_first_player(k, m_k)
        step = strategy.pending
        w2s.append(step.w2)
        # particles are sorted, so atom i occupies a contiguous block
        counts = np.rint(m_k.weights * n).astype(int)
        comp = water_fill(counts, step.rows, step.mass, n)
        comp.u_idx = step.u_idx[comp.entry]
        _check_alpha(x, comp, alpha, n)
        guide_pts = strategy.model.lattice.points[step.guide_states[comp.entry]]
        v_idx = adversary.respond(k, times[k], x[comp.particle], comp.u_idx, guide_pts, step.v_idx[comp.entry],
                                  dyn, m_k)

        def deriv(t, y):
            m = measure_view(y, np.full(n, 1.0 / n))
            v = adversary.stage(t, y[comp.particle], m, comp.u_idx, v_idx, dyn)
            return _velocities(dyn, t, y, m, comp, v)

        for a, b in zip(*_pairs(time_grid(times[k], times[k + 1], dt))):
            x = torus.wrap(rk4_step(deriv, a, x, b - a))
        strategy.advance_guides(k, m_k)
        order = np.lexsort(x.T[::-1])
        x = x[order]
        positions.append(x.copy())
    m_T = DiscreteMeasure.from_particles(x)
    last = strategy.finish(m_T)
    w2s.append(last.w2_to_guide)
    return FlowResult(np.asarray(times), positions, cost(m_T), getattr(adversary, "name", adversary.kind), w2s,
                      list(strategy.trace), strategy.guide_w2(), list(strategy.step_slack))


def _pairs(ts):
    return ts[:-1], ts[1:]


def _check_alpha(x, comp: Components, alpha: ControlDistribution, n: int):
    realized = realized_joint(x, comp, len(alpha.control_set))
    target = {(p.tobytes(), int(u)): w for p, u, w in zip(alpha.points, alpha.controls, alpha.weights)}
    keys = set(realized) | set(target)
    if any(abs(realized.get(key, 0.0) - target.get(key, 0.0)) > 1e-12 for key in keys):
        raise ContractError("particle controls do not reproduce the first player's control distribution")


# --- bounds and estimates -------------------------------------------------

@dataclass
class OutcomeBound:
    bound: float
    phi: float
    epsilon: float
    c_star: float
    projection_gap: float
    modulus_term: float


def outcome_bound(dyn: GameDynamics, cost: TerminalCost, model, value, m0: DiscreteMeasure, t0: float = 0.0) -> OutcomeBound:
    """φ⁺(t0, pr(m0)) + ς_g(C* ε), the limit of the guaranteed outcome as the partition refines."""
    if cost.modulus is None:
        raise InvalidInputError("the terminal cost needs a modulus of continuity")
    mu0 = project(m0, model.lattice)
    phi = value.value(t0, mu0)
    cs = c_star(dyn.horizon, dyn.lipschitz_L)
    gap = wasserstein(2, m0, embed(mu0))[0]
    term = float(cost.modulus(cs * model.epsilon))
    return OutcomeBound(phi + term, phi, model.epsilon, cs, gap, term)


def residual_proxy(result: FlowResult) -> float:
    """Measured stand-in for the vanishing remainder: W₂(η̃(T), μ̃(T)) plus the positive part of the step-inequality excess."""
    slack = max([0.0] + result.step_slack)
    T = result.times[-1] - result.times[0]
    return result.guide_w2_final + math.sqrt(T * slack)


@dataclass
class ValueEstimate:
    upper: float
    outcomes: dict
    strongest: str
    results: dict


def estimate_value(dyn: GameDynamics, cost: TerminalCost, strategy: ExtremalShiftStrategy,
                   adversaries: Sequence[Adversary], m0: DiscreteMeasure, n_particles: int,
                   reps: int = 1) -> ValueEstimate:
    """Largest outcome over the adversary list (each replicated ``reps`` times)."""
    outcomes, results = {}, {}
    for adv in adversaries:
        name = getattr(adv, "name", adv.kind)
        best = -math.inf
        for _ in range(reps):
            res = simulate_flow(dyn, cost, strategy, adv, m0, n_particles)
            best = max(best, res.outcome)
            results[name] = res
        outcomes[name] = best
    strongest = max(outcomes, key=outcomes.get)
    return ValueEstimate(outcomes[strongest], outcomes, strongest, results)
