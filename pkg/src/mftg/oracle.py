"""Independent brute-force references for transport, chain laws and the per-agent game.

Nothing here reuses the numerical kernels of the main path: transport is by
enumeration of assignments, chain laws by a hand-written series exponential,
and the agent value by an upwind grid scheme.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .dynamics import GameDynamics, TerminalCost
from .errors import InvalidInputError
from .measures import DiscreteMeasure

MAX_ASSIGNMENT = 8


def _split_units(m: DiscreteMeasure, n: int) -> np.ndarray:
    counts = m.weights * n
    rounded = np.rint(counts)
    if np.abs(counts - rounded).max() > 1e-9:
        raise InvalidInputError(f"weights are not multiples of 1/{n}")
    return np.repeat(m.points, rounded.astype(int), axis=0)


def _torus_gap(a, b) -> np.ndarray:
    diff = np.abs(a - b) % 1.0
    return np.minimum(diff, 1.0 - diff)


def ot_assignment(m1: DiscreteMeasure, m2: DiscreteMeasure, n: int, p: int = 2) -> float:
    """W_p by minimizing over all n! matchings of unit particles (weights must be k/n, n ≤ 8)."""
    if n > MAX_ASSIGNMENT:
        raise InvalidInputError(f"assignment oracle limited to {MAX_ASSIGNMENT} particles, got {n}")
    a = _split_units(m1, n)
    b = _split_units(m2, n)
    cost = np.array([[float(np.sqrt(np.sum(_torus_gap(x, y) ** 2))) ** p for y in b] for x in a])
    perms = np.array(list(itertools.permutations(range(n))))
    best = float(cost[np.arange(n), perms].sum(axis=1).min())
    return (best / n) ** (1.0 / p)


def expm_series(q: np.ndarray, t: float) -> np.ndarray:
    """exp(tQ) by scaling and squaring with a truncated Taylor series."""
    a = np.asarray(q, dtype=float) * t
    norm = float(np.abs(a).sum(axis=1).max()) if a.size else 0.0
    squarings = max(0, int(math.ceil(math.log2(norm / 0.25)))) if norm > 0.25 else 0
    a = a / (2 ** squarings)
    out = np.eye(a.shape[0])
    term = np.eye(a.shape[0])
    for k in range(1, 40):
        term = term @ a / k
        out = out + term
        if np.abs(term).max() < 1e-18:
            break
    for _ in range(squarings):
        out = out @ out
    return out


def expm_law(q: np.ndarray, mu0, t: float) -> np.ndarray:
    """μ0 · exp(tQ) for a constant rate matrix."""
    return np.asarray(mu0, dtype=float) @ expm_series(q, t)


def two_state_law(a: float, b: float, p0: float, t: float) -> np.ndarray:
    """Law of the chain with rates a (0→1) and b (1→0) started from (p0, 1 − p0)."""
    s = a + b
    if s == 0:
        return np.array([p0, 1.0 - p0])
    eq = b / s
    first = eq + (p0 - eq) * math.exp(-s * t)
    return np.array([first, 1.0 - first])


@dataclass
class AgentValue:
    x: np.ndarray
    values: np.ndarray
    cells: int
    refinement_change: float

    def at(self, points) -> np.ndarray:
        """Periodic linear interpolation."""
        pts = np.asarray(points, dtype=float).ravel() % 1.0
        n = self.cells
        s = pts * n
        i = np.floor(s).astype(int) % n
        f = s - np.floor(s)
        return (1 - f) * self.values[i] + f * self.values[(i + 1) % n]

    def integrate(self, m: DiscreteMeasure) -> float:
        return float(m.weights @ self.at(m.points[:, 0]))


def _upwind(dyn: GameDynamics, c, t0: float, cells: int, cfl: float = 0.9) -> np.ndarray:
    x = np.arange(cells) / cells
    dx = 1.0 / cells
    # the velocity set is a finite list; H(p) = min_u max_v p f is piecewise linear in p
    speeds = np.array([[float(dyn.f(0.0, np.zeros(1), None, u, v)[0]) for v in dyn.controls_v]
                       for u in dyn.controls_u])
    pos = float(speeds.max(axis=1).min())  # slope of H for p > 0
    neg = float(speeds.min(axis=1).max())  # slope of H for p < 0
    vmax = max(abs(pos) + abs(neg), 1e-12)
    steps = max(1, int(math.ceil((dyn.horizon - t0) * vmax / (cfl * dx))))
    dt = (dyn.horizon - t0) / steps
    v = np.asarray(c(x[:, None]), dtype=float)
    for _ in range(steps):
        fwd = (np.roll(v, -1) - v) / dx
        bwd = (v - np.roll(v, 1)) / dx
        # backward in time: v(t - dt) = v(t) + dt H(v_x); monotone upwind selection
        ham = (np.maximum(pos, 0) * np.maximum(fwd, 0) + np.minimum(pos, 0) * np.maximum(bwd, 0)
               + np.maximum(neg, 0) * np.minimum(fwd, 0) + np.minimum(neg, 0) * np.minimum(bwd, 0))
        v = v + dt * ham
    return v


def agent_hji_1d(dyn: GameDynamics, cost: TerminalCost, cells: int = 512, t0: float = 0.0,
                 tol: float = 1e-3, max_cells: int = 1 << 16) -> AgentValue:
    """Per-agent value v(t0, ·) for a measure-independent game on the circle, refined until stable."""
    if dyn.dim != 1:
        raise InvalidInputError("the agent oracle is one-dimensional")
    if dyn.measure_dependent:
        raise InvalidInputError(f"game {dyn.name!r} depends on the distribution; the agent oracle needs it not to")
    if cost.linear_c is None:
        raise InvalidInputError("the agent oracle needs a cost density")
    prev = _upwind(dyn, cost.linear_c, t0, cells)
    while True:
        finer = _upwind(dyn, cost.linear_c, t0, 2 * cells)
        change = float(np.abs(finer[::2] - prev).max())
        cells *= 2
        if change < tol or cells >= max_cells:
            return AgentValue(np.arange(cells) / cells, finer, cells, change)
        prev = finer


def pursuit_closed_form(x, c, reach: float, samples: int = 20001) -> np.ndarray:
    """min of c over the arc of half-width ``reach`` around each x (the dominant-pursuer value)."""
    offsets = np.linspace(-reach, reach, samples)
    pts = (np.asarray(x, dtype=float).ravel()[:, None] + offsets[None, :]) % 1.0
    return np.min(c(pts[..., None]), axis=1)
