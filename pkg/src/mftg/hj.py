"""Per-state matrix games, the finite-state Hamiltonian and value-function solvers."""

from __future__ import annotations

import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from .chainsim import RelaxedFeedback, rk4_step, time_grid
from .dynamics import TerminalCost
from .errors import InvalidInputError, MFTGError
from .markov import KolmogorovModel, sample_simplex_points
from .measures import CSV_HEADER, Lattice, SimplexVector, embed
from .torus import format_coord

SADDLE_TOL = 1e-12
_LP_OPTS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


@dataclass(frozen=True)
class MatrixGameResult:
    """Mixed saddle point of a payoff indexed [u, v]; u minimizes, v maximizes."""

    value: float
    mixed_u: np.ndarray
    mixed_v: np.ndarray
    upper: float  # max_v of mixed_u^T A, the minimizer's guarantee
    lower: float  # min_u of A mixed_v, the maximizer's guarantee
    pure: bool

    @property
    def saddle_gap(self) -> float:
        return self.upper - self.lower


def _lp_minimizer(b: np.ndarray) -> np.ndarray:
    nu, nv = b.shape
    res = linprog(-np.ones(nu), A_ub=b.T, b_ub=np.ones(nv), bounds=(0, None), method="highs-ds", options=_LP_OPTS)
    if res.status != 0:
        raise MFTGError(f"matrix game LP failed: {res.message}")
    x = np.maximum(res.x, 0.0)
    return x / x.sum()


def _lp_maximizer(b: np.ndarray) -> np.ndarray:
    nu, nv = b.shape
    res = linprog(np.ones(nv), A_ub=-b, b_ub=-np.ones(nu), bounds=(0, None), method="highs-ds", options=_LP_OPTS)
    if res.status != 0:
        raise MFTGError(f"matrix game LP failed: {res.message}")
    y = np.maximum(res.x, 0.0)
    return y / y.sum()


MAX_ENUMERATED = 5


def _support_pairs(nu: int, nv: int, k: int):
    rows = np.array(list(itertools.combinations(range(nu), k)), dtype=int)
    cols = np.array(list(itertools.combinations(range(nv), k)), dtype=int)
    return np.repeat(rows, len(cols), axis=0), np.tile(cols, (len(rows), 1))


def solve_by_supports(a: np.ndarray):
    """Batched exact solution of small matrix games by square-kernel enumeration.

    ``a`` has shape (m, nU, nV).  For each kernel size k every pair of k-row and
    k-column supports is tried at once: the indifference systems are solved and
    the first pair whose strategies are nonnegative and optimal against the
    whole matrix is kept.  Returns (values, mixed_u, mixed_v, solved).
    """
    m, nu, nv = a.shape
    vals, gu, gv = np.zeros(m), np.zeros((m, nu)), np.zeros((m, nv))
    solved = np.zeros(m, dtype=bool)
    scale = 1.0 + np.abs(a).reshape(m, -1).max(axis=1)
    for k in range(1, min(nu, nv) + 1):
        unsolved = np.flatnonzero(~solved)
        if not unsolved.size:
            break
        rows, cols = _support_pairs(nu, nv, k)
        npair = len(rows)
        at = a[unsolved]
        sub = at[:, rows[:, :, None], cols[:, None, :]]  # (t, P, k, k)
        # unknowns (x, value): x^T M = value 1 and sum x = 1; likewise M y = value 1
        sys_u = np.zeros(sub.shape[:2] + (k + 1, k + 1))
        sys_u[..., :k, k] = -1.0
        sys_u[..., k, :k] = 1.0
        sys_v = sys_u.copy()
        sys_u[..., :k, :k] = np.swapaxes(sub, -1, -2)
        sys_v[..., :k, :k] = sub
        sc = scale[unsolved][:, None] ** k
        usable = (np.abs(np.linalg.det(sys_u)) > 1e-12 * sc) & (np.abs(np.linalg.det(sys_v)) > 1e-12 * sc)
        eye = np.eye(k + 1)
        sys_u[~usable] = eye
        sys_v[~usable] = eye
        rhs = np.zeros((k + 1, 1))
        rhs[k] = 1.0
        xu = np.linalg.solve(sys_u, rhs)[..., :k, 0]
        xv = np.linalg.solve(sys_v, rhs)[..., :k, 0]
        full_u = np.zeros((unsolved.size, npair, nu))
        full_v = np.zeros((unsolved.size, npair, nv))
        np.put_along_axis(full_u, np.broadcast_to(rows, full_u.shape[:2] + (k,)), xu, axis=2)
        np.put_along_axis(full_v, np.broadcast_to(cols, full_v.shape[:2] + (k,)), xv, axis=2)
        tol = 1e-10 * scale[unsolved][:, None]
        good = usable & (full_u.min(axis=2) >= -tol) & (full_v.min(axis=2) >= -tol)
        full_u = np.maximum(full_u, 0.0)
        full_v = np.maximum(full_v, 0.0)
        full_u /= np.maximum(full_u.sum(axis=2, keepdims=True), 1e-300)
        full_v /= np.maximum(full_v.sum(axis=2, keepdims=True), 1e-300)
        upper = np.einsum("tpu,tuv->tpv", full_u, at).max(axis=2)
        lower = np.einsum("tuv,tpv->tpu", at, full_v).min(axis=2)
        good &= upper - lower <= tol
        found = good.any(axis=1)
        first = np.argmax(good, axis=1)[found]
        hit = unsolved[found]
        gu[hit] = full_u[found, first]
        gv[hit] = full_v[found, first]
        vals[hit] = np.einsum("mu,muv,mv->m", gu[hit], a[hit], gv[hit])
        solved[hit] = True
    return vals, gu, gv, solved


def solve_matrix_game(payoff, *, force_lp: bool = False) -> MatrixGameResult:
    a = np.asarray(payoff, dtype=float)
    if a.ndim != 2:
        raise InvalidInputError("payoff must be a matrix")
    nu, nv = a.shape
    row_max = a.max(axis=1)
    col_min = a.min(axis=0)
    upper, lower = float(row_max.min()), float(col_min.max())
    scale = 1.0 + float(np.abs(a).max())
    if not force_lp and upper - lower <= SADDLE_TOL * scale:
        iu, iv = int(np.argmin(row_max)), int(np.argmax(col_min))
        gu, gv = np.zeros(nu), np.zeros(nv)
        gu[iu], gv[iv] = 1.0, 1.0
        return MatrixGameResult(float(a[iu, iv]), gu, gv, upper, lower, True)
    if not force_lp and max(nu, nv) <= MAX_ENUMERATED:
        val, gu, gv, solved = solve_by_supports(a[None])
        if solved[0]:
            return MatrixGameResult(float(val[0]), gu[0], gv[0], float((gu[0] @ a).max()),
                                    float((a @ gv[0]).min()), False)
    # shift so every entry is at least 1; the game value moves by the same shift
    shift = 1.0 - float(a.min())
    b = a + shift
    gu = _lp_minimizer(b)
    gv = _lp_maximizer(b)
    up = float((gu @ a).max())
    lo = float((a @ gv).min())
    if up - lo > 1e-8 * scale:
        raise MFTGError(f"min-max and max-min LP values disagree: {up!r} vs {lo!r}")
    return MatrixGameResult(float(gu @ a @ gv), gu, gv, up, lo, False)


def state_payoffs(model: KolmogorovModel, t, mu_values, w) -> np.ndarray:
    """A[x, u, v] = Σ_y Q[u, v, x, y] (w_y − w_x).

    Written with increments so that adding a constant to w leaves A bitwise
    unchanged whenever the shifted weights are exactly representable.
    """
    w = np.asarray(w, dtype=float)
    inc = w[None, :] - w[:, None]
    if model.is_split:
        q1, q2 = model.split_rates(t, mu_values)
        return np.einsum("uxy,xy->xu", q1, inc)[:, :, None] + np.einsum("vxy,xy->xv", q2, inc)[:, None, :]
    return np.einsum("uvxy,xy->xuv", model.rates(t, mu_values), inc)


def state_games(model: KolmogorovModel, t, mu_values, w):
    """Values (n,), minimizer mixtures (n, nU) and maximizer mixtures (n, nV) of every state game."""
    a = state_payoffs(model, t, mu_values, w)
    n, nu, nv = a.shape
    row_max = a.max(axis=2)
    col_min = a.min(axis=1)
    upper, lower = row_max.min(axis=1), col_min.max(axis=1)
    scale = 1.0 + np.abs(a).reshape(n, -1).max(axis=1)
    iu, iv = np.argmin(row_max, axis=1), np.argmax(col_min, axis=1)
    vals = a[np.arange(n), iu, iv].copy()
    gam = np.zeros((n, nu))
    th = np.zeros((n, nv))
    gam[np.arange(n), iu] = 1.0
    th[np.arange(n), iv] = 1.0
    mixed = np.flatnonzero(upper - lower > SADDLE_TOL * scale)
    if mixed.size and max(nu, nv) <= MAX_ENUMERATED:
        v_mix, g_mix, t_mix, solved = solve_by_supports(a[mixed])
        hit = mixed[solved]
        vals[hit], gam[hit], th[hit] = v_mix[solved], g_mix[solved], t_mix[solved]
        mixed = mixed[~solved]
    for x in mixed:
        res = solve_matrix_game(a[x], force_lp=True)
        vals[x], gam[x], th[x] = res.value, res.mixed_u, res.mixed_v
    return vals, gam, th


def hamiltonian(model: KolmogorovModel, t, mu, w):
    """H = Σ_x μ_x val_x together with the per-state :class:`MatrixGameResult`."""
    mu_values = mu.values if isinstance(mu, SimplexVector) else np.asarray(mu, dtype=float)
    w = np.asarray(w, dtype=float)
    if w.shape != (model.n,) or mu_values.shape != (model.n,):
        raise InvalidInputError("μ and w must have one entry per lattice point")
    a = state_payoffs(model, t, mu_values, w)
    games = [solve_matrix_game(a[x]) for x in range(model.n)]
    return float(sum(m * g.value for m, g in zip(mu_values, games))), games


# --- value fields ---------------------------------------------------------

class LinearValueField:
    """φ(t, μ) = Σ μ_x w_x(t) with w stored on a time grid and Hermite-interpolated."""

    kind = "linear"

    def __init__(self, lattice: Lattice, times, w, wdot):
        self.lattice = lattice
        self.times = np.asarray(times, dtype=float)
        self.w = np.asarray(w, dtype=float)
        self.wdot = np.asarray(wdot, dtype=float)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def weights(self, t: float) -> np.ndarray:
        ts = self.times
        t = min(max(t, ts[0]), ts[-1])
        j = min(int(np.searchsorted(ts, t, side="right")) - 1, len(ts) - 2)
        if j < 0:
            return self.w[0]
        dt = ts[j + 1] - ts[j]
        s = (t - ts[j]) / dt
        h00 = 2 * s ** 3 - 3 * s ** 2 + 1
        h10 = s ** 3 - 2 * s ** 2 + s
        h01 = -2 * s ** 3 + 3 * s ** 2
        h11 = s ** 3 - s ** 2
        return (h00 * self.w[j] + h10 * dt * self.wdot[j] + h01 * self.w[j + 1] + h11 * dt * self.wdot[j + 1])

    def weights_rate(self, t: float) -> np.ndarray:
        ts = self.times
        t = min(max(t, ts[0]), ts[-1])
        j = min(int(np.searchsorted(ts, t, side="right")) - 1, len(ts) - 2)
        dt = ts[j + 1] - ts[j]
        s = (t - ts[j]) / dt
        d00 = (6 * s ** 2 - 6 * s) / dt
        d10 = 3 * s ** 2 - 4 * s + 1
        d01 = (-6 * s ** 2 + 6 * s) / dt
        d11 = 3 * s ** 2 - 2 * s
        return d00 * self.w[j] + d10 * self.wdot[j] + d01 * self.w[j + 1] + d11 * self.wdot[j + 1]

    def value(self, t: float, mu) -> float:
        mu_values = mu.values if isinstance(mu, SimplexVector) else np.asarray(mu, dtype=float)
        return float(mu_values @ self.weights(t))

    def gradient(self, t: float, mu) -> np.ndarray:
        return self.weights(t)

    def shifted(self, delta: float):
        return LinearValueField(self.lattice, self.times, self.w + delta, self.wdot)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        buf.write(",".join(["t"] + [f"w_{i + 1}" for i in range(self.w.shape[1])]) + "\n")
        for t, row in zip(self.times, self.w):
            buf.write(",".join([format_coord(t)] + [format_coord(v) for v in row]) + "\n")
        return buf.getvalue()


class FrozenValueField(LinearValueField):
    """Time-independent linear field Σ μ_x c_x (useful as a candidate that is not a supersolution)."""

    def __init__(self, lattice: Lattice, weights, horizon: float):
        c = np.asarray(weights, dtype=float)
        super().__init__(lattice, [0.0, horizon], np.stack([c, c]), np.zeros((2, c.size)))


def _check_mu_independent(model: KolmogorovModel, rng):
    if not model.measure_dependent:
        return
    base = model.rates(0.0, np.full(model.n, 1.0 / model.n))
    for _ in range(3):
        t = float(rng.uniform(0, 1))
        if not np.array_equal(model.rates(t, rng.dirichlet(np.ones(model.n))), base):
            raise InvalidInputError(
                f"model {model.name!r} has μ-dependent rates; the linear solver needs rates that ignore μ "
                "(use solve_grid for |S| <= 3)")


def solve_linear_value(model: KolmogorovModel, cost: TerminalCost, dt: Optional[float] = None, t0: float = 0.0,
                       horizon: Optional[float] = None) -> LinearValueField:
    """Backward RK4 for ẇ_x = −val_x(t, w), w(T) = c(x̄)."""
    if cost.linear_c is None:
        raise InvalidInputError("the linear solver needs a terminal cost of the form ∫ c dm")
    _check_mu_independent(model, np.random.default_rng(0))
    T = horizon if horizon is not None else (model.dynamics.horizon if model.dynamics is not None else 1.0)
    # Hermite interpolation between nodes needs a fine grid to keep the HJ residual below 1e-6
    dt = min(model.default_step(), 2.0 ** -10) if dt is None else float(dt)
    mu_dummy = np.full(model.n, 1.0 / model.n)

    def back(s, w):
        # s runs forward in reversed time t = T - s
        return state_games(model, T - s, mu_dummy, w)[0]

    grid = time_grid(0.0, T - t0, dt)
    ws = np.empty((len(grid), model.n))
    ws[0] = np.asarray(cost.linear_c(model.lattice.points), dtype=float)
    for j in range(len(grid) - 1):
        ws[j + 1] = rk4_step(back, grid[j], ws[j], grid[j + 1] - grid[j])
    times = (T - grid)[::-1]
    ws = ws[::-1].copy()
    times[0], times[-1] = t0, T
    wdot = np.array([-state_games(model, t, mu_dummy, w)[0] for t, w in zip(times, ws)])
    return LinearValueField(model.lattice, times, ws, wdot)


def hj_residual(field: LinearValueField, model: KolmogorovModel, samples: int, rng=None) -> float:
    """max over sampled (t, μ) of |∂φ/∂t + H(t, μ, ∇φ)|."""
    rng = np.random.default_rng(0) if rng is None else rng
    worst = 0.0
    for _ in range(samples):
        t = float(rng.uniform(field.times[0], field.horizon))
        mu = rng.dirichlet(np.ones(model.n))
        vals = state_games(model, t, mu, field.weights(t))[0]
        worst = max(worst, abs(float(mu @ (field.weights_rate(t) + vals))))
    return worst


# --- simplex grid solver --------------------------------------------------

class SimplexGrid:
    """Nodes μ = k / M on the simplex with |S| ∈ {2, 3}."""

    def __init__(self, n: int, resolution: int):
        if n not in (2, 3):
            raise InvalidInputError(f"the grid solver supports |S| in {{2, 3}}, got {n}; use solve_linear_value")
        self.n = n
        self.M = int(resolution)
        if n == 2:
            i = np.arange(self.M + 1)
            self.index = i[:, None]
            self.nodes = np.stack([i / self.M, 1 - i / self.M], axis=1)
        else:
            ij = [(i, j) for i in range(self.M + 1) for j in range(self.M + 1 - i)]
            self.index = np.array(ij)
            self.nodes = np.array([(i / self.M, j / self.M, (self.M - i - j) / self.M) for i, j in ij])
            self._lookup = -np.ones((self.M + 2, self.M + 2), dtype=int)
            self._lookup[self.index[:, 0], self.index[:, 1]] = np.arange(len(ij))

    def interpolate(self, values: np.ndarray, mu: np.ndarray) -> np.ndarray:
        """Piecewise-linear interpolation at points ``mu`` (..., n)."""
        M = self.M
        if self.n == 2:
            s = np.clip(mu[..., 0] * M, 0, M)
            i = np.minimum(np.floor(s).astype(int), M - 1)
            f = s - i
            return (1 - f) * values[i] + f * values[i + 1]
        a = np.clip(mu[..., 0] * M, 0, M)
        b = np.clip(mu[..., 1] * M, 0, M)
        over = a + b - M
        scale = np.where(over > 0, M / np.maximum(a + b, 1e-300), 1.0)
        a, b = a * scale, b * scale
        i = np.minimum(np.floor(a).astype(int), M - 1)
        j = np.minimum(np.floor(b).astype(int), M - 1 - i)
        j = np.maximum(j, 0)
        fa, fb = a - i, b - j
        upper = (fa + fb > 1) & (i + j + 1 < M)
        lk = self._lookup
        v00 = values[lk[i, j]]
        v10 = values[lk[i + 1, j]]
        v01 = values[lk[i, j + 1]]
        lower_val = v00 + fa * (v10 - v00) + fb * (v01 - v00)
        i11 = lk[np.minimum(i + 1, M), np.minimum(j + 1, M)]
        v11 = values[np.where(i11 >= 0, i11, 0)]
        upper_val = v11 + (1 - fa) * (v01 - v11) + (1 - fb) * (v10 - v11)
        return np.where(upper, upper_val, lower_val)

    def gradient(self, values: np.ndarray) -> np.ndarray:
        """Per-node weight vectors w with φ(μ + δ) ≈ φ(μ) + δ·w on the simplex (last entry 0)."""
        M = self.M
        out = np.zeros((len(self.nodes), self.n))
        if self.n == 2:
            g = np.gradient(values, 1.0 / M)
            out[:, 0] = g
            return out
        lk = self._lookup
        for axis in (0, 1):
            step = np.zeros(2, dtype=int)
            step[axis] = 1
            fwd = self.index + step
            bwd = self.index - step
            fwd_ok = (fwd.min(axis=1) >= 0) & (fwd.sum(axis=1) <= M)
            bwd_ok = (bwd.min(axis=1) >= 0) & (bwd.sum(axis=1) <= M)
            # moving along axis trades mass with the last coordinate
            vf = np.where(fwd_ok, values[lk[np.clip(fwd[:, 0], 0, M + 1), np.clip(fwd[:, 1], 0, M + 1)]], values)
            vb = np.where(bwd_ok, values[lk[np.clip(bwd[:, 0], 0, M + 1), np.clip(bwd[:, 1], 0, M + 1)]], values)
            span = (fwd_ok.astype(float) + bwd_ok.astype(float)) / M
            out[:, axis] = (vf - vb) / np.where(span > 0, span, 1.0)
        return out


class GridValueField:
    kind = "grid"

    def __init__(self, lattice: Lattice, grid: SimplexGrid, times, values):
        self.lattice = lattice
        self.grid = grid
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def _slice(self, t):
        ts = self.times
        t = min(max(t, ts[0]), ts[-1])
        j = min(int(np.searchsorted(ts, t, side="right")) - 1, len(ts) - 2)
        w = (t - ts[j]) / (ts[j + 1] - ts[j])
        return (1 - w) * self.values[j] + w * self.values[j + 1]

    def value(self, t: float, mu) -> float:
        mu_values = mu.values if isinstance(mu, SimplexVector) else np.asarray(mu, dtype=float)
        return float(self.grid.interpolate(self._slice(t), mu_values[None, :])[0])

    def gradient(self, t: float, mu) -> np.ndarray:
        mu_values = mu.values if isinstance(mu, SimplexVector) else np.asarray(mu, dtype=float)
        g = self.grid.gradient(self._slice(t))
        nearest = int(np.argmin(np.abs(self.grid.nodes - mu_values[None, :]).sum(axis=1)))
        return g[nearest]

    def shifted(self, delta: float):
        return GridValueField(self.lattice, self.grid, self.times, self.values + delta)


def _candidates(mixtures: np.ndarray, n_controls: int) -> np.ndarray:
    """Pure strategies followed by the supplied mixture, per node and state: (N, n, k+1, k)."""
    N, n, _ = mixtures.shape
    pure = np.broadcast_to(np.eye(n_controls), (N, n, n_controls, n_controls))
    return np.concatenate([pure, mixtures[:, :, None, :]], axis=2)


def solve_grid(model: KolmogorovModel, cost: TerminalCost, dt: float, resolution: int, t0: float = 0.0,
               horizon: Optional[float] = None) -> GridValueField:
    """Semi-Lagrangian backward scheme on a simplex grid for |S| ∈ {2, 3}."""
    grid = SimplexGrid(model.n, resolution)
    T = horizon if horizon is not None else (model.dynamics.horizon if model.dynamics is not None else 1.0)
    times = time_grid(t0, T, dt)
    nodes = grid.nodes
    N, n = nodes.shape
    lam = max(model.max_exit_rate(t, nodes[k]) for t in (t0, T) for k in (0, N - 1))
    if lam * float(np.max(np.diff(times))) > 1.0:
        raise InvalidInputError("time step too large for the semi-Lagrangian scheme: need dt * max exit rate <= 1")
    values = np.empty((len(times), N))
    values[-1] = [cost(embed(SimplexVector(model.lattice, mu))) for mu in nodes]
    nu, nv = model.n_u, model.n_v
    for step in range(len(times) - 2, -1, -1):
        t, tau = times[step], times[step + 1] - times[step]
        nxt = values[step + 1]
        grads = grid.gradient(nxt)
        qs = np.array([model.rates(t, mu) for mu in nodes]) if model.measure_dependent else \
            np.broadcast_to(model.rates(t, nodes[0]), (N,) + model.rates(t, nodes[0]).shape)
        gmix = np.empty((N, n, nu))
        tmix = np.empty((N, n, nv))
        for k in range(N):
            a = np.einsum("uvxy,y->xuv", qs[k], grads[k])
            for x in range(n):
                res = solve_matrix_game(a[x])
                gmix[k, x], tmix[k, x] = res.mixed_u, res.mixed_v
        gc = _candidates(gmix, nu)
        tc = _candidates(tmix, nv)
        # rows[k, x, g, h, :] = Σ_uv Q[u, v, x, :] gc[k, x, g, u] tc[k, x, h, v]
        rows = np.einsum("kuvxy,kxgu,kxhv->kxghy", qs, gc, tc)
        cg, ch = gc.shape[2], tc.shape[2]
        moved = nodes.reshape((N,) + (1,) * (2 * n) + (n,)).copy()
        for x in range(n):
            shape = [N] + [1] * (2 * n) + [n]
            shape[1 + x] = cg
            shape[1 + n + x] = ch
            moved = moved + tau * nodes[:, x].reshape((N,) + (1,) * (2 * n + 1)) * rows[:, x].reshape(shape)
        moved = np.maximum(moved, 0.0)
        moved = moved / moved.sum(axis=-1, keepdims=True)
        payoff = grid.interpolate(nxt, moved)  # (N, g_0..g_{n-1}, h_0..h_{n-1})
        inner = payoff.reshape(N, cg ** n, ch ** n).max(axis=2)
        values[step] = inner.min(axis=1)
    return GridValueField(model.lattice, grid, times, values)


# --- supersolution verification ------------------------------------------

def minimax_feedback(model: KolmogorovModel, field) -> RelaxedFeedback:
    """First player's per-state minimax mixture at the value gradient, refreshed on every call."""

    def fn(t, mu_values):
        return state_games(model, t, mu_values, field.gradient(t, mu_values))[1]

    return RelaxedFeedback.callback(fn, model.n, model.n_u)


def maximin_feedback(model: KolmogorovModel, field) -> RelaxedFeedback:
    def fn(t, mu_values):
        return state_games(model, t, mu_values, field.gradient(t, mu_values))[2]

    return RelaxedFeedback.callback(fn, model.n, model.n_v)


def _flow_value_change(model, field, gamma, theta, s, r, mu, tau):
    """φ(r, μ(r)) − φ(s, μ) along dμ/dt = μ𝒬 with feedback γ and constant ϑ."""

    def deriv(t, m):
        return m @ model.averaged(t, m, gamma.at(t, m), theta)

    ts = time_grid(s, r, tau)
    y = np.array(mu, dtype=float)
    for a, b in zip(ts[:-1], ts[1:]):
        y = rk4_step(deriv, a, y, b - a)
        y = np.maximum(y, 0.0)
        y /= y.sum()
    return field.value(r, y) - field.value(s, mu), y


@dataclass
class SupersolutionReport:
    terminal_checked: int = 0
    flow_checked: int = 0
    terminal_violations: list = field(default_factory=list)
    flow_violations: list = field(default_factory=list)
    max_terminal_defect: float = 0.0
    max_flow_increase: float = -math.inf

    @property
    def ok(self) -> bool:
        return not self.terminal_violations and not self.flow_violations


def verify_supersolution(field_, model: KolmogorovModel, cost: TerminalCost, samples: int, rng=None,
                         tau: Optional[float] = None, tol: float = 1e-6) -> SupersolutionReport:
    """Check terminal dominance and constructive non-increase along the minimax feedback flow."""
    rng = np.random.default_rng(0) if rng is None else rng
    rep = SupersolutionReport()
    T = field_.horizon
    t_start = float(field_.times[0])
    for mu in sample_simplex_points(model.n, samples, rng):
        gap = cost(embed(SimplexVector(model.lattice, mu))) - field_.value(T, mu)
        rep.terminal_checked += 1
        rep.max_terminal_defect = max(rep.max_terminal_defect, gap)
        if gap > 1e-12:
            rep.terminal_violations.append((mu.tolist(), gap))
    tau = model.default_step() if tau is None else tau
    gamma = minimax_feedback(model, field_)
    for _ in range(samples):
        s, r = np.sort(rng.uniform(t_start, T, size=2))
        if r - s < 1e-9:
            continue
        mu = rng.dirichlet(np.ones(model.n))
        w = field_.gradient(s, mu)
        best = state_games(model, s, mu, w)[2]
        choices = [("random", rng.dirichlet(np.ones(model.n_v), size=model.n)), ("best-response", best)]
        choices += [(f"pure{j}", np.eye(model.n_v)[np.full(model.n, j)]) for j in range(model.n_v)]
        for name, theta in choices:
            inc, _ = _flow_value_change(model, field_, gamma, theta, s, r, mu, tau)
            inc_half, _ = _flow_value_change(model, field_, gamma, theta, s, r, mu, tau / 2)
            allowance = tol + abs(inc - inc_half)
            rep.flow_checked += 1
            rep.max_flow_increase = max(rep.max_flow_increase, inc)
            if inc > allowance:
                rep.flow_violations.append((float(s), float(r), mu.tolist(), name, inc))
    return rep
