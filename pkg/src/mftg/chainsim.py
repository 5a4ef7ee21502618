"""Forward Kolmogorov integration, uniformized path sampling and moment bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import torus
from .errors import InvalidInputError, StepSizeError
from .markov import KolmogorovModel
from .measures import CSV_HEADER, SimplexVector, embed, wasserstein
from .torus import format_coord

NEGATIVITY_TOL = 1e-9


def r_one(bound_R: float, dim: int) -> float:
    """R₁ = 1 + 2(1 + R d)."""
    return 1.0 + 2.0 * (1.0 + bound_R * dim)


def varsigma_one(theta: float, bound_R: float, dim: int) -> float:
    """ς₁(θ) = (4/3)(1 + R) R₁ θ^{1/2}."""
    return 4.0 / 3.0 * (1.0 + bound_R) * r_one(bound_R, dim) * math.sqrt(theta)


class RelaxedFeedback:
    """Per-state mixed controls, shape (n_states, n_controls), possibly time/law dependent."""

    def __init__(self, fn: Callable, n_states: int, n_controls: int, kind: str, constant=None):
        self._fn = fn
        self.n_states = n_states
        self.n_controls = n_controls
        self.kind = kind
        self.constant = constant

    @staticmethod
    def _validate(arr, n, k):
        a = np.asarray(arr, dtype=float)
        if a.shape != (n, k):
            raise InvalidInputError(f"feedback has shape {a.shape}, expected {(n, k)}")
        if np.any(a < 0) or np.abs(a.sum(axis=1) - 1.0).max() > 1e-12:
            raise InvalidInputError("every per-state control must be a probability vector")
        return a

    @classmethod
    def constant_rows(cls, arr):
        a = np.asarray(arr, dtype=float)
        a = cls._validate(a, *a.shape).copy()
        a.setflags(write=False)
        return cls(lambda t, mu: a, a.shape[0], a.shape[1], "constant", constant=a)

    @classmethod
    def dirac(cls, n_states: int, n_controls: int, index):
        idx = np.broadcast_to(np.asarray(index, dtype=int), (n_states,))
        a = np.zeros((n_states, n_controls))
        a[np.arange(n_states), idx] = 1.0
        return cls.constant_rows(a)

    @classmethod
    def uniform(cls, n_states: int, n_controls: int):
        return cls.constant_rows(np.full((n_states, n_controls), 1.0 / n_controls))

    @classmethod
    def piecewise(cls, times: Sequence[float], arrays: Sequence):
        """Value ``arrays[j]`` on [times[j], times[j+1]); the last one extends to the right."""
        ts = np.asarray(times, dtype=float)
        arrs = [cls._validate(a, *np.asarray(a).shape) for a in arrays]
        if len(ts) != len(arrs) or np.any(np.diff(ts) <= 0):
            raise InvalidInputError("piecewise feedback needs increasing times, one per array")

        def fn(t, mu):
            j = max(int(np.searchsorted(ts, t, side="right")) - 1, 0)
            return arrs[j]

        return cls(fn, arrs[0].shape[0], arrs[0].shape[1], "piecewise")

    @classmethod
    def callback(cls, fn: Callable, n_states: int, n_controls: int):
        return cls(fn, n_states, n_controls, "callback")

    def at(self, t, mu_values) -> np.ndarray:
        return self._fn(t, mu_values)


def averaged_rates(model: KolmogorovModel, t, mu, gamma, theta) -> np.ndarray:
    """𝒬 for relaxed controls; ``gamma``/``theta`` may be arrays or :class:`RelaxedFeedback`."""
    mu_values = mu.values if isinstance(mu, SimplexVector) else np.asarray(mu, dtype=float)
    g = gamma.at(t, mu_values) if isinstance(gamma, RelaxedFeedback) else np.asarray(gamma, dtype=float)
    th = theta.at(t, mu_values) if isinstance(theta, RelaxedFeedback) else np.asarray(theta, dtype=float)
    return model.averaged(t, mu_values, g, th)


@dataclass
class LawTrajectory:
    lattice: object
    times: np.ndarray
    values: np.ndarray

    def at(self, t: float) -> np.ndarray:
        """Law at time t, linearly interpolated between stored nodes."""
        ts = self.times
        if t <= ts[0]:
            return self.values[0]
        if t >= ts[-1]:
            return self.values[-1]
        j = int(np.searchsorted(ts, t, side="right")) - 1
        w = (t - ts[j]) / (ts[j + 1] - ts[j])
        return (1 - w) * self.values[j] + w * self.values[j + 1]

    def final(self) -> SimplexVector:
        return SimplexVector(self.lattice, self.values[-1])

    def vector(self, j: int) -> SimplexVector:
        return SimplexVector(self.lattice, self.values[j])

    def to_csv(self, every: int = 1) -> str:
        """Columns t, mu_1..mu_n; ``every`` thins the stored nodes (the last one is always kept)."""
        keep = list(range(0, len(self.times), max(1, every)))
        if keep[-1] != len(self.times) - 1:
            keep.append(len(self.times) - 1)
        lines = [CSV_HEADER, ",".join(["t"] + [f"mu_{i + 1}" for i in range(self.values.shape[1])])]
        for j in keep:
            lines.append(",".join(format_coord(v) for v in (self.times[j], *self.values[j])))
        return "\n".join(lines) + "\n"


def time_grid(s: float, r: float, tau: float) -> np.ndarray:
    """Uniform steps of length τ from s, with the final step shortened to land on r."""
    if not tau > 0:
        raise InvalidInputError("step must be positive")
    if r < s:
        raise InvalidInputError("span must satisfy s <= r")
    n = max(int(math.ceil((r - s) / tau - 1e-12)), 1 if r > s else 0)
    ts = s + tau * np.arange(n + 1)
    if n:
        ts[-1] = r
    return ts


def rk4_step(deriv: Callable, t: float, y: np.ndarray, dt: float) -> np.ndarray:
    k1 = deriv(t, y)
    k2 = deriv(t + dt / 2, y + dt / 2 * k1)
    k3 = deriv(t + dt / 2, y + dt / 2 * k2)
    k4 = deriv(t + dt, y + dt * k3)
    return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def clamp_simplex(y: np.ndarray, hint: str) -> np.ndarray:
    """Clamp roundoff negatives; abort on genuine negativity."""
    lo = y.min()
    if lo < -NEGATIVITY_TOL:
        raise StepSizeError(f"law became negative ({lo:.3e}); {hint}")
    if lo < 0:
        y = np.maximum(y, 0.0)
        y = y / y.sum()
    return y


def integrate_kolmogorov(model: KolmogorovModel, mu0, gamma, theta, span, tau: Optional[float] = None) -> LawTrajectory:
    """RK4 for the row-vector ODE dμ/dt = μ 𝒬(t, μ, γ, ϑ)."""
    s, r = map(float, span)
    tau = model.default_step() if tau is None else float(tau)
    y = np.array(mu0.values if isinstance(mu0, SimplexVector) else mu0, dtype=float)
    if y.shape != (model.n,):
        raise InvalidInputError("initial law does not live on the model lattice")
    ts = time_grid(s, r, tau)
    hint = suggested_step_hint(model)
    frozen = (not model.measure_dependent and isinstance(gamma, RelaxedFeedback) and gamma.constant is not None
              and isinstance(theta, RelaxedFeedback) and theta.constant is not None)
    if frozen:
        qbar = model.averaged(s, y, gamma.constant, theta.constant)

        def deriv(t, m):
            return m @ qbar
    else:
        def deriv(t, m):
            return m @ averaged_rates(model, t, m, gamma, theta)

    out = np.empty((len(ts), model.n))
    out[0] = y
    for j in range(len(ts) - 1):
        y = clamp_simplex(rk4_step(deriv, ts[j], y, ts[j + 1] - ts[j]), hint)
        out[j + 1] = y
    return LawTrajectory(model.lattice, ts, out)


def suggested_step_hint(model: KolmogorovModel) -> str:
    if model.h is not None and model.dynamics is not None:
        bound = model.h / (2.0 * model.dynamics.bound_R * model.lattice.dim)
        return f"use a step τ <= h/(2Rd) = {bound:.4g}"
    return "use a smaller step"


# --- path sampling --------------------------------------------------------

@dataclass
class ChainPath:
    start_time: float
    end_time: float
    jump_times: list
    states: list  # states[0] on [start, jump_times[0]), states[i] after jump_times[i-1]

    def state_at(self, t: float) -> int:
        j = int(np.searchsorted(np.asarray(self.jump_times), t, side="right"))
        return self.states[j]


def _law_at(flow, t):
    if flow is None:
        return None
    if isinstance(flow, LawTrajectory):
        return flow.at(t)
    if isinstance(flow, SimplexVector):
        return flow.values
    return np.asarray(flow, dtype=float)


def rate_snapshots(model, flow, gamma, theta, s, r, tau):
    ts = time_grid(s, r, tau)
    mats = []
    for t in ts[:-1] if len(ts) > 1 else ts:
        mu = _law_at(flow, t)
        if mu is None:
            mu = np.full(model.n, 1.0 / model.n)
        mats.append(averaged_rates(model, t, mu, gamma, theta))
    return ts, np.array(mats)


def sample_states(model: KolmogorovModel, starts, flow, gamma, theta, span, record_times, rng,
                  tau: Optional[float] = None, keep_paths: bool = False):
    """Simulate many independent paths by uniformization.

    Returns the states at ``record_times`` (shape (len(record_times), n_paths))
    and, if ``keep_paths``, the list of :class:`ChainPath`.
    """
    s, r = map(float, span)
    tau = model.default_step() if tau is None else float(tau)
    starts = np.asarray(starts, dtype=int)
    npaths = starts.shape[0]
    rec = np.asarray(record_times, dtype=float)
    if np.any(rec < s) or np.any(rec > r):
        raise InvalidInputError("record times must lie inside the span")
    ts, mats = rate_snapshots(model, flow, gamma, theta, s, r, tau)
    lam = float(np.max(-np.einsum("kii->ki", mats))) if mats.size else 0.0
    states = starts.copy()
    out = np.empty((rec.size, npaths), dtype=int)
    paths = [ChainPath(s, r, [], [int(z)]) for z in starts] if keep_paths else None
    if lam <= 0 or r == s:
        out[:] = states[None, :]
        return out, paths
    n = model.n
    jump = np.eye(n)[None] + mats / lam
    cum = np.cumsum(jump, axis=-1)
    cum[..., -1] = 1.0
    clock = np.full(npaths, s)
    active = np.arange(npaths)
    order = np.argsort(rec, kind="stable")
    while active.size:
        nxt = clock[active] + rng.exponential(1.0 / lam, size=active.size)
        u = rng.random(active.size)
        for i in order:
            hit = (rec[i] >= clock[active]) & (rec[i] < nxt)
            out[i, active[hit]] = states[active[hit]]
        alive = nxt < r
        active, nxt, u = active[alive], nxt[alive], u[alive]
        if not active.size:
            break
        seg = np.clip(np.searchsorted(ts, nxt, side="right") - 1, 0, len(mats) - 1)
        rows = cum[seg, states[active]]
        new = (rows < u[:, None]).sum(axis=1)
        if keep_paths:
            for p, t_ev, old, nw in zip(active, nxt, states[active], new):
                if nw != old:
                    paths[p].jump_times.append(float(t_ev))
                    paths[p].states.append(int(nw))
        states[active] = new
        clock[active] = nxt
    return out, paths


def sample_chain(model: KolmogorovModel, initial: int, flow, gamma, theta, span, seed,
                 tau: Optional[float] = None) -> ChainPath:
    rng = np.random.default_rng(seed)
    _, paths = sample_states(model, [initial], flow, gamma, theta, span, [span[0]], rng, tau, keep_paths=True)
    return paths[0]


# --- moment bounds --------------------------------------------------------

@dataclass
class MomentRow:
    start: int
    schedule: str
    gap: float
    mean: float
    stderr: float
    bound_r1: float
    bound_eps: float

    @property
    def margin(self) -> float:
        return min(self.bound_r1, self.bound_eps) - (self.mean + 3 * self.stderr)

    @property
    def ok(self) -> bool:
        return self.margin >= 0


@dataclass
class MomentReport:
    rows: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.rows)

    @property
    def worst_margin(self) -> float:
        return min(r.margin for r in self.rows) if self.rows else math.inf


def control_schedules(model: KolmogorovModel, rng, span, include_random: bool = True):
    """All pure constant control pairs plus one random piecewise-constant schedule."""
    n, nu, nv = model.n, model.n_u, model.n_v
    out = []
    for iu in range(nu):
        for iv in range(nv):
            out.append((f"pure({iu},{iv})", RelaxedFeedback.dirac(n, nu, iu), RelaxedFeedback.dirac(n, nv, iv)))
    if include_random:
        s, r = span
        times = np.linspace(s, r, 5)[:-1]
        g = [rng.dirichlet(np.ones(nu), size=n) for _ in times]
        th = [rng.dirichlet(np.ones(nv), size=n) for _ in times]
        out.append(("random", RelaxedFeedback.piecewise(times, g), RelaxedFeedback.piecewise(times, th)))
    return out


def moment_bounds_check(model: KolmogorovModel, paths: int, gaps: Sequence[float], rng=None, s: float = 0.0,
                        starts=None, schedules=None) -> MomentReport:
    """Monte Carlo E‖X(s+gap) − z̄‖² against R₁²·gap and ε²·gap + ς₁(gap)·gap."""
    if model.dynamics is None:
        raise InvalidInputError("moment bounds need the model's dynamics constants")
    rng = np.random.default_rng(0) if rng is None else rng
    R, d = model.dynamics.bound_R, model.lattice.dim
    r1 = r_one(R, d)
    eps = model.epsilon
    gaps = np.asarray(sorted(gaps), dtype=float)
    span = (s, s + float(gaps.max()))
    starts = range(model.n) if starts is None else starts
    schedules = control_schedules(model, rng, span) if schedules is None else schedules
    flow = np.full(model.n, 1.0 / model.n)
    report = MomentReport()
    pts = model.lattice.points
    for z in starts:
        for name, gamma, theta in schedules:
            states, _ = sample_states(model, np.full(paths, z), flow, gamma, theta, span, s + gaps, rng)
            for i, gap in enumerate(gaps):
                sq = torus.dist(pts[states[i]], pts[z]) ** 2
                report.rows.append(MomentRow(
                    int(z), name, float(gap), float(sq.mean()), float(sq.std(ddof=1) / math.sqrt(paths)),
                    r1 ** 2 * gap, eps ** 2 * gap + varsigma_one(gap, R, d) * gap))
    return report


# --- trajectory estimates -------------------------------------------------

def law_w2_squared(traj: LawTrajectory, i: int, j: int) -> float:
    return wasserstein(2, embed(traj.vector(i)), embed(traj.vector(j)))[0] ** 2


def law_speed_violations(traj: LawTrajectory, bound_R: float, dim: int, pairs=None, slack: float = 1e-12):
    """Pairs (i, j) with W₂²(μ̃(t_j), μ̃(t_i)) > R₁²(t_j − t_i)."""
    r1 = r_one(bound_R, dim)
    n = len(traj.times)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)] if pairs is None else pairs
    bad = []
    for i, j in pairs:
        lhs = law_w2_squared(traj, i, j)
        if lhs > r1 ** 2 * (traj.times[j] - traj.times[i]) + slack:
            bad.append((i, j, lhs))
    return bad


def coupling_w2_squared(positions_a, positions_b) -> float:
    """Upper bound on W₂² between equally weighted particle clouds via the index coupling."""
    return float(np.mean(torus.dist(np.asarray(positions_a), np.asarray(positions_b)) ** 2))


def deterministic_flow_violations(times, positions, bound_R: float, slack: float = 1e-12):
    """Check W₂²(m(t), m(s)) ≤ R²(t−s)² along a particle flow.

    ``positions[k]`` holds the (N, d) particle array at ``times[k]``; the
    particle-identity coupling is used, which upper-bounds W₂².
    """
    bad = []
    for i in range(len(times)):
        for j in range(i + 1, len(times)):
            lhs = coupling_w2_squared(positions[i], positions[j])
            if lhs > bound_R ** 2 * (times[j] - times[i]) ** 2 + slack:
                bad.append((i, j, lhs))
    return bad
