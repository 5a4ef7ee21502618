"""Kolmogorov (transition-rate) matrices approximating the agent dynamics.

Rates are returned as dense arrays indexed ``[u, v, x, y]`` over control
indices and lattice indices.  Lattice chains move mass one lattice step along
each coordinate at a rate proportional to the velocity component.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import torus
from .dynamics import GameDynamics, measure_view
from .errors import CertificationError, InvalidInputError
from .measures import Lattice, SimplexVector


def lattice_epsilon(h: float, dim: int, bound_R: float) -> float:
    """ε = √h · max(√R · d^{1/4}, d^{1/4} / √2)."""
    q = dim ** 0.25
    return math.sqrt(h) * max(math.sqrt(bound_R) * q, q / math.sqrt(2.0))


def parse_h(text) -> float:
    """Accept ``"1/16"``, ``"0.0625"`` or a number; 1/h must be an integer and h < 1/2."""
    if isinstance(text, str):
        s = text.strip()
        if "/" in s:
            num, den = s.split("/", 1)
            try:
                h = float(num) / float(den)
            except (ValueError, ZeroDivisionError):
                raise InvalidInputError(f"cannot parse h={text!r}") from None
        else:
            try:
                h = float(s)
            except ValueError:
                raise InvalidInputError(f"cannot parse h={text!r}") from None
    else:
        h = float(text)
    check_h(h)
    return 1.0 / round(1.0 / h)


def check_h(h: float):
    if not (h > 0 and math.isfinite(h)):
        raise InvalidInputError(f"h must be positive, got {h!r}")
    k = round(1.0 / h)
    if abs(k * h - 1.0) > 1e-9:
        raise InvalidInputError(f"1/h must be an integer, got h={h!r}")
    if not h < 0.5:
        raise InvalidInputError(f"h must be below 1/2, got h={h!r}")


def neighbor_table(lattice: Lattice) -> np.ndarray:
    """For a regular lattice, ``table[x, i, 0]`` / ``table[x, i, 1]`` is the index one step down / up along axis i."""
    k = lattice.shape[0]
    d = lattice.dim
    idx = np.rint(lattice.points * k).astype(int) % k
    strides = k ** np.arange(d - 1, -1, -1)
    out = np.empty((lattice.size, d, 2), dtype=int)
    for i in range(d):
        for j, step in enumerate((-1, 1)):
            moved = idx.copy()
            moved[:, i] = (moved[:, i] + step) % k
            out[:, i, j] = moved @ strides
    return out


def _step_rates(vel: np.ndarray, nbr: np.ndarray, h: float) -> np.ndarray:
    """Rate matrices from velocities ``vel`` of shape (n, *ctrl, d); result (*ctrl, n, n)."""
    n, d = vel.shape[0], vel.shape[-1]
    ctrl = vel.shape[1:-1]
    v = vel.reshape(n, -1, d)
    c = v.shape[1]
    q = np.zeros((c, n, n))
    rows = np.broadcast_to(np.arange(n)[:, None], (n, c))
    cidx = np.broadcast_to(np.arange(c)[None, :], (n, c))
    for i in range(d):
        comp = v[:, :, i]
        target = np.where(comp > 0, nbr[:, i, 1][:, None], nbr[:, i, 0][:, None])
        np.add.at(q, (cidx, rows, target), np.abs(comp) / h)
    diag = np.arange(n)
    q[:, diag, diag] = 0.0
    q[:, diag, diag] = -q.sum(axis=-1)
    return q.reshape(ctrl + (n, n))


class KolmogorovModel:
    """Controlled, possibly μ-dependent rate matrices on a lattice.

    ``rate_fn(t, mu_values)`` returns the dense array (nU, nV, n, n).  When the
    model is split, ``split_fn(t, mu_values)`` returns (Q1 (nU, n, n), Q2 (nV, n, n))
    with Q = Q1[:, None] + Q2[None, :].
    """

    def __init__(self, lattice: Lattice, rate_fn: Callable, n_u: int, n_v: int, epsilon: float, *,
                 dynamics: Optional[GameDynamics] = None, h: Optional[float] = None,
                 split_fn: Optional[Callable] = None, measure_dependent: bool = True,
                 lipschitz_mu: float = 0.0, name: str = "custom"):
        if not (0 < epsilon <= 1.0):
            raise InvalidInputError(f"ε must lie in (0, 1], got {epsilon!r}")
        self.lattice = lattice
        self._rate_fn = rate_fn
        self._split_fn = split_fn
        self.n_u = n_u
        self.n_v = n_v
        self.epsilon = float(epsilon)
        self.dynamics = dynamics
        self.h = h
        self.measure_dependent = measure_dependent
        self.lipschitz_mu = lipschitz_mu
        self.name = name
        self._const = None
        self._const_split = None

    @property
    def n(self) -> int:
        return self.lattice.size

    @property
    def is_split(self) -> bool:
        return self._split_fn is not None

    def _mu(self, mu):
        return mu.values if isinstance(mu, SimplexVector) else np.asarray(mu, dtype=float)

    def rates(self, t, mu) -> np.ndarray:
        if not self.measure_dependent:
            if self._const is None:
                self._const = self._rate_fn(0.0, None)
                self._const.setflags(write=False)
            return self._const
        return self._rate_fn(t, self._mu(mu))

    def split_rates(self, t, mu):
        if self._split_fn is None:
            raise InvalidInputError("model has no split")
        if not self.measure_dependent:
            if self._const_split is None:
                self._const_split = self._split_fn(0.0, None)
            return self._const_split
        return self._split_fn(t, self._mu(mu))

    def averaged(self, t, mu, gamma: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """𝒬[x, y] = Σ_u Σ_v Q[u, v, x, y] γ[x, u] ϑ[x, v]."""
        if gamma.shape != (self.n, self.n_u) or theta.shape != (self.n, self.n_v):
            raise InvalidInputError(
                f"control shapes {gamma.shape}, {theta.shape} do not match "
                f"({self.n}, {self.n_u}), ({self.n}, {self.n_v})")
        if self.is_split:
            q1, q2 = self.split_rates(t, mu)
            return np.einsum("uxy,xu->xy", q1, gamma) + np.einsum("vxy,xv->xy", q2, theta)
        return np.einsum("uvxy,xu,xv->xy", self.rates(t, mu), gamma, theta)

    def max_exit_rate(self, t=0.0, mu=None) -> float:
        q = self.rates(t, self._default_mu(mu))
        return float(-np.einsum("...ii->...i", q).min())

    def _default_mu(self, mu):
        return np.full(self.n, 1.0 / self.n) if mu is None else mu

    def default_step(self) -> float:
        """τ = h / (4 R d) for lattice chains, otherwise a quarter of the inverse max exit rate."""
        if self.h is not None and self.dynamics is not None and self.dynamics.bound_R > 0:
            return self.h / (4.0 * self.dynamics.bound_R * self.lattice.dim)
        lam = self.max_exit_rate()
        return 0.25 / lam if lam > 0 else 0.1


def _lattice_model(dyn: GameDynamics, h: float, split: bool) -> KolmogorovModel:
    check_h(h)
    lattice = Lattice.regular(h, dyn.dim)
    nbr = neighbor_table(lattice)
    pts = lattice.points
    eps = lattice_epsilon(h, dyn.dim, dyn.bound_R)

    def view(mu_values):
        if mu_values is None:
            return measure_view(pts, np.full(len(pts), 1.0 / len(pts)))
        return measure_view(pts, mu_values)

    def joint_rates(t, mu_values):
        vel = dyn.velocity_table(t, pts, view(mu_values))
        return _step_rates(np.ascontiguousarray(vel), nbr, h)

    def one_sided(t, mu_values):
        m = view(mu_values)
        f1, f2 = dyn.separated
        v1 = np.broadcast_to(f1(t, pts[:, None, :], m, dyn.controls_u[None, :, :]), (len(pts), dyn.n_u, dyn.dim))
        v2 = np.broadcast_to(f2(t, pts[:, None, :], m, dyn.controls_v[None, :, :]), (len(pts), dyn.n_v, dyn.dim))
        return (_step_rates(np.ascontiguousarray(v1), nbr, h), _step_rates(np.ascontiguousarray(v2), nbr, h))

    def summed_rates(t, mu_values):
        q1, q2 = one_sided(t, mu_values)
        return q1[:, None] + q2[None, :]

    rate_fn = summed_rates if split else joint_rates
    split_fn = one_sided if split else None

    lip = dyn.lipschitz_L * dyn.dim * math.sqrt(lattice.size) / (2.0 * h)
    return KolmogorovModel(lattice, rate_fn, dyn.n_u, dyn.n_v, eps, dynamics=dyn, h=h, split_fn=split_fn,
                           measure_dependent=dyn.measure_dependent, lipschitz_mu=lip,
                           name=f"{dyn.name}{'-split' if split else ''}")


def build_lattice_chain(dyn: GameDynamics, h: float) -> KolmogorovModel:
    """Nearest-neighbour chain on hZ^d ∩ T^d with rate |f_i|/h toward sgn(f_i)."""
    return _lattice_model(dyn, h, split=False)


def build_split_chain(dyn: GameDynamics, h: float) -> KolmogorovModel:
    """Sum of the lattice chains of the two separated velocity parts."""
    if dyn.separated is None:
        raise InvalidInputError(f"game {dyn.name!r} has no separated form")
    return _lattice_model(dyn, h, split=True)


def constant_model(q: np.ndarray, lattice: Optional[Lattice] = None, epsilon: float = 1.0,
                   name: str = "constant") -> KolmogorovModel:
    """Model with a single control pair and a fixed rate matrix (for tests and oracles)."""
    q = np.asarray(q, dtype=float)
    n = q.shape[0]
    lattice = lattice if lattice is not None else Lattice(np.arange(n)[:, None] / n)
    qq = q[None, None].copy()
    return KolmogorovModel(lattice, lambda t, mu: qq, 1, 1, epsilon, measure_dependent=False, name=name)


# --- certification --------------------------------------------------------

def displacement_matrix(lattice: Lattice) -> np.ndarray:
    """E[x, y] = ℓ(ȳ, x̄), shape (n, n, d)."""
    p = lattice.points
    return torus.displacement(p[None, :, :], p[:, None, :])


def sample_simplex_points(n: int, samples: int, rng) -> list:
    """All vertices followed by symmetric Dirichlet draws."""
    out = [np.eye(n)[i] for i in range(n)]
    out.extend(rng.dirichlet(np.full(n, 0.5)) for _ in range(samples))
    return out


@dataclass
class EpsilonReport:
    epsilon: float
    covering_radius: float
    drift_defect: Optional[float]
    second_moment: float
    row_sum_error: float
    min_off_diagonal: float
    witness: Optional[tuple]

    @property
    def ok(self) -> bool:
        # the second-moment bound is attained exactly by lattice chains
        rel = 1.0 + 1e-12
        return (self.covering_radius <= self.epsilon * rel
                and (self.drift_defect is None or self.drift_defect <= self.epsilon)
                and self.second_moment <= self.epsilon ** 2 * rel
                and self.row_sum_error <= 1e-12 and self.min_off_diagonal >= 0.0)

    def lines(self):
        yield f"epsilon = {self.epsilon:.5f}"
        yield f"covering_radius = {self.covering_radius:.6g}"
        yield f"drift_defect = {self.drift_defect if self.drift_defect is None else format(self.drift_defect, '.3e')}"
        yield f"second_moment = {self.second_moment:.6g} (epsilon^2 = {self.epsilon ** 2:.6g})"
        yield f"row_sum_error = {self.row_sum_error:.3e}"
        yield f"min_off_diagonal = {self.min_off_diagonal:.6g}"
        yield f"status = {'certified' if self.ok else 'FAILED'}"


def certify_epsilon(model: KolmogorovModel, samples: int = 20, rng=None, *, raise_on_failure: bool = False) -> EpsilonReport:
    """Check covering radius, drift consistency and second moment against ε at sampled (t, μ)."""
    if samples < 1:
        raise InvalidInputError("samples must be at least 1")
    rng = np.random.default_rng(0) if rng is None else rng
    lat = model.lattice
    disp = displacement_matrix(lat)
    sq = np.sum(disp ** 2, axis=-1)
    off = ~np.eye(model.n, dtype=bool)
    dyn = model.dynamics
    horizon = dyn.horizon if dyn is not None else 1.0
    mus = sample_simplex_points(model.n, samples, rng) if model.measure_dependent else [None]
    drift, moment, rowerr, minoff = 0.0, 0.0, 0.0, math.inf
    witness = None
    for mu in mus:
        t = float(rng.uniform(0, horizon)) if model.measure_dependent else 0.0
        mu_vals = np.full(model.n, 1.0 / model.n) if mu is None else mu
        q = model.rates(t, mu_vals)
        rowerr = max(rowerr, float(np.abs(q.sum(axis=-1)).max()))
        minoff = min(minoff, float(q[..., off].min()) if model.n > 1 else 0.0)
        mom = np.einsum("uvxy,xy->uvx", q, sq).max()
        moment = max(moment, float(mom))
        if dyn is not None:
            vel = dyn.velocity_table(t, lat.points, measure_view(lat.points, mu_vals))
            approx = np.einsum("uvxy,xyd->xuvd", q, disp)
            defect = np.linalg.norm(vel - approx, axis=-1)
            if defect.max() > drift:
                drift = float(defect.max())
                witness = (t, np.unravel_index(np.argmax(defect), defect.shape))
    report = EpsilonReport(model.epsilon, lat.covering_radius, drift if dyn is not None else None,
                           moment, rowerr, minoff, witness)
    if raise_on_failure and not report.ok:
        raise CertificationError("ε-certificate failed:\n" + "\n".join(report.lines()), witness=witness)
    return report


def mu_lipschitz_ratio(model: KolmogorovModel, samples: int, rng=None) -> float:
    """Largest observed |Q(μ1) − Q(μ2)|_max / ‖μ1 − μ2‖_2 over random pairs."""
    rng = np.random.default_rng(0) if rng is None else rng
    worst = 0.0
    for _ in range(samples):
        t = float(rng.uniform(0, 1))
        a, b = rng.dirichlet(np.ones(model.n)), rng.dirichlet(np.ones(model.n))
        gap = float(np.abs(model.rates(t, a) - model.rates(t, b)).max())
        worst = max(worst, gap / float(np.linalg.norm(a - b)))
    return worst


def two_state_model(up=(0.2, 0.8), down=(0.3, 0.6), name: str = "two-state") -> KolmogorovModel:
    """Two lattice points {0, 1/2}; the first player picks the 0→1 rate from ``up``,
    the second player picks the 1→0 rate from ``down``.  Rates ignore μ."""
    up = np.asarray(up, dtype=float)
    down = np.asarray(down, dtype=float)
    q = np.zeros((up.size, down.size, 2, 2))
    q[:, :, 0, 1] = up[:, None]
    q[:, :, 0, 0] = -up[:, None]
    q[:, :, 1, 0] = down[None, :]
    q[:, :, 1, 1] = -down[None, :]
    q1 = np.zeros((up.size, 2, 2))
    q1[:, 0, 1], q1[:, 0, 0] = up, -up
    q2 = np.zeros((down.size, 2, 2))
    q2[:, 1, 0], q2[:, 1, 1] = down, -down
    lattice = Lattice(np.array([[0.0], [0.5]]))
    return KolmogorovModel(lattice, lambda t, mu: q, up.size, down.size, 1.0, split_fn=lambda t, mu: (q1, q2),
                           measure_dependent=False, name=name)
