"""Agent dynamics, finite control sets, certified constants and the game catalog.

A velocity evaluator has the signature ``f(t, x, m, u, v)`` where ``x`` has
shape ``(..., d)``, ``u`` and ``v`` broadcast against it with shapes
``(..., cu)`` and ``(..., cv)``, and ``m`` is a :class:`DiscreteMeasure`.
Evaluators must be pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import torus
from .errors import CertificationError, InvalidInputError
from .measures import DiscreteMeasure, wasserstein


def measure_view(points, weights) -> DiscreteMeasure:
    """Wrap already canonical points and nonnegative weights without re-sorting.

    Only suitable for integrating against the measure (duplicate or zero-weight
    atoms are tolerated); use the regular constructor for anything else.
    """
    return DiscreteMeasure(np.asarray(points, dtype=float), np.asarray(weights, dtype=float), _trusted=True)


def _controls(values) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise InvalidInputError("a control set must be a non-empty list of points")
    return arr


@dataclass(frozen=True)
class GameDynamics:
    name: str
    dim: int
    controls_u: np.ndarray
    controls_v: np.ndarray
    f: Callable
    horizon: float
    lipschitz_L: float
    bound_R: float
    separated: Optional[tuple] = None
    measure_dependent: bool = True
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "controls_u", _controls(self.controls_u))
        object.__setattr__(self, "controls_v", _controls(self.controls_v))
        if self.horizon <= 0:
            raise InvalidInputError("horizon must be positive")

    @property
    def n_u(self) -> int:
        return self.controls_u.shape[0]

    @property
    def n_v(self) -> int:
        return self.controls_v.shape[0]

    def velocity_table(self, t, x, m) -> np.ndarray:
        """f at every point of ``x`` (shape (n, d)) for every control pair: (n, nU, nV, d)."""
        x = np.asarray(x, dtype=float)
        xs = x[:, None, None, :]
        us = self.controls_u[None, :, None, :]
        vs = self.controls_v[None, None, :, :]
        out = self.f(t, xs, m, us, vs)
        return np.broadcast_to(out, (x.shape[0], self.n_u, self.n_v, self.dim))

    def evaluate(self, t, x, m, u, v) -> np.ndarray:
        return np.asarray(self.f(t, np.asarray(x, float), m, np.atleast_1d(np.asarray(u, float)),
                                 np.atleast_1d(np.asarray(v, float))), dtype=float)

    def with_horizon(self, horizon: float):
        return replace(self, horizon=horizon)


@dataclass(frozen=True)
class TerminalCost:
    """Terminal payoff g(m); ``linear_c`` (vectorized over (k, d) points) marks g(m) = ∫ c dm."""

    g: Callable
    modulus: Optional[Callable]
    linear_c: Optional[Callable] = None
    lip_c: Optional[float] = None
    name: str = "custom"

    @classmethod
    def linear(cls, c, lip_c: float, name: str = "linear"):
        def g(m):
            return m.integrate(c)

        return cls(g=g, modulus=lambda theta: lip_c * theta, linear_c=c, lip_c=float(lip_c), name=name)

    def __call__(self, m) -> float:
        return float(self.g(m))

    def shifted(self, delta: float):
        """Same cost plus a constant."""
        if self.linear_c is not None:
            c = self.linear_c
            return TerminalCost.linear(lambda p: c(p) + delta, self.lip_c, f"{self.name}{delta:+g}")
        g = self.g
        return replace(self, g=lambda m: g(m) + delta)


# --- catalog --------------------------------------------------------------

DEFAULT_PARAMS = {
    "pursuit-1d": {"kappa_u": 1.1, "kappa_v": 0.9, "controls_u": (-1.0, 0.0, 1.0),
                   "controls_v": (-1.0, 0.0, 1.0), "horizon": 1.0},
    "crowd-averse-1d": {"kappa_u": 1.1, "kappa_v": 0.9, "gain": 0.5, "controls_u": (-1.0, 0.0, 1.0),
                        "controls_v": (-1.0, 0.0, 1.0), "horizon": 1.0},
    "pursuit-2d": {"kappa_u": 1.1, "kappa_v": 0.9, "horizon": 1.0},
}

GAMES = tuple(DEFAULT_PARAMS)


def _linear_pursuit(name, dim, ku, kv, cu, cv, horizon, params):
    def f1(t, x, m, u):
        return np.broadcast_to(ku * u, np.broadcast_shapes(np.shape(x), np.shape(u)))

    def f2(t, x, m, v):
        return np.broadcast_to(kv * v, np.broadcast_shapes(np.shape(x), np.shape(v)))

    def f(t, x, m, u, v):
        return f1(t, x, m, u) + f2(t, x, m, v)

    umax = float(np.max(np.linalg.norm(_controls(cu), axis=1)))
    vmax = float(np.max(np.linalg.norm(_controls(cv), axis=1)))
    return GameDynamics(name=name, dim=dim, controls_u=cu, controls_v=cv, f=f, horizon=horizon,
                        lipschitz_L=0.0, bound_R=ku * umax + kv * vmax, separated=(f1, f2),
                        measure_dependent=False, params=params)


def crowd_push(x, m: DiscreteMeasure):
    """∫ sin(2π(x−y)) / (2π) m(dy) per coordinate, a smooth periodic repulsion."""
    ang = 2.0 * np.pi * m.points
    c = m.weights @ np.cos(ang)
    s = m.weights @ np.sin(ang)
    ax = 2.0 * np.pi * np.asarray(x, dtype=float)
    return (np.sin(ax) * c - np.cos(ax) * s) / (2.0 * np.pi)


def make_game(name: str, **overrides) -> GameDynamics:
    if name not in DEFAULT_PARAMS:
        raise InvalidInputError(f"unknown game {name!r}; choose from {', '.join(GAMES)}")
    unknown = set(overrides) - set(DEFAULT_PARAMS[name])
    if unknown:
        raise InvalidInputError(f"unknown parameter(s) for {name}: {', '.join(sorted(unknown))}")
    p = {**DEFAULT_PARAMS[name], **overrides}
    ku, kv, horizon = float(p["kappa_u"]), float(p["kappa_v"]), float(p["horizon"])
    if name == "pursuit-1d":
        return _linear_pursuit(name, 1, ku, kv, p["controls_u"], p["controls_v"], horizon, p)
    if name == "pursuit-2d":
        axes = [(0.0, 0.0), (1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)]
        return _linear_pursuit(name, 2, ku, kv, axes, axes, horizon, p)
    gain = float(p["gain"])
    base = _linear_pursuit(name, 1, ku, kv, p["controls_u"], p["controls_v"], horizon, p)
    f1b, f2b = base.separated

    def f1(t, x, m, u):
        return f1b(t, x, m, u) + gain * crowd_push(x, m)

    def f(t, x, m, u, v):
        return f1(t, x, m, u) + f2b(t, x, m, v)

    return GameDynamics(name=name, dim=1, controls_u=base.controls_u, controls_v=base.controls_v, f=f,
                        horizon=horizon, lipschitz_L=gain, bound_R=base.bound_R + gain / (2.0 * np.pi),
                        separated=(f1, f2b), measure_dependent=True, params=p)


COSTS = ("sin2", "cos", "zero")


def make_cost(name: str, dim: int = 1) -> TerminalCost:
    """Catalog terminal costs of the form g(m) = ∫ c dm."""
    if name == "sin2":
        return TerminalCost.linear(lambda p: np.sum(np.sin(np.pi * np.asarray(p)) ** 2, axis=-1),
                                   math.pi * math.sqrt(dim), name)
    if name == "cos":
        return TerminalCost.linear(lambda p: np.sum(np.cos(2 * np.pi * np.asarray(p)), axis=-1),
                                   2 * math.pi * math.sqrt(dim), name)
    if name == "zero":
        return TerminalCost.linear(lambda p: np.zeros(np.shape(p)[:-1]), 0.0, name)
    raise InvalidInputError(f"unknown cost {name!r}; choose from {', '.join(COSTS)}")


# --- certification --------------------------------------------------------

def random_measure(rng, dim: int, atoms: int = 3) -> DiscreteMeasure:
    return DiscreteMeasure(rng.random((atoms, dim)), rng.dirichlet(np.ones(atoms)))


@dataclass
class IsaacsReport:
    samples: int
    max_discrepancy: float
    witness: Optional[tuple]

    def ok(self, tol: float = 1e-12) -> bool:
        return self.max_discrepancy <= tol


def game_security_levels(payoff: np.ndarray):
    """(min_u max_v, max_v min_u) for a payoff indexed [u, v]."""
    return float(payoff.max(axis=1).min()), float(payoff.min(axis=0).max())


def check_isaacs(dyn: GameDynamics, samples: int, rng=None) -> IsaacsReport:
    """Compare min-max and max-min of ⟨w, f⟩ over U×V at random (t, x, m, w)."""
    if samples < 1:
        raise InvalidInputError("samples must be at least 1")
    rng = np.random.default_rng(0) if rng is None else rng
    worst, witness = 0.0, None
    for _ in range(samples):
        t = rng.uniform(0, dyn.horizon)
        x = rng.random((1, dyn.dim))
        m = random_measure(rng, dyn.dim)
        w = rng.normal(size=dyn.dim)
        payoff = dyn.velocity_table(t, x, m)[0] @ w
        upper, lower = game_security_levels(payoff)
        gap = upper - lower
        if gap > worst:
            worst, witness = gap, (t, x[0].tolist(), w.tolist())
    return IsaacsReport(samples, worst, witness)


@dataclass
class ConstantsReport:
    R_observed: float
    L_observed: float


def certify_constants(dyn: GameDynamics, samples: int, rng=None) -> ConstantsReport:
    """Sampled maxima of ‖f‖ and of the Lipschitz ratio; raises if a declared bound is exceeded."""
    if samples < 1:
        raise InvalidInputError("samples must be at least 1")
    rng = np.random.default_rng(0) if rng is None else rng
    r_obs, l_obs = 0.0, 0.0
    tol = 1e-12
    for _ in range(samples):
        t = rng.uniform(0, dyn.horizon)
        x1 = rng.random((1, dyn.dim))
        m1 = random_measure(rng, dyn.dim)
        if rng.random() < 0.5:
            # nearby pair probes the local slope
            x2 = torus.wrap(x1 + rng.normal(scale=1e-3, size=x1.shape))
            m2 = DiscreteMeasure(m1.points + rng.normal(scale=1e-3, size=m1.points.shape), m1.weights)
        else:
            x2 = rng.random((1, dyn.dim))
            m2 = random_measure(rng, dyn.dim)
        v1 = dyn.velocity_table(t, x1, m1)[0]
        v2 = dyn.velocity_table(t, x2, m2)[0]
        norms = np.linalg.norm(v1, axis=-1)
        r = float(norms.max())
        if r > r_obs:
            r_obs = r
        if r > dyn.bound_R + tol:
            iu, iv = np.unravel_index(np.argmax(norms), norms.shape)
            raise CertificationError(
                f"|f| = {r:.6g} exceeds R = {dyn.bound_R:.6g}",
                witness=(t, x1[0].tolist(), dyn.controls_u[iu].tolist(), dyn.controls_v[iv].tolist()))
        denom = float(torus.dist(x1[0], x2[0])) + wasserstein(2, m1, m2)[0]
        if denom <= 0:
            continue
        diff = float(np.linalg.norm(v1 - v2, axis=-1).max())
        ratio = diff / denom
        if ratio > l_obs:
            l_obs = ratio
        if diff > dyn.lipschitz_L * denom + tol:
            raise CertificationError(
                f"Lipschitz ratio {ratio:.6g} exceeds L = {dyn.lipschitz_L:.6g}",
                witness=(t, x1[0].tolist(), x2[0].tolist()))
    return ConstantsReport(r_obs, l_obs)
