"""Finitely supported probability measures on the torus and exact optimal transport.

The transportation problem is solved exactly as a linear program (HiGHS dual
simplex through :func:`scipy.optimize.linprog`) and every solution is certified
by complementary slackness: the returned dual potentials must be feasible and
close the duality gap to within ``CERT_TOL``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from . import torus
from .errors import CertificationError, DimensionMismatchError, InvalidInputError

CERT_TOL = 1e-9
CSV_HEADER = "# mftg-csv v1"


class DiscreteMeasure:
    """Probability measure with finitely many atoms on T^d.

    Atoms are canonicalized, merged when bitwise equal, sorted lexicographically
    and their weights renormalized, so two measures built from the same atoms in
    any order are identical.
    """

    __slots__ = ("points", "weights")

    def __init__(self, points, weights, *, _trusted=False):
        if _trusted:
            self.points = points
            self.weights = weights
            return
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(weights, dtype=float).ravel()
        if pts.shape[0] != w.shape[0]:
            raise InvalidInputError("points and weights have different lengths")
        if pts.shape[0] == 0:
            raise InvalidInputError("a probability measure needs at least one atom")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(w))):
            raise InvalidInputError("non-finite atom or weight")
        if np.any(w < 0):
            raise InvalidInputError("negative weight")
        pts = torus.wrap(pts)
        keep = w > 0
        pts, w = pts[keep], w[keep]
        if w.size == 0:
            raise InvalidInputError("all weights are zero")
        order = np.lexsort(pts.T[::-1])
        pts, w = pts[order], w[order]
        if pts.shape[0] > 1:
            new = np.ones(pts.shape[0], dtype=bool)
            new[1:] = np.any(pts[1:] != pts[:-1], axis=1)
            if not np.all(new):
                group = np.cumsum(new) - 1
                w = np.bincount(group, weights=w)
                pts = pts[new]
        pts.setflags(write=False)
        w = w / w.sum()
        w.setflags(write=False)
        self.points = pts
        self.weights = w

    @classmethod
    def dirac(cls, point):
        p = np.atleast_1d(np.asarray(point, dtype=float))
        return cls(p[None, :], [1.0])

    @classmethod
    def from_particles(cls, positions):
        """Empirical measure of equally weighted particles (shape (N, d))."""
        pos = np.asarray(positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        n = pos.shape[0]
        return cls(pos, np.full(n, 1.0 / n))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def atoms(self):
        return [(torus.TorusPoint(tuple(float(c) for c in p)), float(w))
                for p, w in zip(self.points, self.weights)]

    def integrate(self, fn) -> float:
        """Integral of a vectorized function ``fn(points) -> (k,)``."""
        return float(np.dot(self.weights, np.asarray(fn(self.points), dtype=float)))

    def __eq__(self, other):
        if not isinstance(other, DiscreteMeasure):
            return NotImplemented
        return (self.points.shape == other.points.shape
                and np.array_equal(self.points, other.points)
                and np.array_equal(self.weights, other.weights))

    def __hash__(self):
        return hash((self.points.tobytes(), self.weights.tobytes()))

    def __repr__(self):
        return f"DiscreteMeasure(size={self.size}, dim={self.dim})"


class Lattice:
    """Ordered finite subset S of the torus.

    ``shape`` and ``h`` are set for the regular lattice hZ^d ∩ T^d, whose
    points are ordered lexicographically by integer index (last axis fastest).
    """

    def __init__(self, points, *, h=None, shape=None):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        pts = torus.wrap(pts)
        if len(np.unique(pts, axis=0)) != len(pts):
            raise InvalidInputError("lattice points must be distinct")
        pts.setflags(write=False)
        self.points = pts
        self.h = h
        self.shape = shape
        n = len(pts)
        if n > 1:
            dm = torus.pairwise_dist(pts, pts)
            dm[np.diag_indices(n)] = np.inf
            self.fineness = float(dm.min())
        else:
            self.fineness = math.inf
        self._covering = None

    @classmethod
    def regular(cls, h: float, dim: int):
        k = round(1.0 / h)
        if k < 1 or abs(k * h - 1.0) > 1e-12:
            raise InvalidInputError(f"1/h must be a positive integer, got h={h!r}")
        grids = np.meshgrid(*[np.arange(k)] * dim, indexing="ij")
        idx = np.stack([g.ravel() for g in grids], axis=1)
        return cls(idx / k, h=1.0 / k, shape=(k,) * dim)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def __len__(self):
        return self.size

    @property
    def covering_radius(self) -> float:
        """max over x in T^d of the distance to the nearest lattice point."""
        if self._covering is None:
            self._covering = self._compute_covering()
        return self._covering

    def _compute_covering(self) -> float:
        if self.shape is not None:
            return math.sqrt(self.dim) * self.h / 2.0
        if self.dim == 1:
            xs = np.sort(self.points[:, 0])
            gaps = np.diff(np.concatenate([xs, [xs[0] + 1.0]]))
            return float(gaps.max() / 2.0)
        # sampled lower estimate for irregular sets in d >= 2
        rng = np.random.default_rng(0)
        probe = rng.random((20000, self.dim))
        return float(torus.pairwise_dist(probe, self.points).min(axis=1).max())

    def index_of(self, point) -> int:
        p = torus.wrap(np.atleast_1d(np.asarray(point, dtype=float)))
        hits = np.flatnonzero(np.all(self.points == p, axis=1))
        if hits.size == 0:
            raise KeyError(f"{point!r} is not a lattice point")
        return int(hits[0])

    def same_as(self, other) -> bool:
        return self is other or (self.points.shape == other.points.shape
                                 and np.array_equal(self.points, other.points))


class SimplexVector:
    """Probability vector over the points of a lattice."""

    __slots__ = ("lattice", "values")

    def __init__(self, lattice: Lattice, values):
        v = np.asarray(values, dtype=float).ravel().copy()
        if v.shape[0] != lattice.size:
            raise DimensionMismatchError(f"{v.shape[0]} values for a lattice of {lattice.size} points")
        if np.any(v < -1e-12):
            raise InvalidInputError("simplex vector has negative entries")
        v = np.maximum(v, 0.0)
        s = v.sum()
        if abs(s - 1.0) > 1e-9:
            raise InvalidInputError(f"simplex vector sums to {s!r}")
        v /= s
        v.setflags(write=False)
        self.lattice = lattice
        self.values = v

    @classmethod
    def vertex(cls, lattice: Lattice, index: int):
        v = np.zeros(lattice.size)
        v[index] = 1.0
        return cls(lattice, v)

    @classmethod
    def uniform(cls, lattice: Lattice):
        return cls(lattice, np.full(lattice.size, 1.0 / lattice.size))

    def __repr__(self):
        return f"SimplexVector({np.array2string(self.values, precision=4)})"


@dataclass(frozen=True)
class TransportPlan:
    source: DiscreteMeasure
    target: DiscreteMeasure
    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray
    dual_gap: float = 0.0

    @property
    def entries(self):
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.mass.tolist()))

    def matrix(self) -> np.ndarray:
        out = np.zeros((self.source.size, self.target.size))
        np.add.at(out, (self.rows, self.cols), self.mass)
        return out

    def cost(self, p: int = 2) -> float:
        d = torus.dist(self.source.points[self.rows], self.target.points[self.cols])
        return float(np.dot(self.mass, d ** p))

    def marginal_errors(self):
        m = self.matrix()
        return (float(np.abs(m.sum(axis=1) - self.source.weights).max()),
                float(np.abs(m.sum(axis=0) - self.target.weights).max()))


def _check_same_dim(m1, m2):
    if m1.dim != m2.dim:
        raise DimensionMismatchError(f"dimensions {m1.dim} and {m2.dim} differ")


def solve_transport(cost: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Exact transportation LP min <cost, P> over couplings of (a, b).

    Returns ``(rows, cols, mass, objective, gap)`` where ``gap`` is the
    certified duality gap.  Raises :class:`CertificationError` if the dual
    certificate does not close.
    """
    k1, k2 = cost.shape
    if k1 == 1 or k2 == 1:
        rows, cols = np.meshgrid(np.arange(k1), np.arange(k2), indexing="ij")
        mass = (a[:, None] * b[None, :]).ravel()
        obj = float(np.dot(mass, cost.ravel()))
        return rows.ravel(), cols.ravel(), mass, obj, 0.0
    nvar = k1 * k2
    # row-sum constraints for every source atom, column sums for all but the
    # last target atom (the remaining one is implied by total mass)
    r_idx = np.repeat(np.arange(k1), k2)
    c_idx = np.tile(np.arange(k2), k1)
    var = np.arange(nvar)
    keep = c_idx < k2 - 1
    A = sp.csr_matrix(
        (np.ones(nvar + keep.sum()),
         (np.concatenate([r_idx, k1 + c_idx[keep]]), np.concatenate([var, var[keep]]))),
        shape=(k1 + k2 - 1, nvar))
    rhs = np.concatenate([a, b[:-1]])
    res = linprog(cost.ravel(), A_eq=A, b_eq=rhs, bounds=(0, None), method="highs-ds",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10,
                           "presolve": False})
    if res.status != 0:
        raise CertificationError(f"transport LP failed: {res.message}")
    x = np.maximum(res.x, 0.0)
    x[x <= 1e-15] = 0.0
    x = _fit_marginals(x, r_idx, c_idx, a, b)
    y = res.eqlin.marginals
    u, v = y[:k1], np.concatenate([y[k1:], [0.0]])
    reduced = cost - u[:, None] - v[None, :]
    primal = float(np.dot(cost.ravel(), x))
    dual = float(np.dot(u, a) + np.dot(v, b))
    gap = primal - dual
    scale = 1.0 + float(np.abs(cost).max())
    if reduced.min() < -CERT_TOL * scale or abs(gap) > CERT_TOL * scale:
        raise CertificationError(
            f"transport certificate failed: min reduced cost {reduced.min():.3e}, gap {gap:.3e}")
    nz = np.flatnonzero(x > 1e-15)
    return r_idx[nz], c_idx[nz], x[nz], primal, gap


def _fit_marginals(x, r_idx, c_idx, a, b, sweeps: int = 4):
    """Rescale a nearly feasible plan on its support so the marginals hold to roundoff."""
    def scale(x, idx, target):
        sums = np.bincount(idx, weights=x, minlength=target.size)
        return x * np.where(sums > 0, target / np.where(sums > 0, sums, 1.0), 0.0)[idx]

    # the source side is matched last: callers split source atoms by these masses
    for _ in range(sweeps):
        x = scale(scale(x, c_idx, b), r_idx, a)
    return x


def wasserstein(p: int, m1: DiscreteMeasure, m2: DiscreteMeasure):
    """Exact W_p distance and an optimal plan, for p in {1, 2}."""
    if p not in (1, 2):
        raise InvalidInputError(f"unsupported p={p!r}; only 1 and 2")
    _check_same_dim(m1, m2)
    cost = torus.pairwise_dist(m1.points, m2.points) ** p
    rows, cols, mass, obj, gap = solve_transport(cost, m1.weights, m2.weights)
    plan = TransportPlan(m1, m2, rows, cols, mass, gap)
    return max(obj, 0.0) ** (1.0 / p), plan


def embed(mu: SimplexVector) -> DiscreteMeasure:
    """The measure sum_x mu_x delta_x, dropping zero entries."""
    keep = mu.values > 0
    return DiscreteMeasure(mu.lattice.points[keep], mu.values[keep])


def nearest_index(points, lattice: Lattice) -> np.ndarray:
    """Index of the nearest lattice point for every row; ties go to the lower index."""
    return np.argmin(torus.pairwise_dist(points, lattice.points), axis=1)


def project(m: DiscreteMeasure, lattice: Lattice) -> SimplexVector:
    """Closest element of P(S) to ``m`` in W_2: push every atom to its nearest lattice point."""
    if m.dim != lattice.dim:
        raise DimensionMismatchError("measure and lattice dimensions differ")
    idx = nearest_index(m.points, lattice)
    vals = np.bincount(idx, weights=m.weights, minlength=lattice.size)
    return SimplexVector(lattice, vals)


def simplex_wasserstein(p: int, mu1: SimplexVector, mu2: SimplexVector) -> float:
    return wasserstein(p, embed(mu1), embed(mu2))[0]


@dataclass
class MetricReport:
    p: int
    norm_p: float
    w_p: float
    lower_bound: float
    upper_bound: float
    lower_ok: bool
    upper_ok: bool

    @property
    def ok(self) -> bool:
        return self.lower_ok and self.upper_ok


def metric_comparison(p: int, mu1: SimplexVector, mu2: SimplexVector, slack: float = 1e-9) -> MetricReport:
    """Compare the l_p distance of simplex vectors with W_p of their embeddings.

    Checks  W_p^p >= fineness^p / 2 * sum |Δ|^p  and  W_p^p <= d^{p/2} / 2 * ||Δ||_1.
    """
    if not mu1.lattice.same_as(mu2.lattice):
        raise DimensionMismatchError("simplex vectors live on different lattices")
    lat = mu1.lattice
    delta = mu2.values - mu1.values
    norm_p = float(np.sum(np.abs(delta) ** p) ** (1.0 / p))
    w = simplex_wasserstein(p, mu1, mu2)
    wp = w ** p
    lower = lat.fineness ** p / 2.0 * float(np.sum(np.abs(delta) ** p)) if lat.size > 1 else 0.0
    upper = lat.dim ** (p / 2.0) / 2.0 * float(np.abs(delta).sum())
    return MetricReport(p, norm_p, w, lower, upper, wp >= lower - slack, wp <= upper + slack)


def disintegrate(plan: TransportPlan, conditioning_side: str = "first"):
    """Conditional measures of a plan given each atom of one marginal.

    Returns a dict mapping atom index on the conditioning side to the
    normalized conditional :class:`DiscreteMeasure` on the other side.
    """
    if conditioning_side not in ("first", "second"):
        raise InvalidInputError("conditioning_side must be 'first' or 'second'")
    if conditioning_side == "first":
        keys, others, other_pts = plan.rows, plan.cols, plan.target.points
    else:
        keys, others, other_pts = plan.cols, plan.rows, plan.source.points
    out = {}
    for key in np.unique(keys):
        sel = keys == key
        out[int(key)] = DiscreteMeasure(other_pts[others[sel]], plan.mass[sel])
    return out


def recombine(conditionals, marginal: DiscreteMeasure, other: DiscreteMeasure, conditioning_side="first"):
    """Rebuild the plan matrix from a disintegration; inverse of :func:`disintegrate`."""
    out = np.zeros((marginal.size, other.size))
    for key, cond in conditionals.items():
        for pt, w in zip(cond.points, cond.weights):
            j = int(np.flatnonzero(np.all(other.points == pt, axis=1))[0])
            out[key, j] += marginal.weights[key] * w
    return out if conditioning_side == "first" else out.T


def random_simplex(rng, n, alpha=1.0) -> np.ndarray:
    """Symmetric Dirichlet sample."""
    v = rng.dirichlet(np.full(n, alpha))
    return v


def resample_counts(weights, n: int) -> np.ndarray:
    """Largest-remainder apportionment of ``n`` units to ``weights``."""
    w = np.asarray(weights, dtype=float)
    raw = w * n
    base = np.floor(raw).astype(int)
    rem = n - base.sum()
    if rem > 0:
        order = np.lexsort((np.arange(len(w)), -(raw - base)))
        base[order[:rem]] += 1
    return base


# --- CSV ------------------------------------------------------------------

def measure_to_csv(m: DiscreteMeasure) -> str:
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow([f"x_{i + 1}" for i in range(m.dim)] + ["weight"])
    for p, w in zip(m.points, m.weights):
        wr.writerow([torus.format_coord(c) for c in p] + [torus.format_coord(w)])
    return buf.getvalue()


def lattice_to_csv(lat: Lattice) -> str:
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow([f"x_{i + 1}" for i in range(lat.dim)])
    for p in lat.points:
        wr.writerow([torus.format_coord(c) for c in p])
    return buf.getvalue()


def _rows(text):
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    rd = csv.reader(lines)
    header = next(rd)
    return header, [[float(c) for c in row] for row in rd]


def measure_from_csv(text: str) -> DiscreteMeasure:
    header, rows = _rows(text)
    if header[-1] != "weight":
        raise InvalidInputError("measure CSV must end with a 'weight' column")
    arr = np.array(rows, dtype=float)
    return DiscreteMeasure(arr[:, :-1], arr[:, -1])


def lattice_from_csv(text: str) -> Lattice:
    _, rows = _rows(text)
    return Lattice(np.array(rows, dtype=float))
