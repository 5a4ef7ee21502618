"""Geometry of the flat torus T^d = R^d / Z^d.

Points are stored by their canonical representative in [0, 1)^d.  The minimal
displacement between two points wraps every coordinate difference into
[-1/2, 1/2]; an exact antipodal difference resolves to +1/2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, InvalidInputError


def wrap(raw) -> np.ndarray:
    """Reduce coordinates modulo 1 into [0, 1), elementwise."""
    a = np.asarray(raw, dtype=float)
    out = np.mod(a, 1.0)
    # np.mod(-1e-20, 1.0) rounds to 1.0
    return np.where(out >= 1.0, 0.0, out)


def displacement(x, y) -> np.ndarray:
    """Minimal-norm representative of x - y, broadcast over leading axes.

    Each component lies in (-1/2, 1/2]; the antipodal tie is +1/2.
    """
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    out = 0.5 - np.mod(0.5 - diff, 1.0)
    # mod can round up to exactly 1.0 for tiny negative arguments
    return np.where(out <= -0.5, out + 1.0, out)


def dist(x, y) -> np.ndarray:
    """Torus distance, broadcast over leading axes (last axis is the coordinate)."""
    return np.linalg.norm(displacement(x, y), axis=-1)


def pairwise_dist(a, b) -> np.ndarray:
    """Distance matrix between point arrays of shape (n, d) and (m, d)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatchError(f"dimensions {a.shape[1]} and {b.shape[1]} differ")
    return dist(a[:, None, :], b[None, :, :])


@dataclass(frozen=True)
class TorusPoint:
    coords: tuple

    def __post_init__(self):
        if len(self.coords) < 1:
            raise InvalidInputError("a torus point needs at least one coordinate")
        for c in self.coords:
            if not (0.0 <= c < 1.0):
                raise InvalidInputError(f"coordinate {c!r} is not canonical; use canonicalize()")

    @property
    def dim(self) -> int:
        return len(self.coords)

    def array(self) -> np.ndarray:
        return np.array(self.coords, dtype=float)

    def __str__(self):
        return ",".join(format_coord(c) for c in self.coords)


@dataclass(frozen=True)
class Displacement:
    vector: tuple

    def array(self) -> np.ndarray:
        return np.array(self.vector, dtype=float)

    def norm(self) -> float:
        return math.sqrt(sum(c * c for c in self.vector))


def canonicalize(raw) -> TorusPoint:
    a = np.atleast_1d(np.asarray(raw, dtype=float))
    if a.ndim != 1 or a.size == 0:
        raise InvalidInputError("expected a non-empty flat sequence of coordinates")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"non-finite coordinate in {raw!r}")
    return TorusPoint(tuple(float(c) for c in wrap(a)))


def _check_dims(x: TorusPoint, y: TorusPoint):
    if x.dim != y.dim:
        raise DimensionMismatchError(f"dimensions {x.dim} and {y.dim} differ")


def ell(x: TorusPoint, y: TorusPoint) -> Displacement:
    """The minimal displacement vector from y to x (a representative of x - y)."""
    _check_dims(x, y)
    return Displacement(tuple(float(c) for c in displacement(x.array(), y.array())))


def distance(x: TorusPoint, y: TorusPoint) -> float:
    _check_dims(x, y)
    return float(dist(x.array(), y.array()))


def format_coord(c: float) -> str:
    return format(float(c), ".17g")
