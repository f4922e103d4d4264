"""Flat-torus geometry: wrapping, shortest differences and the torus metric.

Points live on T^d = (R / period Z)^d with representative coordinates in
[0, period).  All helpers are vectorized over leading axes; the last axis is
the coordinate axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap(x, period: float = TWO_PI):
    """Map coordinates to their representatives in [0, period)."""
    return np.mod(x, period)


def wrap_diff(dx, period: float = TWO_PI):
    """Shortest signed representative of a coordinate difference, in [-period/2, period/2)."""
    return np.mod(np.asarray(dx) + 0.5 * period, period) - 0.5 * period


def torus_diff(x, y, period: float = TWO_PI):
    """Shortest signed displacement y -> x, per coordinate."""
    return wrap_diff(np.asarray(x) - np.asarray(y), period)


def torus_dist(x, y, period: float = TWO_PI):
    """Flat-torus metric: Euclidean norm of the per-coordinate shortest wrap."""
    d = torus_diff(x, y, period)
    return np.sqrt(np.sum(d * d, axis=-1))


def nearest_lift(x, base, period: float = TWO_PI):
    """Lift of x closest to the real vector ``base`` (inverse of wrapping)."""
    return np.asarray(base) + wrap_diff(np.asarray(x) - np.asarray(base), period)


@dataclass(frozen=True)
class TorusPoint:
    """Point on the flat torus with representative coordinates in [0, period).

    ``coords`` is a read-only float array of shape (d,), d in {1, 2}.
    """

    coords: np.ndarray
    period: float = TWO_PI

    def __init__(self, coords, period: float = TWO_PI):
        c = np.atleast_1d(np.asarray(coords, dtype=float)).copy()
        if c.ndim != 1 or c.size not in (1, 2):
            raise ValueError("TorusPoint expects 1 or 2 coordinates")
        c = wrap(c, period)
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "period", float(period))

    @property
    def dim(self) -> int:
        return self.coords.size

    def distance(self, other: "TorusPoint") -> float:
        return float(torus_dist(self.coords, np.asarray(other.coords), self.period))

    def diff(self, other: "TorusPoint") -> np.ndarray:
        """Shortest signed displacement from ``other`` to ``self``."""
        return torus_diff(self.coords, np.asarray(other.coords), self.period)

    def __array__(self, dtype=None, copy=None):
        return np.array(self.coords, dtype=dtype)


def as_coords(x, dim: int | None = None) -> np.ndarray:
    """Coerce a TorusPoint / scalar / array-like to a float coordinate array."""
    if isinstance(x, TorusPoint):
        c = np.array(x.coords, dtype=float)
    else:
        c = np.atleast_1d(np.asarray(x, dtype=float))
    if dim is not None and c.shape[-1] != dim:
        raise ValueError(f"expected {dim} coordinates, got shape {c.shape}")
    return c
