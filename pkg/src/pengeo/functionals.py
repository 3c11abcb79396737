"""Discrete paths and the penalized energy, length, and defect functionals.

A path is stored as N+1 points on the uniform grid t_i = i/N.  All
quadratures use the midpoint of each segment as the evaluation point and the
scaled difference N (p_{i+1} - p_i) as the velocity, so the discrete energy

    E_q = (1 / 2N) sum_i g_q(mid_i; vel_i, vel_i)

is exactly affine in q with slope half the horizontality defect.  That
identity is what the continuation diagnostics rely on, so the quadrature
must never be changed independently of them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import SubRiemannianStructure, as_point, check_penalty, penalized_forms

__all__ = [
    "DiscretePath",
    "FunctionalValue",
    "energy",
    "length",
    "horizontality_defect",
    "limit_energy",
    "limit_length",
    "semimetric_rho",
    "discrete_velocity",
]


@dataclass(frozen=True)
class DiscretePath:
    """Uniformly sampled path with pinned endpoints.

    ``points`` has shape (N+1, n) with N >= 2; row 0 must equal ``start``
    bitwise and the last row must equal ``end`` bitwise.  Arrays are stored
    read-only, so a path can be shared freely between solver iterations.
    """

    start: np.ndarray
    end: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        start = as_point(self.start)
        end = as_point(self.end, start.size)
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != start.size:
            raise ValueError(
                f"points must have shape (N+1, {start.size}), got {pts.shape}"
            )
        if pts.shape[0] < 3:
            raise ValueError("a path needs at least two segments (three grid points)")
        if not np.all(np.isfinite(pts)):
            raise ValueError("path points must be finite")
        if not np.array_equal(pts[0], start):
            raise ValueError("points[0] must equal start exactly")
        if not np.array_equal(pts[-1], end):
            raise ValueError("points[-1] must equal end exactly")
        for name, arr in (("start", start), ("end", end), ("points", pts)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_points(cls, points) -> "DiscretePath":
        pts = np.asarray(points, dtype=float)
        return cls(start=pts[0], end=pts[-1], points=pts)

    @classmethod
    def chord(cls, start, end, grid_size: int) -> "DiscretePath":
        """Straight-line path from start to end with ``grid_size`` segments."""
        s = as_point(start)
        e = as_point(end, s.size)
        lam = np.linspace(0.0, 1.0, grid_size + 1)[:, None]
        pts = (1.0 - lam) * s[None, :] + lam * e[None, :]
        pts[0] = s
        pts[-1] = e
        return cls(start=s, end=e, points=pts)

    @property
    def grid_size(self) -> int:
        """Number of segments N."""
        return self.points.shape[0] - 1

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    @property
    def times(self) -> np.ndarray:
        """The grid t_i = i/N as a vector of length N+1."""
        return np.linspace(0.0, 1.0, self.grid_size + 1)

    def interior(self) -> np.ndarray:
        """Writable copy of the interior points, shape (N-1, n)."""
        return self.points[1:-1].copy()

    def with_interior(self, interior) -> "DiscretePath":
        """New path with the same endpoints and the given interior points."""
        inner = np.asarray(interior, dtype=float)
        if inner.shape != (self.grid_size - 1, self.dimension):
            raise ValueError(
                f"interior must have shape {(self.grid_size - 1, self.dimension)}, got {inner.shape}"
            )
        pts = np.vstack([self.start[None, :], inner, self.end[None, :]])
        return DiscretePath(start=self.start, end=self.end, points=pts)


def discrete_velocity(path: DiscretePath, i: int) -> np.ndarray:
    """Velocity N (p_{i+1} - p_i) of segment i, for i in 0..N-1."""
    if not 0 <= i < path.grid_size:
        raise IndexError(f"segment index {i} out of range 0..{path.grid_size - 1}")
    return path.grid_size * (path.points[i + 1] - path.points[i])


def _segments(path: DiscretePath):
    pts = path.points
    mids = 0.5 * (pts[:-1] + pts[1:])
    vels = path.grid_size * (pts[1:] - pts[:-1])
    return mids, vels


@dataclass(frozen=True)
class FunctionalValue:
    """Value of a functional that may be infinite.

    Exactly one of the two readings is active: a finite float, or the flag.
    ``float(fv)`` returns ``inf`` for the infinite case so values can be
    compared without branching.
    """

    value: float
    is_infinite: bool

    def __post_init__(self):
        if self.is_infinite:
            if self.value != 0.0:
                raise ValueError("infinite functional values carry no finite payload")
        elif not np.isfinite(self.value):
            raise ValueError("finite functional values must be finite floats")

    @classmethod
    def finite(cls, value: float) -> "FunctionalValue":
        return cls(value=float(value), is_infinite=False)

    @classmethod
    def infinite(cls) -> "FunctionalValue":
        return cls(value=0.0, is_infinite=True)

    def __float__(self) -> float:
        return float("inf") if self.is_infinite else self.value


def energy(structure: SubRiemannianStructure, q, path: DiscretePath) -> float:
    """Penalized discrete energy E_q = (1 / 2N) sum g_q(mid; vel, vel)."""
    check_penalty(q)
    mids, vels = _segments(path)
    horizontal, vertical, _ = penalized_forms(structure, q, mids, vels)
    return float(np.sum(horizontal + float(q) * vertical) / (2.0 * path.grid_size))


def length(structure: SubRiemannianStructure, q, path: DiscretePath) -> float:
    """Penalized discrete length l_q = (1 / N) sum sqrt(g_q(mid; vel, vel))."""
    check_penalty(q)
    mids, vels = _segments(path)
    horizontal, vertical, _ = penalized_forms(structure, q, mids, vels)
    values = np.clip(horizontal + float(q) * vertical, 0.0, None)
    return float(np.sum(np.sqrt(values)) / path.grid_size)


def horizontality_defect(structure: SubRiemannianStructure, path: DiscretePath) -> float:
    """Mean squared complement speed (1 / N) sum g(Pc vel, Pc vel).

    Zero exactly on horizontal paths; the penalized energy is
    E_1 + (q - 1)/2 times this value for every q.
    """
    mids, vels = _segments(path)
    _, vertical, _ = penalized_forms(structure, 1.0, mids, vels)
    return float(np.sum(vertical) / path.grid_size)


def limit_energy(
    structure: SubRiemannianStructure,
    path: DiscretePath,
    horizontal_tol: float = 1e-6,
) -> FunctionalValue:
    """The q -> infinity energy: E_1 on horizontal paths, infinite otherwise.

    A path counts as horizontal when its defect does not exceed
    ``horizontal_tol``; discrete paths are almost never exactly horizontal,
    so the tolerance is part of the definition rather than a fudge.
    """
    if horizontality_defect(structure, path) > horizontal_tol:
        return FunctionalValue.infinite()
    return FunctionalValue.finite(energy(structure, 1.0, path))


def limit_length(
    structure: SubRiemannianStructure,
    path: DiscretePath,
    horizontal_tol: float = 1e-6,
) -> FunctionalValue:
    """The q -> infinity length: l_1 on horizontal paths, infinite otherwise."""
    if horizontality_defect(structure, path) > horizontal_tol:
        return FunctionalValue.infinite()
    return FunctionalValue.finite(length(structure, 1.0, path))


def semimetric_rho(path_a: DiscretePath, path_b: DiscretePath, order: int) -> np.ndarray:
    """Per-coordinate root mean square gap between two paths on one grid.

    Order 0 compares segment midpoints, order 1 compares segment velocities;
    both return a length-n vector so anisotropic convergence is visible.
    Paths must share grid size and dimension.
    """
    if order not in (0, 1):
        raise ValueError(f"order must be 0 or 1, got {order}")
    if path_a.grid_size != path_b.grid_size or path_a.dimension != path_b.dimension:
        raise ValueError(
            "paths must share grid size and dimension:"
            f" ({path_a.grid_size}, {path_a.dimension}) vs ({path_b.grid_size}, {path_b.dimension})"
        )
    mids_a, vels_a = _segments(path_a)
    mids_b, vels_b = _segments(path_b)
    diff = (mids_a - mids_b) if order == 0 else (vels_a - vels_b)
    return np.sqrt(np.mean(diff * diff, axis=0))
