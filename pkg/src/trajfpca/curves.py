"""Containers for sparse longitudinal data and the common evaluation grid."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

DOMAIN_TOL = 1e-9
DEFAULT_GRID_POINTS = 51


@dataclass(frozen=True)
class LongitudinalSample:
    """Irregularly timed observations of one subject.

    Parameters
    ----------
    subject_id : str
        Opaque identifier.
    times : array_like of shape (m,)
        Strictly increasing observation times.
    values : array_like of shape (m,)
        Observed outcomes at ``times``.
    group : str, optional
        Group label, ``None`` when the cohort has no grouping.
    """

    subject_id: str
    times: np.ndarray
    values: np.ndarray
    group: Optional[str] = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if times.size == 0:
            raise ValueError(f"subject {self.subject_id!r}: no observations")
        if times.shape != values.shape:
            raise ValueError(f"subject {self.subject_id!r}: times and values differ in length")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
            raise ValueError(f"subject {self.subject_id!r}: non-finite time or value")
        if np.any(np.diff(times) <= 0):
            raise ValueError(f"subject {self.subject_id!r}: times must be strictly increasing")
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "subject_id", str(self.subject_id))
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def n_obs(self) -> int:
        return int(self.times.size)

    def with_group(self, group: Optional[str]) -> "LongitudinalSample":
        return LongitudinalSample(self.subject_id, self.times, self.values, group)

    def head(self, n: int) -> "LongitudinalSample":
        """First ``n`` observations, keeping id and group."""
        return LongitudinalSample(self.subject_id, self.times[:n], self.values[:n], self.group)


@dataclass(frozen=True)
class TimeGrid:
    """Ordered evaluation points with trapezoid quadrature weights."""

    points: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64).reshape(-1)
        if points.size < 2 or np.any(np.diff(points) <= 0):
            raise ValueError("grid points must be strictly increasing with at least 2 entries")
        weights = trapezoid_weights(points) if self.weights is None else np.asarray(self.weights, dtype=np.float64)
        if weights.shape != points.shape or np.any(weights <= 0):
            raise ValueError("grid weights must be positive, one per point")
        points.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return int(self.points.size)

    @property
    def t_min(self) -> float:
        return float(self.points[0])

    @property
    def t_max(self) -> float:
        return float(self.points[-1])

    @property
    def length(self) -> float:
        return self.t_max - self.t_min

    @property
    def spacing(self) -> float:
        """Smallest gap between consecutive grid points."""
        return float(np.min(np.diff(self.points)))

    def contains(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        return (t >= self.t_min - DOMAIN_TOL) & (t <= self.t_max + DOMAIN_TOL)

    def interpolate(self, curve, t) -> np.ndarray:
        """Linear interpolation of grid values ``curve`` at times ``t``.

        ``curve`` may be a single curve of shape (M,) or a stack (K, M);
        the result has shape (len(t),) or (K, len(t)).
        """
        t = np.asarray(t, dtype=np.float64)
        if not np.all(self.contains(t)):
            raise ValueError("time out of domain")
        t = np.clip(t, self.t_min, self.t_max)
        curve = np.asarray(curve, dtype=np.float64)
        if curve.ndim == 1:
            return np.interp(t, self.points, curve)
        return np.stack([np.interp(t, self.points, row) for row in curve])


@dataclass(frozen=True)
class CurveMatrix:
    """N curves evaluated on a shared grid.

    Attributes
    ----------
    grid : TimeGrid
    values : np.ndarray of shape (N, M)
    subject_ids : tuple of str
    groups : tuple of str or None
    """

    grid: TimeGrid
    values: np.ndarray
    subject_ids: tuple
    groups: tuple

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, ndmin=2)
        if values.ndim != 2 or values.shape[1] != self.grid.size:
            raise ValueError("every curve needs exactly one value per grid point")
        if not np.all(np.isfinite(values)):
            raise ValueError("curves must be finite")
        if len(self.subject_ids) != values.shape[0] or len(self.groups) != values.shape[0]:
            raise ValueError("subject_ids and groups must have one entry per curve")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "subject_ids", tuple(self.subject_ids))
        object.__setattr__(self, "groups", tuple(self.groups))

    @property
    def n_curves(self) -> int:
        return int(self.values.shape[0])

    def group_labels(self) -> list:
        """Distinct group labels in sorted order."""
        return sorted({g for g in self.groups if g is not None})

    def subset(self, mask) -> "CurveMatrix":
        idx = np.flatnonzero(np.asarray(mask))
        return CurveMatrix(
            self.grid,
            self.values[idx],
            tuple(self.subject_ids[i] for i in idx),
            tuple(self.groups[i] for i in idx),
        )


def trapezoid_weights(points) -> np.ndarray:
    """Trapezoid rule weights; they sum to the interval length."""
    points = np.asarray(points, dtype=np.float64)
    gaps = np.diff(points)
    weights = np.zeros_like(points)
    weights[:-1] += gaps / 2
    weights[1:] += gaps / 2
    return weights


def build_grid(samples: Sequence[LongitudinalSample], n_points: int = DEFAULT_GRID_POINTS) -> TimeGrid:
    """Equally spaced grid from the earliest to the latest observed time."""
    if len(samples) == 0:
        raise ValueError("no samples")
    if n_points < 3:
        raise ValueError("n_points must be at least 3")
    t_min = min(float(s.times[0]) for s in samples)
    t_max = max(float(s.times[-1]) for s in samples)
    if not t_max > t_min:
        raise ValueError("degenerate time domain")
    points = np.linspace(t_min, t_max, n_points)
    return TimeGrid(points)


def norm_sq(curve, grid: TimeGrid) -> float:
    """Squared L2 norm of a grid-evaluated curve under the grid quadrature."""
    curve = np.asarray(curve, dtype=np.float64)
    if curve.shape != (grid.size,):
        raise ValueError(f"curve has {curve.size} values, grid has {grid.size}")
    return float(np.dot(grid.weights, curve * curve))


def inner(f, g, grid: TimeGrid) -> float:
    return float(np.dot(grid.weights, np.asarray(f) * np.asarray(g)))


def nearest_grid_index(t: float, grid: TimeGrid) -> int:
    """Index of the grid point closest to ``t``; ties go to the smaller index."""
    t = float(t)
    if not (grid.t_min - DOMAIN_TOL <= t <= grid.t_max + DOMAIN_TOL):
        raise ValueError("time out of domain")
    return int(nearest_grid_indices(np.array([t]), grid)[0])


def nearest_grid_indices(times, grid: TimeGrid) -> np.ndarray:
    """Vectorised :func:`nearest_grid_index`."""
    times = np.asarray(times, dtype=np.float64)
    if not np.all(grid.contains(times)):
        raise ValueError("time out of domain")
    pts = grid.points
    right = np.clip(np.searchsorted(pts, times, side="left"), 1, pts.size - 1)
    left = right - 1
    # strict comparison sends exact midpoints to the left neighbour
    use_right = np.abs(pts[right] - times) < np.abs(times - pts[left])
    return np.where(use_right, right, left)


def curve_matrix(grid: TimeGrid, rows, samples: Sequence[LongitudinalSample]) -> CurveMatrix:
    return CurveMatrix(grid, rows, tuple(s.subject_id for s in samples), tuple(s.group for s in samples))
