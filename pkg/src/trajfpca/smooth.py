"""Local linear kernel smoothers with cross-validated bandwidths.

Both smoothers use the Epanechnikov kernel (a product kernel in two
dimensions). Where a window holds too few distinct design points for a
well-posed local fit, that evaluation point's window is widened by a constant
factor until it does.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .curves import TimeGrid

N_CANDIDATES = 10
N_FOLDS = 5
MIN_CV_POINTS = 10
ENLARGE_FACTOR = 1.25
MAX_ENLARGE_STEPS = 80
# normalised weighted design variance below this counts as degenerate
DEGENERACY_TOL = 1e-10
CHUNK_ELEMENTS = 2_000_000


@dataclass(frozen=True)
class Bandwidth:
    """Either a fixed bandwidth ``value`` (time units) or ``mode="auto"``."""

    mode: str = "auto"
    value: Optional[float] = None

    def __post_init__(self):
        if self.mode not in ("auto", "fixed"):
            raise ValueError(f"unknown bandwidth mode {self.mode!r}")
        if self.mode == "fixed":
            if self.value is None or not np.isfinite(self.value) or self.value <= 0:
                raise ValueError("fixed bandwidth must be a positive number")
            object.__setattr__(self, "value", float(self.value))

    @classmethod
    def fixed(cls, h: float) -> "Bandwidth":
        return cls("fixed", h)

    @classmethod
    def auto(cls) -> "Bandwidth":
        return cls("auto", None)

    @classmethod
    def parse(cls, text) -> "Bandwidth":
        """``"auto"`` or a positive number."""
        if isinstance(text, Bandwidth):
            return text
        if text is None or str(text).strip().lower() == "auto":
            return cls.auto()
        return cls.fixed(float(text))

    def __str__(self) -> str:
        return "auto" if self.mode == "auto" else repr(self.value)


@dataclass(frozen=True)
class Scatter1D:
    """Pooled points ``(x, y)`` with weights ``w``.

    ``unit`` optionally tags each point with the subject it came from, so
    that cross-validation folds never split a subject.
    """

    x: np.ndarray
    y: np.ndarray
    w: Optional[np.ndarray] = None
    unit: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64).reshape(-1)
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        w = np.ones_like(x) if self.w is None else np.asarray(self.w, dtype=np.float64).reshape(-1)
        _check_fields((x, y, w), self.unit)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "w", w)
        if self.unit is not None:
            object.__setattr__(self, "unit", np.asarray(self.unit).reshape(-1))

    def __len__(self) -> int:
        return int(self.x.size)

    def take(self, idx) -> "Scatter1D":
        unit = None if self.unit is None else self.unit[idx]
        return Scatter1D(self.x[idx], self.y[idx], self.w[idx], unit)


@dataclass(frozen=True)
class Scatter2D:
    """Points ``(s, t, c)`` with weights ``w``; ``unit`` as in :class:`Scatter1D`."""

    s: np.ndarray
    t: np.ndarray
    c: np.ndarray
    w: Optional[np.ndarray] = None
    unit: Optional[np.ndarray] = None

    def __post_init__(self):
        s = np.asarray(self.s, dtype=np.float64).reshape(-1)
        t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        c = np.asarray(self.c, dtype=np.float64).reshape(-1)
        w = np.ones_like(s) if self.w is None else np.asarray(self.w, dtype=np.float64).reshape(-1)
        _check_fields((s, t, c, w), self.unit)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "w", w)
        if self.unit is not None:
            object.__setattr__(self, "unit", np.asarray(self.unit).reshape(-1))

    def __len__(self) -> int:
        return int(self.s.size)

    def take(self, idx) -> "Scatter2D":
        unit = None if self.unit is None else self.unit[idx]
        return Scatter2D(self.s[idx], self.t[idx], self.c[idx], self.w[idx], unit)


@dataclass(frozen=True)
class BandwidthChoice:
    """Outcome of bandwidth selection.

    ``fallback`` is set when there were too few points for cross-validation
    and the rule-of-thumb bandwidth was used instead.
    """

    h: float
    candidates: np.ndarray
    cv_error: np.ndarray
    fallback: bool = False


def _check_fields(arrays, unit):
    n = arrays[0].size
    if any(a.size != n for a in arrays):
        raise ValueError("scatter fields differ in length")
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise ValueError("scatter fields must be finite")
    if np.any(arrays[-1] < 0):
        raise ValueError("weights must be nonnegative")
    if unit is not None and np.asarray(unit).size != n:
        raise ValueError("unit labels differ in length")


def epanechnikov(u):
    u = np.asarray(u, dtype=np.float64)
    return np.maximum(0.75 * (1.0 - u * u), 0.0)


def _chunks(n_queries: int, n_points: int):
    step = max(1, CHUNK_ELEMENTS // max(n_points, 1))
    for start in range(0, n_queries, step):
        yield slice(start, min(start + step, n_queries))


def _line_at(x, y, w, q, hq):
    """Local linear intercepts at queries ``q`` with per-query bandwidths.

    Returns the values and a mask of queries whose fit was well posed.
    """
    out = np.zeros(q.size)
    ok = np.zeros(q.size, dtype=bool)
    for sl in _chunks(q.size, x.size):
        u = (x[None, :] - q[sl, None]) / hq[sl, None]
        k = epanechnikov(u) * w[None, :]
        ku = k * u
        s0 = k.sum(axis=1)
        s1 = ku.sum(axis=1)
        s2 = (ku * u).sum(axis=1)
        t0 = k @ y
        t1 = ku @ y
        det = s0 * s2 - s1 * s1
        good = (s0 > 0) & (det > DEGENERACY_TOL * np.maximum(s0, 1e-300) ** 2)
        safe = np.where(good, det, 1.0)
        out[sl] = np.where(good, (s2 * t0 - s1 * t1) / safe, 0.0)
        ok[sl] = good
    return out, ok


def _solve_plane(moments):
    """Intercepts of 3x3 local plane systems from stacked weighted moments.

    ``moments[..., :]`` holds S00, S10, S01, S20, S02, S11, T0, T1, T2.
    """
    s00, s10, s01, s20, s02, s11, t0, t1, t2 = np.moveaxis(moments, -1, 0)
    a = np.stack(
        [
            np.stack([s00, s10, s01], -1),
            np.stack([s10, s20, s11], -1),
            np.stack([s01, s11, s02], -1),
        ],
        -2,
    )
    det = np.linalg.det(a)
    scale = np.maximum(s00, 1e-300) ** 3
    good = (s00 > 0) & (det > DEGENERACY_TOL * scale)
    a = np.where(good[..., None, None], a, np.eye(3))
    rhs = np.stack([t0, t1, t2], -1)
    sol = np.linalg.solve(a, rhs[..., None])[..., 0, 0]
    return np.where(good, sol, 0.0), good


def _enlarge_until_ok(evaluate, h, n_queries, label):
    """Run ``evaluate(idx, hq)`` and widen the failing windows until all succeed."""
    out = np.zeros(n_queries)
    pending = np.arange(n_queries)
    hq = np.full(n_queries, float(h))
    for _ in range(MAX_ENLARGE_STEPS):
        vals, ok = evaluate(pending, hq[pending])
        out[pending[ok]] = vals[ok]
        pending = pending[~ok]
        if pending.size == 0:
            return out
        hq[pending] *= ENLARGE_FACTOR
    raise ValueError(f"degenerate design in {label} smoother")


def _fit_line(x, y, w, h, query):
    active = x[w > 0]
    if active.size == 0 or np.ptp(active) == 0:
        raise ValueError("degenerate design")
    return _enlarge_until_ok(lambda idx, hq: _line_at(x, y, w, query[idx], hq), h, query.size, "1d")


def _mirror_half(s, t, c, w):
    """Length of the first half if the second half is its exact mirror image, else None."""
    n = s.size
    if n == 0 or n % 2:
        return None
    k = n // 2
    if (
        np.array_equal(s[:k], t[k:]) and np.array_equal(t[:k], s[k:])
        and np.array_equal(c[:k], c[k:]) and np.array_equal(w[:k], w[k:])
    ):
        return k
    return None


def _grid_moments(s, t, c, w, h, gp):
    """Weighted local-plane moments at every grid pair, via separable products."""
    du = (s[None, :] - gp[:, None]) / h
    dv = (t[None, :] - gp[:, None]) / h
    ks = epanechnikov(du) * w[None, :]
    kt = epanechnikov(dv)
    ks_u = ks * du
    kt_v = kt * dv
    ks_c = ks * c[None, :]
    return [
        ks @ kt.T, ks_u @ kt.T, ks @ kt_v.T,
        (ks_u * du) @ kt.T, ks @ (kt_v * dv).T, ks_u @ kt_v.T,
        ks_c @ kt.T, (ks_u * c[None, :]) @ kt.T, ks_c @ kt_v.T,
    ]


def _surface_moments(s, t, c, w, h, gp, half):
    if half is None:
        return _grid_moments(s, t, c, w, h, gp)
    # the mirrored half contributes the transposed moments with the roles of s and t swapped
    s00, s10, s01, s20, s02, s11, t0, t1, t2 = _grid_moments(s[:half], t[:half], c[:half], w[:half], h, gp)
    return [
        s00 + s00.T, s10 + s01.T, s01 + s10.T,
        s20 + s02.T, s02 + s20.T, s11 + s11.T,
        t0 + t0.T, t1 + t2.T, t2 + t1.T,
    ]


def _fit_surface(s, t, c, w, h, gp):
    """Local plane fit on the grid ``gp`` x ``gp``, unsymmetrised.

    Grid pairs whose window is degenerate are refitted with the window
    widened by ``ENLARGE_FACTOR`` until the design is well posed. All pending
    pairs share the same bandwidth at each step, so the moments are computed
    on the grid points those pairs touch.
    """
    half = _mirror_half(s, t, c, w)
    m = gp.size
    surface = np.zeros((m, m))
    pend_a, pend_b = np.divmod(np.arange(m * m), m)
    for step in range(MAX_ENLARGE_STEPS + 1):
        touched = np.union1d(pend_a, pend_b)
        pos = np.full(m, -1)
        pos[touched] = np.arange(touched.size)
        hh = h * ENLARGE_FACTOR ** step
        moments = _surface_moments(s, t, c, w, hh, gp[touched], half)
        vals, good = _solve_plane(np.stack(moments, axis=-1))
        ia, ib = pos[pend_a], pos[pend_b]
        ok = good[ia, ib]
        surface[pend_a[ok], pend_b[ok]] = vals[ia[ok], ib[ok]]
        pend_a, pend_b = pend_a[~ok], pend_b[~ok]
        if pend_a.size == 0:
            return surface
    raise ValueError("degenerate design in 2d smoother")


def _check_2d_design(points: Scatter2D):
    pos = points.w > 0
    if np.count_nonzero(pos) < 3:
        raise ValueError("degenerate design: need at least 3 weighted points")
    design = np.column_stack([np.ones(np.count_nonzero(pos)), points.s[pos], points.t[pos]])
    if np.linalg.matrix_rank(design) < 3:
        raise ValueError("degenerate design: points are collinear")


def _candidates(grid: TimeGrid) -> np.ndarray:
    lo = grid.spacing
    hi = max(grid.length / 2.0, lo)
    return np.geomspace(lo, hi, N_CANDIDATES)


def _fold_labels(n_points, unit, seed, n_folds):
    """Fold index per point; folds are dealt over shuffled units."""
    if unit is None:
        unit = np.arange(n_points)
    uniq, inverse = np.unique(unit, return_inverse=True)
    rng = np.random.default_rng(seed)
    order = rng.permutation(uniq.size)
    unit_fold = np.empty(uniq.size, dtype=np.int64)
    unit_fold[order] = np.arange(uniq.size) % n_folds
    return unit_fold[inverse], uniq.size


def _pick(candidates, errors, atol):
    best = np.min(errors)
    if not np.isfinite(best):
        raise ValueError("bandwidth cross-validation failed for every candidate")
    within = errors <= best * (1 + 1e-8) + atol
    return float(candidates[np.argmax(within)])


def _fallback(grid, what):
    h = grid.length / 4.0
    warnings.warn(f"too few points to cross-validate the {what} bandwidth; using domain/4", stacklevel=3)
    return BandwidthChoice(h, np.array([h]), np.array([np.nan]), fallback=True)


def select_bandwidth_1d(points: Scatter1D, grid: TimeGrid, seed=0, n_folds: int = N_FOLDS) -> BandwidthChoice:
    """Bandwidth minimising k-fold CV weighted squared prediction error.

    Candidates are 10 geometrically spaced values between the grid spacing
    and half the domain length; ties go to the smaller bandwidth. Held-out
    points are predicted by linear interpolation of the grid fit.
    """
    n = len(points)
    folds, n_units = _fold_labels(n, points.unit, seed, n_folds)
    if n < MIN_CV_POINTS or n_units < 2:
        return _fallback(grid, "1d")
    cands = _candidates(grid)
    errors = np.zeros(cands.size)
    for i, h in enumerate(cands):
        total = 0.0
        for f in range(min(n_folds, n_units)):
            test = folds == f
            train = ~test
            try:
                fitted = _fit_line(points.x[train], points.y[train], points.w[train], h, grid.points)
            except ValueError:
                total = np.inf
                break
            pred = np.interp(points.x[test], grid.points, fitted)
            total += float(np.sum(points.w[test] * (points.y[test] - pred) ** 2))
        errors[i] = total
    atol = 1e-12 * float(np.sum(points.w * points.y**2))
    return BandwidthChoice(_pick(cands, errors, atol), cands, errors)


def select_bandwidth_2d(points: Scatter2D, grid: TimeGrid, seed=0, n_folds: int = N_FOLDS) -> BandwidthChoice:
    """Two-dimensional analogue of :func:`select_bandwidth_1d`.

    Held-out points are predicted by bilinear interpolation of the grid
    surface.
    """
    n = len(points)
    folds, n_units = _fold_labels(n, points.unit, seed, n_folds)
    if n < MIN_CV_POINTS or n_units < 2:
        return _fallback(grid, "2d")
    cands = _candidates(grid)
    errors = np.zeros(cands.size)
    for i, h in enumerate(cands):
        total = 0.0
        for f in range(min(n_folds, n_units)):
            test = folds == f
            train = ~test
            tr = points.take(train)
            try:
                _check_2d_design(tr)
                surface = _fit_surface(tr.s, tr.t, tr.c, tr.w, h, grid.points)
            except ValueError:
                total = np.inf
                break
            surface = 0.5 * (surface + surface.T)
            pred = bilinear(surface, grid.points, points.s[test], points.t[test])
            total += float(np.sum(points.w[test] * (points.c[test] - pred) ** 2))
        errors[i] = total
    atol = 1e-12 * float(np.sum(points.w * points.c**2))
    return BandwidthChoice(_pick(cands, errors, atol), cands, errors)


def resolve_bandwidth_1d(points: Scatter1D, bandwidth: Bandwidth, grid: TimeGrid, seed=0) -> float:
    if bandwidth.mode == "fixed":
        return bandwidth.value
    return select_bandwidth_1d(points, grid, seed=seed).h


def resolve_bandwidth_2d(points: Scatter2D, bandwidth: Bandwidth, grid: TimeGrid, seed=0) -> float:
    if bandwidth.mode == "fixed":
        return bandwidth.value
    return select_bandwidth_2d(points, grid, seed=seed).h


def local_linear_1d(points: Scatter1D, bandwidth: Bandwidth, grid: TimeGrid, seed=0) -> np.ndarray:
    """Local linear smooth of ``points`` evaluated at the grid points."""
    if len(points) == 0 or np.unique(points.x[points.w > 0]).size < 2:
        raise ValueError("degenerate design")
    h = resolve_bandwidth_1d(points, bandwidth, grid, seed)
    return _fit_line(points.x, points.y, points.w, h, grid.points)


def local_linear_2d(points: Scatter2D, bandwidth: Bandwidth, grid: TimeGrid, seed=0) -> np.ndarray:
    """Local plane smooth of ``points`` on the grid, symmetrised as (S + S')/2."""
    _check_2d_design(points)
    h = resolve_bandwidth_2d(points, bandwidth, grid, seed)
    surface = _fit_surface(points.s, points.t, points.c, points.w, h, grid.points)
    return 0.5 * (surface + surface.T)


def bilinear(surface, gp, qs, qt) -> np.ndarray:
    """Bilinear interpolation of a grid surface at ``(qs, qt)``, clamped to the grid."""
    qs = np.clip(np.asarray(qs, dtype=np.float64), gp[0], gp[-1])
    qt = np.clip(np.asarray(qt, dtype=np.float64), gp[0], gp[-1])
    i = np.clip(np.searchsorted(gp, qs, side="right") - 1, 0, gp.size - 2)
    j = np.clip(np.searchsorted(gp, qt, side="right") - 1, 0, gp.size - 2)
    fs = (qs - gp[i]) / (gp[i + 1] - gp[i])
    ft = (qt - gp[j]) / (gp[j + 1] - gp[j])
    return (
        surface[i, j] * (1 - fs) * (1 - ft)
        + surface[i + 1, j] * fs * (1 - ft)
        + surface[i, j + 1] * (1 - fs) * ft
        + surface[i + 1, j + 1] * fs * ft
    )
