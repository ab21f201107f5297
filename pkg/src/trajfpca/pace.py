"""Functional principal components for sparse trajectories (PACE).

The mean is a pooled local linear smooth, the covariance surface a local
plane smooth of off-diagonal raw covariances, and subject scores are best
linear predictors given each subject's own observations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .curves import CurveMatrix, LongitudinalSample, TimeGrid, build_grid, curve_matrix, DEFAULT_GRID_POINTS
from .smooth import (
    Bandwidth,
    Scatter1D,
    Scatter2D,
    local_linear_1d,
    local_linear_2d,
    resolve_bandwidth_1d,
    resolve_bandwidth_2d,
)

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-8


@dataclass(frozen=True)
class FitConfig:
    """Settings for :func:`fit`.

    Parameters
    ----------
    grid_points : int, default=51
        Number of equally spaced evaluation points.
    fve_threshold : float, default=0.95
        Smallest cumulative fraction of variance the retained components must explain.
    max_components : int, default=20
        Hard cap on the number of components.
    bandwidth_mean, bandwidth_cov : Bandwidth
        Smoothing bandwidths; ``auto`` runs 5-fold cross-validation.
    ridge_factor : float, default=1e-8
        Added to the subject covariance diagonal, relative to the top eigenvalue.
    seed : int, default=0
        Seed for the bandwidth cross-validation folds.
    """

    grid_points: int = DEFAULT_GRID_POINTS
    fve_threshold: float = 0.95
    max_components: int = 20
    bandwidth_mean: Bandwidth = field(default_factory=Bandwidth.auto)
    bandwidth_cov: Bandwidth = field(default_factory=Bandwidth.auto)
    ridge_factor: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.fve_threshold <= 1:
            raise ValueError("fve_threshold must lie in (0, 1]")
        if self.grid_points < 3:
            raise ValueError("grid_points must be at least 3")
        if self.max_components < 1:
            raise ValueError("max_components must be positive")
        if not self.ridge_factor > 0:
            raise ValueError("ridge_factor must be positive")
        object.__setattr__(self, "bandwidth_mean", Bandwidth.parse(self.bandwidth_mean))
        object.__setattr__(self, "bandwidth_cov", Bandwidth.parse(self.bandwidth_cov))

    def to_dict(self) -> dict:
        return {
            "grid_points": self.grid_points,
            "fve_threshold": self.fve_threshold,
            "max_components": self.max_components,
            "bandwidth_mean": str(self.bandwidth_mean),
            "bandwidth_cov": str(self.bandwidth_cov),
            "ridge_factor": self.ridge_factor,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class FpcaModel:
    """A fitted model; arrays are on ``grid``.

    Attributes
    ----------
    mean : np.ndarray of shape (M,)
    cov : np.ndarray of shape (M, M)
        Smoothed covariance surface, exactly symmetric.
    sigma2 : float
        Measurement error variance.
    eigenvalues : np.ndarray of shape (K,)
    eigenfunctions : np.ndarray of shape (K, M)
        Orthonormal under the grid quadrature.
    fve : np.ndarray of shape (K,)
        Cumulative fraction of variance explained.
    scores : np.ndarray of shape (N, K)
    """

    grid: TimeGrid
    mean: np.ndarray
    cov: np.ndarray
    sigma2: float
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    fve: np.ndarray
    scores: np.ndarray
    subject_ids: tuple
    groups: tuple
    ridge: float
    bandwidth_mean: float = float("nan")
    bandwidth_cov: float = float("nan")
    fve_threshold: float = 0.95

    @property
    def K(self) -> int:
        return int(self.eigenvalues.size)

    def fitted_curves(self) -> CurveMatrix:
        """Fitted trajectories of the training subjects."""
        rows = self.mean[None, :] + self.scores @ self.eigenfunctions
        return CurveMatrix(self.grid, rows, self.subject_ids, self.groups)

    def psd_cov(self) -> np.ndarray:
        """The covariance surface with its negative eigen-directions removed."""
        vals, phi = eigendecompose(self.cov, self.grid)
        return (phi.T * vals) @ phi

    def to_dict(self) -> dict:
        return {
            "grid_points": self.grid.points.tolist(),
            "grid_weights": self.grid.weights.tolist(),
            "mean": self.mean.tolist(),
            "covariance": self.cov.tolist(),
            "sigma2": float(self.sigma2),
            "eigenvalues": self.eigenvalues.tolist(),
            "eigenfunctions": self.eigenfunctions.tolist(),
            "fve": self.fve.tolist(),
            "K": self.K,
            "fve_threshold": float(self.fve_threshold),
            "ridge": float(self.ridge),
            "bandwidth_mean": float(self.bandwidth_mean),
            "bandwidth_cov": float(self.bandwidth_cov),
            "subject_ids": list(self.subject_ids),
            "groups": list(self.groups),
            "scores": self.scores.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FpcaModel":
        grid = TimeGrid(np.array(data["grid_points"]), np.array(data["grid_weights"]))
        k = int(data["K"])
        eigenfunctions = np.array(data["eigenfunctions"], dtype=np.float64).reshape(k, grid.size)
        scores = np.array(data["scores"], dtype=np.float64).reshape(len(data["subject_ids"]), k)
        return cls(
            grid=grid,
            mean=np.array(data["mean"], dtype=np.float64),
            cov=np.array(data["covariance"], dtype=np.float64).reshape(grid.size, grid.size),
            sigma2=float(data["sigma2"]),
            eigenvalues=np.array(data["eigenvalues"], dtype=np.float64),
            eigenfunctions=eigenfunctions,
            fve=np.array(data["fve"], dtype=np.float64),
            scores=scores,
            subject_ids=tuple(data["subject_ids"]),
            groups=tuple(data["groups"]),
            ridge=float(data["ridge"]),
            bandwidth_mean=_float_or_nan(data.get("bandwidth_mean")),
            bandwidth_cov=_float_or_nan(data.get("bandwidth_cov")),
            fve_threshold=float(data.get("fve_threshold", 0.95)),
        )


def _float_or_nan(x) -> float:
    return float("nan") if x is None else float(x)


def _pooled(samples: Sequence[LongitudinalSample]) -> Scatter1D:
    x = np.concatenate([s.times for s in samples])
    y = np.concatenate([s.values for s in samples])
    unit = np.repeat(np.arange(len(samples)), [s.n_obs for s in samples])
    return Scatter1D(x, y, None, unit)


def _mean_with_bandwidth(samples, config: FitConfig, grid: TimeGrid):
    points = _pooled(samples)
    h = resolve_bandwidth_1d(points, config.bandwidth_mean, grid, seed=config.seed)
    return local_linear_1d(points, Bandwidth.fixed(h), grid), h


def estimate_mean(samples: Sequence[LongitudinalSample], config: FitConfig = FitConfig(), grid: Optional[TimeGrid] = None) -> np.ndarray:
    """Pooled local linear estimate of the mean curve on the grid."""
    if len(samples) < 2:
        raise ValueError("need at least 2 subjects")
    grid = grid if grid is not None else build_grid(samples, config.grid_points)
    return _mean_with_bandwidth(samples, config, grid)[0]


def raw_covariances(samples: Sequence[LongitudinalSample], mean, grid: TimeGrid) -> Scatter2D:
    """Off-diagonal residual products, both orderings of every within-subject pair.

    The mean is linearly interpolated at the raw times. Diagonal products are
    left out because they are inflated by the measurement error variance.
    Points with ``s < t`` come first; the second half repeats them mirrored,
    in the same order.
    """
    s_all, t_all, c_all, unit_all = [], [], [], []
    for i, sample in enumerate(samples):
        m = sample.n_obs
        if m < 2:
            continue
        resid = sample.values - grid.interpolate(mean, sample.times)
        j, l = np.triu_indices(m, k=1)
        s_all.append(sample.times[j])
        t_all.append(sample.times[l])
        c_all.append(resid[j] * resid[l])
        unit_all.append(np.full(j.size, i))
    if not s_all:
        return Scatter2D(np.empty(0), np.empty(0), np.empty(0), None, np.empty(0, dtype=np.int64))
    s, t, c, unit = (np.concatenate(a) for a in (s_all, t_all, c_all, unit_all))
    return Scatter2D(np.r_[s, t], np.r_[t, s], np.r_[c, c], None, np.r_[unit, unit])


def _diagonal_products(samples, mean, grid) -> Scatter1D:
    x = np.concatenate([s.times for s in samples])
    resid = np.concatenate([s.values - grid.interpolate(mean, s.times) for s in samples])
    unit = np.repeat(np.arange(len(samples)), [s.n_obs for s in samples])
    return Scatter1D(x, resid * resid, None, unit)


def estimate_sigma2(
    samples: Sequence[LongitudinalSample],
    mean,
    cov_surface,
    grid: TimeGrid,
    bandwidth: Bandwidth = Bandwidth.auto(),
    seed=0,
) -> float:
    """Measurement error variance from the gap between the smoothed squared
    residuals and the covariance diagonal, averaged over the middle half of
    the domain and floored at zero."""
    points = _diagonal_products(samples, mean, grid)
    variance = local_linear_1d(points, bandwidth, grid, seed=seed)
    gap = variance - np.diag(cov_surface)
    lo, hi = grid.t_min + 0.25 * grid.length, grid.t_min + 0.75 * grid.length
    central = (grid.points >= lo - 1e-12) & (grid.points <= hi + 1e-12)
    return max(0.0, float(np.mean(gap[central])))


def eigendecompose(cov, grid: TimeGrid):
    """Positive eigenpairs of the covariance operator, largest first.

    Returns
    -------
    eigenvalues : np.ndarray of shape (J,)
    eigenfunctions : np.ndarray of shape (J, M)
        Unit norm under the grid quadrature, signed so that the integral
        is nonnegative (or, if it vanishes, the first nonzero value is positive).
    """
    cov = np.asarray(cov, dtype=np.float64)
    if cov.shape != (grid.size, grid.size):
        raise ValueError("covariance shape does not match the grid")
    if np.max(np.abs(cov - cov.T), initial=0.0) > SYMMETRY_TOL * max(1.0, np.max(np.abs(cov))):
        raise ValueError("covariance surface is not symmetric")
    cov = 0.5 * (cov + cov.T)
    root_w = np.sqrt(grid.weights)
    vals, vecs = np.linalg.eigh(root_w[:, None] * cov * root_w[None, :])
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    keep = vals > 0
    vals = vals[keep]
    phi = (vecs[:, keep] / root_w[:, None]).T
    integrals = phi @ grid.weights
    tol = 1e-10 * np.sqrt(grid.length)
    for k in range(phi.shape[0]):
        if abs(integrals[k]) > tol:
            flip = integrals[k] < 0
        else:
            nonzero = np.flatnonzero(np.abs(phi[k]) > 1e-12)
            flip = nonzero.size > 0 and phi[k, nonzero[0]] < 0
        if flip:
            phi[k] = -phi[k]
    return vals, phi


def select_k(eigenvalues, threshold: float = 0.95, max_components: int = 20) -> int:
    """Smallest K whose leading eigenvalues explain ``threshold`` of the total."""
    lam = np.asarray(eigenvalues, dtype=np.float64)
    lam = lam[lam > 0]
    if lam.size == 0:
        raise ValueError("degenerate covariance")
    fve = np.cumsum(lam) / np.sum(lam)
    k = int(np.argmax(fve >= threshold - 1e-12)) + 1
    return min(k, max_components)


def _subject_scores(times, values, grid, mean, eigenvalues, eigenfunctions, noise) -> np.ndarray:
    phi = grid.interpolate(eigenfunctions, times)  # (K, m)
    resid = values - grid.interpolate(mean, times)
    sigma_y = (phi.T * eigenvalues) @ phi + noise * np.eye(times.size)
    try:
        solved = np.linalg.solve(sigma_y, resid)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular subject covariance") from exc
    if not np.all(np.isfinite(solved)):
        raise ValueError("singular subject covariance")
    return eigenvalues * (phi @ solved)


def estimate_scores(sample: LongitudinalSample, model: FpcaModel) -> np.ndarray:
    """Conditional-expectation scores of one subject under ``model``."""
    return _subject_scores(
        sample.times, sample.values, model.grid, model.mean,
        model.eigenvalues, model.eigenfunctions, model.sigma2 + model.ridge,
    )


def fitted_trajectory(model: FpcaModel, scores) -> np.ndarray:
    """Mean plus the score-weighted eigenfunctions, on the grid."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.size != model.K:
        raise ValueError(f"expected {model.K} scores, got {scores.size}")
    return model.mean + scores @ model.eigenfunctions


def predict_trajectory(model: FpcaModel, sample: LongitudinalSample) -> np.ndarray:
    """Trajectory of a subject not used in fitting."""
    return fitted_trajectory(model, estimate_scores(sample, model))


def _check_cohort(samples):
    if len(samples) < 2:
        raise ValueError("need at least 2 subjects")
    if not any(s.n_obs >= 2 for s in samples):
        raise ValueError("insufficient pairs: no subject has 2 or more observations")
    ids = [s.subject_id for s in samples]
    if len(set(ids)) != len(ids):
        raise ValueError("subject ids must be unique")


def fit(samples: Sequence[LongitudinalSample], config: FitConfig = FitConfig(), grid: Optional[TimeGrid] = None) -> FpcaModel:
    """Fit the full model.

    Parameters
    ----------
    samples : sequence of LongitudinalSample
    config : FitConfig
    grid : TimeGrid, optional
        Evaluation grid; defaults to ``config.grid_points`` equally spaced
        points over the observed time range. Supplying a wider grid lets
        later predictions reach times outside the training range.

    Notes
    -----
    Estimation runs on the subjects sorted by id, so the model does not
    depend on input order; score rows follow the input order.
    """
    samples = list(samples)
    _check_cohort(samples)
    grid = grid if grid is not None else build_grid(samples, config.grid_points)
    for s in samples:
        if not np.all(grid.contains(s.times)):
            raise ValueError(f"subject {s.subject_id!r}: time out of domain")
    canon = sorted(samples, key=lambda s: s.subject_id)

    mean, h_mean = _mean_with_bandwidth(canon, config, grid)
    raw = raw_covariances(canon, mean, grid)
    if len(raw) == 0:
        raise ValueError("insufficient pairs")
    h_cov = resolve_bandwidth_2d(raw, config.bandwidth_cov, grid, seed=config.seed)
    cov = local_linear_2d(raw, Bandwidth.fixed(h_cov), grid)
    sigma2 = estimate_sigma2(canon, mean, cov, grid, config.bandwidth_cov, seed=config.seed)

    all_vals, all_phi = eigendecompose(cov, grid)
    k = select_k(all_vals, config.fve_threshold, config.max_components)
    fve = np.cumsum(all_vals) / np.sum(all_vals)
    lam, phi = all_vals[:k], all_phi[:k]
    ridge = config.ridge_factor * float(lam[0])
    logger.debug("fit: h_mean=%.4g h_cov=%.4g sigma2=%.4g K=%d", h_mean, h_cov, sigma2, k)

    scores = np.array(
        [_subject_scores(s.times, s.values, grid, mean, lam, phi, sigma2 + ridge) for s in samples]
    ).reshape(len(samples), k)
    return FpcaModel(
        grid=grid,
        mean=mean,
        cov=cov,
        sigma2=sigma2,
        eigenvalues=lam,
        eigenfunctions=phi,
        fve=fve[:k],
        scores=scores,
        subject_ids=tuple(s.subject_id for s in samples),
        groups=tuple(s.group for s in samples),
        ridge=ridge,
        bandwidth_mean=h_mean,
        bandwidth_cov=h_cov,
        fve_threshold=config.fve_threshold,
    )


def predict_curves(model: FpcaModel, samples: Sequence[LongitudinalSample]) -> CurveMatrix:
    """Predicted trajectories for several subjects as a :class:`CurveMatrix`."""
    rows = np.array([predict_trajectory(model, s) for s in samples]).reshape(len(samples), model.grid.size)
    return curve_matrix(model.grid, rows, samples)
