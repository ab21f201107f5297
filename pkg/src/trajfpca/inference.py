"""Permutation tests for differences between group mean and correlation functions.

Both tests take fitted trajectories on a common grid. Integrals are
quadrature sums over the grid, and p-values use the add-one rule
``(1 + #{permuted >= observed}) / (1 + B)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .curves import CurveMatrix, TimeGrid
from .pace import FpcaModel

TIE_RTOL = 1e-12
SYMMETRY_TOL = 1e-8
CHUNK_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class PairwiseResult:
    group_u: str
    group_v: str
    statistic: float
    p_value: float

    def to_dict(self) -> dict:
        return {"group_u": self.group_u, "group_v": self.group_v, "statistic": self.statistic, "p_value": self.p_value}


@dataclass(frozen=True)
class PermutationTestResult:
    """Outcome of a global test plus its pairwise follow-ups."""

    test: str
    statistic: float
    p_global: float
    pairwise: tuple
    replicates: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "test": self.test,
            "statistic": self.statistic,
            "p_global": self.p_global,
            "pairwise": [p.to_dict() for p in self.pairwise],
            "B": self.replicates,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class StandardizedCurves(CurveMatrix):
    """Trajectories centred by their group mean and scaled by the full-cohort SD."""


def _at_least(values, observed):
    """Elementwise ``values >= observed`` with a relative tolerance for round-off ties."""
    return values >= observed - TIE_RTOL * abs(observed)


def permutation_pvalue(observed: float, permuted) -> float:
    permuted = np.asarray(permuted, dtype=np.float64)
    return (1.0 + np.count_nonzero(_at_least(permuted, observed))) / (1.0 + permuted.size)


def _group_codes(curves: CurveMatrix):
    if any(g is None for g in curves.groups):
        raise ValueError("need at least 2 groups: some curves have no group label")
    labels = curves.group_labels()
    if len(labels) < 2:
        raise ValueError("need at least 2 groups")
    lookup = {g: i for i, g in enumerate(labels)}
    return labels, np.array([lookup[g] for g in curves.groups], dtype=np.int64)


def _fp_parts(values, weights, codes, n_groups):
    """Between- and within-group sums of squared L2 norms for each row of ``codes``.

    ``codes`` has shape (B, N); returns two arrays of shape (B,).
    """
    n, m = values.shape
    onehot_dtype = values.dtype
    grand = values.mean(axis=0)
    counts = np.bincount(codes[0], minlength=n_groups).astype(np.float64)
    between = np.empty(codes.shape[0])
    within = np.empty(codes.shape[0])
    step = max(1, CHUNK_ELEMENTS // (n * m))
    for start in range(0, codes.shape[0], step):
        block = codes[start:start + step]
        onehot = (block[:, :, None] == np.arange(n_groups)).astype(onehot_dtype)
        means = np.einsum("bng,nm->bgm", onehot, values) / counts[None, :, None]
        dev = means - grand
        between[start:start + step] = np.einsum("g,bgm,m->b", counts, dev * dev, weights)
        resid = values[None, :, :] - np.take_along_axis(means, block[:, :, None], axis=1)
        within[start:start + step] = np.einsum("bnm,m->b", resid * resid, weights)
    return between, within


def _fp_from_parts(between, within, n, g):
    with np.errstate(divide="ignore", invalid="ignore"):
        stat = (between / (g - 1)) / (within / (n - g))
    return np.where(within > 0, stat, np.where(between > 0, np.inf, 0.0))


def fp_statistic(curves: CurveMatrix) -> float:
    """Functional one-way ANOVA F ratio of the group means."""
    labels, codes = _group_codes(curves)
    n, g = curves.n_curves, len(labels)
    if n <= g:
        raise ValueError("need more curves than groups")
    between, within = _fp_parts(curves.values, curves.grid.weights, codes[None, :], g)
    if not within[0] > 0:
        raise ValueError("no within-group variation")
    return float(_fp_from_parts(between, within, n, g)[0])


def _fp_test(values, weights, codes, n_groups, replicates, seed, stream):
    n = codes.size
    obs_between, obs_within = _fp_parts(values, weights, codes[None, :], n_groups)
    if not obs_within[0] > 0:
        raise ValueError("no within-group variation")
    observed = float(_fp_from_parts(obs_between, obs_within, n, n_groups)[0])
    perm_codes = np.stack(
        [codes[np.random.default_rng([seed, stream, b]).permutation(n)] for b in range(replicates)]
    )
    between, within = _fp_parts(values, weights, perm_codes, n_groups)
    permuted = _fp_from_parts(between, within, n, n_groups)
    return observed, permutation_pvalue(observed, permuted)


def mean_permutation_test(curves: CurveMatrix, replicates: int = 1000, seed: int = 0) -> PermutationTestResult:
    """Permutation test of equal group mean functions using the FP statistic.

    Labels are permuted over all curves for the global test; each pair of
    groups is then re-tested on its own curves with the same number of
    replicates.
    """
    if replicates < 1:
        raise ValueError("replicates must be at least 1")
    labels, codes = _group_codes(curves)
    if curves.n_curves <= len(labels):
        raise ValueError("need more curves than groups")
    values, weights = curves.values, curves.grid.weights
    observed, p_global = _fp_test(values, weights, codes, len(labels), replicates, seed, 0)
    pairwise = []
    for stream, (u, v) in enumerate(combinations(range(len(labels)), 2), start=1):
        rows = np.flatnonzero((codes == u) | (codes == v))
        pair_codes = (codes[rows] == v).astype(np.int64)
        if rows.size <= 2:
            raise ValueError(f"groups {labels[u]!r} and {labels[v]!r} have too few curves")
        stat, p = _fp_test(values[rows], weights, pair_codes, 2, replicates, seed, stream)
        pairwise.append(PairwiseResult(labels[u], labels[v], stat, p))
    return PermutationTestResult("mean", observed, p_global, tuple(pairwise), replicates, seed)


def standardize_trajectories(curves: CurveMatrix, full_model: FpcaModel) -> StandardizedCurves:
    """Centre each curve by its group's pointwise mean and divide by the
    full-cohort standard deviation at each grid point.

    The standard deviations come from the positive semidefinite part of the
    model's smoothed covariance, whose diagonal cannot go negative.
    """
    if curves.grid.size != full_model.grid.size or not np.allclose(curves.grid.points, full_model.grid.points):
        raise ValueError("curves and model use different grids")
    sd2 = np.diag(full_model.psd_cov())
    if np.any(sd2 <= 0):
        raise ValueError("nonpositive variance at grid point")
    _, codes = _group_codes(curves)
    centred = np.array(curves.values, dtype=np.float64)
    for g in np.unique(codes):
        rows = codes == g
        centred[rows] -= centred[rows].mean(axis=0)
    return StandardizedCurves(curves.grid, centred / np.sqrt(sd2), curves.subject_ids, curves.groups)


def _psd_sqrt(mats):
    """Symmetric square roots of a stack of PSD matrices, negative eigenvalues clipped."""
    vals, vecs = np.linalg.eigh(mats)
    root = np.sqrt(np.clip(vals, 0.0, None))
    return (vecs * root[..., None, :]) @ np.swapaxes(vecs, -1, -2)


def _check_symmetric(mat, name):
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{name} must be square")
    if np.max(np.abs(mat - mat.T), initial=0.0) > SYMMETRY_TOL * max(1.0, np.max(np.abs(mat))):
        raise ValueError(f"{name} is not symmetric")
    return 0.5 * (mat + mat.T)


def _hs_distance(r1, r2, weights):
    diff = r1 - r2
    return np.sqrt(np.einsum("...ab,a,b->...", diff * diff, weights, weights))


def sqrt_distance(s1, s2, grid: TimeGrid) -> float:
    """Hilbert-Schmidt distance between the square roots of two covariance surfaces."""
    s1 = _check_symmetric(s1, "first covariance")
    s2 = _check_symmetric(s2, "second covariance")
    if s1.shape != (grid.size, grid.size) or s2.shape != s1.shape:
        raise ValueError("covariance shape does not match the grid")
    roots = _psd_sqrt(np.stack([s1, s2]))
    return float(_hs_distance(roots[0], roots[1], grid.weights))


def _batched_cov(x):
    """Sample covariances (ddof=1) of a stack of row sets, shape (B, n, M) -> (B, M, M)."""
    centred = x - x.mean(axis=1, keepdims=True)
    return np.swapaxes(centred, -1, -2) @ centred / (x.shape[1] - 1)


def _pair_distances(z_pair, n_u, orders, weights):
    """Square-root distance between the first ``n_u`` rows and the rest, for each row order."""
    n, m = z_pair.shape
    out = np.empty(orders.shape[0])
    step = max(1, CHUNK_ELEMENTS // (n * m + 2 * m * m))
    for start in range(0, orders.shape[0], step):
        x = z_pair[orders[start:start + step]]
        roots_u = _psd_sqrt(_batched_cov(x[:, :n_u]))
        roots_v = _psd_sqrt(_batched_cov(x[:, n_u:]))
        out[start:start + step] = _hs_distance(roots_u, roots_v, weights)
    return out


def _exceed_counts(values, reference):
    """For each entry of ``values``, how many entries of ``reference`` are at least as large."""
    ref = np.sort(reference)
    thresholds = values - TIE_RTOL * np.abs(values)
    return ref.size - np.searchsorted(ref, thresholds, side="left")


def covariance_permutation_test(
    standardized: CurveMatrix, replicates: int = 1000, seed: int = 0
) -> PermutationTestResult:
    """Multi-group permutation test of equal covariance (correlation) functions.

    Every pair of groups gets a partial test with the square-root distance
    as statistic, permuting labels only within the pair's pooled curves.
    Replicate ``b`` draws one random key per curve and each pair assigns its
    first labels by sorting its own curves on those keys, so the partial
    tests share their relabelings. The global statistic is the largest
    ``1 - p`` over pairs, with each replicate's partial p-values computed
    against the same permutation distributions.
    """
    if replicates < 1:
        raise ValueError("replicates must be at least 1")
    labels, codes = _group_codes(standardized)
    counts = np.bincount(codes, minlength=len(labels))
    if np.any(counts < 2):
        raise ValueError("each group needs at least 2 curves")
    z = standardized.values
    weights = standardized.grid.weights
    keys = np.stack([np.random.default_rng([seed, b]).random(z.shape[0]) for b in range(replicates)])

    obs_counts, rep_counts, pairwise = [], [], []
    for u, v in combinations(range(len(labels)), 2):
        rows = np.concatenate([np.flatnonzero(codes == u), np.flatnonzero(codes == v)])
        n_u = int(counts[u])
        observed = float(_pair_distances(z[rows], n_u, np.arange(rows.size)[None, :], weights)[0])
        orders = np.argsort(keys[:, rows], axis=1, kind="stable")
        permuted = _pair_distances(z[rows], n_u, orders, weights)
        c_obs = int(_exceed_counts(np.array([observed]), permuted)[0])
        obs_counts.append(c_obs)
        rep_counts.append(_exceed_counts(permuted, permuted))
        pairwise.append(PairwiseResult(labels[u], labels[v], observed, (1.0 + c_obs) / (1.0 + replicates)))

    # max over pairs of (1 - p) is the min over pairs of the exceedance count
    t_obs_count = min(obs_counts)
    t_rep_count = np.min(np.stack(rep_counts), axis=0)
    p_global = (1.0 + np.count_nonzero(t_rep_count <= t_obs_count)) / (1.0 + replicates)
    statistic = 1.0 - (1.0 + t_obs_count) / (1.0 + replicates)
    return PermutationTestResult("covariance", statistic, p_global, tuple(pairwise), replicates, seed)


def group_covariances(standardized: CurveMatrix) -> dict:
    """Sample covariance surface of each group's rows; for standardized
    curves these are the group correlation functions."""
    labels, codes = _group_codes(standardized)
    return {g: np.cov(standardized.values[codes == i], rowvar=False) for i, g in enumerate(labels)}
