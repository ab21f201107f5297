"""Full-cohort versus group-specific model comparison.

Goodness of fit is the root of the fold-averaged mean ACSE from stratified
k-fold cross-validation, repeated over fresh fold splits. Future accuracy
holds out every subject's latest observation and scores its prediction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .curves import LongitudinalSample, TimeGrid, build_grid, nearest_grid_indices
from .pace import FitConfig, fit, predict_trajectory

FULL = "full"
ALL = "all"


@dataclass(frozen=True)
class FoldAssignment:
    """Fold index per subject, aligned with the input order."""

    folds: np.ndarray
    subject_ids: tuple
    k: int
    seed: object

    def members(self, d: int) -> np.ndarray:
        return np.flatnonzero(self.folds == d)


def _group_key(g):
    return (g is not None, "" if g is None else g)


def stratified_folds(samples: Sequence[LongitudinalSample], k: int = 5, seed=0) -> FoldAssignment:
    """Deal each group's shuffled subjects round-robin into ``k`` folds.

    The deal continues from group to group, so overall fold sizes and
    per-group fold counts both stay within one of their ideal values.
    ``seed`` may be an int or a sequence of ints.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    groups = [s.group for s in samples]
    rng = np.random.default_rng(seed)
    folds = np.empty(len(samples), dtype=np.int64)
    offset = 0
    for g in sorted(set(groups), key=_group_key):
        members = np.array([i for i, x in enumerate(groups) if x == g])
        if members.size < k:
            raise ValueError(f"group too small for k folds: {g!r} has {members.size} subjects")
        members = members[rng.permutation(members.size)]
        folds[members] = (offset + np.arange(members.size)) % k
        offset = (offset + members.size) % k
    seed_value = tuple(seed) if isinstance(seed, (list, tuple)) else seed
    return FoldAssignment(folds, tuple(s.subject_id for s in samples), k, seed_value)


def acse(sample: LongitudinalSample, predicted_curve, grid: TimeGrid) -> float:
    """Average squared error of a subject's observations against the
    prediction at the nearest grid points."""
    predicted_curve = np.asarray(predicted_curve, dtype=np.float64)
    if predicted_curve.shape != (grid.size,):
        raise ValueError("predicted curve does not match the grid")
    idx = nearest_grid_indices(sample.times, grid)
    return float(np.mean((sample.values - predicted_curve[idx]) ** 2))


def root_macse_from_folds(macse) -> float:
    """Root of the mean over folds of the per-fold MACSE."""
    macse = np.asarray(macse, dtype=np.float64)
    return math.sqrt(float(np.mean(macse)))


def _common_grid(samples, config: FitConfig, grid: Optional[TimeGrid]) -> TimeGrid:
    return grid if grid is not None else build_grid(samples, config.grid_points)


def root_macse(
    samples: Sequence[LongitudinalSample],
    folds: FoldAssignment,
    config: FitConfig = FitConfig(),
    model_scope: str = FULL,
    eval_group: Optional[str] = None,
    grid: Optional[TimeGrid] = None,
) -> float:
    """Cross-validated root MACSE of one model scope on one set of subjects.

    Parameters
    ----------
    model_scope : str
        ``"full"`` trains on every training subject; a group label trains on
        that group's training subjects only.
    eval_group : str, optional
        Restrict the test subjects to this group. Group scopes always
        evaluate on their own group.
    grid : TimeGrid, optional
        Shared evaluation grid; defaults to one spanning the whole cohort so
        that every test subject lies inside the model domain.
    """
    samples = list(samples)
    grid = _common_grid(samples, config, grid)
    if model_scope != FULL:
        if eval_group not in (None, model_scope):
            raise ValueError("a group-specific model can only be evaluated on its own group")
        eval_group = model_scope
    macse = []
    for d in range(folds.k):
        train = [s for s, f in zip(samples, folds.folds) if f != d and (model_scope == FULL or s.group == model_scope)]
        test = [s for s, f in zip(samples, folds.folds) if f == d and (eval_group is None or s.group == eval_group)]
        if not test:
            raise ValueError("empty test fold")
        model = fit(train, config, grid)
        macse.append(np.mean([acse(s, predict_trajectory(model, s), grid) for s in test]))
    return root_macse_from_folds(macse)


@dataclass(frozen=True)
class GofResult:
    """Per-repeat root MACSE for every (model scope, evaluation group) cell.

    ``values[r, c]`` belongs to repeat ``r`` and cell ``cells[c]``.
    """

    cells: tuple
    values: np.ndarray
    repeats: int
    k: int
    seed: int

    def column(self, model_scope: str, eval_group: str) -> np.ndarray:
        return self.values[:, self.cells.index((model_scope, eval_group))]

    def summary(self) -> list:
        out = []
        for c, (scope, group) in enumerate(self.cells):
            col = self.values[:, c]
            out.append({
                "model_scope": scope,
                "eval_group": group,
                "mean": float(np.mean(col)),
                "sd": float(np.std(col, ddof=1)) if col.size > 1 else 0.0,
                "min": float(np.min(col)),
                "max": float(np.max(col)),
            })
        return out

    def to_dict(self) -> dict:
        return {
            "repeats": self.repeats,
            "k": self.k,
            "seed": self.seed,
            "cells": [{"model_scope": s, "eval_group": g} for s, g in self.cells],
            "root_macse": self.values.tolist(),
            "summary": self.summary(),
        }

    def tidy_rows(self) -> list:
        return [
            {"repeat": r, "model_scope": s, "eval_group": g, "root_macse": float(self.values[r, c])}
            for r in range(self.repeats)
            for c, (s, g) in enumerate(self.cells)
        ]


def _labels(samples):
    return sorted({s.group for s in samples if s.group is not None})


def _cells(labels):
    return ((FULL, ALL),) + tuple((FULL, g) for g in labels) + tuple((g, g) for g in labels)


def _cv_cells(samples, folds: FoldAssignment, config, grid, labels):
    """Root MACSE for every cell from one fold split, reusing each fold's fits."""
    cells = _cells(labels)
    macse = {cell: [] for cell in cells}
    for d in range(folds.k):
        in_test = folds.folds == d
        train = [s for s, t in zip(samples, in_test) if not t]
        test = [s for s, t in zip(samples, in_test) if t]
        full_model = fit(train, config, grid)
        full_err = {s.subject_id: acse(s, predict_trajectory(full_model, s), grid) for s in test}
        if not full_err:
            raise ValueError("empty test fold")
        macse[(FULL, ALL)].append(np.mean(list(full_err.values())))
        for g in labels:
            test_g = [s for s in test if s.group == g]
            if not test_g:
                raise ValueError("empty test fold")
            macse[(FULL, g)].append(np.mean([full_err[s.subject_id] for s in test_g]))
            group_model = fit([s for s in train if s.group == g], config, grid)
            macse[(g, g)].append(np.mean([acse(s, predict_trajectory(group_model, s), grid) for s in test_g]))
    return cells, np.array([root_macse_from_folds(macse[c]) for c in cells])


def gof_compare(
    samples: Sequence[LongitudinalSample],
    repeats: int = 100,
    k: int = 5,
    seed: int = 0,
    config: FitConfig = FitConfig(),
    grid: Optional[TimeGrid] = None,
) -> GofResult:
    """Repeat stratified k-fold goodness of fit with folds seeded by ``(seed, repeat)``.

    Lower values mean better fit. Cells are the full-cohort model on all
    subjects, the full-cohort model on each group, and each group's own
    model on that group.
    """
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    samples = list(samples)
    grid = _common_grid(samples, config, grid)
    labels = _labels(samples)
    rows = []
    cells = _cells(labels)
    for r in range(repeats):
        folds = stratified_folds(samples, k, seed=(seed, r))
        cells, row = _cv_cells(samples, folds, config, grid, labels)
        rows.append(row)
    return GofResult(cells, np.array(rows), repeats, k, seed)


@dataclass(frozen=True)
class FutureAccuracy:
    """Root MSE of latest-observation predictions per (model scope, evaluation group)."""

    cells: tuple
    root_mse: tuple
    n_subjects: tuple
    n_excluded: int

    def value(self, model_scope: str, eval_group: str) -> float:
        return self.root_mse[self.cells.index((model_scope, eval_group))]

    def to_dict(self) -> dict:
        return {
            "cells": [
                {"model_scope": s, "eval_group": g, "root_mse": v, "n": n}
                for (s, g), v, n in zip(self.cells, self.root_mse, self.n_subjects)
            ],
            "n_excluded": self.n_excluded,
        }

    def tidy_rows(self) -> list:
        return [
            {"model_scope": s, "eval_group": g, "root_mse": v}
            for (s, g), v in zip(self.cells, self.root_mse)
        ]


def _latest_errors(model, held_in, held_out_times, held_out_values, grid):
    idx = nearest_grid_indices(held_out_times, grid)
    preds = np.array([predict_trajectory(model, s)[i] for s, i in zip(held_in, idx)])
    return (held_out_values - preds) ** 2


def future_prediction_rmse(
    samples: Sequence[LongitudinalSample],
    config: FitConfig = FitConfig(),
    grid: Optional[TimeGrid] = None,
) -> FutureAccuracy:
    """Train without each subject's latest observation, then predict it.

    Subjects with a single observation are excluded and counted in
    ``n_excluded``. The grid spans all observations, held-out ones included.
    """
    samples = list(samples)
    eligible = [s for s in samples if s.n_obs >= 2]
    n_excluded = len(samples) - len(eligible)
    if not eligible:
        raise ValueError("no eligible subjects: every subject has a single observation")
    grid = _common_grid(eligible, config, grid)
    held_in = [s.head(s.n_obs - 1) for s in eligible]
    out_t = np.array([s.times[-1] for s in eligible])
    out_y = np.array([s.values[-1] for s in eligible])
    groups = np.array([s.group for s in eligible], dtype=object)
    labels = _labels(eligible)

    full_model = fit(held_in, config, grid)
    full_sq = _latest_errors(full_model, held_in, out_t, out_y, grid)
    cells, values, counts = [(FULL, ALL)], [math.sqrt(float(np.mean(full_sq)))], [len(eligible)]
    for g in labels:
        mask = groups == g
        cells.append((FULL, g))
        values.append(math.sqrt(float(np.mean(full_sq[mask]))))
        counts.append(int(mask.sum()))
    for g in labels:
        mask = groups == g
        sub = [s for s, m in zip(held_in, mask) if m]
        model = fit(sub, config, grid)
        sq = _latest_errors(model, sub, out_t[mask], out_y[mask], grid)
        cells.append((g, g))
        values.append(math.sqrt(float(np.mean(sq))))
        counts.append(int(mask.sum()))
    return FutureAccuracy(tuple(cells), tuple(values), tuple(counts), n_excluded)
