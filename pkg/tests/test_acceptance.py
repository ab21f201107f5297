"""Acceptance criteria, one test each, printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the calibration
criteria take several minutes.
"""

import io
import json
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajfpca import FitConfig, default_spec, fit, simulate_cohort, simulate_groups
from trajfpca.cli import main
from trajfpca.curves import CurveMatrix, LongitudinalSample, TimeGrid
from trajfpca.evaluate import gof_compare, root_macse_from_folds, stratified_folds
from trajfpca.inference import (
    covariance_permutation_test,
    fp_statistic,
    mean_permutation_test,
    sqrt_distance,
    standardize_trajectories,
)
from trajfpca.io import cohort_csv, read_cohort, write_cohort_csv
from trajfpca.simulate import KlSpec, legendre_basis, linear_mean, shifted
from trajfpca.smooth import Bandwidth

pytestmark = pytest.mark.acceptance

RESULTS = []


def report(capsys, number, name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number} {name}: {detail}"
    RESULTS.append(line)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


def align(phi_hat, phi, weights):
    return abs(float(np.sum(weights * phi_hat * phi)))


# 1 ---------------------------------------------------------------------------

def test_c1_oracle_recovery(capsys):
    spec = default_spec()  # lambda = (9, 4), sigma2 = 4, [0, 15], 2-8 observations
    k_ok = phi_ok = lam_ok = s2_ok = 0
    slowest = 0.0
    rows = []
    for seed in range(20):
        samples = simulate_cohort(spec, 300, seed=seed)
        start = time.perf_counter()
        model = fit(samples)
        slowest = max(slowest, time.perf_counter() - start)
        g = model.grid
        truth_phi = spec.eigenfunctions_at(g.points)
        k_ok += model.K == 2
        n = min(model.K, 2)
        inner = [align(model.eigenfunctions[k], truth_phi[k], g.weights) for k in range(n)]
        rel = [abs(model.eigenvalues[k] - spec.eigenvalues[k]) / spec.eigenvalues[k] for k in range(n)]
        phi_ok += n == 2 and min(inner) > 0.90
        lam_ok += n == 2 and max(rel) < 0.25
        s2_ok += 3.0 <= model.sigma2 <= 5.0
        rows.append(f"seed {seed}: K={model.K} lambda={np.round(model.eigenvalues[:3], 2).tolist()} "
                    f"inner={np.round(inner, 3).tolist()} sigma2={model.sigma2:.2f}")
    with capsys.disabled():
        print("\n" + "\n".join(rows))
    ok = min(k_ok, phi_ok, lam_ok, s2_ok) >= 18 and slowest < 60
    report(capsys, 1, "oracle recovery", ok,
           f"K=2 {k_ok}/20, |<phi,phi_hat>|>0.9 {phi_ok}/20, eigenvalue error<25% {lam_ok}/20, "
           f"sigma2 in [3,5] {s2_ok}/20 (each needs >=18); slowest fit {slowest:.1f}s (<60s)")


# 2 and 3 share the null design -------------------------------------------------

B = 200
ALPHA = 0.05


def _tests_for(samples, seed):
    model = fit(samples)
    curves = model.fitted_curves()
    p_mean = mean_permutation_test(curves, B, seed=seed).p_global
    p_cov = covariance_permutation_test(standardize_trajectories(curves, model), B, seed=seed).p_global
    return p_mean, p_cov


@pytest.fixture(scope="module")
def null_pvalues():
    spec = default_spec()
    out = [_tests_for(simulate_groups([(spec, 50, "a"), (spec, 50, "b"), (spec, 50, "c")], seed=run), run)
           for run in range(500)]
    return np.array(out)


def test_c2_mean_test(capsys, null_pvalues):
    size = float(np.mean(null_pvalues[:, 0] < ALPHA))
    spec = default_spec()
    one_sd = float(np.sqrt(np.sum(spec.eigenvalues) / (spec.domain[1] - spec.domain[0])))
    hits = 0
    for run in range(100):
        samples = simulate_groups([(spec, 50, "a"), (spec, 50, "b"), (shifted(spec, one_sd), 50, "c")], seed=10_000 + run)
        curves = fit(samples).fitted_curves()
        hits += mean_permutation_test(curves, B, seed=run).p_global < ALPHA
    ok = 0.03 <= size <= 0.07 and hits >= 95
    report(capsys, 2, "mean-test calibration", ok,
           f"type-I error {size:.3f} over 500 null runs (need [0.03, 0.07]); "
           f"shift of {one_sd:.3f} detected {hits}/100 (need >=95)")


def test_c3_covariance_test(capsys, null_pvalues):
    size = float(np.mean(null_pvalues[:, 1] < ALPHA))
    spec = default_spec()
    doubled = default_spec(eigenvalues=tuple(2 * spec.eigenvalues))
    hits = 0
    for run in range(100):
        samples = simulate_groups([(spec, 75, "a"), (spec, 75, "b"), (doubled, 75, "c")], seed=20_000 + run)
        model = fit(samples)
        z = standardize_trajectories(model.fitted_curves(), model)
        hits += covariance_permutation_test(z, B, seed=run).p_global < ALPHA
    ok = 0.03 <= size <= 0.07 and hits >= 90
    report(capsys, 3, "covariance-test calibration", ok,
           f"type-I error {size:.3f} over 500 null runs (need [0.03, 0.07]); "
           f"doubled eigenvalues detected {hits}/100 (need >=90)")


# 4 ---------------------------------------------------------------------------

def _swap_specs():
    level, slope = legendre_basis((0.0, 15.0), 2)
    mean = linear_mean(50.0, -2.0)
    a = KlSpec((0.0, 15.0), mean, [level, slope], (9.0, 1.0), sigma2=1.0)
    b = KlSpec((0.0, 15.0), mean, [slope, level], (9.0, 1.0), sigma2=1.0)
    return a, b


def test_c4_gof_directionality(capsys):
    a, b = _swap_specs()
    wins = 0
    max_rel = 0.0
    detail = []
    for seed in range(20):
        distinct = gof_compare(simulate_groups([(a, 100, "a"), (b, 100, "b")], seed=seed), repeats=1, seed=seed)
        won = all(distinct.column(g, g)[0] < distinct.column("full", g)[0] for g in ("a", "b"))
        wins += won
        same = gof_compare(simulate_groups([(a, 100, "a"), (a, 100, "b")], seed=seed), repeats=1, seed=seed)
        rel = max(abs(same.column(g, g)[0] - same.column("full", g)[0]) / same.column("full", g)[0] for g in ("a", "b"))
        max_rel = max(max_rel, rel)
        detail.append(f"seed {seed}: distinct full/group a {distinct.column('full', 'a')[0]:.3f}/{distinct.column('a', 'a')[0]:.3f} "
                      f"b {distinct.column('full', 'b')[0]:.3f}/{distinct.column('b', 'b')[0]:.3f}; identical max rel {rel:.3f}")
    with capsys.disabled():
        print("\n" + "\n".join(detail))
    ok = wins >= 16 and max_rel < 0.10
    report(capsys, 4, "goodness-of-fit directionality", ok,
           f"group models beat the full model for both groups in {wins}/20 seeds (need >=16); "
           f"identical groups max relative gap {max_rel:.3f} (need <0.10)")


# 5 ---------------------------------------------------------------------------

def _psd(r, m):
    a = r.normal(size=(m, int(r.integers(1, m + 1))))
    return a @ a.T


def test_c5_aggregation_identities(capsys):
    roots = [root_macse_from_folds([m] * 5) for m in (0.0, 0.25, 4.0, 17.3)]
    root_ok = all(abs(r - np.sqrt(m)) <= 1e-12 * max(1, np.sqrt(m)) for r, m in zip(roots, (0.0, 0.25, 4.0, 17.3)))

    grid = TimeGrid(np.linspace(0, 1, 11))
    rows = np.outer([0.0, 2.0, 3.0, 5.0], np.ones(11))
    fp = fp_statistic(CurveMatrix(grid, rows, ("w", "x", "y", "z"), ("a", "a", "b", "b")))
    fp_ok = abs(fp - 4.5) < 1e-12

    r = np.random.default_rng(0)
    worst_sym = worst_self = worst_tri = 0.0
    negative = False
    for _ in range(100):
        s1, s2, s3 = (_psd(r, 11) for _ in range(3))
        d12, d21 = sqrt_distance(s1, s2, grid), sqrt_distance(s2, s1, grid)
        worst_sym = max(worst_sym, abs(d12 - d21))
        worst_self = max(worst_self, sqrt_distance(s1, s1, grid))
        worst_tri = max(worst_tri, d12 - sqrt_distance(s1, s3, grid) - sqrt_distance(s3, s2, grid))
        negative |= d12 < 0
    metric_ok = worst_sym < 1e-10 and worst_self < 1e-6 and worst_tri <= 1e-9 and not negative
    ok = root_ok and fp_ok and metric_ok
    report(capsys, 5, "aggregation identities", ok,
           f"root MACSE = sqrt(m) {root_ok}; FP = {fp!r} (|FP-4.5| < 1e-12: {fp_ok}); "
           f"100 PSD triples: max |d(a,b)-d(b,a)| {worst_sym:.1e}, max d(a,a) {worst_self:.1e}, "
           f"max triangle excess {worst_tri:.1e}")


# 6 ---------------------------------------------------------------------------

def _cli(argv):
    code = main([str(a) for a in argv], stdout=io.StringIO(), stderr=io.StringIO())
    assert code == 0, argv


def test_c6_determinism(capsys, tmp_path):
    spec_file = tmp_path / "spec.json"
    spec_file.write_text(json.dumps({
        "sigma2": 4.0,
        "groups": [{"label": "a", "n": 40}, {"label": "b", "n": 40, "eigenvalues": [18.0, 8.0]}],
    }))
    compared = 0
    mismatched = []
    for run in ("first", "second"):
        out = tmp_path / run
        _cli(["simulate", "--spec", spec_file, "--seed", 7, "--output", out / "sim"])
        data = out / "sim" / "cohort.csv"
        _cli(["fit", "--input", data, "--seed", 7, "--output", out / "fit"])
        _cli(["predict", "--model", out / "fit" / "model.json", "--input", data, "--output", out / "predict"])
        _cli(["test-mean", "--input", data, "--permutations", 200, "--seed", 7, "--output", out / "mean"])
        _cli(["test-cov", "--input", data, "--permutations", 200, "--seed", 7, "--output", out / "cov"])
        _cli(["gof", "--input", data, "--repeats", 1, "--seed", 7, "--output", out / "gof"])
        _cli(["future-acc", "--input", data, "--seed", 7, "--output", out / "future"])
    for f in sorted((tmp_path / "first").rglob("*")):
        if f.is_file():
            twin = tmp_path / "second" / f.relative_to(tmp_path / "first")
            compared += 1
            if not twin.is_file() or twin.read_bytes() != f.read_bytes():
                mismatched.append(str(f.relative_to(tmp_path / "first")))
    ok = compared >= 13 and not mismatched
    report(capsys, 6, "determinism", ok, f"{compared} CLI output files compared byte for byte, mismatches: {mismatched or 'none'}")


# 7 ---------------------------------------------------------------------------

CASES = 100
FAST = FitConfig(bandwidth_mean=Bandwidth.fixed(1.5), bandwidth_cov=Bandwidth.fixed(2.5))


def test_c7_invariants(capsys):
    counts = {"model": 0, "folds": 0, "pvalue": 0, "csv": 0}

    @given(
        st.integers(0, 10**6),
        st.integers(15, 60),
        st.tuples(st.floats(1.0, 20.0), st.floats(0.1, 1.0), st.floats(0.0, 1.0)),
        st.floats(0.0, 4.0),
        st.sampled_from([0.8, 0.9, 0.95, 0.99]),
    )
    @settings(max_examples=CASES, deadline=None, database=None)
    def model_invariants(seed, n, ratios, sigma2, fve):
        lam = tuple(sorted((ratios[0], ratios[0] * ratios[1], ratios[0] * ratios[1] * ratios[2]), reverse=True))
        samples = simulate_cohort(default_spec(eigenvalues=lam, sigma2=sigma2), n, seed=seed)
        config = FitConfig(fve_threshold=fve, bandwidth_mean=FAST.bandwidth_mean, bandwidth_cov=FAST.bandwidth_cov)
        m = fit(samples, config)
        gram = (m.eigenfunctions * m.grid.weights) @ m.eigenfunctions.T
        assert np.max(np.abs(gram - np.eye(m.K))) <= 1e-6
        assert np.all(m.eigenvalues > 0) and np.all(np.diff(m.eigenvalues) <= 0)
        assert np.all(np.diff(m.fve) >= 0) and m.fve[-1] >= fve - 1e-12
        assert np.max(np.abs(m.cov - m.cov.T)) <= 1e-10
        counts["model"] += 1

    @given(st.lists(st.integers(5, 60), min_size=1, max_size=4), st.integers(2, 5), st.integers(0, 10**6))
    @settings(max_examples=CASES, deadline=None, database=None)
    def fold_bounds(sizes, k, seed):
        samples = [LongitudinalSample(f"{g}-{i}", [0.0], [0.0], str(g)) for g, n in enumerate(sizes) for i in range(n)]
        folds = stratified_folds(samples, k, seed=seed).folds
        assert np.all(np.abs(np.bincount(folds, minlength=k) - len(samples) / k) <= 1)
        groups = np.array([s.group for s in samples])
        for g, n in enumerate(sizes):
            assert np.all(np.abs(np.bincount(folds[groups == str(g)], minlength=k) - n / k) <= 1)
        counts["folds"] += 1

    @given(st.integers(1, 30), st.integers(2, 4), st.integers(2, 6), st.integers(0, 10**6), st.booleans())
    @settings(max_examples=CASES, deadline=None, database=None)
    def pvalue_floor(b, n_groups, n_per, seed, tied):
        r = np.random.default_rng(seed)
        grid = TimeGrid(np.linspace(0, 1, 7))
        rows = r.normal(size=(n_groups * n_per, 7))
        if tied:
            rows = np.tile(rows[:n_per], (n_groups, 1))
        labels = tuple(str(i // n_per) for i in range(n_groups * n_per))
        curves = CurveMatrix(grid, rows, tuple(map(str, range(len(rows)))), labels)
        for result in (mean_permutation_test(curves, b, seed), covariance_permutation_test(curves, b, seed)):
            ps = [result.p_global] + [p.p_value for p in result.pairwise]
            assert all(1.0 / (1 + b) - 1e-15 <= p <= 1.0 for p in ps)
            assert all(abs(p * (1 + b) - round(p * (1 + b))) < 1e-9 for p in ps)
        counts["pvalue"] += 1

    finite = st.floats(-1e9, 1e9, allow_nan=False, allow_infinity=False)

    @given(st.lists(st.tuples(st.sets(finite, min_size=1, max_size=5), st.sampled_from(["a", "b,c", None])), min_size=1, max_size=5), st.data())
    @settings(max_examples=CASES, deadline=None, database=None)
    def csv_round_trip(subjects, data):
        grouped = any(g is not None for _, g in subjects)
        samples = []
        for i, (times, g) in enumerate(subjects):
            times = sorted(times)
            values = data.draw(st.lists(finite, min_size=len(times), max_size=len(times)))
            samples.append(LongitudinalSample(f"s{i}", times, values, (g or "z") if grouped else None))
        back = read_cohort(cohort_csv(samples).splitlines(keepends=True))
        for x, y in zip(samples, back, strict=True):
            assert (x.subject_id, x.group) == (y.subject_id, y.group)
            assert np.array_equal(x.times, y.times) and np.array_equal(x.values, y.values)
        counts["csv"] += 1

    failures = []
    for prop in (model_invariants, fold_bounds, pvalue_floor, csv_round_trip):
        try:
            prop()
        except Exception as exc:  # report every property before failing
            failures.append(f"{prop.__name__}: {type(exc).__name__}")
    ok = not failures and min(counts.values()) >= CASES
    report(capsys, 7, "invariant suite", ok,
           f"cases run {counts} (need >= {CASES} each); failures: {failures or 'none'}")
