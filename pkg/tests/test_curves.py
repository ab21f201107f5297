import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajfpca.curves import (
    CurveMatrix,
    LongitudinalSample,
    TimeGrid,
    build_grid,
    inner,
    nearest_grid_index,
    nearest_grid_indices,
    norm_sq,
    trapezoid_weights,
)


def _sample(times, sid="x", group=None):
    times = np.asarray(times, dtype=float)
    return LongitudinalSample(sid, times, np.zeros_like(times), group)


class TestLongitudinalSample:
    def test_arrays_are_frozen(self):
        s = LongitudinalSample("a", [0.0, 1.0], [2.0, 3.0])
        with pytest.raises(ValueError):
            s.times[0] = 5.0
        assert s.n_obs == 2

    @pytest.mark.parametrize(
        "times, values, msg",
        [
            ([], [], "no observations"),
            ([0.0, 1.0], [1.0], "differ in length"),
            ([1.0, 1.0], [1.0, 2.0], "strictly increasing"),
            ([0.0, np.nan], [1.0, 2.0], "non-finite"),
        ],
    )
    def test_invalid(self, times, values, msg):
        with pytest.raises(ValueError, match=msg):
            LongitudinalSample("a", times, values)

    def test_head_keeps_identity(self):
        s = LongitudinalSample("a", [0.0, 1.0, 2.0], [1.0, 2.0, 3.0], "g")
        h = s.head(2)
        assert h.subject_id == "a" and h.group == "g"
        np.testing.assert_array_equal(h.values, [1.0, 2.0])


class TestBuildGrid:
    def test_unit_spacing(self):
        g = build_grid([_sample([0.0, 4.0]), _sample([2.0, 10.0])], n_points=11)
        np.testing.assert_array_equal(g.points, np.arange(11.0))
        np.testing.assert_array_equal(g.weights, [0.5] + [1.0] * 9 + [0.5])

    def test_single_sample(self):
        g = build_grid([_sample([0.0, 1.0])], n_points=3)
        np.testing.assert_array_equal(g.points, [0.0, 0.5, 1.0])

    def test_degenerate_domain(self):
        with pytest.raises(ValueError, match="degenerate time domain"):
            build_grid([_sample([2.0]), _sample([2.0])], n_points=5)

    def test_no_samples(self):
        with pytest.raises(ValueError, match="no samples"):
            build_grid([], n_points=5)

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            build_grid([_sample([0.0, 1.0])], n_points=2)

    def test_weights_sum_to_length(self):
        g = build_grid([_sample([0.3, 7.9])], n_points=51)
        assert g.weights.sum() == pytest.approx(7.6, abs=1e-12)


class TestNormSq:
    def test_constant_one(self):
        g = TimeGrid(np.linspace(0, 1, 7))
        assert norm_sq(np.ones(7), g) == 1.0

    def test_zero(self):
        g = TimeGrid(np.linspace(0, 1, 7))
        assert norm_sq(np.zeros(7), g) == 0.0

    def test_identity_squared(self):
        g = TimeGrid(np.linspace(0, 1, 101))
        assert abs(norm_sq(g.points, g) - 1.0 / 3.0) < 1e-3

    def test_length_mismatch(self):
        g = TimeGrid(np.linspace(0, 1, 7))
        with pytest.raises(ValueError):
            norm_sq(np.ones(6), g)

    @given(st.floats(-100, 100), st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_homogeneous(self, a, seed):
        g = TimeGrid(np.linspace(-1, 3, 21))
        f = np.random.default_rng(seed).normal(size=21)
        assert norm_sq(a * f, g) == pytest.approx(a * a * norm_sq(f, g), rel=1e-12, abs=1e-12)
        assert norm_sq(f - f, g) == 0.0
        assert norm_sq(f, g) >= 0.0

    def test_inner_matches_norm(self):
        g = TimeGrid(np.linspace(0, 2, 11))
        f = np.sin(g.points)
        assert inner(f, f, g) == pytest.approx(norm_sq(f, g))


class TestNearestGridIndex:
    grid = TimeGrid(np.arange(11.0))

    def test_on_grid_point(self):
        assert nearest_grid_index(4.0, self.grid) == 4

    def test_midpoint_goes_down(self):
        assert nearest_grid_index(2.5, self.grid) == 2

    def test_rounds(self):
        assert nearest_grid_index(3.4, self.grid) == 3
        assert nearest_grid_index(3.6, self.grid) == 4

    def test_clamps_within_tolerance(self):
        assert nearest_grid_index(-1e-10, self.grid) == 0
        assert nearest_grid_index(10 + 1e-10, self.grid) == 10

    def test_out_of_domain(self):
        with pytest.raises(ValueError, match="time out of domain"):
            nearest_grid_index(10.1, self.grid)

    def test_vectorized_agrees(self, rng):
        t = rng.uniform(0, 10, 200)
        np.testing.assert_array_equal(nearest_grid_indices(t, self.grid), [nearest_grid_index(x, self.grid) for x in t])

    @given(st.integers(3, 80), st.floats(-50, 50), st.floats(0.01, 100))
    @settings(max_examples=60, deadline=None)
    def test_round_trip(self, m, a, length):
        g = TimeGrid(np.linspace(a, a + length, m))
        np.testing.assert_array_equal(nearest_grid_indices(g.points, g), np.arange(m))


class TestTimeGrid:
    def test_interpolate_linear(self):
        g = TimeGrid(np.linspace(0, 4, 5))
        np.testing.assert_allclose(g.interpolate(2 * g.points + 1, [0.5, 3.25]), [2.0, 7.5])

    def test_interpolate_out_of_domain(self):
        g = TimeGrid(np.linspace(0, 4, 5))
        with pytest.raises(ValueError, match="time out of domain"):
            g.interpolate(g.points, [4.5])

    def test_rejects_unsorted(self):
        with pytest.raises(ValueError):
            TimeGrid(np.array([0.0, 2.0, 1.0]))

    def test_trapezoid_weights_uneven(self):
        np.testing.assert_allclose(trapezoid_weights([0.0, 1.0, 3.0]), [0.5, 1.5, 1.0])


class TestCurveMatrix:
    def test_rejects_nonfinite(self):
        g = TimeGrid(np.linspace(0, 1, 3))
        with pytest.raises(ValueError):
            CurveMatrix(g, np.array([[0.0, np.inf, 1.0]]), ("a",), (None,))

    def test_subset_and_labels(self):
        g = TimeGrid(np.linspace(0, 1, 3))
        cm = CurveMatrix(g, np.arange(9.0).reshape(3, 3), ("a", "b", "c"), ("y", "x", "y"))
        assert cm.group_labels() == ["x", "y"]
        sub = cm.subset(np.array([True, False, True]))
        assert sub.subject_ids == ("a", "c") and sub.n_curves == 2
