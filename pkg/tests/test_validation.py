"""Run-time dataset validation: bounds checks and update rules."""

import numpy as np
import pytest

from cobot_monitor.core import (
    N_ATTRIBUTES,
    AttributeVector,
    Dataset,
    Label,
    LabeledSample,
)
from cobot_monitor.validation import (
    HullBounds,
    apply_updates,
    case1_violation,
    case2_out_of_bounds,
    hull_bounds,
    hull_export_3d,
)


def random_dataset(rng, n):
    X = rng.uniform(-5, 5, size=(n, N_ATTRIBUTES))
    y = rng.integers(0, 2, size=n)
    return Dataset.from_arrays(X, y)


def alpha_of(values):
    return AttributeVector.from_array(values)


class TestHullBounds:
    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            hull_bounds(Dataset())

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_extrema_scan(self, seed):
        """Bounds equal a brute-force per-dimension min/max scan, which is
        also the extent of the convex hull in each dimension."""
        rng = np.random.default_rng(seed)
        data = random_dataset(rng, int(rng.integers(5, 200)))
        bounds = hull_bounds(data)
        m = data.matrix
        for i in range(N_ATTRIBUTES):
            assert bounds.minimum[i] == pytest.approx(min(m[:, i]))
            assert bounds.maximum[i] == pytest.approx(max(m[:, i]))

    @pytest.mark.parametrize("seed", range(5))
    def test_agrees_with_scipy_hull_extent(self, seed):
        from scipy.spatial import ConvexHull

        rng = np.random.default_rng(seed)
        pts = rng.uniform(-3, 3, size=(60, 3))
        X = np.zeros((60, N_ATTRIBUTES))
        X[:, :3] = pts
        data = Dataset.from_arrays(X, np.zeros(60, dtype=int))
        bounds = hull_bounds(data)
        hull = ConvexHull(pts)
        verts = pts[hull.vertices]
        for i in range(3):
            assert bounds.minimum[i] == pytest.approx(verts[:, i].min())
            assert bounds.maximum[i] == pytest.approx(verts[:, i].max())


class TestCase2:
    def test_inside_and_outside(self):
        bounds = HullBounds(
            minimum=(0.0,) * N_ATTRIBUTES, maximum=(1.0,) * N_ATTRIBUTES
        )
        inside = alpha_of([0.5] * N_ATTRIBUTES)
        on_edge = alpha_of([0.0] * N_ATTRIBUTES)
        outside = alpha_of([0.5] * 7 + [1.5])
        assert not case2_out_of_bounds(inside, bounds)
        assert not case2_out_of_bounds(on_edge, bounds)
        assert case2_out_of_bounds(outside, bounds)

    @pytest.mark.parametrize("seed", range(5))
    def test_training_points_never_flagged(self, seed):
        rng = np.random.default_rng(seed)
        data = random_dataset(rng, 100)
        bounds = hull_bounds(data)
        for s in data:
            assert not case2_out_of_bounds(s.attributes, bounds)


class TestCase1:
    def test_detects_below_threshold(self):
        distances = np.array([[2.0, 1.0], [1.4, 3.0], [np.nan, 0.5]])
        hits = case1_violation(distances, 1.5)
        assert hits == [(0, 1), (1, 0), (2, 1)]

    def test_nan_never_triggers(self):
        distances = np.full((4, 2), np.nan)
        assert case1_violation(distances, 1.5) == []

    def test_shape_checked(self):
        with pytest.raises(ValueError):
            case1_violation(np.zeros(5), 1.5)


class TestApplyUpdates:
    def make_log(self, n_ticks, n_humans, rng):
        return {
            (t, h): alpha_of(rng.uniform(-5, 5, N_ATTRIBUTES))
            for t in range(n_ticks)
            for h in range(n_humans)
        }

    def test_case1_window_labeled_interfere(self):
        rng = np.random.default_rng(0)
        log = self.make_log(10, 1, rng)
        distances = np.full((10, 1), 3.0)
        distances[6, 0] = 1.0  # single violation at tick 6
        hits = case1_violation(distances, 1.5)
        updated, records = apply_updates(
            Dataset(), log, distances, hits, [], horizon_ticks=3, delta_th=1.5
        )
        ticks = sorted(r.tick for r in records)
        assert ticks == [3, 4, 5, 6]  # horizon window before through violation
        assert all(r.sample.label is Label.INTERFERE for r in records)
        assert all(r.case == "case1" for r in records)
        assert len(updated) == len(records)

    def test_case2_retrospective_labels(self):
        rng = np.random.default_rng(1)
        log = self.make_log(10, 1, rng)
        distances = np.full((10, 1), 3.0)
        distances[5, 0] = 1.2  # dip after tick 3, inside its horizon
        updated, records = apply_updates(
            Dataset(), log, distances, [], [(3, 0), (8, 0)],
            horizon_ticks=3, delta_th=1.5,
        )
        by_tick = {r.tick: r for r in records}
        assert by_tick[3].sample.label is Label.INTERFERE
        assert by_tick[8].sample.label is Label.NOT_INTERFERE
        assert all(r.case == "case2" for r in records)

    def test_idempotent(self):
        rng = np.random.default_rng(2)
        log = self.make_log(6, 2, rng)
        distances = rng.uniform(0.5, 3.0, size=(6, 2))
        hits = case1_violation(distances, 1.5)
        once, rec1 = apply_updates(
            Dataset(), log, distances, hits, [(0, 0)], 2, 1.5
        )
        twice, rec2 = apply_updates(
            once, log, distances, hits, [(0, 0)], 2, 1.5
        )
        assert len(rec2) == 0
        assert twice == once

    def test_original_data_preserved(self):
        rng = np.random.default_rng(3)
        base = random_dataset(rng, 20)
        log = self.make_log(4, 1, rng)
        distances = np.full((4, 1), 1.0)
        hits = case1_violation(distances, 1.5)
        updated, _ = apply_updates(base, log, distances, hits, [], 1, 1.5)
        assert list(updated)[:20] == list(base)
        assert len(base) == 20  # input untouched

    def test_missing_log_entries_skipped(self):
        distances = np.full((4, 1), 1.0)
        hits = case1_violation(distances, 1.5)
        updated, records = apply_updates(
            Dataset(), {}, distances, hits, [(2, 0)], 1, 1.5
        )
        assert len(updated) == 0 and records == []


class TestHullExport:
    def test_export_shape(self):
        rng = np.random.default_rng(4)
        data = random_dataset(rng, 30)
        out = hull_export_3d(data, (0, 1, 3))
        assert out is not None
        assert out["attributes"] == [0, 1, 3]
        assert len(out["vertices"]) >= 4
        assert all(len(f) == 3 for f in out["faces"])

    def test_degenerate_returns_none(self):
        X = np.zeros((10, N_ATTRIBUTES))  # all coincident
        data = Dataset.from_arrays(X, np.zeros(10, dtype=int))
        assert hull_export_3d(data, (0, 1, 2)) is None

    def test_bad_triple_rejected(self):
        rng = np.random.default_rng(5)
        data = random_dataset(rng, 10)
        with pytest.raises(ValueError):
            hull_export_3d(data, (0, 1))
        with pytest.raises(ValueError):
            hull_export_3d(data, (0, 1, 99))
