import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ocad.exceptions import ValidationError
from ocad.ingest import Detection
from ocad.scoring import (
    FrameScoreSeries,
    build_map,
    frame_score,
    frame_scores_from_objects,
    gaussian_kernel,
    minmax_normalize,
    read_scores_csv,
    temporal_smooth,
    video_baseline,
    write_scores_csv,
)


def det(frame, x1, y1, x2, y2):
    return Detection(frame, x1, y1, x2, y2, 1.0)


class TestBuildMap:
    def test_overlap_takes_max(self):
        scored = [(det(0, 0, 0, 10, 10), 0.2), (det(0, 5, 5, 15, 15), 0.9)]
        amap = build_map(20, 20, scored, baseline=0.0)
        assert amap[7, 7] == 0.9  # overlap region
        assert amap[2, 2] == 0.2
        assert amap[18, 18] == 0.0

    def test_no_detections_uniform_baseline(self):
        amap = build_map(8, 8, [], baseline=-1.5)
        np.testing.assert_array_equal(amap, np.full((8, 8), -1.5))

    def test_disjoint_boxes_max(self):
        scored = [
            (det(0, 0, 0, 3, 3), -1.2),
            (det(0, 5, 5, 8, 8), 0.4),
            (det(0, 10, 10, 13, 13), 0.1),
        ]
        amap = build_map(16, 16, scored, baseline=-2.0)
        assert frame_score(amap) == pytest.approx(0.4)

    def test_frame_score_equals_max_object_score(self, rng):
        for _ in range(10):
            n = int(rng.integers(1, 8))
            scored = []
            for _ in range(n):
                x1, y1 = rng.integers(0, 20, 2)
                scored.append(
                    (det(0, x1, y1, x1 + rng.integers(1, 10), y1 + rng.integers(1, 10)),
                     float(rng.normal())),
                )
            baseline = min(s for _, s in scored) - 1.0
            amap = build_map(32, 32, scored, baseline)
            assert frame_score(amap) == pytest.approx(max(s for _, s in scored))


class TestFrameScores:
    def test_empty_frame_gets_video_minimum(self):
        scored = [(det(1, 0, 0, 4, 4), -3.0), (det(2, 0, 0, 4, 4), 0.4)]
        raw, baseline = frame_scores_from_objects(4, scored)
        assert baseline == -3.0
        np.testing.assert_allclose(raw, [-3.0, -3.0, 0.4, -3.0])

    def test_no_objects_at_all(self):
        raw, baseline = frame_scores_from_objects(3, [])
        assert baseline == 0.0
        np.testing.assert_array_equal(raw, np.zeros(3))

    def test_matches_map_route(self, rng):
        scored = []
        for t in range(5):
            for _ in range(int(rng.integers(0, 4))):
                x1, y1 = rng.integers(0, 20, 2)
                scored.append(
                    (det(t, x1, y1, x1 + 5, y1 + 5), float(rng.normal()))
                )
        raw, baseline = frame_scores_from_objects(5, scored)
        for t in range(5):
            frame_dets = [(d, s) for d, s in scored if d.frame_index == t]
            assert raw[t] == pytest.approx(frame_score(build_map(32, 32, frame_dets, baseline)))


class TestTemporalSmooth:
    def test_constant_series_unchanged(self):
        x = np.full(50, 3.25)
        np.testing.assert_allclose(temporal_smooth(x, 5.0), x, rtol=1e-12)

    def test_impulse_center_weight(self):
        x = np.zeros(41)
        x[20] = 1.0
        smoothed = temporal_smooth(x, 1.0)
        kernel = gaussian_kernel(1.0)
        assert smoothed[20] == pytest.approx(kernel[len(kernel) // 2], rel=1e-12)

    def test_interior_mass_conserved(self, rng):
        x = rng.normal(0, 1, 200)
        x[:30] = 0
        x[-30:] = 0  # keep energy away from the boundary
        smoothed = temporal_smooth(x, 3.0)
        assert smoothed.sum() == pytest.approx(x.sum(), abs=1e-9)

    def test_tiny_sigma_kernel(self):
        kernel = gaussian_kernel(0.2)  # radius = ceil(3 * 0.2) = 1
        assert len(kernel) == 3
        assert kernel.sum() == pytest.approx(1.0, rel=1e-12)
        x = np.full(10, 2.0)
        np.testing.assert_allclose(temporal_smooth(x, 0.2), x, rtol=1e-12)

    def test_sigma_must_be_positive(self):
        with pytest.raises(ValidationError):
            temporal_smooth(np.zeros(5), 0.0)


class TestNormalize:
    def test_example(self):
        np.testing.assert_allclose(minmax_normalize([-2.0, 0.0, 2.0]), [0.0, 0.5, 1.0])

    def test_constant_maps_to_zeros(self):
        np.testing.assert_array_equal(minmax_normalize([5.0, 5.0, 5.0]), np.zeros(3))

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
    @settings(max_examples=50, deadline=None)
    def test_idempotent(self, values):
        once = minmax_normalize(values)
        twice = minmax_normalize(once)
        np.testing.assert_allclose(twice, once, atol=1e-12)
        assert once.min() >= 0.0 and once.max() <= 1.0


class TestSeriesCsv:
    def test_round_trip_exact(self, tmp_path, rng):
        raw = rng.normal(0, 2, 30)
        series = FrameScoreSeries.from_raw("vid7", raw, sigma=2.0)
        path = tmp_path / "scores.csv"
        write_scores_csv(path, series)
        loaded = read_scores_csv(path, video_id="vid7")
        np.testing.assert_array_equal(loaded.raw, series.raw)
        np.testing.assert_array_equal(loaded.smoothed, series.smoothed)
        np.testing.assert_array_equal(loaded.normalized, series.normalized)

    def test_header_checked(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ValidationError):
            read_scores_csv(path)

    def test_video_baseline_helper(self):
        assert video_baseline([]) == 0.0
        assert video_baseline([3.0, -1.0, 2.0]) == -1.0
