import math

import numpy as np
import pytest

from numpy.testing import assert_allclose

from omniqa.sphere import ErpGeometry, SphericalCoord, ViewportSpec, angular_dist, sph_to_pix, viewport_ray_to_sph
from omniqa.utils.errors import DataError
from omniqa.viewpoint import (DetectorConfig, Heatmap, build_heatmap, build_keypoint_map, detect_viewpoints,
                              extract_viewport, extract_viewports, random_viewpoints, read_viewpoints_csv,
                              select_viewpoints, uniform_viewpoints, write_viewpoints_csv)


def haversine_deg(lon1, lat1, lon2, lat2):
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp, dl = p2 - p1, math.radians(lon2 - lon1)
    h = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return math.degrees(2 * math.asin(min(1.0, math.sqrt(h))))


def greedy_oracle(grid, n, d_th):
    """Plain transcription of the greedy rule: scan every cell by heat."""
    h, w = grid.shape
    cells = sorted(((-grid[y, x], y * w + x, y, x) for y in range(h) for x in range(w) if grid[y, x] > 0))
    chosen = []
    for _, _, y, x in cells:
        lon = (x + 0.5) / w * 360.0 - 180.0
        lat = 90.0 - (y + 0.5) / h * 180.0
        if all(haversine_deg(lon, lat, c[0], c[1]) > d_th for c in chosen):
            chosen.append((lon, lat))
            if len(chosen) == n:
                break
    return chosen


class TestSelection:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(2024)
        for i in range(100):
            grid = rng.random((64, 128))
            if i % 2:
                grid[rng.random(grid.shape) < 0.9] = 0.0
            n = (1, 5, 20)[i % 3]
            d_th = (10.0, 30.0, 60.0)[(i // 3) % 3]
            result = select_viewpoints(Heatmap(grid), DetectorConfig(n_viewpoints=n, d_th=d_th))
            expected = greedy_oracle(grid, n, d_th)
            assert len(result) == len(expected)
            lons, lats = result.lonlat()
            for (elon, elat), lon, lat in zip(expected, lons, lats):
                assert SphericalCoord(elon, elat).lon == pytest.approx(lon, abs=1e-9)
                assert elat == pytest.approx(lat, abs=1e-9)

    def test_pairwise_separation(self, rng):
        result = select_viewpoints(Heatmap(rng.random((64, 128))), DetectorConfig(n_viewpoints=20, d_th=30.0))
        for i, a in enumerate(result.points):
            for b in result.points[i + 1:]:
                assert angular_dist(a, b) > 30.0

    def test_empty_heatmap(self):
        result = select_viewpoints(Heatmap(np.zeros((32, 64))), DetectorConfig(n_viewpoints=5))
        assert len(result) == 0
        assert not result.complete

    def test_single_hot_cell_is_partial(self):
        grid = np.zeros((32, 64))
        grid[10, 20] = 1.0
        result = select_viewpoints(Heatmap(grid), DetectorConfig(n_viewpoints=3))
        assert len(result) == 1
        assert result.requested == 3
        assert result.responses == [1.0]

    def test_ties_resolved_in_row_major_order(self):
        grid = np.zeros((32, 64))
        grid[5, 40] = grid[5, 10] = grid[20, 3] = 1.0
        result = select_viewpoints(Heatmap(grid), DetectorConfig(n_viewpoints=1))
        lons, lats = result.lonlat()
        assert lons[0] == pytest.approx((10 + 0.5) / 64 * 360 - 180)
        assert lats[0] == pytest.approx(90 - (5 + 0.5) / 32 * 180)


class TestHeatmap:
    @pytest.mark.parametrize('grid', [-np.ones((4, 8)), np.full((4, 8), np.nan), np.ones(8)])
    def test_rejects_invalid_grid(self, grid):
        with pytest.raises(ValueError):
            Heatmap(grid)

    def test_keypoint_map_collects_responses(self, reference):
        cfg = DetectorConfig()
        keypoint_map = build_keypoint_map(reference, cfg)
        assert keypoint_map.pad > 0
        assert keypoint_map.grid.shape[1] == reference.shape[1] + 2 * keypoint_map.pad
        assert keypoint_map.grid.sum() > 0

    def test_heatmap_is_unpadded_and_nonnegative(self, reference):
        cfg = DetectorConfig()
        heatmap = build_heatmap(build_keypoint_map(reference, cfg), cfg)
        assert heatmap.pad == 0
        assert heatmap.grid.shape == reference.shape[:2]
        assert heatmap.grid.min() >= 0

    def test_constant_image_has_no_viewpoints(self):
        erp = np.full((64, 128, 3), 128, np.uint8)
        viewpoints, heatmap = detect_viewpoints(erp, DetectorConfig(n_viewpoints=4))
        assert len(viewpoints) == 0
        assert heatmap.grid.max() == 0

    def test_detects_requested_count(self, reference):
        viewpoints, _ = detect_viewpoints(reference, DetectorConfig(n_viewpoints=6, d_th=20.0))
        assert len(viewpoints) == 6
        assert viewpoints.complete


class TestBaselines:
    @pytest.mark.parametrize('n', [1, 5, 20])
    def test_uniform_count(self, n):
        viewpoints = uniform_viewpoints(n)
        assert len(viewpoints) == n
        assert viewpoints.complete

    def test_uniform_equator_band_is_even(self):
        lons, lats = uniform_viewpoints(20).lonlat()
        equator = np.sort(lons[lats == 0.0])
        assert_allclose(np.diff(equator), 360.0 / len(equator))

    def test_random_is_seeded(self):
        a, b = random_viewpoints(10, seed=4), random_viewpoints(10, seed=4)
        assert a.points == b.points
        assert a.points != random_viewpoints(10, seed=5).points

    @pytest.mark.parametrize('sampling', ['uniform', 'random'])
    def test_strategies_skip_the_heatmap(self, reference, sampling):
        viewpoints, heatmap = detect_viewpoints(reference, DetectorConfig(n_viewpoints=7, sampling=sampling))
        assert heatmap is None
        assert len(viewpoints) == 7

    def test_unknown_strategy(self):
        with pytest.raises(ValueError):
            DetectorConfig(sampling='saliency')


class TestViewports:
    def test_constant_erp_gives_constant_viewport(self):
        erp = np.full((64, 128, 3), 77, np.uint8)
        view = extract_viewport(erp, ViewportSpec(SphericalCoord(20.0, 60.0), fov=90.0, size=16))
        assert view.shape == (16, 16, 3)
        assert np.all(view == 77)

    def test_stack_shape(self, reference):
        views = extract_viewports(reference, uniform_viewpoints(4), fov=90.0, size=24)
        assert views.shape == (4, 24, 24, 3)
        assert views.dtype == np.uint8

    def test_center_pixel_samples_the_center(self):
        erp = np.zeros((64, 128))
        erp[:, 64:] = 1.0
        view = extract_viewport(erp, ViewportSpec(SphericalCoord(45.0, 0.0), fov=60.0, size=9))
        assert view[4, 4] == pytest.approx(1.0)

    def test_marker_at_origin_lands_at_center(self):
        erp = np.zeros((64, 128, 3), np.uint8)
        # (lon, lat) = (0, 0) is the corner shared by these four pixels
        erp[31:33, 63:65] = 255
        view = extract_viewport(erp, ViewportSpec(SphericalCoord(0.0, 0.0), fov=90.0, size=9))
        assert np.all(view[4, 4] == 255)
        assert np.all(view[0, 0] == 0)
        assert np.all(view[8, 8] == 0)

    @pytest.mark.parametrize('lon, lat', [(0.0, 0.0), (179.0, 10.0), (-120.0, 70.0), (35.0, -85.0)])
    def test_matches_per_pixel_ray_trace(self, reference, lon, lat):
        spec = ViewportSpec(SphericalCoord(lon, lat), fov=90.0, size=17)
        geometry = ErpGeometry.from_shape(reference.shape)
        view = extract_viewport(reference, spec)

        h, w = reference.shape[:2]
        img = reference.astype(np.float64)
        expected = np.zeros_like(img[:spec.size, :spec.size])
        for v in range(spec.size):
            for u in range(spec.size):
                x, y = sph_to_pix(viewport_ray_to_sph(u, v, spec), geometry)
                y = min(max(y, 0.0), h - 1.0)
                x0, y0 = math.floor(x), math.floor(y)
                fx, fy = x - x0, y - y0
                y1 = min(y0 + 1, h - 1)
                x0, x1 = x0 % w, (x0 + 1) % w
                top = (1 - fx) * img[y0, x0] + fx * img[y0, x1]
                bottom = (1 - fx) * img[y1, x0] + fx * img[y1, x1]
                expected[v, u] = (1 - fy) * top + fy * bottom

        diff = np.abs(view.astype(np.int16) - np.clip(np.rint(expected), 0, 255).astype(np.int16))
        assert diff.max() <= 1

    def test_csv_roundtrip(self, tmp_path):
        viewpoints = random_viewpoints(5, seed=1)
        path = str(tmp_path / 'vp.csv')
        write_viewpoints_csv(path, viewpoints)
        back = read_viewpoints_csv(path)
        for a, b in zip(viewpoints.points, back.points):
            assert a.lon == pytest.approx(b.lon, abs=1e-12)
            assert a.lat == pytest.approx(b.lat, abs=1e-12)

    def test_csv_missing_column(self, tmp_path):
        path = tmp_path / 'vp.csv'
        path.write_text('index,lon\n0,1.0\n')
        with pytest.raises(DataError):
            read_viewpoints_csv(str(path))
