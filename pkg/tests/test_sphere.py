import numpy as np
import pytest

from numpy.testing import assert_allclose

from omniqa.sphere import (ErpGeometry, SphericalCoord, ViewportSpec, angular_dist, angular_dist_deg,
                           lonlat_to_unit, pix_to_sph, sph_to_pix, unit_to_lonlat, viewport_ray_to_sph,
                           wrap_lon)
from omniqa.utils.errors import GeometryError


class TestCoordinates:
    def test_longitude_is_wrapped(self):
        assert SphericalCoord(190.0, 0.0).lon == pytest.approx(-170.0)
        assert SphericalCoord(180.0, 0.0).lon == pytest.approx(-180.0)
        assert_allclose(wrap_lon([-540.0, 359.0]), [-180.0, -1.0])

    @pytest.mark.parametrize('lat', [90.5, -91.0, float('nan')])
    def test_bad_latitude(self, lat):
        with pytest.raises(GeometryError):
            SphericalCoord(0.0, lat)

    def test_erp_must_be_two_to_one(self):
        with pytest.raises(GeometryError):
            ErpGeometry(width=100, height=100)

    def test_unit_roundtrip(self, rng):
        lon = rng.uniform(-180, 180, 200)
        lat = rng.uniform(-89, 89, 200)
        back_lon, back_lat = unit_to_lonlat(lonlat_to_unit(lon, lat))
        assert_allclose(back_lat, lat, atol=1e-9)
        assert_allclose(back_lon, lon, atol=1e-9)


class TestPixelMapping:
    def test_top_left_pixel_center(self):
        geometry = ErpGeometry(1024, 512)
        p = pix_to_sph(0.0, 0.0, geometry)
        assert p.lon == pytest.approx(-180.0 + 360.0 / 2048)
        assert p.lat == pytest.approx(90.0 - 180.0 / 1024)

    def test_roundtrip(self, rng):
        geometry = ErpGeometry(256, 128)
        for x, y in zip(rng.uniform(0, 255.49, 500), rng.uniform(0, 127.99, 500)):
            back = sph_to_pix(pix_to_sph(x, y, geometry), geometry)
            assert abs(back[0] - x) < 1e-9
            assert abs(back[1] - y) < 1e-9

    @pytest.mark.parametrize('x, y', [(-0.1, 0.0), (256.0, 0.0), (0.0, 128.0)])
    def test_out_of_raster(self, x, y):
        with pytest.raises(GeometryError):
            pix_to_sph(x, y, ErpGeometry(256, 128))


class TestAngularDistance:
    def test_trivial_cases(self):
        a = SphericalCoord(30.0, 20.0)
        assert abs(angular_dist(a, a)) < 1e-9
        assert abs(angular_dist(SphericalCoord(0, 0), SphericalCoord(90, 0)) - 90.0) < 1e-9
        assert abs(angular_dist(SphericalCoord(0, 0), SphericalCoord(0, 90)) - 90.0) < 1e-9
        assert abs(angular_dist(SphericalCoord(0, 0), SphericalCoord(-180, 0)) - 180.0) < 1e-9
        assert abs(angular_dist(SphericalCoord(10, 90), SphericalCoord(77, -90)) - 180.0) < 1e-9

    def test_symmetric_and_seam_aware(self, rng):
        lon1, lat1 = rng.uniform(-180, 180, 100), rng.uniform(-90, 90, 100)
        lon2, lat2 = rng.uniform(-180, 180, 100), rng.uniform(-90, 90, 100)
        d = angular_dist_deg(lon1, lat1, lon2, lat2)
        assert_allclose(d, angular_dist_deg(lon2, lat2, lon1, lat1), atol=1e-12)
        assert np.all((d >= 0) & (d <= 180))
        assert angular_dist(SphericalCoord(179.0, 0), SphericalCoord(-179.0, 0)) == pytest.approx(2.0)

    def test_matches_dot_product(self, rng):
        lon1, lat1 = rng.uniform(-180, 180, 100), rng.uniform(-80, 80, 100)
        lon2, lat2 = rng.uniform(-180, 180, 100), rng.uniform(-80, 80, 100)
        dot = np.sum(lonlat_to_unit(lon1, lat1) * lonlat_to_unit(lon2, lat2), axis=-1)
        assert_allclose(angular_dist_deg(lon1, lat1, lon2, lat2),
                        np.degrees(np.arccos(np.clip(dot, -1, 1))), atol=1e-6)


class TestViewportRays:
    def test_center_pixel_looks_at_center(self, rng):
        for lon, lat in zip(rng.uniform(-180, 180, 1000), rng.uniform(-90, 90, 1000)):
            spec = ViewportSpec(SphericalCoord(lon, lat), fov=90.0, size=65)
            ray = viewport_ray_to_sph(32, 32, spec)
            assert angular_dist(ray, spec.center) < 1e-6

    def test_edge_pixels_span_the_fov(self):
        spec = ViewportSpec(SphericalCoord(0.0, 0.0), fov=90.0, size=256)
        left = viewport_ray_to_sph(-0.5, 127.5, spec)
        right = viewport_ray_to_sph(255.5, 127.5, spec)
        assert left.lon == pytest.approx(-45.0)
        assert right.lon == pytest.approx(45.0)

    def test_north_is_up(self):
        spec = ViewportSpec(SphericalCoord(40.0, 10.0), fov=90.0, size=64)
        top = viewport_ray_to_sph(31.5, 0, spec)
        bottom = viewport_ray_to_sph(31.5, 63, spec)
        assert top.lat > 10.0 > bottom.lat

    @pytest.mark.parametrize('fov', [0.0, 180.0])
    def test_bad_fov(self, fov):
        with pytest.raises(GeometryError):
            ViewportSpec(SphericalCoord(0, 0), fov=fov)
