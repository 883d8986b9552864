"""
Equirectangular (ERP) geometry on the unit sphere.

Angles are degrees at every public boundary and radians internally.
Pixel coordinates follow the pixel-center convention: the center of the
top-left pixel is (0, 0) and its area spans [-0.5, 0.5) in both axes.
"""
from dataclasses import dataclass

import numpy as np

from omniqa.utils.errors import GeometryError


def wrap_lon(lon):
    """Normalize longitudes (scalar or array) into [-180, 180)."""
    return np.mod(np.asarray(lon, dtype=np.float64) + 180.0, 360.0) - 180.0


@dataclass(frozen=True)
class SphericalCoord:
    """
    A direction on the unit sphere.

    :param lon: Longitude in degrees, normalized into [-180, 180).
    :param lat: Latitude in degrees, must lie in [-90, 90].
    """
    lon: float
    lat: float

    def __post_init__(self):
        if not np.isfinite(self.lon) or not np.isfinite(self.lat):
            raise GeometryError(f"non-finite coordinate ({self.lon}, {self.lat})")
        if not -90.0 <= self.lat <= 90.0:
            raise GeometryError(f"latitude {self.lat} outside [-90, 90]")
        object.__setattr__(self, 'lon', float(wrap_lon(self.lon)))
        object.__setattr__(self, 'lat', float(self.lat))

    def to_unit(self):
        return lonlat_to_unit(self.lon, self.lat)


@dataclass(frozen=True)
class ErpGeometry:
    """
    Raster that indexes the sphere with an equirectangular projection.

    :param width: Width in pixels, always twice the height.
    :param height: Height in pixels.
    """
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise GeometryError(f"empty raster {self.width}x{self.height}")
        if self.width != 2 * self.height:
            raise GeometryError(f"ERP raster must be 2:1, got {self.width}x{self.height}")

    @classmethod
    def from_shape(cls, shape):
        return cls(width=int(shape[1]), height=int(shape[0]))


@dataclass(frozen=True)
class ViewportSpec:
    """
    A square rectilinear viewport.

    :param center: Viewing direction of the optical axis.
    :param fov: Field of view in degrees, in (0, 180).
    :param size: Side of the viewport in pixels.
    """
    center: SphericalCoord
    fov: float = 90.0
    size: int = 256

    def __post_init__(self):
        if not 0.0 < self.fov < 180.0:
            raise GeometryError(f"field of view {self.fov} outside (0, 180)")
        if self.size <= 0:
            raise GeometryError(f"viewport size must be positive, got {self.size}")

    @property
    def focal_length(self):
        return self.size / (2.0 * np.tan(np.radians(self.fov) / 2.0))


def lonlat_to_unit(lon, lat):
    """Unit vectors (..., 3) for longitudes/latitudes in degrees."""
    lon = np.radians(lon)
    lat = np.radians(lat)
    cos_lat = np.cos(lat)
    return np.stack([cos_lat * np.cos(lon), cos_lat * np.sin(lon), np.sin(lat)], axis=-1)


def unit_to_lonlat(xyz):
    """Inverse of `lonlat_to_unit`; accepts non-normalized vectors."""
    xyz = np.asarray(xyz, dtype=np.float64)
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    lon = np.degrees(np.arctan2(y, x))
    lat = np.degrees(np.arctan2(z, np.hypot(x, y)))
    return wrap_lon(lon), lat


def pix_to_lonlat(x, y, geometry: ErpGeometry):
    """Vectorized `pix_to_sph` without range checks."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    lon = (x + 0.5) / geometry.width * 360.0 - 180.0
    lat = 90.0 - (y + 0.5) / geometry.height * 180.0
    return wrap_lon(lon), lat


def lonlat_to_pix(lon, lat, geometry: ErpGeometry):
    """Vectorized `sph_to_pix`."""
    lon = np.asarray(lon, dtype=np.float64)
    lat = np.asarray(lat, dtype=np.float64)
    x = (lon + 180.0) / 360.0 * geometry.width - 0.5
    y = (90.0 - lat) / 180.0 * geometry.height - 0.5
    return x, y


def pix_to_sph(x: float, y: float, geometry: ErpGeometry) -> SphericalCoord:
    """
    Map a continuous pixel position of the ERP raster to the sphere.

    :param x: Column, 0 <= x < width.
    :param y: Row, 0 <= y < height.
    :param geometry: ERP raster.
    """
    if not (0.0 <= x < geometry.width and 0.0 <= y < geometry.height):
        raise GeometryError(f"pixel ({x}, {y}) outside {geometry.width}x{geometry.height} raster")
    lon, lat = pix_to_lonlat(x, y, geometry)
    return SphericalCoord(float(lon), float(lat))


def sph_to_pix(point: SphericalCoord, geometry: ErpGeometry):
    """Inverse of `pix_to_sph` on the continuous domain, returns (x, y)."""
    x, y = lonlat_to_pix(point.lon, point.lat, geometry)
    return float(x), float(y)


def angular_dist_deg(lon1, lat1, lon2, lat2):
    """
    Great-circle central angle in degrees (vectorized, broadcasting).
    Uses the arctangent (Vincenty) form, stable for tiny and antipodal angles.
    """
    phi1, phi2 = np.radians(lat1), np.radians(lat2)
    dlon = np.radians(np.asarray(lon2, dtype=np.float64) - np.asarray(lon1, dtype=np.float64))
    sin1, cos1 = np.sin(phi1), np.cos(phi1)
    sin2, cos2 = np.sin(phi2), np.cos(phi2)
    num = np.hypot(cos2 * np.sin(dlon), cos1 * sin2 - sin1 * cos2 * np.cos(dlon))
    den = sin1 * sin2 + cos1 * cos2 * np.cos(dlon)
    return np.degrees(np.arctan2(num, den))


def angular_dist(a: SphericalCoord, b: SphericalCoord) -> float:
    return float(angular_dist_deg(a.lon, a.lat, b.lon, b.lat))


def tangent_basis(center: SphericalCoord):
    """
    Forward, right (east) and up (north) unit vectors at `center`.
    At the poles the north direction is taken along the lon-0 meridian.
    """
    lon = 0.0 if abs(center.lat) == 90.0 else center.lon
    lam, phi = np.radians(lon), np.radians(center.lat)
    forward = np.array([np.cos(phi) * np.cos(lam), np.cos(phi) * np.sin(lam), np.sin(phi)])
    right = np.array([-np.sin(lam), np.cos(lam), 0.0])
    up = np.array([-np.sin(phi) * np.cos(lam), -np.sin(phi) * np.sin(lam), np.cos(phi)])
    return forward, right, up


def viewport_rays_to_lonlat(u, v, spec: ViewportSpec):
    """
    Vectorized gnomonic mapping of viewport pixels to (lon, lat) in degrees.
    Pixel (u, v) is column u, row v; row 0 is the top (north) edge.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    f = spec.focal_length
    half = spec.size / 2.0
    px = (u + 0.5 - half) / f
    py = (half - (v + 0.5)) / f
    forward, right, up = tangent_basis(spec.center)
    rays = forward + px[..., None] * right + py[..., None] * up
    return unit_to_lonlat(rays)


def viewport_ray_to_sph(u: float, v: float, spec: ViewportSpec) -> SphericalCoord:
    """
    Direction seen by viewport pixel (u, v) through a pinhole camera whose
    optical axis points at `spec.center` with local north as up.

    :param u: Column in [0, size).
    :param v: Row in [0, size).
    :param spec: Viewport description.
    """
    lon, lat = viewport_rays_to_lonlat(u, v, spec)
    return SphericalCoord(float(lon), float(np.clip(lat, -90.0, 90.0)))
