"""
Viewpoint detector: keypoint map, Gaussian heatmap, greedy viewpoint
selection on the sphere and rectilinear viewport extraction.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import pandas as pd
import numpy as np
import logging

from omniqa.imgproc import (HessianDetector, bilinear_sample, convolve2d,
                            downsample_auto, gaussian_kernel, pad_wrap,
                            pad_width, strip_pad, to_gray)
from omniqa.sphere import (ErpGeometry, SphericalCoord, ViewportSpec,
                           angular_dist_deg, lonlat_to_pix, pix_to_lonlat,
                           viewport_rays_to_lonlat)
from omniqa.utils.errors import DataError

logger = logging.getLogger(__name__)

SAMPLING_STRATEGIES = ('detector', 'uniform', 'random')
UNIFORM_BANDS = (0.0, 36.0, -36.0, 72.0, -72.0)


@dataclass
class DetectorConfig:
    """
    :param n_viewpoints: Number of viewpoints N to select.
    :param d_th: Minimum angular distance (degrees) between selected viewpoints.
    :param pad_frac: Wrap padding on each side, as a fraction of the width.
    :param heat_sigma: Heatmap Gaussian sigma in pixels of a raster
                       `heat_sigma_width` pixels wide; scaled to the working width.
    :param heat_sigma_width: Reference width for `heat_sigma`.
    :param scales: Detector Gaussian scales in pixels.
    :param threshold: Detector response threshold.
    :param sampling: One of 'detector', 'uniform', 'random'.
    :param sampling_seed: Seed of the 'random' strategy.
    """
    n_viewpoints: int = 20
    d_th: float = 30.0
    pad_frac: float = 0.125
    heat_sigma: float = 8.0
    heat_sigma_width: int = 512
    scales: Tuple[float, ...] = (1.2, 2.4, 4.8)
    threshold: float = 1e-4
    sampling: str = 'detector'
    sampling_seed: int = 0

    def __post_init__(self):
        self.scales = tuple(float(s) for s in self.scales)
        if self.n_viewpoints < 1:
            raise ValueError(f"n_viewpoints must be >= 1, got {self.n_viewpoints}")
        if not 0.0 < self.d_th < 180.0:
            raise ValueError(f"d_th must lie in (0, 180), got {self.d_th}")
        if self.sampling not in SAMPLING_STRATEGIES:
            raise ValueError(f"unknown sampling strategy {self.sampling!r}, choose among {SAMPLING_STRATEGIES}")


@dataclass
class Heatmap:
    """
    Non-negative attention raster.

    :param grid: 2D float array aligned with the working ERP raster.
    :param pad: Number of wrap-padding columns still present on each side.
    """
    grid: np.ndarray
    pad: int = 0

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.grid.ndim != 2:
            raise ValueError(f"heatmap must be 2D, got shape {self.grid.shape}")
        if not np.all(np.isfinite(self.grid)):
            raise ValueError("heatmap contains non-finite values")
        if np.any(self.grid < 0):
            raise ValueError("heatmap contains negative values")


@dataclass
class ViewpointSet:
    """
    Selected viewing directions, in selection order.

    :param points: Viewpoints on the sphere.
    :param responses: Heatmap value at each accepted viewpoint.
    :param requested: Number of viewpoints that were asked for.
    """
    points: List[SphericalCoord]
    responses: List[float] = field(default_factory=list)
    requested: int = 0

    def __len__(self):
        return len(self.points)

    @property
    def complete(self):
        return len(self.points) >= self.requested

    def lonlat(self):
        return (np.array([p.lon for p in self.points], dtype=np.float64),
                np.array([p.lat for p in self.points], dtype=np.float64))


def build_keypoint_map(erp: np.ndarray, cfg: DetectorConfig, detector=None) -> Heatmap:
    """
    Keypoint map I_s on the padded working raster: each keypoint adds its
    response to the nearest pixel of an otherwise empty raster.

    :param erp: Gray ERP in [0, 1] (RGB uint8 is converted).
    :param cfg: Detector configuration.
    :param detector: Object with `detect(gray)`; defaults to the Hessian detector.
    """
    gray = to_gray(erp) if erp.ndim == 3 else np.asarray(erp, dtype=np.float32)
    gray = downsample_auto(gray)
    pad = pad_width(gray.shape[1], cfg.pad_frac)
    padded = pad_wrap(gray, cfg.pad_frac)

    detector = detector or HessianDetector(cfg.scales, cfg.threshold)
    keypoints = detector.detect(padded)
    logger.debug("%d keypoints on a %dx%d padded raster", len(keypoints), *padded.shape)

    raster = np.zeros(padded.shape, dtype=np.float64)
    if keypoints:
        xs = np.clip(np.rint([k.x for k in keypoints]).astype(int), 0, padded.shape[1] - 1)
        ys = np.clip(np.rint([k.y for k in keypoints]).astype(int), 0, padded.shape[0] - 1)
        np.add.at(raster, (ys, xs), [k.response for k in keypoints])
    return Heatmap(grid=raster, pad=pad)


def build_heatmap(keypoint_map: Heatmap, cfg: DetectorConfig) -> Heatmap:
    """
    Blur the keypoint map with a Gaussian of radius 3 sigma and remove the
    padding columns.
    """
    width = keypoint_map.grid.shape[1] - 2 * keypoint_map.pad
    sigma = cfg.heat_sigma * width / cfg.heat_sigma_width
    kernel = gaussian_kernel(sigma, max(1, int(np.ceil(3.0 * sigma))))
    blurred = convolve2d(keypoint_map.grid, kernel)
    # Rounding noise of the convolution must not create negative cells.
    blurred = np.clip(blurred, 0.0, None)
    return Heatmap(grid=strip_pad(blurred, keypoint_map.pad), pad=0)


def select_viewpoints(heatmap: Heatmap, cfg: DetectorConfig) -> ViewpointSet:
    """
    Greedy viewpoint selection: visit cells by decreasing heat (ties in
    row-major order), accept a cell when it is farther than d_th from every
    accepted viewpoint, stop at N viewpoints or when the heatmap is
    exhausted. A partial set is returned with `complete == False`.

    Rejected cells never become admissible later, so every accepted point
    removes its d_th neighbourhood from the candidate list at once.
    """
    assert heatmap.pad == 0, "padding must be removed before viewpoint selection"
    grid = heatmap.grid
    geometry = ErpGeometry.from_shape(grid.shape)

    flat = grid.ravel()
    candidates = np.flatnonzero(flat > 0)
    order = candidates[np.argsort(-flat[candidates], kind='stable')]
    ys, xs = np.divmod(order, grid.shape[1])
    lons, lats = pix_to_lonlat(xs, ys, geometry)

    alive = np.ones(len(order), dtype=bool)
    points, responses = [], []
    cursor = 0
    while len(points) < cfg.n_viewpoints:
        remaining = np.flatnonzero(alive[cursor:])
        if remaining.size == 0:
            break
        i = cursor + remaining[0]
        points.append(SphericalCoord(float(lons[i]), float(lats[i])))
        responses.append(float(flat[order[i]]))
        alive &= angular_dist_deg(lons[i], lats[i], lons, lats) > cfg.d_th
        cursor = i + 1

    result = ViewpointSet(points=points, responses=responses, requested=cfg.n_viewpoints)
    if not result.complete:
        logger.warning("heatmap exhausted after %d of %d viewpoints", len(points), cfg.n_viewpoints)
    return result


def uniform_viewpoints(n: int) -> ViewpointSet:
    """
    Viewpoints equidistant along fixed latitude bands; each band receives
    a share of the n points proportional to cos(latitude).
    """
    weights = np.cos(np.radians(UNIFORM_BANDS))
    share = n * weights / weights.sum()
    counts = np.floor(share).astype(int)
    for i in np.argsort(-(share - counts), kind='stable')[:n - counts.sum()]:
        counts[i] += 1

    points = []
    for lat, count in zip(UNIFORM_BANDS, counts):
        for j in range(count):
            points.append(SphericalCoord(-180.0 + (j + 0.5) * 360.0 / count, lat))
    return ViewpointSet(points=points, responses=[0.0] * len(points), requested=n)


def random_viewpoints(n: int, seed: int = 0) -> ViewpointSet:
    """Directions drawn uniformly on the sphere."""
    rng = np.random.default_rng(seed)
    lons = rng.uniform(-180.0, 180.0, size=n)
    lats = np.degrees(np.arcsin(rng.uniform(-1.0, 1.0, size=n)))
    points = [SphericalCoord(float(lon), float(lat)) for lon, lat in zip(lons, lats)]
    return ViewpointSet(points=points, responses=[0.0] * n, requested=n)


def detect_viewpoints(erp: np.ndarray,
                      cfg: DetectorConfig,
                      detector=None) -> Tuple[ViewpointSet, Optional[Heatmap]]:
    """
    Full viewpoint detection on an RGB (or gray) ERP. The heatmap is None
    for the 'uniform' and 'random' strategies.
    """
    if cfg.sampling == 'uniform':
        return uniform_viewpoints(cfg.n_viewpoints), None
    if cfg.sampling == 'random':
        return random_viewpoints(cfg.n_viewpoints, cfg.sampling_seed), None
    heatmap = build_heatmap(build_keypoint_map(erp, cfg, detector), cfg)
    return select_viewpoints(heatmap, cfg), heatmap


def extract_viewport(erp: np.ndarray, spec: ViewportSpec) -> np.ndarray:
    """Gnomonic resampling of one viewport from an (H, W, C) or (H, W) ERP."""
    geometry = ErpGeometry.from_shape(erp.shape)
    v, u = np.mgrid[0:spec.size, 0:spec.size]
    lon, lat = viewport_rays_to_lonlat(u, v, spec)
    x, y = lonlat_to_pix(lon, lat, geometry)
    samples = bilinear_sample(erp, x, y)
    if erp.dtype == np.uint8:
        return np.clip(np.rint(samples), 0, 255).astype(np.uint8)
    return samples.astype(erp.dtype, copy=False)


def extract_viewports(erp: np.ndarray,
                      viewpoints: ViewpointSet,
                      fov: float = 90.0,
                      size: int = 256) -> np.ndarray:
    """
    Extract one square viewport per viewpoint.

    :param erp: RGB ERP, already resized to the working resolution.
    :param viewpoints: Viewport centers.
    :param fov: Field of view in degrees.
    :param size: Viewport side in pixels.
    :return: (N, size, size, C) array with the dtype of `erp`.
    """
    views = [extract_viewport(erp, ViewportSpec(center=p, fov=fov, size=size))
             for p in viewpoints.points]
    if not views:
        return np.zeros((0, size, size) + erp.shape[2:], dtype=erp.dtype)
    return np.stack(views)


def write_viewpoints_csv(path: str, viewpoints: ViewpointSet):
    lons, lats = viewpoints.lonlat()
    responses = viewpoints.responses or [0.0] * len(viewpoints)
    pd.DataFrame({'index': np.arange(len(viewpoints)),
                  'lon': lons, 'lat': lats,
                  'response': responses}).to_csv(path, index=False, float_format='%.17g')


def read_viewpoints_csv(path: str) -> ViewpointSet:
    try:
        df = pd.read_csv(path)
    except (OSError, pd.errors.ParserError) as err:
        raise DataError(f"cannot read viewpoints from {path}: {err}") from err
    missing = {'lon', 'lat'} - set(df.columns)
    if missing:
        raise DataError(f"{path}: missing column(s) {sorted(missing)}")
    df = df.sort_values('index') if 'index' in df.columns else df
    points = [SphericalCoord(float(lon), float(lat)) for lon, lat in zip(df['lon'], df['lat'])]
    responses = [float(r) for r in df['response']] if 'response' in df.columns else []
    return ViewpointSet(points=points, responses=responses, requested=len(points))
