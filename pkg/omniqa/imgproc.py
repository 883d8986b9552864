"""
Raster primitives for equirectangular images.

Gray images are 2D float arrays (row-major, values in [0, 1]); RGB images
are (H, W, 3) uint8 arrays. Horizontal borders wrap around the ERP seam and
vertical borders clamp, mirroring the topology of the sphere.
"""
from dataclasses import dataclass
from typing import List, Sequence

from scipy import ndimage, signal
from skimage.transform import downscale_local_mean
from PIL import Image

import numpy as np
import cv2

from omniqa.utils.errors import DataError


@dataclass(frozen=True)
class Keypoint:
    """
    Blob keypoint.

    :param x: Column (continuous pixels).
    :param y: Row (continuous pixels).
    :param response: Scale-normalized determinant-of-Hessian response, >= 0.
    :param scale: Gaussian scale (sigma, pixels) at which the blob peaked.
    """
    x: float
    y: float
    response: float
    scale: float = 0.0


def load_rgb(path: str) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.array(img.convert('RGB'))
    except (OSError, ValueError) as err:
        raise DataError(f"cannot read image {path}: {err}") from err


def save_png(path: str, img: np.ndarray):
    Image.fromarray(np.ascontiguousarray(img)).save(path)


def resize_rgb(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resize an RGB raster; area interpolation when shrinking."""
    if img.shape[:2] == (height, width):
        return img
    shrink = img.shape[0] > height
    interp = cv2.INTER_AREA if shrink else cv2.INTER_LINEAR
    return cv2.resize(img, (width, height), interpolation=interp)


def to_gray(rgb: np.ndarray) -> np.ndarray:
    """
    ITU-R BT.601 luma of an 8-bit RGB raster, scaled to [0, 1].

    :param rgb: (H, W, 3) uint8 array.
    """
    rgb = np.asarray(rgb)
    if rgb.size == 0:
        raise DataError("cannot convert an empty image to gray")
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise DataError(f"expected an (H, W, 3) raster, got shape {rgb.shape}")
    return cv2.cvtColor(rgb.astype(np.float32) / 255.0, cv2.COLOR_RGB2GRAY)


def downsample_factor(height: int, width: int) -> int:
    return max(1, int(round(min(height, width) / 256.0)))


def downsample_auto(img: np.ndarray) -> np.ndarray:
    """
    Box-filter downsampling by f = max(1, round(min(H, W) / 256)).
    Trailing rows/columns that do not fill a whole block are dropped.
    """
    f = downsample_factor(*img.shape[:2])
    if f == 1:
        return img
    h, w = (img.shape[0] // f) * f, (img.shape[1] // f) * f
    out = downscale_local_mean(img[:h, :w], (f, f))
    return out.astype(img.dtype, copy=False)


def pad_wrap(img: np.ndarray, frac: float) -> np.ndarray:
    """
    Append ceil(frac * width) columns on each side, wrapped from the
    opposite side of the raster.
    """
    if not 0.0 <= frac <= 0.5:
        raise ValueError(f"padding fraction {frac} outside [0, 0.5]")
    pad = pad_width(img.shape[1], frac)
    if pad == 0:
        return img.copy()
    widths = [(0, 0), (pad, pad)] + [(0, 0)] * (img.ndim - 2)
    return np.pad(img, widths, mode='wrap')


def pad_width(width: int, frac: float) -> int:
    return int(np.ceil(frac * width - 1e-12))


def strip_pad(img: np.ndarray, pad: int) -> np.ndarray:
    """Remove `pad` columns from each side (inverse of `pad_wrap`)."""
    if pad == 0:
        return img
    return img[:, pad:img.shape[1] - pad]


def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    """
    (2r+1) x (2r+1) isotropic Gaussian normalized to unit sum.

    :param sigma: Standard deviation in pixels, > 0.
    :param radius: Half-size of the kernel, >= 1.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    d = np.arange(-radius, radius + 1, dtype=np.float64)
    dx, dy = np.meshgrid(d, d)
    kernel = np.exp(-(dx ** 2 + dy ** 2) / (2.0 * sigma ** 2))
    return kernel / kernel.sum()


def convolve2d(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """
    Same-size 2D convolution with wrap-x / clamp-y borders.

    :param img: 2D raster.
    :param kernel: Odd-sized 2D kernel.
    """
    kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"kernel must be odd-sized, got {kernel.shape}")
    ry, rx = kh // 2, kw // 2
    padded = np.pad(np.asarray(img, dtype=np.float64), ((ry, ry), (0, 0)), mode='edge')
    padded = np.pad(padded, ((0, 0), (rx, rx)), mode='wrap')
    out = signal.convolve(padded, kernel, mode='valid')
    dtype = img.dtype if np.issubdtype(img.dtype, np.floating) else np.float64
    return out.astype(dtype, copy=False)


def hessian_determinant(img: np.ndarray, sigma: float) -> np.ndarray:
    """
    Scale-normalized sigma^4 * (Lxx * Lyy - (0.9 * Lxy)^2) with exact
    Gaussian derivatives.
    """
    img = np.asarray(img, dtype=np.float64)
    mode = ('nearest', 'wrap')
    lxx = ndimage.gaussian_filter(img, sigma, order=(0, 2), mode=mode)
    lyy = ndimage.gaussian_filter(img, sigma, order=(2, 0), mode=mode)
    lxy = ndimage.gaussian_filter(img, sigma, order=(1, 1), mode=mode)
    return sigma ** 4 * (lxx * lyy - (0.9 * lxy) ** 2)


def det_hessian_keypoints(img: np.ndarray,
                          scales: Sequence[float] = (1.2, 2.4, 4.8),
                          threshold: float = 1e-4) -> List[Keypoint]:
    """
    Multi-scale determinant-of-Hessian blob detection.

    A keypoint is a local maximum of the response over its 3x3 spatial
    neighbourhood at the same and adjacent scales, above `threshold`.
    When one position peaks at several scales only the strongest is kept.

    :param img: 2D gray raster, at least 16x16.
    :param scales: Gaussian sigmas in pixels.
    :param threshold: Minimum response.
    :return: Keypoints by descending response, ties in row-major order.
    """
    if img.ndim != 2 or img.shape[0] < 16 or img.shape[1] < 16:
        raise ValueError(f"keypoint detection needs a 2D image of at least 16x16, got {img.shape}")

    stack = np.stack([hessian_determinant(img, s) for s in scales])
    peaks = ndimage.maximum_filter(stack, size=(3, 3, 3), mode=('nearest', 'nearest', 'wrap'))
    mask = (stack == peaks) & (stack > threshold)

    best = {}
    for s_idx, y, x in zip(*np.nonzero(mask)):
        response = float(stack[s_idx, y, x])
        if (y, x) not in best or response > best[(y, x)][0]:
            best[(y, x)] = (response, scales[s_idx])

    if not best:
        return []
    ys = np.array([k[0] for k in best])
    xs = np.array([k[1] for k in best])
    responses = np.array([v[0] for v in best.values()])
    order = np.lexsort((xs, ys, -responses))
    return [Keypoint(x=float(xs[i]), y=float(ys[i]),
                     response=float(responses[i]),
                     scale=float(best[(ys[i], xs[i])][1])) for i in order]


class HessianDetector:
    def __init__(self,
                 scales: Sequence[float] = (1.2, 2.4, 4.8),
                 threshold: float = 1e-4):
        """
        Keypoint detector used by the viewpoint detector. Any object with a
        `detect(gray) -> List[Keypoint]` method can replace it (e.g. SURF).

        :param scales: Gaussian sigmas in pixels.
        :param threshold: Minimum scale-normalized response on [0, 1] images.
        """
        self.scales = tuple(scales)
        self.threshold = threshold

    def detect(self, gray: np.ndarray) -> List[Keypoint]:
        return det_hessian_keypoints(gray, self.scales, self.threshold)


def bilinear_sample(img: np.ndarray, x, y) -> np.ndarray:
    """
    Bilinear interpolation at continuous positions, wrapping x around the
    ERP seam and clamping y.

    :param img: (H, W) or (H, W, C) raster.
    :param x: Columns (scalar or array).
    :param y: Rows, same shape as `x`.
    :return: Samples as float64, shape of `x` (plus C for color rasters).
    """
    img = np.asarray(img)
    h, w = img.shape[:2]
    x = np.mod(np.asarray(x, dtype=np.float64), w)
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, h - 1)
    # One wrapped column on the right covers x in [w - 1, w).
    widths = [(0, 0), (0, 1)] + [(0, 0)] * (img.ndim - 2)
    padded = np.pad(img.astype(np.float64), widths, mode='wrap')
    coords = np.stack([y.ravel(), x.ravel()])

    if img.ndim == 2:
        out = ndimage.map_coordinates(padded, coords, order=1, mode='nearest')
        return out.reshape(x.shape)
    channels = [ndimage.map_coordinates(padded[..., c], coords, order=1, mode='nearest')
                for c in range(img.shape[2])]
    return np.stack(channels, axis=-1).reshape(x.shape + (img.shape[2],))
