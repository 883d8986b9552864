from .base import BaseDistortion

from scipy.fft import dctn, idctn
import numpy as np

# IJG reference luminance quantization table
JPEG_LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


def quantization_table(quality: int) -> np.ndarray:
    """IJG scaling of the luminance table for a quality in 1..100."""
    quality = int(np.clip(quality, 1, 100))
    scale = 5000 / quality if quality < 50 else 200 - 2 * quality
    return np.clip(np.floor((JPEG_LUMA_TABLE * scale + 50) / 100), 1, 255)


class BlockDCTCompression(BaseDistortion):
    def apply(self, img, level, rng=None):
        """JPEG-like coding: 8x8 block DCT, quantization, inverse DCT, per channel."""
        table = quantization_table(self.intensity(level))
        h, w = img.shape[:2]
        ph, pw = (-h) % 8, (-w) % 8
        padded = np.pad(img.astype(np.float64) - 128.0, ((0, ph), (0, pw), (0, 0)), mode='edge')
        H, W, C = padded.shape

        # (rows of blocks, 8, cols of blocks, 8, C) -> blocks on the last two axes
        blocks = padded.reshape(H // 8, 8, W // 8, 8, C).transpose(0, 2, 4, 1, 3)
        coeffs = dctn(blocks, axes=(-2, -1), norm='ortho')
        coeffs = np.round(coeffs / table) * table
        restored = idctn(coeffs, axes=(-2, -1), norm='ortho')
        restored = restored.transpose(0, 3, 1, 4, 2).reshape(H, W, C)[:h, :w] + 128.0
        return np.clip(np.rint(restored), 0, 255).astype(np.uint8)
