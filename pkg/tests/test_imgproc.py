import numpy as np
import pytest

from numpy.testing import assert_allclose

from omniqa.imgproc import (HessianDetector, bilinear_sample, convolve2d, downsample_auto, gaussian_kernel,
                            load_rgb, pad_wrap, pad_width, save_png, strip_pad, to_gray)
from omniqa.utils.errors import DataError


def blob_image(h=64, w=128, centers=((32, 40),), sigma=3.0):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.zeros((h, w))
    for cy, cx in centers:
        img += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
    return img


class TestRaster:
    def test_gray_of_white_is_one(self):
        assert_allclose(to_gray(np.full((4, 8, 3), 255, np.uint8)), 1.0, atol=1e-6)

    def test_gray_rejects_empty(self):
        with pytest.raises(DataError):
            to_gray(np.zeros((0, 0, 3), np.uint8))

    def test_downsample_constant(self):
        img = np.full((600, 1200), 0.25)
        out = downsample_auto(img)
        assert out.shape == (300, 600)
        assert_allclose(out, 0.25)

    def test_small_image_untouched(self):
        img = np.zeros((128, 256))
        assert downsample_auto(img) is img

    def test_pad_wrap_and_strip(self, rng):
        img = rng.random((8, 16))
        padded = pad_wrap(img, 0.25)
        pad = pad_width(16, 0.25)
        assert padded.shape == (8, 16 + 2 * pad)
        assert_allclose(padded[:, :pad], img[:, -pad:])
        assert_allclose(padded[:, -pad:], img[:, :pad])
        assert_allclose(strip_pad(padded, pad), img)

    def test_png_roundtrip(self, tmp_path, rng):
        img = rng.integers(0, 256, size=(6, 12, 3), dtype=np.uint8)
        path = str(tmp_path / 'x.png')
        save_png(path, img)
        np.testing.assert_array_equal(load_rgb(path), img)

    def test_unreadable_image(self, tmp_path):
        path = tmp_path / 'broken.png'
        path.write_bytes(b'not a png')
        with pytest.raises(DataError):
            load_rgb(str(path))


class TestFiltering:
    def test_kernel_sums_to_one(self):
        kernel = gaussian_kernel(2.0, 5)
        assert kernel.shape == (11, 11)
        assert kernel.sum() == pytest.approx(1.0)

    def test_convolution_preserves_constant(self):
        out = convolve2d(np.full((10, 20), 3.0), gaussian_kernel(1.5, 3))
        assert_allclose(out, 3.0)

    def test_convolution_wraps_horizontally(self):
        img = np.zeros((9, 20))
        img[4, 0] = 1.0
        out = convolve2d(img, gaussian_kernel(1.0, 2))
        assert out[4, 19] > 0
        assert out[4, 19] == pytest.approx(out[4, 1])

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            convolve2d(np.zeros((5, 5)), np.ones((2, 2)))


class TestDetector:
    def test_constant_image_has_no_keypoints(self):
        assert HessianDetector().detect(np.full((64, 128), 0.5)) == []

    def test_finds_a_blob(self):
        keypoints = HessianDetector().detect(blob_image(centers=((32, 40),)))
        assert keypoints
        best = keypoints[0]
        assert abs(best.x - 40) <= 1 and abs(best.y - 32) <= 1

    def test_sorted_by_response(self):
        img = blob_image(centers=((20, 30), (40, 90))) + 0.5 * blob_image(centers=((30, 60),))
        responses = [k.response for k in HessianDetector().detect(img)]
        assert responses == sorted(responses, reverse=True)

    def test_blob_across_seam(self):
        keypoints = HessianDetector().detect(blob_image(centers=((32, 0), (32, 128))))
        assert keypoints
        assert keypoints[0].x == 0.0
        assert keypoints[0].y == 32.0


class TestBilinear:
    def test_integer_positions_are_exact(self, rng):
        img = rng.random((8, 16, 3))
        out = bilinear_sample(img, np.array([3.0, 15.0]), np.array([2.0, 7.0]))
        assert_allclose(out, img[[2, 7], [3, 15]])

    def test_interpolates_across_seam(self):
        img = np.zeros((4, 8))
        img[:, 0] = 1.0
        assert float(bilinear_sample(img, 7.5, 1.0)) == pytest.approx(0.5)
        assert float(bilinear_sample(img, -0.5, 1.0)) == pytest.approx(0.5)
