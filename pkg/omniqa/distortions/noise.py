from .base import BaseDistortion, to_uint8

import numpy as np


class GaussianNoise(BaseDistortion):
    def apply(self, img, level, rng):
        c = self.intensity(level)
        img = np.array(img) / 255.
        noisy_image = np.clip(img + rng.normal(size=img.shape, scale=c), 0, 1)
        return to_uint8(noisy_image)
