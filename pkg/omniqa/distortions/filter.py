from .base import BaseDistortion

import torchvision.transforms.functional as TF
import numpy as np
import torch


class GaussianBlur(BaseDistortion):
    def apply(self, img, level, rng=None):
        sigma = self.intensity(level)
        # odd kernel covering +-3 sigma, bounded by the image
        radius = min(int(np.ceil(3 * sigma)), (min(img.shape[:2]) - 1) // 2)
        kernel = 2 * radius + 1
        tensor = torch.from_numpy(np.ascontiguousarray(img)).permute(2, 0, 1)
        blurred = TF.gaussian_blur(tensor, kernel_size=[kernel, kernel], sigma=[sigma, sigma])
        return blurred.permute(1, 2, 0).numpy().astype(np.uint8)
