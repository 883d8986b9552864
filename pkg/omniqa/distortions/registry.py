from .noise import GaussianNoise
from .filter import GaussianBlur
from .compression import BlockDCTCompression

import numpy as np

from omniqa.utils.errors import DataError

DISTORTION_TYPES = ('jpeg-like', 'blur', 'noise', 'none')
LEVELS = 5

# Level 1 is the mildest; every table has one entry per level.
DISTORTIONS = {
    'jpeg-like': BlockDCTCompression(severity_params=[80, 60, 40, 20, 10]),
    'blur': GaussianBlur(severity_params=[0.5, 1, 2, 4, 8]),
    'noise': GaussianNoise(severity_params=[2 / 255, 5 / 255, 10 / 255, 20 / 255, 40 / 255]),
}

PSEUDO_MOS_TOP = 10.0
PSEUDO_MOS_SLOPE = 1.8
PSEUDO_MOS_JITTER = 0.2


def pseudo_mos(level: int, rng: np.random.Generator) -> float:
    """Seeded monotone quality label: 10 - 1.8 * level plus a jitter in [-0.2, 0.2]."""
    return PSEUDO_MOS_TOP - PSEUDO_MOS_SLOPE * level + rng.uniform(-PSEUDO_MOS_JITTER, PSEUDO_MOS_JITTER)


def synth_distort(img: np.ndarray, distortion_type: str, level: int, seed: int = 0):
    """
    Distort a reference image and attach its pseudo-MOS.

    :param img: (H, W, 3) uint8 reference.
    :param distortion_type: One of DISTORTION_TYPES; 'none' returns a copy
                            labeled at level 0.
    :param level: 1..5.
    :param seed: Seed of both the stochastic distortion and the MOS jitter.
    :return: (distorted uint8 image, pseudo-MOS)
    """
    if distortion_type not in DISTORTION_TYPES:
        raise DataError(f"unknown distortion type {distortion_type!r}, choose among {DISTORTION_TYPES}")
    rng = np.random.default_rng(seed)
    if distortion_type == 'none':
        return np.array(img, dtype=np.uint8, copy=True), pseudo_mos(0, rng)
    if not 1 <= level <= LEVELS:
        raise ValueError(f"level must lie in 1..{LEVELS}, got {level}")

    distorted = DISTORTIONS[distortion_type].apply(np.asarray(img, dtype=np.uint8), level, rng)
    assert distorted.dtype == np.uint8 and distorted.shape == img.shape, f"{distorted.dtype} {distorted.shape}"
    return distorted, pseudo_mos(level, rng)
