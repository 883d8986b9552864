import numpy as np


class BaseDistortion:
    def __init__(self, severity_params):
        """
        A distortion type with one intensity hyperparameter per level.

        :param severity_params: Intensity of levels 1..5, mildest first.
        """
        assert len(severity_params) == 5, "distortions are defined on 5 levels"
        self.severity_params = severity_params

    def intensity(self, level: int):
        if not 1 <= level <= len(self.severity_params):
            raise ValueError(f"level must lie in 1..{len(self.severity_params)}, got {level}")
        return self.severity_params[level - 1]

    def apply(self, img: np.ndarray, level: int, rng: np.random.Generator) -> np.ndarray:
        """
        :param img: (H, W, 3) uint8 image.
        :param level: Distortion level, 1 (mild) to 5 (strong).
        :param rng: Seeded generator for stochastic distortions.
        :return: Distorted uint8 image of the same shape.
        """
        raise NotImplementedError("This method should be implemented by subclasses.")


def to_uint8(img: np.ndarray) -> np.ndarray:
    """[0, 1] floats to uint8 with rounding."""
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
