import numpy as np
import random
import torch
import os


def seed_everything(seed: int):
    """
    Seed every random number generator used by omniqa and switch torch to
    deterministic kernels, so that two runs with the same seed produce
    bit-identical checkpoints.

    :param seed: Global seed.
    :return: numpy Generator for the explicitly seeded code paths
             (distortion noise, crops, splits).
    """
    random.seed(seed)
    os.environ['PYTHONHASHSEED'] = str(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)
    torch.backends.cudnn.deterministic = True
    torch.backends.cudnn.benchmark = False
    rng = np.random.default_rng(seed)
    return rng


def ensure_dir(path: str):
    os.makedirs(path, exist_ok=True)
    return path
