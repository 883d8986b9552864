from dataclasses import dataclass
from typing import List, Tuple

from tqdm import tqdm

import numpy as np
import logging
import cv2
import os

from omniqa.dataset import DatasetRecord, write_manifest
from omniqa.distortions.registry import DISTORTIONS, LEVELS, synth_distort
from omniqa.imgproc import save_png
from omniqa.utils.utils import seed_everything

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.csv'


@dataclass
class SyntheticSpec:
    """
    :param n_refs: Number of reference panoramas.
    :param types: Distortion types applied to every reference.
    :param levels: Number of levels per type (1..levels).
    :param height: ERP height; the width is twice as large.
    :param seed: Seed of the references, distortions and pseudo-MOS.
    :param include_references: Also list the undistorted references.
    """
    n_refs: int = 8
    types: Tuple[str, ...] = ('jpeg-like', 'blur', 'noise')
    levels: int = LEVELS
    height: int = 128
    seed: int = 0
    include_references: bool = False

    def __post_init__(self):
        self.types = tuple(self.types)
        if self.n_refs < 4:
            raise ValueError(f"n_refs must be >= 4 to allow a reference split, got {self.n_refs}")
        unknown = [t for t in self.types if t not in DISTORTIONS]
        if unknown:
            raise ValueError(f"unknown distortion type(s) {unknown}, choose among {list(DISTORTIONS)}")
        if not 1 <= self.levels <= LEVELS:
            raise ValueError(f"levels must lie in 1..{LEVELS}, got {self.levels}")

    @property
    def width(self):
        return 2 * self.height


def synthetic_reference(height: int, rng: np.random.Generator) -> np.ndarray:
    """
    A textured stand-in panorama: smooth color gradient background with
    random discs, boxes and lines of several sizes.
    """
    width = 2 * height
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    img = np.zeros((height, width, 3), dtype=np.float64)
    for c in range(3):
        phase, freq = rng.uniform(0, 2 * np.pi), rng.integers(1, 4)
        # integer horizontal frequency keeps the seam continuous
        img[..., c] = 128 + 60 * np.sin(2 * np.pi * freq * xx / width + phase) * np.cos(np.pi * yy / height)
    img = np.clip(img, 0, 255).astype(np.uint8)

    n_shapes = int(rng.integers(25, 45))
    for _ in range(n_shapes):
        color = tuple(int(v) for v in rng.integers(0, 256, size=3))
        x, y = int(rng.integers(0, width)), int(rng.integers(height // 8, height - height // 8))
        kind = rng.integers(0, 3)
        size = int(rng.integers(2, max(3, height // 10)))
        if kind == 0:
            cv2.circle(img, (x, y), size, color, cv2.FILLED)
        elif kind == 1:
            cv2.rectangle(img, (x, y), (x + size, y + int(rng.integers(2, 2 * size + 1))), color, cv2.FILLED)
        else:
            end = (x + int(rng.integers(-3 * size, 3 * size + 1)), y + int(rng.integers(-size, size + 1)))
            cv2.line(img, (x, y), end, color, int(rng.integers(1, 3)))
    return img


class SyntheticDatasetManager:
    def __init__(self,
                 output_path: str,
                 spec: SyntheticSpec = None):
        """
        Class used to create a desk-scale omnidirectional IQA database:
        synthetic reference panoramas, their distorted versions and a
        manifest with pseudo-MOS labels.

        :param output_path: Output folder. Path convention:
                            {output_path}/ref{r}_{type}_{level}.png plus manifest.csv
        :param spec: What to generate.
        """
        self.output_path = output_path
        self.spec = spec or SyntheticSpec()

    def image_seed(self, ref: int, distortion: str, level: int) -> int:
        index = list(DISTORTIONS).index(distortion) + 1 if distortion in DISTORTIONS else 0
        return int(np.random.default_rng([self.spec.seed, ref, index, level]).integers(2 ** 31))

    def create_dataset(self) -> str:
        """Write every image and the manifest; returns the manifest path."""
        spec = self.spec
        rng = seed_everything(spec.seed)
        os.makedirs(self.output_path, exist_ok=True)

        records: List[DatasetRecord] = []
        for ref in tqdm(range(spec.n_refs), 'References'):
            reference = synthetic_reference(spec.height, rng)
            ref_id = f'ref{str(ref).zfill(2)}'
            if spec.include_references:
                records.append(self._store(reference, ref_id, 'none', 0, ref))

            for distortion in spec.types:
                for level in range(1, spec.levels + 1):
                    records.append(self._store(reference, ref_id, distortion, level, ref))

        manifest_path = os.path.join(self.output_path, MANIFEST_NAME)
        write_manifest(manifest_path, records)
        logger.info("%d images and %s written", len(records), manifest_path)
        return manifest_path

    def _store(self, reference, ref_id, distortion, level, ref) -> DatasetRecord:
        distorted, mos = synth_distort(reference, distortion, level, self.image_seed(ref, distortion, level))
        assert distorted.dtype == np.uint8, f"{distorted.dtype}"
        filename = f'{ref_id}_{distortion}_{level}.png'
        path = os.path.join(self.output_path, filename)
        save_png(path, distorted)
        return DatasetRecord(path, ref_id, distortion, level, float(mos))
