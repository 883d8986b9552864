"""
Manifests of distorted omnidirectional images and the torch datasets
built on them.
"""
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence

from torch.utils.data import Dataset
from tqdm import tqdm

import pandas as pd
import numpy as np
import logging
import torch
import os

from omniqa.distortions.registry import DISTORTION_TYPES, LEVELS
from omniqa.gcn import block_adjacency, build_graph
from omniqa.imgproc import load_rgb, resize_rgb
from omniqa.utils.errors import DataError
from omniqa.viewpoint import (DetectorConfig, ViewpointSet, detect_viewpoints,
                              extract_viewports, uniform_viewpoints)

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ('image_path', 'ref_id', 'distortion_type', 'level', 'mos')


@dataclass(frozen=True)
class DatasetRecord:
    image_path: str
    ref_id: str
    distortion_type: str
    level: int
    mos: float


@dataclass
class DatasetManifest:
    records: List[DatasetRecord]
    path: Optional[str] = None

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, index):
        return self.records[index]

    def ref_ids(self) -> List[str]:
        """Distinct reference ids in order of first appearance."""
        return list(dict.fromkeys(r.ref_id for r in self.records))

    def subset(self, ref_ids: Iterable[str]) -> 'DatasetManifest':
        keep = set(ref_ids)
        return DatasetManifest([r for r in self.records if r.ref_id in keep], self.path)

    def mos(self) -> np.ndarray:
        return np.array([r.mos for r in self.records], dtype=np.float64)


def load_manifest(path: str, check_images: bool = True) -> DatasetManifest:
    """
    Read a CSV manifest with header image_path,ref_id,distortion_type,level,mos.
    Relative image paths are resolved against the manifest directory.

    :raises DataError: naming the missing column, or the line of a bad record.
    """
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as err:
        raise DataError(f"cannot read manifest {path}: {err}") from err

    missing = [c for c in MANIFEST_COLUMNS if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing column(s) {', '.join(missing)}")

    root = os.path.dirname(os.path.abspath(path))
    records = []
    for i, row in enumerate(df.itertuples(index=False)):
        line = i + 2  # header is line 1
        try:
            mos = float(row.mos)
        except ValueError:
            raise DataError(f"{path}:{line}: non-numeric mos {row.mos!r}") from None
        if not np.isfinite(mos):
            raise DataError(f"{path}:{line}: mos must be finite, got {row.mos!r}")
        try:
            level = int(row.level)
        except ValueError:
            raise DataError(f"{path}:{line}: non-integer level {row.level!r}") from None
        if not 0 <= level <= LEVELS:
            raise DataError(f"{path}:{line}: level {level} outside 0..{LEVELS}")
        if row.distortion_type not in DISTORTION_TYPES:
            raise DataError(f"{path}:{line}: unknown distortion type {row.distortion_type!r}")
        if not row.ref_id:
            raise DataError(f"{path}:{line}: empty ref_id")

        image_path = os.path.normpath(os.path.join(root, row.image_path))
        if check_images and not os.path.isfile(image_path):
            raise DataError(f"{path}:{line}: image {row.image_path} not found")
        records.append(DatasetRecord(image_path, row.ref_id, row.distortion_type, level, mos))

    seen = set()
    for r in records:
        if r.image_path in seen:
            logger.warning("%s: duplicate image_path %s, keeping both records", path, r.image_path)
        seen.add(r.image_path)
    return DatasetManifest(records, path)


def write_manifest(path: str, records: Sequence[DatasetRecord]):
    """Write records with image paths relative to the manifest directory."""
    root = os.path.dirname(os.path.abspath(path))
    df = pd.DataFrame({
        'image_path': [os.path.relpath(os.path.abspath(r.image_path), root) for r in records],
        'ref_id': [r.ref_id for r in records],
        'distortion_type': [r.distortion_type for r in records],
        'level': [int(r.level) for r in records],
        'mos': [float(r.mos) for r in records],
    }, columns=list(MANIFEST_COLUMNS))
    df.to_csv(path, index=False, float_format='%.17g')


@dataclass
class PreparedImage:
    """
    An ERP brought to the working resolution with everything the model
    consumes.

    :param erp: (H, W, 3) uint8 working ERP.
    :param viewports: (N, S, S, 3) uint8 viewports.
    :param viewpoints: Their centers.
    :param adjacency: (N, N) normalized adjacency of the viewport graph.
    """
    name: str
    erp: np.ndarray
    viewports: np.ndarray
    viewpoints: ViewpointSet
    adjacency: np.ndarray
    mos: float = float('nan')
    record: Optional[DatasetRecord] = None

    @property
    def n_viewports(self):
        return len(self.viewpoints)


def prepare_image(erp: np.ndarray,
                  detector_cfg: DetectorConfig,
                  model_cfg,
                  name: str = '<image>',
                  mos: float = float('nan'),
                  strict: bool = True) -> PreparedImage:
    """
    Resize, detect viewpoints, extract viewports and build the graph.

    :param model_cfg: A `omniqa.model.ModelConfig`.
    :param strict: Raise when no viewpoint is found; otherwise fall back to
                   the uniform layout and log a warning.
    :raises DataError: naming the image when it yields no viewpoint.
    """
    working = resize_rgb(np.asarray(erp, dtype=np.uint8), model_cfg.erp_height, model_cfg.erp_width)
    viewpoints, _ = detect_viewpoints(working, detector_cfg)
    if len(viewpoints) == 0:
        if strict:
            raise DataError(f"no viewpoints found in {name}")
        logger.warning("no viewpoints found in %s, using the uniform layout", name)
        viewpoints = uniform_viewpoints(detector_cfg.n_viewpoints)

    viewports = extract_viewports(working, viewpoints, fov=model_cfg.fov, size=model_cfg.viewport_size)
    graph = build_graph(viewpoints, model_cfg.affinity_threshold)
    return PreparedImage(name=name, erp=working, viewports=viewports, viewpoints=viewpoints,
                         adjacency=graph.normalized, mos=mos)


def image_tensor(images: np.ndarray) -> torch.Tensor:
    """(N, H, W, 3) uint8 -> (N, 3, H, W) float32 in [-1, 1]."""
    x = torch.from_numpy(np.ascontiguousarray(images)).permute(0, 3, 1, 2).float()
    return (x / 255.0 - 0.5) / 0.5


@dataclass
class Batch:
    """
    Several prepared images merged into one disjoint graph.

    :param viewports: (sum N_i, 3, S, S).
    :param adjacency: Block-diagonal normalized adjacency.
    :param counts: N_i per image.
    :param erps: (B, 3, H, W).
    :param mos: (B,) labels.
    """
    viewports: torch.Tensor
    adjacency: torch.Tensor
    counts: List[int]
    erps: torch.Tensor
    mos: torch.Tensor
    names: List[str] = field(default_factory=list)

    def __len__(self):
        return len(self.counts)


def collate(items: Sequence[PreparedImage]) -> Batch:
    return Batch(
        viewports=image_tensor(np.concatenate([p.viewports for p in items])),
        adjacency=block_adjacency([torch.as_tensor(p.adjacency, dtype=torch.float32) for p in items]),
        counts=[p.n_viewports for p in items],
        erps=image_tensor(np.stack([p.erp for p in items])),
        mos=torch.tensor([p.mos for p in items], dtype=torch.float32),
        names=[p.name for p in items],
    )


class OmniIQADataset(Dataset):
    def __init__(self,
                 manifest: DatasetManifest,
                 detector_cfg: DetectorConfig,
                 model_cfg):
        """
        Prepared images of a manifest. Every image is loaded and prepared
        once, then served from memory.

        :param manifest: Records to serve.
        :param detector_cfg: Viewpoint sampling settings.
        :param model_cfg: A `omniqa.model.ModelConfig`.
        """
        super(OmniIQADataset, self).__init__()
        if len(manifest) == 0:
            raise DataError("empty dataset")
        self.manifest = manifest
        self.detector_cfg = detector_cfg
        self.model_cfg = model_cfg
        self._cache: List[Optional[PreparedImage]] = [None] * len(manifest)

    def __len__(self):
        return len(self.manifest)

    def __getitem__(self, index) -> PreparedImage:
        if self._cache[index] is None:
            record = self.manifest[index]
            prepared = prepare_image(load_rgb(record.image_path), self.detector_cfg, self.model_cfg,
                                     name=record.image_path, mos=record.mos, strict=False)
            prepared.record = record
            self._cache[index] = prepared
        return self._cache[index]

    def prepare_all(self):
        for i in tqdm(range(len(self)), 'Preparing images'):
            self[i]
        return self


class PatchDataset(Dataset):
    def __init__(self,
                 images: Dataset,
                 patch_size: int,
                 patches_per_image: int = 4,
                 seed: int = 0):
        """
        Random square crops of the working ERPs, each labeled with the MOS
        of its image. Crops are redrawn every epoch from a seed derived from
        (seed, epoch, index).
        """
        super(PatchDataset, self).__init__()
        if len(images) == 0:
            raise DataError("empty dataset")
        self.images = images
        self.patch_size = patch_size
        self.patches_per_image = patches_per_image
        self.seed = seed
        self.epoch = 0

    def set_epoch(self, epoch: int):
        self.epoch = epoch

    def __len__(self):
        return len(self.images) * self.patches_per_image

    def __getitem__(self, index):
        prepared = self.images[index // self.patches_per_image]
        h, w = prepared.erp.shape[:2]
        s = self.patch_size
        if s > h or s > w:
            raise DataError(f"patch size {s} larger than the working ERP {h}x{w}")
        rng = np.random.default_rng([self.seed, self.epoch, index])
        y = int(rng.integers(0, h - s + 1))
        x = int(rng.integers(0, w - s + 1))
        patch = image_tensor(prepared.erp[None, y:y + s, x:x + s])[0]
        return patch, torch.tensor(prepared.mos, dtype=torch.float32)
