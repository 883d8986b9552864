"""
VGCN: a local branch (viewport descriptor + graph convolutions over the
spatial viewport graph), a global branch (two CNN streams fused by
bilinear pooling) and a 2 -> 1 regressor over the two branch scores.
"""
from dataclasses import asdict, dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import logging
import torch
import torch.nn.functional as F
from torch import nn

from omniqa.dataset import collate, image_tensor, prepare_image
from omniqa.gcn import GraphConvStack, aggregate_segments, scaled_gcn_dims
from omniqa.nn.architectures import descriptor_features, descriptor_specs, scnn_specs, vgg16_specs
from omniqa.nn.network import Network
from omniqa.utils.errors import NetworkSpecError
from omniqa.viewpoint import DetectorConfig

logger = logging.getLogger(__name__)

SIGNED_SQRT_EPS = 1e-12


@dataclass
class ModelConfig:
    """
    :param viewport_size: Viewport side in pixels.
    :param fov: Viewport field of view in degrees.
    :param erp_height: Working ERP height; the width is twice as large.
    :param width_divisor: Divides every channel count of the backbones.
    :param affinity_threshold: Max angular distance (degrees) of connected viewports.
    :param seed: Initialization seed.
    """
    viewport_size: int = 64
    fov: float = 90.0
    erp_height: int = 128
    width_divisor: int = 4
    affinity_threshold: float = 45.0
    seed: int = 0

    def __post_init__(self):
        if self.viewport_size < 16:
            raise ValueError(f"viewport_size must be >= 16, got {self.viewport_size}")
        if not 0.0 < self.fov < 180.0:
            raise ValueError(f"fov must lie in (0, 180), got {self.fov}")
        if self.erp_height < 16 or self.erp_height % 16:
            raise ValueError(f"erp_height must be a positive multiple of 16, got {self.erp_height}")
        if self.width_divisor < 1:
            raise ValueError(f"width_divisor must be >= 1, got {self.width_divisor}")

    @property
    def erp_width(self):
        return 2 * self.erp_height

    @property
    def descriptor_features(self):
        return descriptor_features(self.width_divisor)

    @property
    def gcn_dims(self):
        return scaled_gcn_dims(self.descriptor_features)


def bilinear_pool(y1: torch.Tensor, y2: torch.Tensor) -> torch.Tensor:
    """
    Bilinear pooling of two feature maps followed by signed square root
    and L2 normalization.

    :param y1: (B, d1, h, w).
    :param y2: (B, d2, h, w), same spatial shape as y1.
    :return: (B, d1 * d2) unit-norm vectors.
    """
    if y1.shape[0] != y2.shape[0] or y1.shape[2:] != y2.shape[2:]:
        raise ValueError(f"bilinear pooling needs equal batch and spatial shapes, got "
                         f"{tuple(y1.shape)} and {tuple(y2.shape)}")
    b = torch.einsum('bchw,bdhw->bcd', y1, y2).flatten(1)
    signed = torch.sign(b) * torch.sqrt(b.abs() + SIGNED_SQRT_EPS)
    return F.normalize(signed, p=2, dim=1, eps=SIGNED_SQRT_EPS)


def _seeded_linear(in_features, out_features, seed):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        layer = nn.Linear(in_features, out_features)
        nn.init.kaiming_normal_(layer.weight, mode='fan_in', nonlinearity='linear')
        nn.init.zeros_(layer.bias)
    return layer


class VGCN(nn.Module):
    def __init__(self, cfg: ModelConfig = None, detector_cfg: Optional[DetectorConfig] = None):
        """
        :param cfg: Architecture configuration.
        :param detector_cfg: Viewpoint detector settings the model is trained
                             with; stored in checkpoints so that prediction
                             samples viewports the same way.
        """
        super().__init__()
        self.cfg = cfg or ModelConfig()
        self.detector_cfg = detector_cfg or DetectorConfig()
        c = self.cfg
        d = c.width_divisor

        self.descriptor = Network(descriptor_specs(d), (3, c.viewport_size, c.viewport_size), seed=c.seed)
        features = self.descriptor.output_shape[0]
        # 2D patch quality head, only used by descriptor pretraining
        self.descriptor_head = _seeded_linear(features, 1, c.seed + 1)
        self.gcn = GraphConvStack(scaled_gcn_dims(features), seed=c.seed + 2)

        global_shape = (3, c.erp_height, c.erp_width)
        self.scnn = Network(scnn_specs(d), global_shape, seed=c.seed + 3)
        self.vgg = Network(vgg16_specs(d), global_shape, seed=c.seed + 4)
        s1, s2 = self.scnn.output_shape, self.vgg.output_shape
        if s1[1:] != s2[1:]:
            raise NetworkSpecError(len(self.vgg.specs) - 1, self.vgg.specs[-1].kind,
                                   f"global streams end at different spatial shapes {s1[1:]} and {s2[1:]}")
        self.global_head = _seeded_linear(s1[0] * s2[0], 1, c.seed + 5)

        self.regressor = nn.Linear(2, 1)
        with torch.no_grad():
            self.regressor.weight.fill_(0.5)
            self.regressor.bias.zero_()

    def describe(self, viewports: torch.Tensor) -> torch.Tensor:
        """(V, 3, S, S) normalized viewports -> (V, F) descriptors."""
        return self.descriptor(viewports)

    def patch_quality(self, patches: torch.Tensor) -> torch.Tensor:
        return self.descriptor_head(self.descriptor(patches)).squeeze(-1)

    def local_forward(self, viewports: torch.Tensor, adjacency: torch.Tensor,
                      counts: Sequence[int]) -> torch.Tensor:
        """
        Local quality of every image of a batch.

        :param viewports: Viewports of all images, stacked image by image.
        :param adjacency: Block-diagonal normalized adjacency of the batch.
        :param counts: Number of viewports of each image.
        :return: (B,) local scores.
        """
        nodes = self.gcn(self.describe(viewports), adjacency)
        return aggregate_segments(nodes, counts)

    def global_forward(self, erps: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) normalized ERPs -> (B,) global scores."""
        pooled = bilinear_pool(self.scnn(erps), self.vgg(erps))
        return self.global_head(pooled).squeeze(-1)

    def regress(self, q_local: torch.Tensor, q_global: torch.Tensor) -> torch.Tensor:
        return self.regressor(torch.stack([q_local, q_global], dim=-1)).squeeze(-1)

    def forward(self, batch) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """
        :param batch: A collated `omniqa.dataset.Batch`.
        :return: (q, q_local, q_global), each of shape (B,).
        """
        q_local = self.local_forward(batch.viewports, batch.adjacency, batch.counts)
        q_global = self.global_forward(batch.erps)
        return self.regress(q_local, q_global), q_local, q_global

    def config_dict(self):
        return {'model': asdict(self.cfg), 'detector': asdict(self.detector_cfg)}


@dataclass
class Prediction:
    quality: float
    local: float
    global_: float
    n_viewports: int


class VGCNPredictor:
    def __init__(self, model: VGCN):
        """
        Single-image inference on a frozen model. Read-only once built, so
        several threads may share one predictor.
        """
        self.model = model.eval()

    def prepare(self, erp: np.ndarray, name: str = '<image>', strict: bool = True):
        return prepare_image(erp, self.model.detector_cfg, self.model.cfg, name=name, strict=strict)

    @torch.no_grad()
    def local_forward(self, erp: np.ndarray, name: str = '<image>') -> float:
        prepared = self.prepare(erp, name)
        adjacency = torch.as_tensor(prepared.adjacency, dtype=torch.float32)
        q = self.model.local_forward(image_tensor(prepared.viewports), adjacency, [prepared.n_viewports])
        return float(q[0])

    @torch.no_grad()
    def global_forward(self, erp: np.ndarray, name: str = '<image>') -> float:
        prepared = self.prepare(erp, name)
        return float(self.model.global_forward(image_tensor(prepared.erp[None]))[0])

    @torch.no_grad()
    def predict(self, erp: np.ndarray, name: str = '<image>', strict: bool = False) -> Prediction:
        """Featureless images fall back to uniform viewports unless `strict`."""
        prepared = self.prepare(erp, name, strict)
        q, q_local, q_global = self.model(collate([prepared]))
        logger.debug("%s: %d viewports, q=%.4f", name, prepared.n_viewports, float(q[0]))
        return Prediction(quality=float(q[0]), local=float(q_local[0]),
                          global_=float(q_global[0]), n_viewports=prepared.n_viewports)

