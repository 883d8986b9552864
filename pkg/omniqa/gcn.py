"""
Spatial viewport graph and graph convolutions.

Nodes are viewports; two viewports are connected when their centers are
at most half a field of view apart. Each layer computes
softplus(BN(A_hat H W)), batch-normalizing over the node axis.
"""
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
import torch
from torch import nn

from omniqa.nn import functional as OF
from omniqa.sphere import angular_dist_deg, lonlat_to_unit
from omniqa.viewpoint import ViewpointSet

FULL_GCN_DIMS = (512, 256, 128, 64, 32, 1)


@dataclass
class ViewportGraph:
    """
    :param n: Number of nodes.
    :param affinity: Binary symmetric (n, n) matrix A with unit diagonal.
    :param normalized: D^-1/2 A D^-1/2.
    :param centers: Viewpoints the nodes stand for.
    """
    n: int
    affinity: np.ndarray
    normalized: np.ndarray
    centers: ViewpointSet


def build_affinity(centers: ViewpointSet, threshold: float = 45.0) -> np.ndarray:
    """A_ij = 1 iff the angular distance of centers i and j is <= threshold."""
    assert len(centers) >= 1, "the viewport graph needs at least one node"
    lons, lats = centers.lonlat()
    dist = angular_dist_deg(lons[:, None], lats[:, None], lons[None, :], lats[None, :])
    affinity = (dist <= threshold).astype(np.float64)
    np.fill_diagonal(affinity, 1.0)
    return affinity


def fov_affinity(centers: ViewpointSet, fov: float = 90.0) -> np.ndarray:
    """
    Connectivity by containment: j is connected to i when the center of j
    falls inside the viewing cone of viewport i (half-angle fov / 2).
    """
    lons, lats = centers.lonlat()
    units = lonlat_to_unit(lons, lats)
    cosines = np.clip(units @ units.T, -1.0, 1.0)
    inside = cosines >= np.cos(np.radians(fov / 2.0))
    affinity = (inside | inside.T).astype(np.float64)
    np.fill_diagonal(affinity, 1.0)
    return affinity


def normalize_adjacency(affinity: np.ndarray) -> np.ndarray:
    """Symmetric normalization D^-1/2 A D^-1/2 with D_ii = sum_j A_ij."""
    degree = affinity.sum(axis=1)
    assert np.all(degree > 0), "zero-degree node in the viewport graph"
    inv_sqrt = 1.0 / np.sqrt(degree)
    return affinity * inv_sqrt[:, None] * inv_sqrt[None, :]


def build_graph(centers: ViewpointSet, threshold: float = 45.0) -> ViewportGraph:
    affinity = build_affinity(centers, threshold)
    return ViewportGraph(n=len(centers), affinity=affinity,
                         normalized=normalize_adjacency(affinity), centers=centers)


class GcnLayer(nn.Module):
    def __init__(self, in_dim: int, out_dim: int):
        """
        One graph convolution: softplus(BN(A_hat H W)).

        :param in_dim: Input node feature size.
        :param out_dim: Output node feature size.
        """
        super().__init__()
        self.weight = nn.Parameter(torch.empty(in_dim, out_dim))
        self.bn = nn.BatchNorm1d(out_dim, eps=1e-5, momentum=0.1)
        # weight is (in, out): torch's fan_out is size(0) = in_dim here
        nn.init.kaiming_normal_(self.weight, mode='fan_out', nonlinearity='relu')

    def forward(self, h: torch.Tensor, adjacency: torch.Tensor) -> torch.Tensor:
        support = adjacency @ (h @ self.weight)
        # A single node has no batch statistics; fall back to the running ones.
        mode = 'train' if self.training and support.shape[0] > 1 else 'eval'
        return OF.softplus(OF.batchnorm(support, self.bn, mode))


class GraphConvStack(nn.Module):
    def __init__(self, dims: Sequence[int] = FULL_GCN_DIMS, seed: int = 0):
        """
        Stacked graph convolutions.

        :param dims: Feature sizes, input first; the full-scale chain is
                     [512, 256, 128, 64, 32, 1].
        :param seed: Initialization seed.
        """
        super().__init__()
        self.dims = tuple(dims)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.layers = nn.ModuleList(GcnLayer(a, b) for a, b in zip(self.dims[:-1], self.dims[1:]))

    def forward(self, x: torch.Tensor, adjacency: torch.Tensor) -> torch.Tensor:
        if x.shape[0] != adjacency.shape[0]:
            raise ValueError(f"{x.shape[0]} node features for a graph of {adjacency.shape[0]} nodes")
        if x.shape[1] != self.dims[0]:
            raise ValueError(f"node features have {x.shape[1]} dims, expected {self.dims[0]}")
        h = x
        for layer in self.layers:
            h = layer(h, adjacency)
        return h


def scaled_gcn_dims(features: int) -> List[int]:
    """The full-scale chain rescaled to a descriptor of `features` dims; the final 1 is kept."""
    scale = features / FULL_GCN_DIMS[0]
    return [features] + [max(1, int(round(d * scale))) for d in FULL_GCN_DIMS[1:-1]] + [1]


def gcn_forward(x: torch.Tensor, graph: ViewportGraph, layers: GraphConvStack, mode: str = 'eval') -> torch.Tensor:
    """Per-node outputs (n, 1) of the stack on one graph."""
    layers.train(mode == 'train')
    adjacency = torch.as_tensor(graph.normalized, dtype=x.dtype)
    return layers(x, adjacency)


def aggregate(h: torch.Tensor) -> torch.Tensor:
    """Average pooling of node outputs into the local quality."""
    if h.shape[0] == 0:
        raise ValueError("cannot aggregate an empty graph")
    return h.mean()


def block_adjacency(adjacencies: Sequence[torch.Tensor]) -> torch.Tensor:
    """Disjoint union of several graphs, so one batch-norm sees all their nodes."""
    return torch.block_diag(*adjacencies)


def aggregate_segments(h: torch.Tensor, counts: Sequence[int]) -> torch.Tensor:
    """Per-graph means of the stacked node outputs of a block-diagonal batch."""
    if any(c == 0 for c in counts):
        raise ValueError("cannot aggregate an empty graph")
    return torch.stack([aggregate(part) for part in torch.split(h.reshape(-1), list(counts))])
