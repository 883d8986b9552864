"""
Declarative networks: a list of `LayerSpec` rows (one per table row of a
configuration) compiled into a `torch.nn.Module` after validating that
the shapes compose.
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import torch
from torch import nn

from omniqa.nn import functional as OF
from omniqa.utils.errors import NetworkSpecError

LAYER_KINDS = ('conv', 'maxpool', 'batchnorm', 'dense', 'softplus', 'relu',
               'flatten', 'global-maxpool', 'global-avgpool')


@dataclass(frozen=True)
class LayerSpec:
    """
    One layer of a network.

    :param kind: One of LAYER_KINDS.
    :param kernel: Kernel (conv) or window (maxpool) side.
    :param stride: Stride (conv, maxpool).
    :param channels: Output channels (conv).
    :param features: Output features (dense).
    :param padding: Explicit padding; None means k // 2 for convs and
                    (window - 1) // 2 for pools.
    """
    kind: str
    kernel: int = 0
    stride: int = 1
    channels: int = 0
    features: int = 0
    padding: Optional[int] = None


def conv(kernel, channels, stride=1):
    return LayerSpec('conv', kernel=kernel, channels=channels, stride=stride)


def maxpool(window, stride=None, padding=None):
    return LayerSpec('maxpool', kernel=window, stride=stride or window, padding=padding)


def dense(features):
    return LayerSpec('dense', features=features)


BATCHNORM = LayerSpec('batchnorm')
RELU = LayerSpec('relu')
SOFTPLUS = LayerSpec('softplus')
FLATTEN = LayerSpec('flatten')
GLOBAL_MAXPOOL = LayerSpec('global-maxpool')
GLOBAL_AVGPOOL = LayerSpec('global-avgpool')


class Conv(nn.Conv2d):
    def forward(self, x):
        return OF.conv2d(x, self.weight, self.stride[0], self.padding[0], self.bias)


class MaxPool(nn.Module):
    def __init__(self, window, stride, padding):
        super().__init__()
        self.window, self.stride, self.padding = window, stride, padding

    def forward(self, x):
        return OF.maxpool2d(x, self.window, self.stride, self.padding)


class Softplus(nn.Module):
    def forward(self, x):
        return OF.softplus(x)


class GlobalPool(nn.Module):
    def __init__(self, reduce: str):
        super().__init__()
        self.reduce = reduce

    def forward(self, x):
        if self.reduce == 'max':
            return torch.amax(x, dim=(-2, -1))
        return torch.mean(x, dim=(-2, -1))


def _out_side(side, kernel, stride, padding):
    return (side + 2 * padding - kernel) // stride + 1


def infer_shapes(specs: Sequence[LayerSpec], input_shape: Tuple[int, ...]) -> List[Tuple[int, ...]]:
    """
    Per-sample output shape after every layer.

    :param input_shape: (C, H, W) for image networks, (F,) for vectors.
    :raises NetworkSpecError: naming the first layer that does not fit.
    """
    shapes = []
    shape = tuple(input_shape)
    for i, spec in enumerate(specs):
        if spec.kind not in LAYER_KINDS:
            raise NetworkSpecError(i, spec.kind, "unknown layer kind")

        if spec.kind in ('conv', 'maxpool', 'global-maxpool', 'global-avgpool') and len(shape) != 3:
            raise NetworkSpecError(i, spec.kind, f"needs a (C, H, W) input, got {shape}")

        if spec.kind == 'conv':
            if spec.kernel % 2 == 0 or spec.kernel < 1:
                raise NetworkSpecError(i, spec.kind, f"kernel must be odd, got {spec.kernel}")
            if spec.channels < 1:
                raise NetworkSpecError(i, spec.kind, "output channels must be positive")
            pad = spec.kernel // 2 if spec.padding is None else spec.padding
            h = _out_side(shape[1], spec.kernel, spec.stride, pad)
            w = _out_side(shape[2], spec.kernel, spec.stride, pad)
            if h < 1 or w < 1:
                raise NetworkSpecError(i, spec.kind, f"input {shape} too small")
            shape = (spec.channels, h, w)
        elif spec.kind == 'maxpool':
            pad = (spec.kernel - 1) // 2 if spec.padding is None else spec.padding
            if spec.kernel > shape[1] + 2 * pad or spec.kernel > shape[2] + 2 * pad:
                raise NetworkSpecError(i, spec.kind, f"window {spec.kernel} larger than input {shape}")
            shape = (shape[0],
                     _out_side(shape[1], spec.kernel, spec.stride, pad),
                     _out_side(shape[2], spec.kernel, spec.stride, pad))
        elif spec.kind in ('global-maxpool', 'global-avgpool'):
            shape = (shape[0],)
        elif spec.kind == 'flatten':
            n = 1
            for d in shape:
                n *= d
            shape = (n,)
        elif spec.kind == 'dense':
            if len(shape) != 1:
                raise NetworkSpecError(i, spec.kind, f"needs a flat input, got {shape}")
            if spec.features < 1:
                raise NetworkSpecError(i, spec.kind, "output features must be positive")
            shape = (spec.features,)
        shapes.append(shape)
    return shapes


class Network(nn.Module):
    def __init__(self, specs: Sequence[LayerSpec], input_shape: Tuple[int, ...], seed: int = 0):
        """
        Sequential network compiled from layer specs. Convolution and dense
        weights are He-normal initialized from `seed`, biases are zero and
        batch-norm layers start at gamma = 1, beta = 0.

        :param specs: Layer rows.
        :param input_shape: Per-sample input shape, (C, H, W) or (F,).
        :param seed: Initialization seed; equal seeds give identical weights.
        """
        super().__init__()
        self.specs = tuple(specs)
        self.input_shape = tuple(input_shape)
        self.shapes = infer_shapes(self.specs, self.input_shape)

        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            layers = [self._make_layer(i) for i in range(len(self.specs))]
        self.layers = nn.Sequential(*layers)

    @property
    def output_shape(self):
        return self.shapes[-1] if self.shapes else self.input_shape

    def _make_layer(self, i):
        spec = self.specs[i]
        in_shape = self.shapes[i - 1] if i > 0 else self.input_shape
        followed_by_bn = i + 1 < len(self.specs) and self.specs[i + 1].kind == 'batchnorm'

        if spec.kind == 'conv':
            pad = spec.kernel // 2 if spec.padding is None else spec.padding
            layer = Conv(in_shape[0], spec.channels, spec.kernel, stride=spec.stride,
                         padding=pad, bias=not followed_by_bn)
            nn.init.kaiming_normal_(layer.weight, mode='fan_in', nonlinearity='relu')
        elif spec.kind == 'dense':
            layer = nn.Linear(in_shape[0], spec.features, bias=not followed_by_bn)
            nn.init.kaiming_normal_(layer.weight, mode='fan_in', nonlinearity='relu')
        elif spec.kind == 'batchnorm':
            bn = nn.BatchNorm2d if len(in_shape) == 3 else nn.BatchNorm1d
            layer = bn(in_shape[0], eps=1e-5, momentum=0.1)
        elif spec.kind == 'maxpool':
            pad = (spec.kernel - 1) // 2 if spec.padding is None else spec.padding
            layer = MaxPool(spec.kernel, spec.stride, pad)
        elif spec.kind == 'relu':
            layer = nn.ReLU()
        elif spec.kind == 'softplus':
            layer = Softplus()
        elif spec.kind == 'flatten':
            layer = nn.Flatten()
        elif spec.kind == 'global-maxpool':
            layer = GlobalPool('max')
        else:
            layer = GlobalPool('mean')

        if getattr(layer, 'bias', None) is not None and spec.kind in ('conv', 'dense'):
            nn.init.zeros_(layer.bias)
        return layer

    def forward(self, x):
        return self.layers(x)

    def parameter_list(self):
        return list(self.named_parameters())


def build_network(specs: Sequence[LayerSpec], input_shape: Tuple[int, ...], seed: int = 0) -> Network:
    return Network(specs, input_shape, seed)
