"""
Layer tables of the viewport descriptor and of the two global streams.

Channel counts are the full-size ones divided by `divisor`; divisor=1
reproduces the full tables (viewport descriptor 3x256x256 -> 512,
global streams 3x512x1024 -> 32x64 maps).
"""
from typing import List

from omniqa.nn.network import (BATCHNORM, GLOBAL_MAXPOOL, RELU, LayerSpec,
                               conv, maxpool)


def _width(channels, divisor):
    return max(1, channels // divisor)


def _conv_bn_relu(kernel, channels, stride=1):
    return [conv(kernel, channels, stride), BATCHNORM, RELU]


def descriptor_specs(divisor: int = 1) -> List[LayerSpec]:
    """
    Plain (skip-free) ResNet-18 style backbone ending with a global max-pool.
    The first convolution of stages 3-5 halves the resolution.
    """
    specs = _conv_bn_relu(7, _width(64, divisor), stride=2)
    specs.append(maxpool(3, stride=2))
    for stage, channels in enumerate((64, 128, 256, 512)):
        for block in range(4):
            stride = 2 if stage > 0 and block == 0 else 1
            specs += _conv_bn_relu(3, _width(channels, divisor), stride)
    specs.append(GLOBAL_MAXPOOL)
    return specs


def descriptor_features(divisor: int = 1) -> int:
    return _width(512, divisor)


def scnn_specs(divisor: int = 1) -> List[LayerSpec]:
    """Tailored S-CNN stream (synthetic distortions), output at input / 16."""
    rows = [(48, 1), (48, 2),
            (64, 1), (64, 2), (64, 1), (64, 2),
            (128, 1), (128, 1), (128, 2)]
    specs = []
    for channels, stride in rows:
        specs += _conv_bn_relu(3, _width(channels, divisor), stride)
    return specs


def vgg16_specs(divisor: int = 1) -> List[LayerSpec]:
    """Tailored VGG-16 stream (authentic distortions), output at input / 16."""
    blocks = [(64, 2, True), (128, 2, True), (256, 3, True), (512, 3, True), (512, 3, False)]
    specs = []
    for channels, repeat, pool in blocks:
        for _ in range(repeat):
            specs += [conv(3, _width(channels, divisor)), RELU]
        if pool:
            specs.append(maxpool(2, stride=2))
    return specs
