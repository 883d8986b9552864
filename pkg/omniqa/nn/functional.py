"""
Differentiable operations of the network engine.

Thin, validated wrappers over `torch.nn.functional`; gradients come from
autograd and are checked against central finite differences by
`omniqa.nn.gradcheck`.
"""
import torch
import torch.nn.functional as F
from torch import nn

SOFTPLUS_THRESHOLD = 20.0


def conv2d(input: torch.Tensor,
           weight: torch.Tensor,
           stride: int = 1,
           padding: int = None,
           bias: torch.Tensor = None) -> torch.Tensor:
    """
    Cross-correlation with zero "same" padding (k // 2 by default), so
    the output side is ceil(in / stride).

    :param input: (N, C_in, H, W).
    :param weight: (C_out, C_in, k, k) with odd k.
    """
    if input.dim() != 4 or weight.dim() != 4:
        raise ValueError(f"conv2d expects 4D input and weight, got {tuple(input.shape)} and {tuple(weight.shape)}")
    if input.shape[1] != weight.shape[1]:
        raise ValueError(f"conv2d channel mismatch: input has {input.shape[1]}, weight expects {weight.shape[1]}")
    kh, kw = weight.shape[-2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d needs odd kernels, got {kh}x{kw}")
    if padding is None:
        padding = kh // 2
    return F.conv2d(input, weight, bias, stride=stride, padding=padding)


def maxpool2d(input: torch.Tensor, window: int, stride: int = None, padding: int = 0) -> torch.Tensor:
    """Max over windows; the gradient is routed to the first maximum."""
    if window > input.shape[-2] + 2 * padding or window > input.shape[-1] + 2 * padding:
        raise ValueError(f"pooling window {window} larger than input {tuple(input.shape[-2:])}")
    return F.max_pool2d(input, window, stride=stride or window, padding=padding)


def batchnorm(input: torch.Tensor, state: nn.modules.batchnorm._BatchNorm, mode: str = 'train') -> torch.Tensor:
    """
    Batch normalization with learned gamma/beta and running statistics
    held by `state` (a torch BatchNorm module).

    :param mode: 'train' normalizes with batch statistics and updates the
                 running ones, 'eval' uses the running statistics.
    """
    if mode not in ('train', 'eval'):
        raise ValueError(f"unknown batchnorm mode {mode!r}")
    training = mode == 'train'
    if training and input.numel() // input.shape[1] < 2:
        raise ValueError("batchnorm in train mode needs a batch of at least 2")
    return F.batch_norm(input, state.running_mean, state.running_var,
                        state.weight, state.bias, training, state.momentum, state.eps)


def softplus(input: torch.Tensor) -> torch.Tensor:
    """log(1 + e^x); linear above x = 20 where the two agree to float precision."""
    return F.softplus(input, beta=1.0, threshold=SOFTPLUS_THRESHOLD)


def relu(input: torch.Tensor) -> torch.Tensor:
    return F.relu(input)


def dense(input: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor = None) -> torch.Tensor:
    """
    Affine map x W^T + b.

    :param weight: (out_features, in_features).
    """
    if input.shape[-1] != weight.shape[-1]:
        raise ValueError(f"dense mismatch: input has {input.shape[-1]} features, weight expects {weight.shape[-1]}")
    return F.linear(input, weight, bias)
