"""
Finite-difference checks of every differentiable operation and of the
composed VGCN loss, in float64.

Every case is a pure function of its input tensors (module parameters are
swapped in with `torch.func.functional_call`) and is judged by
`torch.autograd.gradcheck`. The reported error of an instance is the worst
gap between the autograd and the central-difference derivative of a
random projection of the output along random directions, relative to
|grad| |direction|.
"""
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import logging
import torch
import torch.nn.functional as F
from torch import nn
from torch.func import functional_call

from omniqa.dataset import Batch
from omniqa.gcn import GraphConvStack, block_adjacency, build_graph
from omniqa.model import ModelConfig, VGCN, bilinear_pool
from omniqa.nn import functional as OF
from omniqa.nn.network import BATCHNORM, GLOBAL_AVGPOOL, RELU, Network, conv, dense, maxpool
from omniqa.viewpoint import random_viewpoints

logger = logging.getLogger(__name__)

TOLERANCE = 1e-4
INSTANCES = 20
EPS = 1e-6
DIRECTIONS = 2

# (function of the inputs, inputs, fast_mode)
Case = Tuple[Callable[..., torch.Tensor], Tuple[torch.Tensor, ...], bool]


@dataclass
class GradcheckResult:
    name: str
    instances: int
    max_rel_error: float
    tolerance: float = TOLERANCE
    torch_passed: bool = True

    @property
    def passed(self):
        return bool(self.torch_passed and np.isfinite(self.max_rel_error) and self.max_rel_error < self.tolerance)


class _Bound(nn.Module):
    """Calls `op(owner, *args)`, so functional_call can replace the owner's parameters."""

    def __init__(self, owner: nn.Module, op: Callable):
        super().__init__()
        self.owner = owner
        self.op = op

    def forward(self, *args):
        return self.op(self.owner, *args)


def _functional(owner: nn.Module, op: Callable, names: Sequence[str], n_inputs: int):
    """`op` as a function of (*inputs, *params); returns it with the current params."""
    bound = _Bound(owner, op)
    params = dict(owner.named_parameters())

    def fn(*tensors):
        swapped = {f'owner.{n}': t for n, t in zip(names, tensors[n_inputs:])}
        return functional_call(bound, swapped, tuple(tensors[:n_inputs]))

    return fn, tuple(params[n] for n in names)


def directional_error(fn: Callable[..., torch.Tensor],
                      inputs: Sequence[torch.Tensor],
                      gen: Optional[torch.Generator] = None,
                      directions: int = DIRECTIONS,
                      eps: float = EPS) -> float:
    """Worst relative gap between analytic and central-difference directional derivatives."""
    inputs = tuple(inputs)
    out = fn(*inputs)
    weights = torch.randn(out.shape, generator=gen, dtype=out.dtype)
    grads = torch.autograd.grad((out * weights).sum(), inputs, allow_unused=True)
    grads = [torch.zeros_like(t) if g is None else g for t, g in zip(inputs, grads)]
    grad_norm = float(torch.sqrt(sum(g.square().sum() for g in grads)))

    worst = 0.0
    with torch.no_grad():
        for _ in range(directions):
            steps = [torch.randn(t.shape, generator=gen, dtype=t.dtype) for t in inputs]
            analytic = float(sum((g * d).sum() for g, d in zip(grads, steps)))
            plus = float((fn(*[t + eps * d for t, d in zip(inputs, steps)]) * weights).sum())
            minus = float((fn(*[t - eps * d for t, d in zip(inputs, steps)]) * weights).sum())
            numeric = (plus - minus) / (2.0 * eps)
            scale = max(grad_norm * float(torch.sqrt(sum(d.square().sum() for d in steps))), 1e-8)
            error = abs(analytic - numeric) / scale
            if not np.isfinite(error):
                return float('inf')
            worst = max(worst, error)
    return worst


def gradient_check(fn: Callable[..., torch.Tensor],
                   inputs: Sequence[torch.Tensor],
                   fast_mode: bool = False,
                   gen: Optional[torch.Generator] = None) -> Tuple[bool, float]:
    """(torch gradcheck verdict, directional relative error) of one instance."""
    inputs = tuple(inputs)
    ok = torch.autograd.gradcheck(fn, inputs, eps=EPS, fast_mode=fast_mode, raise_exception=False)
    return bool(ok), directional_error(fn, inputs, gen)


def _randn(gen, *shape, scale=1.0):
    return (torch.randn(*shape, generator=gen, dtype=torch.float64) * scale).requires_grad_()


def _spread(gen, *shape):
    """Distinct values on a 1e-2 grid, none of them zero (no kinks or ties within eps)."""
    n = int(np.prod(shape))
    ranks = torch.randperm(2 * n, generator=gen)[:n].to(torch.float64)
    values = (ranks - n + 0.5) * 1e-2
    return values.reshape(shape).requires_grad_()


def _seed(gen):
    return int(torch.randint(0, 2 ** 31 - 1, (1,), generator=gen))


def _conv_case(gen) -> Case:
    stride = int(torch.randint(1, 3, (1,), generator=gen))
    x, w, b = _randn(gen, 2, 3, 8, 8), _randn(gen, 4, 3, 3, 3), _randn(gen, 4)
    return (lambda x, w, b: OF.conv2d(x, w, stride, bias=b)), (x, w, b), False


def _maxpool_case(gen) -> Case:
    return (lambda x: OF.maxpool2d(x, 3, 2, 1)), (_spread(gen, 1, 3, 8, 8),), False


def _batchnorm_case(gen, mode) -> Case:
    state = nn.BatchNorm2d(3).double()
    with torch.no_grad():
        state.weight.copy_(torch.rand(3, generator=gen, dtype=torch.float64) + 0.5)
        state.bias.copy_(torch.randn(3, generator=gen, dtype=torch.float64))
        state.running_mean.copy_(torch.randn(3, generator=gen, dtype=torch.float64))
        state.running_var.copy_(torch.rand(3, generator=gen, dtype=torch.float64) + 0.5)
    fn, params = _functional(state, lambda s, x: OF.batchnorm(x, s, mode), ['weight', 'bias'], 1)
    return fn, (_randn(gen, 4, 3, 3, 3),) + params, False


def _softplus_case(gen) -> Case:
    return OF.softplus, (_randn(gen, 4, 6, scale=8.0),), False


def _relu_case(gen) -> Case:
    return OF.relu, (_spread(gen, 4, 6),), False


def _dense_case(gen) -> Case:
    return OF.dense, (_randn(gen, 3, 5), _randn(gen, 4, 5), _randn(gen, 4)), False


def _random_graph(gen, n, dtype=torch.float64):
    graph = build_graph(random_viewpoints(n, _seed(gen)), 60.0)
    return torch.as_tensor(graph.normalized, dtype=dtype)


def _gcn_case(gen) -> Case:
    stack = GraphConvStack((6, 5, 4, 3, 2, 1), seed=_seed(gen)).double().train()
    adjacency = _random_graph(gen, 5)
    names = [f'layers.{i}.weight' for i in range(len(stack.layers))]
    fn, params = _functional(stack, lambda s, x: s(x, adjacency), names, 1)
    return fn, (_randn(gen, 5, 6),) + params, False


def _toy_network_case(gen) -> Case:
    """Three weight layers: conv -> BN -> ReLU -> max-pool -> conv -> avg-pool -> dense."""
    specs = [conv(3, 4), BATCHNORM, RELU, maxpool(2), conv(3, 3), GLOBAL_AVGPOOL, dense(2)]
    net = Network(specs, (2, 6, 6), seed=_seed(gen)).double().train()
    names = [n for n, _ in net.named_parameters()]
    fn, params = _functional(net, lambda s, x: s(x), names, 1)
    return fn, (_randn(gen, 3, 2, 6, 6),) + params, True


def _bilinear_case(gen) -> Case:
    return bilinear_pool, (_randn(gen, 2, 3, 2, 3), _randn(gen, 2, 2, 2, 3)), False


def _regress_case(gen) -> Case:
    model = VGCN(ModelConfig(viewport_size=32, erp_height=32, width_divisor=32)).double()
    fn, params = _functional(model, lambda m, ql, qg: m.regress(ql, qg),
                             ['regressor.weight', 'regressor.bias'], 2)
    return fn, (_randn(gen, 4), _randn(gen, 4)) + params, False


def _vgcn_case(gen) -> Case:
    """Composed training loss of a tiny VGCN on two images."""
    model = VGCN(ModelConfig(viewport_size=32, erp_height=32, width_divisor=16, seed=_seed(gen))).double().train()
    counts = [3, 2]
    batch = Batch(
        viewports=torch.randn(sum(counts), 3, 32, 32, generator=gen, dtype=torch.float64),
        adjacency=block_adjacency([_random_graph(gen, n) for n in counts]),
        counts=counts,
        erps=torch.randn(2, 3, 32, 64, generator=gen, dtype=torch.float64),
        mos=torch.rand(2, generator=gen, dtype=torch.float64) * 10,
    )

    # first and last parameter tensor of every sub-network
    names = []
    for sub in ('descriptor', 'gcn', 'scnn', 'vgg', 'global_head', 'regressor'):
        own = [f'{sub}.{n}' for n, _ in getattr(model, sub).named_parameters()]
        names += own[:1] if len(own) == 1 else [own[0], own[-1]]

    fn, params = _functional(model, lambda m: F.mse_loss(m(batch)[0], batch.mos), names, 0)
    return fn, params, True


GRADCHECK_CASES: Dict[str, Callable[[torch.Generator], Case]] = {
    'conv2d': _conv_case,
    'maxpool2d': _maxpool_case,
    'batchnorm-train': lambda gen: _batchnorm_case(gen, 'train'),
    'batchnorm-eval': lambda gen: _batchnorm_case(gen, 'eval'),
    'softplus': _softplus_case,
    'relu': _relu_case,
    'dense': _dense_case,
    'gcn_forward': _gcn_case,
    'toy-network': _toy_network_case,
    'bilinear_pool': _bilinear_case,
    'regress': _regress_case,
    'vgcn-loss': _vgcn_case,
}


def check_case(name: str, instances: int = INSTANCES, seed: int = 0) -> GradcheckResult:
    build = GRADCHECK_CASES[name]
    worst, all_ok = 0.0, True
    for i in range(instances):
        gen = torch.Generator().manual_seed(seed * 100003 + i)
        fn, inputs, fast_mode = build(gen)
        ok, error = gradient_check(fn, inputs, fast_mode, gen)
        all_ok = all_ok and ok
        worst = max(worst, error) if np.isfinite(error) else float('inf')
    result = GradcheckResult(name, instances, worst, torch_passed=all_ok)
    logger.info("%-16s max relative error %.2e over %d instances: %s",
                name, worst, instances, 'ok' if result.passed else 'FAILED')
    return result


def run_suite(names: Optional[Sequence[str]] = None,
              instances: int = INSTANCES,
              seed: int = 0) -> List[GradcheckResult]:
    """Run the selected cases (all by default)."""
    return [check_case(name, instances, seed) for name in (names or list(GRADCHECK_CASES))]
