from typing import Dict, List, Sequence, Tuple

import torch
from torch import nn

from omniqa.utils.errors import NumericError

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


class ParamGroup:
    def __init__(self,
                 name: str,
                 module: nn.Module,
                 lr: float,
                 step_size: int = 0,
                 gamma: float = 1.0):
        """
        Parameters trained at a common learning rate.

        :param name: Prefix used in error messages and logs.
        :param module: Module whose parameters form the group.
        :param lr: Initial learning rate.
        :param step_size: Multiply the rate by `gamma` every `step_size`
                          epochs (0 keeps it constant).
        :param gamma: Decay factor.
        """
        assert lr > 0, f"learning rate of {name} must be positive"
        self.name = name
        self.module = module
        self.lr = lr
        self.step_size = step_size
        self.gamma = gamma

    def factor(self, epoch: int) -> float:
        if self.step_size <= 0:
            return 1.0
        return self.gamma ** (epoch // self.step_size)


class AdamOptimizer:
    def __init__(self, groups: Sequence[ParamGroup]):
        """
        Bias-corrected Adam (beta1 = 0.9, beta2 = 0.999, eps = 1e-8) over
        several parameter groups with their own step schedules. Every step
        first checks the gradients and names the first non-finite one.
        """
        self.groups = list(groups)
        self.named_params: List[Tuple[str, nn.Parameter]] = []
        torch_groups = []
        for group in self.groups:
            params = []
            for name, p in group.module.named_parameters():
                self.named_params.append((f"{group.name}.{name}", p))
                params.append(p)
            torch_groups.append({'params': params, 'lr': group.lr})

        self.optimizer = torch.optim.Adam(torch_groups, betas=ADAM_BETAS, eps=ADAM_EPS)
        self.scheduler = torch.optim.lr_scheduler.LambdaLR(
            self.optimizer, lr_lambda=[g.factor for g in self.groups])

    def zero_grad(self):
        self.optimizer.zero_grad(set_to_none=True)

    def step(self):
        """One Adam update (the `adam_step` operation)."""
        for name, p in self.named_params:
            if p.grad is not None and not torch.isfinite(p.grad).all():
                raise NumericError(f"non-finite gradient for parameter {name}")
        self.optimizer.step()

    def end_epoch(self):
        self.scheduler.step()

    def learning_rates(self) -> Dict[str, float]:
        return {g.name: pg['lr'] for g, pg in zip(self.groups, self.optimizer.param_groups)}

    def state(self, name: str) -> Dict[str, torch.Tensor]:
        """Adam moments and step count of one named parameter."""
        for pname, p in self.named_params:
            if pname == name:
                return self.optimizer.state.get(p, {})
        raise KeyError(name)
