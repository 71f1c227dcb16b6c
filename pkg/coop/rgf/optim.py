import logging
from dataclasses import dataclass, field
from typing import List

import torch

from .errors import ConfigError, DivergenceError
from .util import get_obj_from_str


logpy = logging.getLogger(__name__)

OPTIMIZERS = {
    "sgd": "torch.optim.SGD",
    "adam": "torch.optim.Adam",
}


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    learning_rate: float = 0.002
    betas: List[float] = field(default_factory=lambda: [0.9, 0.999])
    eps: float = 1e-8
    # epochs at which the learning rate is multiplied by gamma
    milestones: List[int] = field(default_factory=list)
    gamma: float = 0.1

    def validate(self):
        if self.kind not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer kind {self.kind!r}")
        if not self.learning_rate >= 0.0:
            raise ConfigError(f"learning_rate must be non-negative, got {self.learning_rate}")
        return self


class ParameterOptimizer:
    """
    Wraps a torch optimizer and a multi-step schedule over named parameters.

    `step()` refuses non-finite gradients (naming the parameter), applies the update and
    zeroes every gradient. `end_epoch()` advances the learning-rate schedule.
    """

    def __init__(self, named_parameters, config: OptimizerConfig):
        config = config.validate() if hasattr(config, "validate") else config
        self.config = config
        self.named = [(n, p) for n, p in named_parameters if p.requires_grad]
        params = [p for _, p in self.named]
        extra = {"betas": tuple(config.betas), "eps": config.eps} if config.kind == "adam" else {}
        logpy.info(f"loading >>> {OPTIMIZERS[config.kind]} <<< optimizer from config")
        self.optimizer = get_obj_from_str(OPTIMIZERS[config.kind])(params, lr=config.learning_rate, **extra)
        self.scheduler = torch.optim.lr_scheduler.MultiStepLR(
            self.optimizer, milestones=list(config.milestones), gamma=config.gamma
        )
        logpy.debug(f"{config.kind} optimizer over {len(params)} tensors, lr={config.learning_rate}")

    def check_gradients(self):
        for name, p in self.named:
            if p.grad is not None and not torch.isfinite(p.grad).all():
                raise DivergenceError(f"non-finite gradient in parameter {name}", parameter=name)

    def step(self):
        self.check_gradients()
        self.optimizer.step()
        self.zero_grad()

    def zero_grad(self):
        for _, p in self.named:
            if p.grad is not None:
                p.grad.zero_()

    def end_epoch(self):
        self.scheduler.step()

    @property
    def learning_rate(self):
        return self.optimizer.param_groups[0]["lr"]


def optimizer_step(optimizer: ParameterOptimizer):
    optimizer.step()
    return [p for _, p in optimizer.named]

