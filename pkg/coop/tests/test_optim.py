import math

import pytest
import torch
from torch import nn

from rgf.errors import ConfigError, DivergenceError
from rgf.optim import OptimizerConfig, ParameterOptimizer, optimizer_step


def _param(values):
    return nn.Parameter(torch.tensor(values, dtype=torch.float64))


def test_sgd_zero_grad_keeps_value():
    p = _param([1.0, -2.0])
    opt = ParameterOptimizer([("p", p)], OptimizerConfig(kind="sgd", learning_rate=0.1))
    p.grad = torch.zeros_like(p)
    optimizer_step(opt)
    assert torch.equal(p.detach(), torch.tensor([1.0, -2.0], dtype=torch.float64))


def test_sgd_unit_gradient():
    p = _param([1.0, -2.0])
    opt = ParameterOptimizer([("p", p)], OptimizerConfig(kind="sgd", learning_rate=0.1))
    p.grad = torch.ones_like(p)
    optimizer_step(opt)
    assert torch.allclose(p.detach(), torch.tensor([0.9, -2.1], dtype=torch.float64), atol=1e-15)


def test_gradients_zeroed_after_step():
    p = _param([1.0])
    opt = ParameterOptimizer([("p", p)], OptimizerConfig(kind="sgd", learning_rate=0.1))
    p.grad = torch.ones_like(p)
    opt.step()
    assert torch.equal(p.grad, torch.zeros_like(p))


def test_adam_first_step_matches_formula():
    g = torch.tensor([0.3, -2.0, 1e-3], dtype=torch.float64)
    start = torch.tensor([0.5, 0.1, -1.0], dtype=torch.float64)
    cfg = OptimizerConfig(kind="adam", learning_rate=0.01, betas=[0.9, 0.999], eps=1e-8)
    p = nn.Parameter(start.clone())
    opt = ParameterOptimizer([("p", p)], cfg)
    p.grad = g.clone()
    opt.step()

    b1, b2 = cfg.betas
    m = (1 - b1) * g
    v = (1 - b2) * g * g
    m_hat = m / (1 - b1)
    denom = torch.sqrt(v) / math.sqrt(1 - b2) + cfg.eps
    expected = start - cfg.learning_rate * m_hat / denom
    assert torch.allclose(p.detach(), expected, atol=1e-12, rtol=0)


def test_non_finite_gradient_names_parameter():
    good, bad = _param([1.0]), _param([2.0])
    opt = ParameterOptimizer([("good", good), ("head.w", bad)], OptimizerConfig(kind="sgd", learning_rate=0.1))
    good.grad = torch.ones_like(good)
    bad.grad = torch.tensor([float("nan")], dtype=torch.float64)
    with pytest.raises(DivergenceError) as info:
        opt.step()
    assert info.value.parameter == "head.w"
    assert "head.w" in str(info.value)


def test_frozen_parameters_are_skipped():
    frozen = nn.Parameter(torch.ones(1), requires_grad=False)
    opt = ParameterOptimizer([("frozen", frozen), ("p", _param([0.0]))], OptimizerConfig())
    assert [name for name, _ in opt.named] == ["p"]


def test_multistep_schedule():
    opt = ParameterOptimizer([("p", _param([0.0]))], OptimizerConfig(kind="sgd", learning_rate=1.0, milestones=[2], gamma=0.1))
    rates = []
    for _ in range(4):
        rates.append(opt.learning_rate)
        opt.end_epoch()
    assert rates == pytest.approx([1.0, 1.0, 0.1, 0.1])


@pytest.mark.parametrize("cfg", [OptimizerConfig(kind="rmsprop"), OptimizerConfig(learning_rate=-1.0)])
def test_invalid_config(cfg):
    with pytest.raises(ConfigError):
        cfg.validate()
