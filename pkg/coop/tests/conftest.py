import pytest
import torch

from rgf.gradcheck_suites import tiny_agents
from rgf.models.architectures import build_model, preset_dims
from rgf.util import torch_generator


@pytest.fixture
def tiny_dims():
    return preset_dims("tiny", dropout=0.0)


@pytest.fixture
def spec(tiny_dims):
    return tiny_dims.bev_spec()


@pytest.fixture
def generator():
    return torch.Generator().manual_seed(0)


@pytest.fixture
def make_agents(tiny_dims):
    def make(modalities=("LC", "LC"), seed=0):
        return tiny_agents(tiny_dims, seed, modalities)

    return make


@pytest.fixture
def make_model(tiny_dims):
    def make(tag, seed=0, **overrides):
        dims = preset_dims("tiny", **{"dropout": 0.0, **overrides}) if overrides else tiny_dims
        return build_model(tag, dims, generator=torch_generator(seed, "init"), dtype=torch.float64)

    return make
