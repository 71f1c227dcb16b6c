"""
Finite-difference suites for every differentiable operation, at tiny dims and 64-bit.

Each suite takes a seed and returns the maximum relative gradient error. Losses are
random-weighted sums so that no gradient vanishes by symmetry.
"""

import math

import numpy as np
import torch

from .geometry import CameraRig, Pose2, Transform2
from .gradcheck import finite_diff_check
from .models.agents import AgentObservation, Modality
from .models.architectures import build_model, preset_dims
from .evaluation.boxes import DetectionBox
from .modules.attention import RGAttn, column_mha, rg_attn_apply
from .modules.head import build_targets, detection_loss
from .modules.pyramid import PyramidFusion, WarpedAgentMap, pyramid_fuse
from .modules.tensor_ops import linear_forward, softmax
from .util import numpy_rng, torch_generator


DTYPE = torch.float64
EPSILON = 1e-6
# multiple of the central-difference rounding error below which a discrepancy is not judged
NOISE_FACTOR = 1e3


def _leaf(generator, *shape):
    return torch.randn(*shape, generator=generator, dtype=DTYPE).requires_grad_()


def _weights(generator, shape):
    return torch.randn(*shape, generator=generator, dtype=DTYPE)


def _check(fn, params):
    return finite_diff_check(fn, params, epsilon=EPSILON, noise_factor=NOISE_FACTOR)


def linear_suite(seed):
    g = torch_generator(seed, "init")
    x, w, b = _leaf(g, 3, 2), _leaf(g, 2, 4), _leaf(g, 4)
    r = _weights(g, (3, 4))
    return _check(lambda: (linear_forward(x, w, b) * r).sum(), [x, w, b])


def softmax_loss_suite(seed):
    g = torch_generator(seed, "init")
    logits = _leaf(g, 4, 5)
    labels = torch.randint(0, 5, (4,), generator=g)
    onehot = torch.nn.functional.one_hot(labels, 5).to(DTYPE)
    return _check(lambda: -(torch.log(softmax(logits, axis=1)) * onehot).sum(), [logits])


def column_mha_suite(seed):
    g = torch_generator(seed, "init")
    q, k, v = _leaf(g, 3, 4, 8), _leaf(g, 3, 5, 8), _leaf(g, 3, 5, 8)
    r = _weights(g, (3, 4, 8))
    return _check(lambda: (column_mha(q, k, v, heads=2) * r).sum(), [q, k, v])


def _tiny_rig(dims, yaw=0.0):
    return CameraRig(Transform2.from_yaw(yaw), math.radians(100.0), dims.c2, dims.h2, dims.w2)


def rg_attn_suite(seed):
    dims = preset_dims("tiny")
    spec = dims.bev_spec()
    g = torch_generator(seed, "init")
    block = RGAttn(dims.c1, dims.c2, spec.h1, dims.h2, heads=dims.heads, pe="learnable", generator=g, dtype=DTYPE)
    bev, cam = _leaf(g, dims.c1, spec.h1, spec.w1), _leaf(g, dims.c2, dims.h2, dims.w2)
    r = _weights(g, (dims.c1, spec.h1, spec.w1))
    t = Transform2.from_yaw(0.3, (0.5, -0.25))
    params = [bev, cam, *block.parameters()]
    return _check(lambda: (rg_attn_apply(bev, spec, cam, t, _tiny_rig(dims), block) * r).sum(), params)


def pyramid_suite(seed):
    dims = preset_dims("tiny")
    h1, w1 = dims.bev_spec().shape
    g = torch_generator(seed, "init")
    fusion = PyramidFusion(dims.c1, dims.pyramid_factors, generator=g, dtype=DTYPE)
    features = [_leaf(g, dims.c1, h1, w1) for _ in range(3)]
    validity = [torch.rand(h1, w1, generator=g, dtype=DTYPE) for _ in range(3)]
    r = _weights(g, (dims.c1, h1, w1))

    def loss():
        maps = [WarpedAgentMap(f, v, i) for i, (f, v) in enumerate(zip(features, validity))]
        return (pyramid_fuse(maps, fusion) * r).sum()

    return _check(loss, [*features, *fusion.parameters()])


def tiny_agents(dims, seed, modalities=("LC", "LC")):
    """Random point clouds and rasters for agents placed close to each other."""
    rng = numpy_rng(seed, "scene")
    g = torch_generator(seed, "camera")
    agents = []
    for agent_id, token in enumerate(modalities):
        modality = Modality.parse(token)
        pose = Pose2(0.0, 0.0, 0.0) if agent_id == 0 else Pose2(*rng.uniform(-1.0, 1.0, 2), rng.uniform(-0.5, 0.5))
        points = None
        if modality.has_lidar:
            xy = rng.uniform([dims.x_min, dims.y_min], [dims.x_max, dims.y_max], (40, 2))
            points = np.concatenate([xy, rng.uniform(0.0, 2.0, (40, 1)), rng.uniform(0.2, 1.0, (40, 1))], axis=1)
        rigs = [_tiny_rig(dims, yaw) for yaw in (0.0, math.pi)]
        rasters = [torch.rand(dims.craw, dims.h2, dims.w2, generator=g, dtype=DTYPE) for _ in rigs] if modality.has_camera else []
        agents.append(AgentObservation(agent_id, pose, modality, points, rasters, rigs))
    return agents


def pipeline_suite(architecture):
    def suite(seed):
        dims = preset_dims("tiny", dropout=0.0)
        model = build_model(architecture, dims, generator=torch_generator(seed, "init"), dtype=DTYPE)
        agents = tiny_agents(dims, seed)
        target, fg = build_targets([DetectionBox(0.3, -0.2, 1.8, 3.0, 0.4)], dims.bev_spec(), dtype=DTYPE)

        def loss():
            total, _ = detection_loss(model(agents, 0), target, fg, dims.lambda_reg, dims.lambda_dir, dims.pos_weight)
            return total

        return _check(loss, list(model.parameters()))

    return suite


SUITES = {
    "linear": linear_suite,
    "softmax_loss": softmax_loss_suite,
    "column_mha": column_mha_suite,
    "rg_attn_apply": rg_attn_suite,
    "pyramid_fuse": pyramid_suite,
    "pipeline_ptp": pipeline_suite("ptp"),
    "pipeline_coscoco": pipeline_suite("coscoco"),
    "pipeline_prgaf": pipeline_suite("prgaf"),
}
