"""
Multi-scale, foreground-aware fusion of BEV maps coming from several agents.

Every agent map is first warped into the ego frame. At each pyramid level a 1x1
occupancy head scores every cell, the scores (biased by the log of warp validity)
are soft-maxed across agents, and the agents are blended with those weights. The
blended levels are mixed, upsampled to full resolution, concatenated and mixed
back to C1 channels.
"""

from dataclasses import dataclass
from typing import List

import numpy as np
import torch
import torch.nn.functional as F
from einops import rearrange
from torch import nn

from ..errors import ShapeError
from ..geometry import BevSpec, Transform2, world_to_grid
from .attention import init_
from .tensor_ops import bilinear_sample_2d, linear_forward, softmax


VALIDITY_EPS = 1e-6


@dataclass
class WarpedAgentMap:
    feature: torch.Tensor
    validity: torch.Tensor
    agent_id: int = 0


def warp_to_ego(feature, spec: BevSpec, t_source_to_ego: Transform2, agent_id=0) -> WarpedAgentMap:
    """
    Inverse warp: every ego cell center is mapped back into the source frame and the
    source map is sampled there bilinearly with zero padding. Validity is the sum of
    in-bounds bilinear weights (1 inside the source grid, falling to 0 outside).
    """
    centers = spec.cell_centers()
    source_points = t_source_to_ego.inverse().apply(centers)
    coords = torch.from_numpy(np.ascontiguousarray(world_to_grid(spec, source_points).reshape(-1, 2)))
    coords = coords.to(feature.dtype)
    h1, w1 = spec.shape
    warped = bilinear_sample_2d(feature, coords).reshape(feature.shape[0], h1, w1)
    ones = feature.new_ones(1, *feature.shape[1:])
    validity = bilinear_sample_2d(ones, coords).reshape(h1, w1)
    return WarpedAgentMap(warped, validity, agent_id)


def downsample2(feature):
    """2x2 mean pooling over the last two axes."""
    if feature.shape[-1] % 2 or feature.shape[-2] % 2:
        raise ShapeError(f"downsample2 needs even extents, got {tuple(feature.shape[-2:])}")
    if feature.ndim == 2:
        return F.avg_pool2d(feature[None, None], 2)[0, 0]
    return F.avg_pool2d(feature[None], 2)[0]


def downsample(feature, factor):
    while factor > 1:
        feature = downsample2(feature)
        factor //= 2
    return feature


def upsample_to(feature, shape):
    if tuple(feature.shape[-2:]) == tuple(shape):
        return feature
    return F.interpolate(feature[None], size=tuple(shape), mode="bilinear", align_corners=False)[0]


def cellwise_linear(feature, w, b):
    c, h, width = feature.shape
    out = linear_forward(rearrange(feature, "c h w -> (h w) c"), w, b, name="cellwise")
    return rearrange(out, "(h w) c -> c h w", h=h, w=width)


def occupancy_weights(maps: List[WarpedAgentMap], head_w, head_b):
    """
    Per-cell soft-max over agents of occupancy score + log(validity + eps).

    An agent whose validity is exactly zero at a cell is left out of that cell's
    soft-max, so it gets weight 0 there; cells no agent covers keep the plain formula.

    Returns:
        Tensor A x H x W of weights summing to one over agents at every cell.
    """
    if not maps:
        raise ShapeError("occupancy_weights needs at least one agent map")
    logits = []
    for m in maps:
        score = cellwise_linear(m.feature, head_w, head_b)[0]
        logits.append(score + torch.log(m.validity + VALIDITY_EPS))
    validity = torch.stack([m.validity for m in maps])
    uncovered = (validity <= 0) & (validity > 0).any(dim=0, keepdim=True)
    return softmax(torch.stack(logits).masked_fill(uncovered, float("-inf")), axis=0)


class PyramidFusion(nn.Module):
    """
    Args:
        c1: channel count of the BEV maps.
        factors: down-sampling factor of every level, strictly increasing (1, 2, 4 by default,
            i.e. widths W1, W1/2, W1/4).
    """

    def __init__(self, c1, factors=(1, 2, 4), generator=None, dtype=torch.float32):
        super().__init__()
        factors = [int(f) for f in factors]
        if any(b <= a for a, b in zip(factors, factors[1:])) or factors[0] < 1:
            raise ShapeError(f"pyramid factors must be strictly increasing, got {factors}")
        self.c1 = c1
        self.factors = factors

        def param(*shape):
            return nn.Parameter(torch.zeros(*shape, dtype=dtype))

        n = len(factors)
        self.occ_w = nn.ParameterList([param(c1, 1) for _ in range(n)])
        self.occ_b = nn.ParameterList([param(1) for _ in range(n)])
        self.mix_w = nn.ParameterList([param(c1, c1) for _ in range(n)])
        self.mix_b = nn.ParameterList([param(c1) for _ in range(n)])
        self.final_w = param(n * c1, c1)
        self.final_b = param(c1)
        self.reset_parameters(generator)

    def reset_parameters(self, generator=None):
        with torch.no_grad():
            for w in self.occ_w:
                init_(w, generator)
            self.init_identity()
            for w in self.mix_w:
                w.add_(init_(torch.empty_like(w), generator), alpha=0.1)

    def init_identity(self):
        """Level mixes become identity and the final mix passes the full-resolution level."""
        with torch.no_grad():
            eye = torch.eye(self.c1, dtype=self.final_w.dtype)
            for w, b in zip(self.mix_w, self.mix_b):
                w.copy_(eye)
                b.zero_()
            self.final_w.zero_()
            self.final_w[: self.c1].copy_(eye)
            self.final_b.zero_()
        return self

    def fuse_level(self, level, maps: List[WarpedAgentMap]):
        maps = sorted(maps, key=lambda m: m.agent_id)
        weights = occupancy_weights(maps, self.occ_w[level], self.occ_b[level])
        features = torch.stack([m.feature for m in maps])
        fused = (weights[:, None] * features).sum(0)
        return cellwise_linear(fused, self.mix_w[level], self.mix_b[level])

    def fuse_levels(self, levels: List[List[WarpedAgentMap]], full_shape):
        """Fuse pre-built per-level agent maps; `levels[i]` is at factor `self.factors[i]`."""
        if len(levels) != len(self.factors):
            raise ShapeError(f"expected {len(self.factors)} pyramid levels, got {len(levels)}")
        fused = [upsample_to(self.fuse_level(i, maps), full_shape) for i, maps in enumerate(levels)]
        return cellwise_linear(torch.cat(fused, dim=0), self.final_w, self.final_b)

    def forward(self, maps: List[WarpedAgentMap]):
        return pyramid_fuse(maps, self)


def pyramid_levels(maps: List[WarpedAgentMap], factors):
    return [
        [WarpedAgentMap(downsample(m.feature, f), downsample(m.validity, f), m.agent_id) for m in maps]
        for f in factors
    ]


def pyramid_fuse(maps: List[WarpedAgentMap], params: PyramidFusion):
    if not maps:
        raise ShapeError("pyramid_fuse needs at least one agent map")
    full_shape = tuple(maps[0].feature.shape[1:])
    for m in maps:
        if m.feature.shape[0] != params.c1 or tuple(m.feature.shape[1:]) != full_shape:
            raise ShapeError(f"agent map {tuple(m.feature.shape)} does not match {(params.c1, *full_shape)}")
    return params.fuse_levels(pyramid_levels(maps, params.factors), full_shape)
