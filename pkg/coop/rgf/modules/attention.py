"""
Radian-glue attention: fuse camera feature columns into a LiDAR BEV map.

A camera's field of view is re-expressed as a polar grid sector in the BEV frame.
The BEV is bilinearly sampled on that sector (one sector column per camera
column, h radial bins), every sector column attends only to the matching camera
column, and the attended result is splatted back onto the Cartesian grid and
added to the original map.
"""

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Tuple

import numpy as np
import torch
from einops import rearrange
from torch import nn

from ..errors import ShapeError
from ..geometry import (
    IMAGE_COLUMN_0_AT_LEFT,
    BevSpec,
    CameraRig,
    GridSectorConfig,
    Transform2,
    build_sector,
    camera_origin_in_target,
    fov_span_in_target,
    max_radius,
    sector_coverage,
    world_to_grid,
)
from .tensor_ops import bilinear_sample_2d, bilinear_splat_2d, dropout, linear_forward, record_macs, softmax


logpy = logging.getLogger(__name__)

PE_VARIANTS = ("none", "learnable", "depth_height")
SPLAT_WEIGHT_EPS = 1e-8


def init_(tensor, generator=None):
    dim = tensor.shape[0]
    std = 1 / math.sqrt(dim)
    with torch.no_grad():
        tensor.uniform_(-std, std, generator=generator)
    return tensor


class CameraView(NamedTuple):
    """One camera's features plus where it sits relative to the BEV being fused."""

    camera_id: Tuple[int, int]
    features: torch.Tensor
    transform: Transform2
    rig: CameraRig


@dataclass
class SubBevMap:
    data: torch.Tensor
    cfg: GridSectorConfig


class RGAttn(nn.Module):
    """
    Parameters of one radian-glue attention block.

    Projections are stored input-major (Din x Dout) so tokens are mapped with x @ w + b.
    `h` is the number of radial bins and `h2` the camera height; both fix the shape of
    the learnable positional tensors, which are shared across all columns.
    """

    def __init__(
        self,
        c1,
        c2,
        h,
        h2,
        d_model=None,
        heads=8,
        pe="learnable",
        dropout=0.1,
        generator=None,
        dtype=torch.float32,
    ):
        super().__init__()
        d_model = c1 if d_model is None else d_model
        if d_model % heads != 0:
            raise ShapeError(f"d_model {d_model} is not divisible by {heads} heads")
        if pe not in PE_VARIANTS:
            raise ShapeError(f"unknown positional encoding {pe!r}, expected one of {PE_VARIANTS}")
        self.c1, self.c2, self.h, self.h2 = c1, c2, h, h2
        self.d_model = d_model
        self.heads = heads
        self.pe = pe
        self.dropout_rate = dropout

        def param(*shape):
            return nn.Parameter(torch.zeros(*shape, dtype=dtype))

        self.wq, self.bq = param(c1, d_model), param(d_model)
        self.wk, self.bk = param(c2, d_model), param(d_model)
        self.wv, self.bv = param(c2, d_model), param(d_model)
        self.wo, self.bo = param(d_model, c1), param(c1)
        if pe == "learnable":
            self.pos_bev = param(h, c1)
            self.pos_cam = param(h2, c2)
        elif pe == "depth_height":
            self.pe_scale_bev = nn.Parameter(torch.ones((), dtype=dtype))
            self.pe_scale_cam = nn.Parameter(torch.ones((), dtype=dtype))
        self.reset_parameters(generator)

    def reset_parameters(self, generator=None):
        for w in (self.wq, self.wk, self.wv, self.wo):
            init_(w, generator)
        with torch.no_grad():
            for b in (self.bq, self.bk, self.bv, self.bo):
                b.zero_()
            if self.pe == "learnable":
                self.pos_bev.normal_(0.0, 0.02, generator=generator)
                self.pos_cam.normal_(0.0, 0.02, generator=generator)

    def zero_value_path(self):
        """Zero wv/wo and their biases: the block then leaves any BEV untouched."""
        with torch.no_grad():
            for p in (self.wv, self.bv, self.wo, self.bo):
                p.zero_()
        return self

    def forward(self, bev, spec, views, training=False, generator=None):
        return rg_attn_multi(bev, spec, views, self, training=training, generator=generator)


def positional_encoding(feature, role, params: RGAttn):
    c, h, _ = feature.shape
    if params.pe == "none":
        return feature
    if params.pe == "learnable":
        pos = params.pos_bev if role == "query" else params.pos_cam
        if tuple(pos.shape) != (h, c):
            raise ShapeError(f"learnable {role} encoding has shape {tuple(pos.shape)}, feature column is {(h, c)}")
        return feature + pos.t()[:, :, None]
    scale = params.pe_scale_bev if role == "query" else params.pe_scale_cam
    # radial index for BEV sector rows, image row for camera rows, both normalized to [0, 1)
    index = torch.arange(h, dtype=feature.dtype) / h
    return feature + scale * index[None, :, None]


def pl_process(feature, role, params: RGAttn):
    """
    Positional embedding, reshape to per-column token sequences, linear projection.

    Args:
        feature: C x H x W map (a sampled sub-BEV for role "query", camera features otherwise).
        role: "query", "key" or "value".

    Returns:
        Tokens of shape W x H x d_model.
    """
    if feature.ndim != 3:
        raise ShapeError(f"pl_process expects C x H x W, got {tuple(feature.shape)}")
    weights = {
        "query": (params.wq, params.bq),
        "key": (params.wk, params.bk),
        "value": (params.wv, params.bv),
    }
    if role not in weights:
        raise ShapeError(f"unknown PL role {role!r}")
    w, b = weights[role]
    _, h, width = feature.shape
    feature = positional_encoding(feature, role, params)
    tokens = rearrange(feature, "c h w -> (w h) c")
    tokens = linear_forward(tokens, w, b, name=f"proj_{role}")
    return tokens.reshape(width, h, -1)


def column_mha(q, k, v, heads, dropout_rate=0.0, training=False, generator=None):
    """
    Multi-head scaled dot-product attention restricted to each column.

    Args:
        q: W x Hq x d queries; k, v: W x Hk x d keys and values.

    Returns:
        W x Hq x d; query tokens of column w only ever see keys of column w.
    """
    if q.ndim != 3 or k.ndim != 3 or v.ndim != 3:
        raise ShapeError("column_mha expects 3-d q, k, v")
    if q.shape[0] != k.shape[0] or k.shape != v.shape or q.shape[2] != k.shape[2]:
        raise ShapeError(f"column_mha shape mismatch q={tuple(q.shape)} k={tuple(k.shape)} v={tuple(v.shape)}")
    width, hq, d = q.shape
    hk = k.shape[1]
    if d % heads != 0:
        raise ShapeError(f"token width {d} is not divisible by {heads} heads")
    q, k, v = map(lambda t: rearrange(t, "w n (m e) -> w m n e", m=heads), (q, k, v))
    scale = 1.0 / math.sqrt(d // heads)
    logits = torch.einsum("wmqe,wmke->wmqk", q, k) * scale
    attn = softmax(logits, axis=-1)
    attn = dropout(attn, dropout_rate, generator=generator, training=training)
    out = torch.einsum("wmqk,wmke->wmqe", attn, v)
    record_macs("column_attention", 2 * width * hq * hk * d)
    return rearrange(out, "w m n e -> w n (m e)")


def attention_op_count(h1, h2, w2, d, heads, c1=None, c2=None):
    """
    Multiply-accumulates of one radian-glue attention call: the per-column attention
    W2 * heads * (2 * H1 * H2 * d/heads) plus the q/k/v/output projections.
    Linear in W2 for fixed heights and widths.
    """
    c1 = d if c1 is None else c1
    c2 = d if c2 is None else c2
    attention = w2 * heads * (2 * h1 * h2 * (d // heads))
    projections = h1 * w2 * c1 * d + 2 * h2 * w2 * c2 * d + h1 * w2 * d * c1
    return attention + projections


def sector_config(spec: BevSpec, t_ij: Transform2, rig: CameraRig, w2, h):
    origin = camera_origin_in_target(t_ij, rig.mount)
    theta_start, theta_span = fov_span_in_target(t_ij, rig.mount, rig.fov)
    cfg, _ = build_sector(origin, theta_start, theta_span, w2, max_radius(spec), h)
    return cfg


def _sector_grid_coords(spec: BevSpec, cfg: GridSectorConfig, dtype):
    _, points = build_sector(cfg.origin, cfg.theta_start, cfg.theta_span, cfg.w2, cfg.radius, cfg.h)
    return torch.from_numpy(np.ascontiguousarray(world_to_grid(spec, points).reshape(-1, 2))).to(dtype)


def grid_sector_sample(bev, spec: BevSpec, cfg: GridSectorConfig) -> SubBevMap:
    """Bilinearly sample a C1 x H1 x W1 BEV on the polar sector, giving C1 x h x W2."""
    coords = _sector_grid_coords(spec, cfg, bev.dtype)
    samples = bilinear_sample_2d(bev, coords)
    return SubBevMap(samples.reshape(bev.shape[0], cfg.h, cfg.w2), cfg)


def grid_sector_inverse(sub: SubBevMap, spec: BevSpec, out_shape):
    """
    Splat sector values back onto the Cartesian grid and normalize by the accumulated
    bilinear weight; cells the sector never touches stay zero.
    """
    channels, height, width = out_shape
    if tuple(sub.data.shape) != (channels, sub.cfg.h, sub.cfg.w2):
        raise ShapeError(f"sub-BEV {tuple(sub.data.shape)} does not match its sector config")
    coords = _sector_grid_coords(spec, sub.cfg, sub.data.dtype)
    accum, weight = bilinear_splat_2d(sub.data.reshape(channels, -1), coords, (height, width))
    covered = weight > SPLAT_WEIGHT_EPS
    safe = torch.where(covered, weight, torch.ones_like(weight))
    return torch.where(covered[None], accum / safe[None], torch.zeros_like(accum))


def align_camera_columns(cam):
    """Reorder camera columns so column w matches sector column w (increasing angle)."""
    return torch.flip(cam, dims=[2]) if IMAGE_COLUMN_0_AT_LEFT else cam


def sector_fusion(sub: SubBevMap, cam, params: RGAttn, training=False, generator=None):
    """
    Column-wise attention of sampled BEV columns against camera columns, projected back
    to C1. Returns the C1 x h x W2 sector-space update, before inversion.
    """
    cam = align_camera_columns(cam)
    if cam.shape[2] != sub.data.shape[2]:
        raise ShapeError(f"camera width {cam.shape[2]} does not match sector width {sub.data.shape[2]}")
    q = pl_process(sub.data, "query", params)
    k = pl_process(cam, "key", params)
    v = pl_process(cam, "value", params)
    attended = column_mha(q, k, v, params.heads, params.dropout_rate, training=training, generator=generator)
    width, h, _ = attended.shape
    out = linear_forward(attended.reshape(width * h, -1), params.wo, params.bo, name="proj_out")
    return rearrange(out.reshape(width, h, -1), "w h c -> c h w")


def rg_attn_delta(bev, spec: BevSpec, cam, t_ij: Transform2, rig: CameraRig, params: RGAttn, training=False, generator=None):
    if bev.ndim != 3 or tuple(bev.shape[1:]) != spec.shape:
        raise ShapeError(f"BEV {tuple(bev.shape)} does not match grid {spec.shape}")
    if cam.ndim != 3 or cam.shape[0] != params.c2:
        raise ShapeError(f"camera features {tuple(cam.shape)} do not have {params.c2} channels")
    cfg = sector_config(spec, t_ij, rig, cam.shape[2], params.h)
    if logpy.isEnabledFor(logging.DEBUG):
        logpy.debug(f"sector origin={cfg.origin} start={cfg.theta_start:.3f} coverage={sector_coverage(cfg, spec):.2f}")
    sub = grid_sector_sample(bev, spec, cfg)
    fused = sector_fusion(sub, cam, params, training=training, generator=generator)
    return grid_sector_inverse(SubBevMap(fused, cfg), spec, tuple(bev.shape))


def rg_attn_apply(bev, spec: BevSpec, cam, t_ij: Transform2, rig: CameraRig, params: RGAttn, training=False, generator=None):
    """Fuse one camera into a BEV map; the output has the BEV's shape."""
    return bev + rg_attn_delta(bev, spec, cam, t_ij, rig, params, training=training, generator=generator)


def rg_attn_multi(bev, spec: BevSpec, views, params: RGAttn, training=False, generator=None):
    """
    Fuse any number of cameras. Every camera attends to the same input BEV; the deltas
    are summed in camera-id order and added once, so the result does not depend on the
    order of `views`.
    """
    views = sorted(views, key=lambda view: view.camera_id)
    if not views:
        return bev
    total = None
    for view in views:
        delta = rg_attn_delta(bev, spec, view.features, view.transform, view.rig, params, training, generator)
        total = delta if total is None else total + delta
    return bev + total
