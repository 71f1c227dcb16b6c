"""
Cooperative detection pipelines.

All pipelines share the same components (LiDAR and camera encoders, pyramid fusion,
detection head) and differ in where camera features enter:

- PaintToPuzzle (``ptp``): every agent first fuses its own cameras into its LiDAR BEV,
  then the agents' maps are warped to the ego and pyramid-fused.
- CoSketchCoColor (``coscoco``): LiDAR BEVs of all agents are pyramid-fused first, then
  every camera of every agent is fused onto that shared map.
- PyramidRGAttnFusion (``prgaf``): camera fusion happens inside every pyramid level,
  before the cross-agent aggregation.
- LidarOnly (``lidar``): pyramid fusion of LiDAR maps, cameras ignored.
"""

import logging
import time
from contextlib import contextmanager, nullcontext
from dataclasses import dataclass, field
from typing import List, Optional

import torch
from torch import nn

from ..errors import CapabilityError, ConfigError
from ..geometry import BevSpec, Transform2, relative_transform
from ..modules.attention import PE_VARIANTS, CameraView, RGAttn, rg_attn_multi
from ..modules.encoders import CameraEncoder, LidarEncoder, camera_encode, lidar_encode
from ..modules.head import DetectHead, detect_head
from ..modules.pyramid import PyramidFusion, downsample, pyramid_fuse, warp_to_ego
from ..util import count_params, instantiate_from_config
from .agents import find_agent


logpy = logging.getLogger(__name__)

ARCHITECTURES = {
    "ptp": "rgf.models.architectures.PaintToPuzzle",
    "coscoco": "rgf.models.architectures.CoSketchCoColor",
    "prgaf": "rgf.models.architectures.PyramidRGAttnFusion",
    "lidar": "rgf.models.architectures.LidarOnly",
}

STAGES = ("encode", "intra_fusion", "warp", "pyramid", "inter_fusion", "head")


@dataclass
class FusionDims:
    c1: int = 16
    c2: int = 8
    h2: int = 36
    w2: int = 64
    craw: int = 4
    x_min: float = -25.6
    x_max: float = 25.6
    y_min: float = -12.8
    y_max: float = 12.8
    cell: float = 0.4
    heads: int = 8
    d_model: Optional[int] = None
    pe: str = "learnable"
    dropout: float = 0.1
    pyramid_factors: List[int] = field(default_factory=lambda: [1, 2, 4])
    lambda_reg: float = 1.0
    lambda_dir: float = 1.0
    pos_weight: float = 1.0

    def bev_spec(self):
        return BevSpec(self.x_min, self.x_max, self.y_min, self.y_max, self.cell)

    @property
    def h1(self):
        return self.bev_spec().h1

    @property
    def w1(self):
        return self.bev_spec().w1

    def validate(self):
        spec = self.bev_spec()
        if self.pe not in PE_VARIANTS:
            raise ConfigError(f"unknown positional encoding {self.pe!r}")
        if (self.d_model or self.c1) % self.heads:
            raise ConfigError(f"d_model {self.d_model or self.c1} is not divisible by {self.heads} heads")
        top = max(self.pyramid_factors)
        for extent in (spec.h1, spec.w1, self.h2, self.w2):
            if extent % top:
                raise ConfigError(f"extent {extent} is not divisible by the coarsest pyramid factor {top}")
        return self


PRESETS = {
    "desk": dict(c1=16, c2=8, h2=36, w2=64, x_min=-25.6, x_max=25.6, y_min=-12.8, y_max=12.8, cell=0.4),
    "full": dict(c1=64, c2=8, h2=144, w2=256, x_min=-102.4, x_max=102.4, y_min=-51.2, y_max=51.2, cell=0.8),
    "tiny": dict(c1=4, c2=3, h2=4, w2=4, x_min=-4.0, x_max=4.0, y_min=-4.0, y_max=4.0, cell=1.0, heads=2),
}


def preset_dims(name, **overrides):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}, expected one of {sorted(PRESETS)}")
    return FusionDims(**{**PRESETS[name], **overrides})


class StageTimer:
    """Accumulates wall time per pipeline stage."""

    def __init__(self):
        self.seconds = {name: 0.0 for name in STAGES}

    @contextmanager
    def stage(self, name):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.seconds[name] += time.perf_counter() - start

    def merge(self, other: "StageTimer"):
        for name, seconds in other.seconds.items():
            self.seconds[name] += seconds
        return self


def _stage(timer, name):
    return timer.stage(name) if timer is not None else nullcontext()


class CooperativeDetector(nn.Module):
    tag = None

    def __init__(self, dims: FusionDims, generator=None, dtype=torch.float32):
        super().__init__()
        dims.validate()
        self.dims = dims
        self.spec = dims.bev_spec()
        self.lidar_encoder = LidarEncoder(dims.c1, generator=generator, dtype=dtype)
        self.camera_encoder = CameraEncoder(dims.craw, dims.c2, generator=generator, dtype=dtype)
        self.attn = self.build_attention(generator, dtype)
        self.pyramid = PyramidFusion(dims.c1, dims.pyramid_factors, generator=generator, dtype=dtype)
        self.head = DetectHead(dims.c1, generator=generator, dtype=dtype)

    def rg_attn(self, h, h2, generator, dtype):
        d = self.dims
        return RGAttn(d.c1, d.c2, h, h2, d.d_model, d.heads, d.pe, d.dropout, generator=generator, dtype=dtype)

    def build_attention(self, generator, dtype):
        return self.rg_attn(self.spec.h1, self.dims.h2, generator, dtype)

    def check_capability(self, agents):
        pass

    def attention_blocks(self):
        if isinstance(self.attn, nn.ModuleList):
            return list(self.attn)
        return [] if self.attn is None else [self.attn]

    def zero_value_paths(self):
        for block in self.attention_blocks():
            block.zero_value_path()
        return self

    def encode_cameras(self, agent, transform: Transform2):
        return [
            CameraView((agent.agent_id, k), camera_encode(raster, self.camera_encoder), transform, rig)
            for k, (raster, rig) in enumerate(zip(agent.camera_rasters, agent.rigs))
        ]

    def payload_tensors(self, agent):
        """Features agent `agent` sends to the ego: (kind, rig index, tensor) triples."""
        with torch.no_grad():
            out = []
            if agent.modality.has_lidar:
                out.append(("bev_feature", -1, lidar_encode(agent.points, self.spec, self.lidar_encoder)))
            if agent.modality.has_camera and self.attn is not None:
                out.extend(("camera_feature", k, v.features) for k, v in enumerate(self.encode_cameras(agent, Transform2.identity())))
            return out

    def fuse(self, agents, ego_id, training=False, generator=None, timer=None):
        raise NotImplementedError

    def fused_bev(self, agents, ego_id, training=False, generator=None, timer=None):
        """C1 x H1 x W1 map in the frame of agent `ego_id`; any agent can be the ego."""
        if not agents:
            raise CapabilityError("no agents to fuse")
        find_agent(agents, ego_id)
        self.check_capability(agents)
        return self.fuse(sorted(agents, key=lambda a: a.agent_id), ego_id, training, generator, timer)

    def forward(self, agents, ego_id, training=False, generator=None, timer=None):
        """Raw head map in the ego frame."""
        fused = self.fused_bev(agents, ego_id, training, generator, timer)
        with _stage(timer, "head"):
            return detect_head(fused, self.head)


def _require_lidar_everywhere(tag, agents):
    camera_only = [a.agent_id for a in agents if not a.modality.has_lidar]
    if camera_only:
        raise CapabilityError(f"{tag} needs LiDAR on every agent; camera-only agents {camera_only}")


class PaintToPuzzle(CooperativeDetector):
    tag = "ptp"

    def check_capability(self, agents):
        _require_lidar_everywhere(self.tag, agents)

    def payload_tensors(self, agent):
        """One camera-enhanced BEV per agent."""
        with torch.no_grad():
            bev = lidar_encode(agent.points, self.spec, self.lidar_encoder)
            views = self.encode_cameras(agent, Transform2.identity()) if agent.modality.has_camera else []
            return [("bev_feature", -1, rg_attn_multi(bev, self.spec, views, self.attn))]

    def fuse(self, agents, ego_id, training=False, generator=None, timer=None):
        ego = find_agent(agents, ego_id)
        maps = []
        for agent in agents:
            with _stage(timer, "encode"):
                bev = lidar_encode(agent.points, self.spec, self.lidar_encoder)
                views = self.encode_cameras(agent, Transform2.identity()) if agent.modality.has_camera else []
            with _stage(timer, "intra_fusion"):
                bev = rg_attn_multi(bev, self.spec, views, self.attn, training=training, generator=generator)
            with _stage(timer, "warp"):
                maps.append(warp_to_ego(bev, self.spec, relative_transform(agent.pose, ego.pose), agent.agent_id))
        with _stage(timer, "pyramid"):
            return pyramid_fuse(maps, self.pyramid)


class CoSketchCoColor(CooperativeDetector):
    tag = "coscoco"

    def check_capability(self, agents):
        if not any(a.modality.has_lidar for a in agents):
            raise CapabilityError(f"{self.tag} needs at least one LiDAR agent to sketch the scene")

    def fuse(self, agents, ego_id, training=False, generator=None, timer=None):
        ego = find_agent(agents, ego_id)
        maps, views = [], []
        for agent in agents:
            t_agent_ego = relative_transform(agent.pose, ego.pose)
            with _stage(timer, "encode"):
                bev = lidar_encode(agent.points, self.spec, self.lidar_encoder) if agent.modality.has_lidar else None
                if agent.modality.has_camera:
                    views.extend(self.encode_cameras(agent, t_agent_ego))
            if bev is not None:
                with _stage(timer, "warp"):
                    maps.append(warp_to_ego(bev, self.spec, t_agent_ego, agent.agent_id))
        with _stage(timer, "pyramid"):
            sketch = pyramid_fuse(maps, self.pyramid)
        with _stage(timer, "inter_fusion"):
            return rg_attn_multi(sketch, self.spec, views, self.attn, training=training, generator=generator)


class PyramidRGAttnFusion(CooperativeDetector):
    """
    One attention block per pyramid level, each sized for that level: h = H1/f radial
    bins and camera height H2/f. Camera features are mean-pooled by the same factor.
    """

    tag = "prgaf"

    def build_attention(self, generator, dtype):
        return nn.ModuleList(
            [self.rg_attn(self.spec.h1 // f, self.dims.h2 // f, generator, dtype) for f in self.dims.pyramid_factors]
        )

    def check_capability(self, agents):
        _require_lidar_everywhere(self.tag, agents)

    def fuse(self, agents, ego_id, training=False, generator=None, timer=None):
        ego = find_agent(agents, ego_id)
        factors = self.pyramid.factors
        specs = [self.spec.scaled(f) for f in factors]
        levels = [[] for _ in factors]
        for agent in agents:
            t_agent_ego = relative_transform(agent.pose, ego.pose)
            with _stage(timer, "encode"):
                bev = lidar_encode(agent.points, self.spec, self.lidar_encoder)
                views = self.encode_cameras(agent, Transform2.identity()) if agent.modality.has_camera else []
            for level, (factor, spec) in enumerate(zip(factors, specs)):
                with _stage(timer, "intra_fusion"):
                    pooled = [view._replace(features=downsample(view.features, factor)) for view in views]
                    fused = rg_attn_multi(
                        downsample(bev, factor), spec, pooled, self.attn[level], training=training, generator=generator
                    )
                with _stage(timer, "warp"):
                    levels[level].append(warp_to_ego(fused, spec, t_agent_ego, agent.agent_id))
        with _stage(timer, "pyramid"):
            return self.pyramid.fuse_levels(levels, self.spec.shape)


class LidarOnly(CooperativeDetector):
    tag = "lidar"

    def build_attention(self, generator, dtype):
        return None

    def check_capability(self, agents):
        if not any(a.modality.has_lidar for a in agents):
            raise CapabilityError("the LiDAR baseline needs at least one LiDAR agent")

    def fuse(self, agents, ego_id, training=False, generator=None, timer=None):
        ego = find_agent(agents, ego_id)
        maps = []
        for agent in agents:
            if not agent.modality.has_lidar:
                continue
            with _stage(timer, "encode"):
                bev = lidar_encode(agent.points, self.spec, self.lidar_encoder)
            with _stage(timer, "warp"):
                maps.append(warp_to_ego(bev, self.spec, relative_transform(agent.pose, ego.pose), agent.agent_id))
        with _stage(timer, "pyramid"):
            return pyramid_fuse(maps, self.pyramid)


def supports(tag, modalities):
    """Whether architecture `tag` can run on agents with these modalities."""
    has_lidar = [m.has_lidar for m in modalities]
    if tag in ("ptp", "prgaf"):
        return all(has_lidar)
    return any(has_lidar)


def build_model(tag, dims: FusionDims, generator=None, dtype=torch.float32) -> CooperativeDetector:
    if tag not in ARCHITECTURES:
        raise ConfigError(f"unknown architecture {tag!r}, expected one of {sorted(ARCHITECTURES)}")
    model = instantiate_from_config({"target": ARCHITECTURES[tag], "params": {"dims": dims}}, generator=generator, dtype=dtype)
    logpy.info(f"built {tag} ({ARCHITECTURES[tag]}) with {count_params(model)} parameters")
    return model


def ptp_forward(agents, ego_id, params: PaintToPuzzle, **kwargs):
    return params.fused_bev(agents, ego_id, **kwargs)


def cos_coco_forward(agents, ego_id, params: CoSketchCoColor, **kwargs):
    return params.fused_bev(agents, ego_id, **kwargs)


def prgaf_forward(agents, ego_id, params: PyramidRGAttnFusion, **kwargs):
    return params.fused_bev(agents, ego_id, **kwargs)
