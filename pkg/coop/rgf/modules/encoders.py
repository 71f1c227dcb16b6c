"""
Light-weight sensor encoders.

LiDAR points are binned into the BEV grid and summarised per cell by four
statistics which a linear map lifts to C1 channels. Camera rasters are lifted to
C2 channels by a per-pixel linear map.
"""

import numpy as np
import torch
from einops import rearrange
from torch import nn

from ..errors import ShapeError
from ..geometry import BevSpec
from .attention import init_
from .pyramid import cellwise_linear
from .tensor_ops import linear_forward


LIDAR_STATS = ("log_count", "mean_z", "max_z", "mean_intensity")


def lidar_cell_stats(points, spec: BevSpec, dtype=torch.float32):
    """
    Per-cell statistics of a point cloud (N x 4: x, y, z, intensity) in the map frame.

    Returns:
        stats: (H1*W1) x 4 tensor ordered as LIDAR_STATS, zero on empty cells.
        occupied: boolean (H1*W1) mask of cells holding at least one point.
    """
    h1, w1 = spec.shape
    n_cells = h1 * w1
    stats = torch.zeros(n_cells, len(LIDAR_STATS), dtype=dtype)
    occupied = torch.zeros(n_cells, dtype=torch.bool)
    if points is None or len(points) == 0:
        return stats, occupied
    points = np.asarray(points, dtype=np.float64).reshape(-1, 4)

    col = np.floor((points[:, 0] - spec.x_min) / spec.cell).astype(np.int64)
    row = np.floor((points[:, 1] - spec.y_min) / spec.cell).astype(np.int64)
    inside = (row >= 0) & (row < h1) & (col >= 0) & (col < w1)
    if not inside.any():
        return stats, occupied
    idx = torch.from_numpy(row[inside] * w1 + col[inside])
    z = torch.from_numpy(points[inside, 2]).to(dtype)
    intensity = torch.from_numpy(points[inside, 3]).to(dtype)

    count = torch.zeros(n_cells, dtype=dtype).index_add_(0, idx, torch.ones_like(z))
    sum_z = torch.zeros(n_cells, dtype=dtype).index_add_(0, idx, z)
    sum_i = torch.zeros(n_cells, dtype=dtype).index_add_(0, idx, intensity)
    max_z = torch.zeros(n_cells, dtype=dtype).scatter_reduce_(0, idx, z, reduce="amax", include_self=False)

    occupied = count > 0
    safe = torch.where(occupied, count, torch.ones_like(count))
    stats = torch.stack([torch.log1p(count), sum_z / safe, max_z, sum_i / safe], dim=1)
    return torch.where(occupied[:, None], stats, torch.zeros_like(stats)), occupied


class LidarEncoder(nn.Module):
    def __init__(self, c1, generator=None, dtype=torch.float32):
        super().__init__()
        self.c1 = c1
        self.w = nn.Parameter(torch.zeros(len(LIDAR_STATS), c1, dtype=dtype))
        self.b = nn.Parameter(torch.zeros(c1, dtype=dtype))
        init_(self.w, generator)

    def forward(self, points, spec: BevSpec):
        return lidar_encode(points, spec, self)


class CameraEncoder(nn.Module):
    def __init__(self, craw, c2, generator=None, dtype=torch.float32):
        super().__init__()
        self.craw, self.c2 = craw, c2
        self.w = nn.Parameter(torch.zeros(craw, c2, dtype=dtype))
        self.b = nn.Parameter(torch.zeros(c2, dtype=dtype))
        init_(self.w, generator)

    def forward(self, raster):
        return camera_encode(raster, self)


def lidar_encode(points, spec: BevSpec, params: LidarEncoder):
    """C1 x H1 x W1 BEV map; cells without points are exactly zero."""
    stats, occupied = lidar_cell_stats(points, spec, dtype=params.w.dtype)
    features = linear_forward(stats, params.w, params.b, name="lidar_encoder")
    features = torch.where(occupied[:, None], features, torch.zeros_like(features))
    return rearrange(features, "(h w) c -> c h w", h=spec.h1, w=spec.w1)


def camera_encode(raster, params: CameraEncoder):
    if raster.ndim != 3 or raster.shape[0] != params.craw:
        raise ShapeError(f"camera raster {tuple(raster.shape)} does not have {params.craw} channels")
    return cellwise_linear(raster.to(params.w.dtype), params.w, params.b)
