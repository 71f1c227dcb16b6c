"""
Planar (SE(2)) geometry: poses, rigid transforms, camera rigs, BEV grids and the
polar grid sectors that align a camera's field of view with a BEV map.
"""

import math
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from .errors import GeometryError


# Image column 0 is the camera's left (+fov/2) boundary, so bearings decrease with the
# image column. Sector columns are ordered by increasing angle, hence sector column w
# corresponds to image column (W2 - 1 - w).
IMAGE_COLUMN_0_AT_LEFT = True


def normalize_angle(a):
    """Wrap an angle into (-pi, pi]."""
    if -math.pi < a <= math.pi:
        return a
    a = math.fmod(a + math.pi, 2 * math.pi)
    if a <= 0:
        a += 2 * math.pi
    return a - math.pi


def rotation(yaw):
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s], [s, c]], dtype=np.float64)


@dataclass(frozen=True)
class Pose2:
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", normalize_angle(float(self.yaw)))

    def to_transform(self):
        """Agent frame -> world frame."""
        return Transform2(rotation(self.yaw), np.array([self.x, self.y], dtype=np.float64))

    def to_dict(self):
        return {"x": self.x, "y": self.y, "yaw": self.yaw}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["x"]), float(d["y"]), float(d["yaw"]))


@dataclass(frozen=True)
class Transform2:
    r: np.ndarray = field(default_factory=lambda: np.eye(2))
    t: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        object.__setattr__(self, "r", np.asarray(self.r, dtype=np.float64).reshape(2, 2))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(2))

    @classmethod
    def identity(cls):
        return cls(np.eye(2), np.zeros(2))

    @classmethod
    def from_yaw(cls, yaw, t=(0.0, 0.0)):
        return cls(rotation(yaw), np.asarray(t, dtype=np.float64))

    @property
    def yaw(self):
        return math.atan2(self.r[1, 0], self.r[0, 0])

    def apply(self, points):
        """Map points (..., 2) through p -> r p + t."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.r.T + self.t

    def inverse(self):
        r_inv = self.r.T
        return Transform2(r_inv, -r_inv @ self.t)

    def __matmul__(self, other):
        """(self @ other)(p) == self(other(p))."""
        return Transform2(self.r @ other.r, self.r @ other.t + self.t)

    def is_close(self, other, tol=1e-9):
        return np.allclose(self.r, other.r, atol=tol) and np.allclose(self.t, other.t, atol=tol)

    def to_dict(self):
        return {"yaw": self.yaw, "t": [float(self.t[0]), float(self.t[1])]}

    @classmethod
    def from_dict(cls, d):
        return cls.from_yaw(float(d["yaw"]), d["t"])


@dataclass(frozen=True)
class CameraRig:
    mount: Transform2
    fov: float
    c2: int
    h2: int
    w2: int

    def __post_init__(self):
        if not 0.0 < self.fov < math.pi:
            raise GeometryError(f"camera fov must lie in (0, pi), got {self.fov}")
        if min(self.c2, self.h2, self.w2) <= 0:
            raise GeometryError(f"camera extents must be positive, got {(self.c2, self.h2, self.w2)}")

    def column_bearing(self, column):
        """Bearing (camera frame, radians) through the center of an image column."""
        offset = (column + 0.5) / self.w2 * self.fov
        return self.fov / 2 - offset if IMAGE_COLUMN_0_AT_LEFT else -self.fov / 2 + offset

    def to_dict(self):
        return {"mount": self.mount.to_dict(), "fov": self.fov, "c2": self.c2, "h2": self.h2, "w2": self.w2}

    @classmethod
    def from_dict(cls, d):
        return cls(Transform2.from_dict(d["mount"]), float(d["fov"]), int(d["c2"]), int(d["h2"]), int(d["w2"]))


@dataclass(frozen=True)
class BevSpec:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    cell: float

    def __post_init__(self):
        if self.cell <= 0:
            raise GeometryError(f"cell size must be positive, got {self.cell}")
        for lo, hi, axis in ((self.x_min, self.x_max, "x"), (self.y_min, self.y_max, "y")):
            extent = (hi - lo) / self.cell
            if hi <= lo or abs(extent - round(extent)) > 1e-9:
                raise GeometryError(f"{axis} range [{lo}, {hi}] is not a positive multiple of cell {self.cell}")

    @property
    def h1(self):
        return int(round((self.y_max - self.y_min) / self.cell))

    @property
    def w1(self):
        return int(round((self.x_max - self.x_min) / self.cell))

    @property
    def shape(self):
        return self.h1, self.w1

    def scaled(self, factor):
        """The same metric extent at a grid `factor` times coarser."""
        return BevSpec(self.x_min, self.x_max, self.y_min, self.y_max, self.cell * factor)

    def contains(self, points):
        points = np.asarray(points, dtype=np.float64)
        x, y = points[..., 0], points[..., 1]
        return (x >= self.x_min) & (x <= self.x_max) & (y >= self.y_min) & (y <= self.y_max)

    def cell_centers(self):
        """H1 x W1 x 2 metric coordinates of every cell center."""
        rows, cols = np.meshgrid(np.arange(self.h1), np.arange(self.w1), indexing="ij")
        return grid_to_world(self, np.stack([rows, cols], axis=-1).astype(np.float64))


@dataclass(frozen=True)
class GridSectorConfig:
    origin: Tuple[float, float]
    theta_start: float
    theta_span: float
    w2: int
    radius: float
    h: int

    def __post_init__(self):
        if self.theta_span <= 0 or self.radius <= 0 or self.w2 <= 0 or self.h <= 0:
            raise GeometryError(f"invalid grid sector {self}")

    @property
    def theta_end(self):
        return self.theta_start + self.theta_span


def relative_transform(pose_i: Pose2, pose_j: Pose2) -> Transform2:
    """T_{i->j}: maps points expressed in frame i into frame j."""
    return pose_j.to_transform().inverse() @ pose_i.to_transform()


def camera_origin_in_target(t_ij: Transform2, mount: Transform2):
    return t_ij.apply(mount.t)


def fov_span_in_target(t_ij: Transform2, mount: Transform2, fov):
    """
    Angular interval covered by a camera, expressed in the target frame.

    The two FOV boundary directions u(-fov/2) and u(+fov/2) are rotated by
    R_{ik->j} = R_{i->j} R_{ik->i}; the interval is returned as (start, positive span)
    with start normalized to (-pi, pi], so sweeps across the branch cut need no special case.
    """
    if not 0.0 < fov < math.pi:
        raise GeometryError(f"fov must lie in (0, pi), got {fov}")
    r = t_ij.r @ mount.r
    lower = r @ np.array([math.cos(-fov / 2), math.sin(-fov / 2)])
    return normalize_angle(math.atan2(lower[1], lower[0])), fov


def max_radius(spec: BevSpec):
    return math.hypot(spec.x_max - spec.x_min, spec.y_max - spec.y_min) / 2


def build_sector(origin, theta_start, theta_span, w2, radius, h):
    """
    Returns the sector config and the h x w2 x 2 grid of metric sample points, where
    point (r, w) sits at angle theta_start + (w + 0.5) / w2 * span and range (r + 0.5) / h * radius.
    """
    cfg = GridSectorConfig((float(origin[0]), float(origin[1])), float(theta_start), float(theta_span), int(w2), float(radius), int(h))
    theta = cfg.theta_start + (np.arange(cfg.w2) + 0.5) / cfg.w2 * cfg.theta_span
    rho = (np.arange(cfg.h) + 0.5) / cfg.h * cfg.radius
    x = cfg.origin[0] + rho[:, None] * np.cos(theta)[None, :]
    y = cfg.origin[1] + rho[:, None] * np.sin(theta)[None, :]
    return cfg, np.stack([x, y], axis=-1)


def sector_points(cfg: GridSectorConfig):
    return build_sector(cfg.origin, cfg.theta_start, cfg.theta_span, cfg.w2, cfg.radius, cfg.h)[1]


def world_to_grid(spec: BevSpec, p):
    """Metric (x, y) -> continuous pixel coordinates (u along height, v along width)."""
    p = np.asarray(p, dtype=np.float64)
    u = (p[..., 1] - spec.y_min) / spec.cell - 0.5
    v = (p[..., 0] - spec.x_min) / spec.cell - 0.5
    return np.stack([u, v], axis=-1)


def grid_to_world(spec: BevSpec, uv):
    uv = np.asarray(uv, dtype=np.float64)
    x = (uv[..., 1] + 0.5) * spec.cell + spec.x_min
    y = (uv[..., 0] + 0.5) * spec.cell + spec.y_min
    return np.stack([x, y], axis=-1)


def sector_coverage(cfg: GridSectorConfig, spec: BevSpec):
    return float(spec.contains(sector_points(cfg)).mean())
