"""
Sensor simulation on the planar world.

LiDAR and camera share one ray caster, so a box hidden from the LiDAR along a
bearing is hidden from a camera at the same position along that bearing as well.
"""

import logging
import math

import numpy as np
import torch

from ..errors import CapabilityError
from ..models.agents import AgentObservation, find_agent, parse_modality_config
from ..util import numpy_rng
from .config import CameraConfig, LidarConfig
from .noise import apply_pose_noise
from .scene import Scene


logpy = logging.getLogger(__name__)

RAW_CAMERA_CHANNELS = 4
CLASS, BEARING, GROUND, BIAS = range(RAW_CAMERA_CHANNELS)
PARALLEL_EPS = 1e-12
MIN_HIT_DISTANCE = 1e-9


def box_edges(boxes):
    """B*4 x 2 segment starts and B*4 x 2 segment directions, box-major."""
    if not boxes:
        return np.zeros((0, 2)), np.zeros((0, 2))
    corners = np.stack([box.corners() for box in boxes])
    starts = corners.reshape(-1, 2)
    ends = np.roll(corners, -1, axis=1).reshape(-1, 2)
    return starts, ends - starts


def cast_rays(origin, angles, boxes, max_range):
    """
    First intersection of rays from `origin` with box outlines.

    Returns:
        distance: float array of per-ray hit distances, inf where nothing is hit within max_range.
        hit: int array of hit box indices, -1 where nothing is hit.
    """
    angles = np.asarray(angles, dtype=np.float64)
    distance = np.full(angles.shape, np.inf)
    hit = np.full(angles.shape, -1, dtype=np.int64)
    if not boxes or angles.size == 0:
        return distance, hit
    origin = np.asarray(origin, dtype=np.float64)
    starts, edges = box_edges(boxes)
    d = np.stack([np.cos(angles), np.sin(angles)], axis=-1)

    rel = starts[None, :, :] - origin[None, None, :]
    denom = d[:, None, 0] * edges[None, :, 1] - d[:, None, 1] * edges[None, :, 0]
    parallel = np.abs(denom) < PARALLEL_EPS
    safe = np.where(parallel, 1.0, denom)
    t = (rel[..., 0] * edges[None, :, 1] - rel[..., 1] * edges[None, :, 0]) / safe
    s = (rel[..., 0] * d[:, None, 1] - rel[..., 1] * d[:, None, 0]) / safe
    valid = ~parallel & (t > MIN_HIT_DISTANCE) & (t <= max_range) & (s >= 0.0) & (s <= 1.0)
    t = np.where(valid, t, np.inf)

    best = np.argmin(t, axis=1)
    distance = t[np.arange(len(angles)), best]
    hit = np.where(np.isfinite(distance), best // 4, -1)
    return distance, hit


def lidar_angles(rays):
    return -math.pi + 2 * math.pi * np.arange(rays) / rays


def sample_lidar(scene: Scene, agent_index, config: LidarConfig = None):
    """
    N x 4 points (x, y, z, intensity) in the agent frame. Every ray that hits a box
    returns `beams` points at heights drawn uniformly up to that box's height; boxes
    behind the first hit are never sampled.
    """
    agent = scene.agents[agent_index]
    if not agent.modality.has_lidar:
        raise CapabilityError(f"agent {agent.agent_id} has no LiDAR")
    return _cast_lidar(scene, agent, config or LidarConfig())


def _cast_lidar(scene: Scene, agent, config: LidarConfig):
    angles = lidar_angles(config.rays)
    distance, hit = cast_rays((0.0, 0.0), angles, scene.boxes_in_frame(agent.agent_id), config.max_range)
    rays = np.flatnonzero(hit >= 0)
    seed = scene.seed if config.seed is None else config.seed
    rng = numpy_rng(seed, scene.frame_id, agent.agent_id, "lidar")
    shape = (rays.size, config.beams)
    noise = rng.normal(0.0, 1.0, shape) * config.noise_std
    heights = np.asarray(scene.box_heights, dtype=np.float64)[hit[rays]] if rays.size else np.zeros(0)
    z = rng.uniform(0.0, 1.0, shape) * heights[:, None]
    intensity = rng.uniform(config.intensity[0], config.intensity[1], shape)

    rng_dist = distance[rays][:, None] + noise
    x = rng_dist * np.cos(angles[rays])[:, None]
    y = rng_dist * np.sin(angles[rays])[:, None]
    points = np.stack([x, y, z, intensity], axis=-1).reshape(-1, 4)
    logpy.debug(f"frame {scene.frame_id} agent {agent.agent_id}: {rays.size} rays hit, {len(points)} points")
    return points


def render_camera_semantics(scene: Scene, agent_index, rig_index, config: CameraConfig = None, dtype=torch.float32):
    """
    Craw x H2 x W2 semantic raster of one camera. For every image column the nearest
    visible box marks the rows it spans with a class flag and the column's normalised
    bearing; rows below the box get 1/distance; the last channel is a constant bias.
    """
    config = config or CameraConfig()
    agent = scene.agents[agent_index]
    rig = agent.rigs[rig_index]
    h2, w2 = rig.h2, rig.w2
    raster = np.zeros((RAW_CAMERA_CHANNELS, h2, w2), dtype=np.float64)
    raster[BIAS] = 1.0

    bearings = np.array([rig.column_bearing(c) for c in range(w2)])
    distance, hit = cast_rays(rig.mount.t, rig.mount.yaw + bearings, scene.boxes_in_frame(agent.agent_id), config.max_range)

    focal = (h2 / 2) / math.tan(config.vfov / 2)
    row_centers = np.arange(h2) + 0.5
    for col in np.flatnonzero(hit >= 0):
        d = distance[col]
        top = h2 / 2 - focal * (scene.box_heights[hit[col]] - config.mount_height) / d
        bottom = h2 / 2 + focal * config.mount_height / d
        covered = (row_centers >= top) & (row_centers <= bottom)
        raster[CLASS, covered, col] = 1.0
        raster[BEARING, covered, col] = bearings[col] / (rig.fov / 2)
        raster[GROUND, row_centers > bottom, col] = 1.0 / max(d, config.near_distance)
    return torch.from_numpy(raster).to(dtype)


def build_observations(
    scene: Scene,
    modality=None,
    lidar: LidarConfig = None,
    camera: CameraConfig = None,
    noise=None,
    max_agents=None,
    dtype=torch.float32,
):
    """
    Turn a scene into per-agent observations.

    Args:
        modality: optional "<ego>[+<cooperator>]" string overriding the modalities stored in the scene.
        noise: optional PoseNoiseModel applied to cooperator poses only.
        max_agents: keep the ego plus the lowest-id cooperators up to this many agents.
    """
    ego = scene.agent(scene.ego_id)
    cooperators = sorted((a for a in scene.agents if a.agent_id != scene.ego_id), key=lambda a: a.agent_id)
    if max_agents is not None:
        cooperators = cooperators[: max(0, max_agents - 1)]
    ego_modality, coop_modality = parse_modality_config(modality) if modality else (None, None)
    if modality and coop_modality is None:
        cooperators = []

    positions = {a.agent_id: i for i, a in enumerate(scene.agents)}
    observations = []
    for agent in [ego] + cooperators:
        index = positions[agent.agent_id]
        is_ego = agent.agent_id == scene.ego_id
        mode = (ego_modality if is_ego else coop_modality) or agent.modality
        pose = agent.pose if is_ego or noise is None else apply_pose_noise(agent.pose, noise, scene.frame_id, agent.agent_id)
        points = _cast_lidar(scene, agent, lidar or LidarConfig()) if mode.has_lidar else None
        rasters = [render_camera_semantics(scene, index, k, camera, dtype) for k in range(len(agent.rigs))] if mode.has_camera else []
        observations.append(AgentObservation(agent.agent_id, pose, mode, points, rasters, list(agent.rigs)))
    find_agent(observations, scene.ego_id)
    return observations
