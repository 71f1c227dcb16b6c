from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
import torch

from ..errors import ConfigError
from ..geometry import CameraRig, Pose2


class Modality(str, Enum):
    LIDAR_ONLY = "L"
    CAMERA_ONLY = "C"
    LIDAR_CAMERA = "LC"

    @property
    def has_lidar(self):
        return self is not Modality.CAMERA_ONLY

    @property
    def has_camera(self):
        return self is not Modality.LIDAR_ONLY

    @classmethod
    def parse(cls, token):
        try:
            return cls(token.strip().upper())
        except ValueError:
            raise ConfigError(f"unknown modality {token!r}, expected one of L, C, LC") from None


def parse_modality_config(text) -> Tuple[Modality, Optional[Modality]]:
    """'LC+C' -> (ego modality, cooperator modality); a single token means no cooperators."""
    if not isinstance(text, str) or not text.strip():
        raise ConfigError(f"invalid modality config {text!r}")
    parts = text.split("+")
    if len(parts) > 2:
        raise ConfigError(f"modality config {text!r} has more than one '+'")
    ego = Modality.parse(parts[0])
    coop = Modality.parse(parts[1]) if len(parts) == 2 else None
    return ego, coop


@dataclass
class AgentObservation:
    """
    What one agent contributes to a frame, in its own frame. `points` is an N x 4
    array (x, y, z, intensity); `camera_rasters[k]` was rendered by `rigs[k]`.
    """

    agent_id: int
    pose: Pose2
    modality: Modality
    points: Optional[np.ndarray] = None
    camera_rasters: List[torch.Tensor] = field(default_factory=list)
    rigs: List[CameraRig] = field(default_factory=list)

    def __post_init__(self):
        if self.modality.has_lidar != (self.points is not None):
            raise ConfigError(f"agent {self.agent_id}: LiDAR points must be present iff modality has LiDAR")
        if self.modality.has_camera != bool(self.camera_rasters):
            raise ConfigError(f"agent {self.agent_id}: camera rasters must be present iff modality has a camera")
        if len(self.camera_rasters) != (len(self.rigs) if self.modality.has_camera else 0):
            raise ConfigError(f"agent {self.agent_id}: {len(self.camera_rasters)} rasters for {len(self.rigs)} rigs")


def find_agent(agents, agent_id):
    for agent in agents:
        if agent.agent_id == agent_id:
            return agent
    raise ConfigError(f"agent {agent_id} is not among {[a.agent_id for a in agents]}")
