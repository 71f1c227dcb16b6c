from dataclasses import dataclass, field
from typing import List, Optional

from ..errors import ConfigError


@dataclass
class SceneConfig:
    n_agents: int = 2
    # "<ego>[+<cooperator>]" with tokens L, C, LC
    modality: str = "LC+LC"
    n_boxes: int = 8
    x_min: float = -25.6
    x_max: float = 25.6
    y_min: float = -12.8
    y_max: float = 12.8
    box_width: List[float] = field(default_factory=lambda: [1.6, 2.2])
    box_length: List[float] = field(default_factory=lambda: [3.6, 5.0])
    box_height: List[float] = field(default_factory=lambda: [1.4, 2.0])
    max_box_iou: float = 0.05
    # free space kept around every agent position
    agent_clearance: float = 1.5
    min_agent_gap: float = 4.0
    ego_jitter: float = 1.0
    max_retries: int = 200
    n_cameras: int = 4
    fov_deg: float = 100.0

    def validate(self):
        if self.n_agents < 1:
            raise ConfigError(f"n_agents must be at least 1, got {self.n_agents}")
        if self.n_boxes < 0:
            raise ConfigError(f"n_boxes must be non-negative, got {self.n_boxes}")
        if not 0.0 < self.fov_deg < 180.0:
            raise ConfigError(f"fov_deg must lie in (0, 180), got {self.fov_deg}")
        for name in ("box_width", "box_length", "box_height"):
            lo, hi = getattr(self, name)
            if not 0.0 < lo <= hi:
                raise ConfigError(f"{name} must be an increasing positive range, got {[lo, hi]}")
        return self


@dataclass
class LidarConfig:
    rays: int = 720
    beams: int = 4
    max_range: float = 40.0
    noise_std: float = 0.02
    intensity: List[float] = field(default_factory=lambda: [0.2, 1.0])
    # range noise, heights and intensities; None draws them from the scene seed
    seed: Optional[int] = None


@dataclass
class CameraConfig:
    max_range: float = 40.0
    # vertical field of view and mount height used to place box rows in the raster
    vfov: float = 0.6
    mount_height: float = 1.5
    # distances below this count as this close for the ground-row intensity
    near_distance: float = 1.0
