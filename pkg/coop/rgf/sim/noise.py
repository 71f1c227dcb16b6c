from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..geometry import Pose2
from ..util import numpy_rng


@dataclass
class PoseNoiseModel:
    """Gaussian localization error: std `sigma_p` (m) on x and y, `sigma_r` (rad) on yaw."""

    sigma_p: float = 0.0
    sigma_r: float = 0.0
    seed: int = 0

    def validate(self):
        if self.sigma_p < 0 or self.sigma_r < 0:
            raise ConfigError(f"pose noise sigmas must be non-negative, got {self.sigma_p}, {self.sigma_r}")
        return self

    @property
    def is_zero(self):
        return self.sigma_p == 0.0 and self.sigma_r == 0.0


def sample_pose_noise(model: PoseNoiseModel, n, *keys):
    """n x 3 offsets (dx, dy, dyaw) from the stream identified by `keys`."""
    model.validate()
    rng = numpy_rng(model.seed, "pose_noise", *keys)
    return rng.standard_normal((n, 3)) * np.array([model.sigma_p, model.sigma_p, model.sigma_r])


def apply_pose_noise(pose: Pose2, model: PoseNoiseModel, *keys) -> Pose2:
    if model.validate().is_zero:
        return pose
    dx, dy, dyaw = sample_pose_noise(model, 1, *keys)[0]
    return Pose2(pose.x + float(dx), pose.y + float(dy), pose.yaw + float(dyaw))
