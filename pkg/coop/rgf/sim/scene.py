"""
Seeded synthetic frames: oriented vehicle boxes on a plane plus the agents that observe them.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from typing import List

from ..errors import ConfigError, SceneGenerationError
from ..evaluation.boxes import DetectionBox, rotated_iou
from ..geometry import CameraRig, Pose2, Transform2, normalize_angle
from ..models.agents import Modality, parse_modality_config
from ..util import numpy_rng
from .config import SceneConfig


logpy = logging.getLogger(__name__)

DEFAULT_CAMERA_YAWS = (0.0, math.pi / 2, math.pi, -math.pi / 2)


def default_rigs(c2, h2, w2, n_cameras=4, fov_deg=100.0):
    """Cameras at the agent origin, evenly spread in yaw (front, left, back, right for four)."""
    if n_cameras == len(DEFAULT_CAMERA_YAWS):
        yaws = DEFAULT_CAMERA_YAWS
    else:
        yaws = [normalize_angle(2 * math.pi * k / n_cameras) for k in range(n_cameras)]
    return [CameraRig(Transform2.from_yaw(yaw), math.radians(fov_deg), c2, h2, w2) for yaw in yaws]


@dataclass
class SceneAgent:
    agent_id: int
    pose: Pose2
    modality: Modality
    rigs: List[CameraRig] = field(default_factory=list)

    def to_dict(self):
        return {
            "agent_id": self.agent_id,
            "pose": self.pose.to_dict(),
            "modality": self.modality.value,
            "rigs": [rig.to_dict() for rig in self.rigs],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            int(d["agent_id"]),
            Pose2.from_dict(d["pose"]),
            Modality.parse(d["modality"]),
            [CameraRig.from_dict(r) for r in d.get("rigs", [])],
        )


@dataclass
class Scene:
    frame_id: int
    seed: int
    boxes: List[DetectionBox]
    box_heights: List[float]
    agents: List[SceneAgent]
    ego_id: int = 0

    def __post_init__(self):
        if not self.agents:
            raise SceneGenerationError("a scene needs at least one agent")
        if len(self.boxes) != len(self.box_heights):
            raise SceneGenerationError("every box needs a height")

    def agent(self, agent_id):
        for agent in self.agents:
            if agent.agent_id == agent_id:
                return agent
        raise ConfigError(f"agent {agent_id} is not part of frame {self.frame_id}")

    def boxes_in_frame(self, agent_id):
        """Ground-truth boxes expressed in the frame of agent `agent_id`."""
        pose = self.agent(agent_id).pose
        world_to_agent = pose.to_transform().inverse()
        out = []
        for box in self.boxes:
            cx, cy = world_to_agent.apply([box.cx, box.cy])
            out.append(DetectionBox(float(cx), float(cy), box.w, box.l, normalize_angle(box.yaw - pose.yaw), box.score))
        return out

    def to_dict(self):
        return {
            "frame_id": self.frame_id,
            "seed": self.seed,
            "ego_id": self.ego_id,
            "boxes": [dict(box.to_dict(), height=h) for box, h in zip(self.boxes, self.box_heights)],
            "agents": [agent.to_dict() for agent in self.agents],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            frame_id=int(d["frame_id"]),
            seed=int(d["seed"]),
            boxes=[DetectionBox.from_dict(b) for b in d["boxes"]],
            box_heights=[float(b["height"]) for b in d["boxes"]],
            agents=[SceneAgent.from_dict(a) for a in d["agents"]],
            ego_id=int(d.get("ego_id", 0)),
        )

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _place_agents(config: SceneConfig, rng):
    ego = Pose2(
        float(rng.uniform(-config.ego_jitter, config.ego_jitter)),
        float(rng.uniform(-config.ego_jitter, config.ego_jitter)),
        float(rng.uniform(-0.1, 0.1)),
    )
    poses = [ego]
    for _ in range(config.n_agents - 1):
        for _ in range(config.max_retries):
            candidate = Pose2(
                float(rng.uniform(config.x_min, config.x_max)),
                float(rng.uniform(config.y_min, config.y_max)),
                float(rng.uniform(-math.pi, math.pi)),
            )
            if all(math.hypot(candidate.x - p.x, candidate.y - p.y) >= config.min_agent_gap for p in poses):
                poses.append(candidate)
                break
        else:
            raise SceneGenerationError(f"could not place agent {len(poses)} after {config.max_retries} tries")
    return poses


def _box_fits(box, config: SceneConfig, boxes, poses):
    corners = box.corners()
    if (corners[:, 0] < config.x_min).any() or (corners[:, 0] > config.x_max).any():
        return False
    if (corners[:, 1] < config.y_min).any() or (corners[:, 1] > config.y_max).any():
        return False
    grown = DetectionBox(box.cx, box.cy, box.w + 2 * config.agent_clearance, box.l + 2 * config.agent_clearance, box.yaw)
    if any(grown.contains([p.x, p.y]) for p in poses):
        return False
    return all(rotated_iou(box, other) < config.max_box_iou for other in boxes)


def generate_scene(config: SceneConfig, frame_id, seed, c2=8, h2=36, w2=64) -> Scene:
    """
    Place agents first, then boxes by rejection sampling; a box is rejected when it
    leaves the world bounds, crowds an agent or overlaps an earlier box.
    """
    config.validate()
    ego_modality, coop_modality = parse_modality_config(config.modality)
    coop_modality = coop_modality or ego_modality

    poses = _place_agents(config, numpy_rng(seed, frame_id, "agents"))
    rigs = default_rigs(c2, h2, w2, config.n_cameras, config.fov_deg)
    agents = [
        SceneAgent(agent_id, pose, ego_modality if agent_id == 0 else coop_modality, list(rigs))
        for agent_id, pose in enumerate(poses)
    ]

    rng = numpy_rng(seed, frame_id, "boxes")
    boxes, heights = [], []
    for index in range(config.n_boxes):
        for _ in range(config.max_retries):
            box = DetectionBox(
                cx=float(rng.uniform(config.x_min, config.x_max)),
                cy=float(rng.uniform(config.y_min, config.y_max)),
                w=float(rng.uniform(*config.box_width)),
                l=float(rng.uniform(*config.box_length)),
                yaw=float(rng.uniform(-math.pi, math.pi)),
            )
            height = float(rng.uniform(*config.box_height))
            if _box_fits(box, config, boxes, poses):
                boxes.append(box)
                heights.append(height)
                break
        else:
            raise SceneGenerationError(f"frame {frame_id}: could not place box {index} after {config.max_retries} tries")
    logpy.debug(f"frame {frame_id}: {len(agents)} agents, {len(boxes)} boxes")
    return Scene(frame_id, int(seed), boxes, heights, agents, ego_id=0)
