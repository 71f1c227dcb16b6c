"""
Dense single-class detection head over the fused BEV map.

Every cell predicts seven channels: objectness logit, center offset (dx, dy) from
the cell center, log width, log length, and the heading as (sin, cos).
"""

import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..evaluation.boxes import DetectionBox, nms, rank_order
from ..geometry import BevSpec
from .attention import init_
from .pyramid import cellwise_linear


HEAD_CHANNELS = 7
OBJECTNESS, OFFSET, SIZE, HEADING = 0, slice(1, 3), slice(3, 5), slice(5, 7)
LOG_SIZE_CLAMP = 6.0


class DetectHead(nn.Module):
    def __init__(self, c1, generator=None, dtype=torch.float32):
        super().__init__()
        self.w = nn.Parameter(torch.zeros(c1, HEAD_CHANNELS, dtype=dtype))
        self.b = nn.Parameter(torch.zeros(HEAD_CHANNELS, dtype=dtype))
        init_(self.w, generator)

    def forward(self, fused):
        return detect_head(fused, self)


def detect_head(fused, head: DetectHead):
    """Raw 7 x H1 x W1 map; channel 0 is a logit."""
    return cellwise_linear(fused, head.w, head.b)


def objectness(raw):
    return torch.sigmoid(raw[OBJECTNESS])


def decode_nms(raw, spec: BevSpec, score_thresh=0.5, nms_iou=0.1, max_candidates=None):
    """
    Decode every cell scoring above `score_thresh` into a box and run greedy rotated
    NMS. Candidates are ranked by (descending score, ascending cell index), so the
    result does not depend on the order cells are visited.
    """
    if not (0.0 <= score_thresh <= 1.0 and 0.0 <= nms_iou <= 1.0):
        raise ValueError(f"thresholds must lie in [0, 1], got score={score_thresh} iou={nms_iou}")
    raw = raw.detach().to(torch.float64).cpu().numpy()
    scores = 1.0 / (1.0 + np.exp(-raw[OBJECTNESS].reshape(-1)))
    cells = np.flatnonzero(scores > score_thresh)
    if cells.size == 0:
        return []
    cells = cells[rank_order(scores[cells], cells)]
    if max_candidates is not None:
        cells = cells[:max_candidates]

    centers = spec.cell_centers().reshape(-1, 2)
    flat = raw.reshape(HEAD_CHANNELS, -1)
    boxes = []
    for idx in cells:
        dx, dy, log_w, log_l, sin_yaw, cos_yaw = flat[1:, idx]
        boxes.append(
            DetectionBox(
                cx=float(centers[idx, 0] + dx),
                cy=float(centers[idx, 1] + dy),
                w=math.exp(float(np.clip(log_w, -LOG_SIZE_CLAMP, LOG_SIZE_CLAMP))),
                l=math.exp(float(np.clip(log_l, -LOG_SIZE_CLAMP, LOG_SIZE_CLAMP))),
                yaw=math.atan2(float(sin_yaw), float(cos_yaw)),
                score=float(scores[idx]),
            )
        )
    return nms(boxes, nms_iou, indices=cells)


def build_targets(boxes, spec: BevSpec, dtype=torch.float32):
    """
    Regression targets and the foreground mask for a list of ground-truth boxes given
    in the map frame. A cell is foreground when its center lies inside a box; a cell
    covered by several boxes takes the one whose center is nearest.
    """
    centers = spec.cell_centers()
    h1, w1 = spec.shape
    target = np.zeros((HEAD_CHANNELS, h1, w1), dtype=np.float64)
    best = np.full((h1, w1), np.inf)
    for box in boxes:
        inside = box.contains(centers)
        dist = np.hypot(box.cx - centers[..., 0], box.cy - centers[..., 1])
        take = inside & (dist < best)
        if not take.any():
            continue
        best[take] = dist[take]
        target[0][take] = 1.0
        target[1][take] = box.cx - centers[..., 0][take]
        target[2][take] = box.cy - centers[..., 1][take]
        target[3][take] = math.log(box.w)
        target[4][take] = math.log(box.l)
        target[5][take] = math.sin(box.yaw)
        target[6][take] = math.cos(box.yaw)
    return torch.from_numpy(target).to(dtype), torch.from_numpy(target[0].copy()).to(dtype)


def detection_loss(raw, target, foreground, lambda_reg=1.0, lambda_dir=1.0, pos_weight=1.0):
    """
    Binary cross-entropy on objectness over all cells, plus L1 on the box and heading
    channels over foreground cells, normalised by the foreground weight.

    Returns:
        total loss and a dict with the `cls`, `reg` and `dir` terms.
    """
    cls = F.binary_cross_entropy_with_logits(
        raw[OBJECTNESS], target[OBJECTNESS], pos_weight=torch.as_tensor(pos_weight, dtype=raw.dtype)
    )
    norm = torch.clamp(foreground.sum(), min=1.0)
    box_channels = torch.cat([raw[OFFSET], raw[SIZE]]) - torch.cat([target[OFFSET], target[SIZE]])
    reg = (box_channels.abs() * foreground).sum() / norm
    direction = ((raw[HEADING] - target[HEADING]).abs() * foreground).sum() / norm
    total = cls + lambda_reg * reg + lambda_dir * direction
    return total, {"cls": cls, "reg": reg, "dir": direction}
