import math
from dataclasses import dataclass

import numpy as np
from shapely.geometry import Polygon


MIN_AREA = 1e-9


@dataclass(frozen=True)
class DetectionBox:
    """Oriented BEV box; `l` runs along the heading `yaw`, `w` across it."""

    cx: float
    cy: float
    w: float
    l: float
    yaw: float
    score: float = 1.0

    def __post_init__(self):
        if not (self.w > 0 and self.l > 0):
            raise ValueError(f"box extents must be positive, got w={self.w} l={self.l}")

    def corners(self):
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = self.l / 2, self.w / 2
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.cx, self.cy])

    def polygon(self):
        return Polygon(self.corners())

    @property
    def area(self):
        return self.w * self.l

    def contains(self, points):
        """Boolean mask of points (..., 2) inside the footprint."""
        points = np.asarray(points, dtype=np.float64)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        dx = points[..., 0] - self.cx
        dy = points[..., 1] - self.cy
        along = dx * c + dy * s
        across = -dx * s + dy * c
        return (np.abs(along) <= self.l / 2) & (np.abs(across) <= self.w / 2)

    def to_dict(self):
        return {"cx": self.cx, "cy": self.cy, "w": self.w, "l": self.l, "yaw": self.yaw, "score": self.score}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["cx"]), float(d["cy"]), float(d["w"]), float(d["l"]), float(d["yaw"]), float(d.get("score", 1.0)))


def rotated_iou(a: DetectionBox, b: DetectionBox):
    """Exact IoU of two oriented rectangles via convex polygon intersection."""
    if a.area < MIN_AREA or b.area < MIN_AREA:
        return 0.0
    reach = math.hypot(a.w, a.l) / 2 + math.hypot(b.w, b.l) / 2
    if math.hypot(a.cx - b.cx, a.cy - b.cy) >= reach:
        return 0.0
    inter = a.polygon().intersection(b.polygon()).area
    union = a.area + b.area - inter
    if union < MIN_AREA:
        return 0.0
    return float(min(1.0, max(0.0, inter / union)))


def rank_order(scores, indices=None):
    """Descending score, ties broken by ascending index."""
    scores = np.asarray(scores, dtype=np.float64)
    indices = np.arange(len(scores)) if indices is None else np.asarray(indices)
    return np.lexsort((indices, -scores))


def nms(boxes, iou_threshold, indices=None):
    """
    Greedy non-maximum suppression: keep the best remaining box and drop every box whose
    rotated IoU with it is >= iou_threshold. Returns kept boxes in rank order.
    """
    order = rank_order([b.score for b in boxes], indices)
    kept = []
    for i in order:
        candidate = boxes[i]
        if all(rotated_iou(candidate, k) < iou_threshold for k in kept):
            kept.append(candidate)
    return kept
