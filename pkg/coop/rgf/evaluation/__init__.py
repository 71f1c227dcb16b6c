from .ap import ap_eval
from .boxes import DetectionBox, nms, rotated_iou
