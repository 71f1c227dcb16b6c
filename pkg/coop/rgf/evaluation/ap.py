import numpy as np

from .boxes import rotated_iou


def average_precision(rec, prec):
    """All-point interpolated area under the precision-recall curve."""
    mrec = np.concatenate(([0.0], rec, [1.0]))
    mpre = np.concatenate(([0.0], prec, [0.0]))

    # precision envelope
    for i in range(mpre.size - 1, 0, -1):
        mpre[i - 1] = np.maximum(mpre[i - 1], mpre[i])

    i = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[i + 1] - mrec[i]) * mpre[i + 1]))


def ap_eval(dets_per_frame, gts_per_frame, iou_threshold):
    """
    Average precision of oriented detections over a set of frames.

    Detections from all frames are ranked by score (ties by frame, then position); each
    is matched to the highest-IoU ground truth of its frame that is still unmatched,
    provided the rotated IoU reaches `iou_threshold`.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError(f"iou_threshold must lie in (0, 1), got {iou_threshold}")
    if len(dets_per_frame) != len(gts_per_frame):
        raise ValueError("detections and ground truth cover a different number of frames")
    npos = sum(len(g) for g in gts_per_frame)
    if npos == 0:
        raise ValueError("no ground-truth boxes: recall is undefined")

    flat = [(frame, j, det) for frame, dets in enumerate(dets_per_frame) for j, det in enumerate(dets)]
    if not flat:
        return 0.0
    scores = np.array([d.score for _, _, d in flat])
    order = np.lexsort((np.arange(len(flat)), -scores))

    matched = [np.zeros(len(g), dtype=bool) for g in gts_per_frame]
    tp = np.zeros(len(flat))
    fp = np.zeros(len(flat))
    for rank, idx in enumerate(order):
        frame, _, det = flat[idx]
        best, best_iou = -1, iou_threshold
        for g, gt in enumerate(gts_per_frame[frame]):
            if matched[frame][g]:
                continue
            iou = rotated_iou(det, gt)
            if iou >= best_iou:
                best, best_iou = g, iou
        if best >= 0:
            matched[frame][best] = True
            tp[rank] = 1.0
        else:
            fp[rank] = 1.0

    fp = np.cumsum(fp)
    tp = np.cumsum(tp)
    rec = tp / float(npos)
    prec = tp / np.maximum(tp + fp, np.finfo(np.float64).eps)
    return average_precision(rec, prec)
