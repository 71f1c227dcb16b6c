import math

import numpy as np
import pytest

from rgf.evaluation.ap import ap_eval, average_precision
from rgf.evaluation.boxes import DetectionBox, nms, rank_order, rotated_iou


def test_box_rejects_degenerate_extent():
    with pytest.raises(ValueError):
        DetectionBox(0.0, 0.0, 0.0, 1.0, 0.0)


def test_corners_follow_heading():
    corners = DetectionBox(1.0, 2.0, 1.0, 4.0, math.pi / 2).corners()
    assert np.allclose(corners[0], [1.0 - 0.5, 2.0 + 2.0])
    assert np.allclose(np.ptp(corners, axis=0), [1.0, 4.0])


def test_identical_boxes():
    box = DetectionBox(0.3, -1.0, 1.8, 4.2, 0.7)
    assert rotated_iou(box, box) == pytest.approx(1.0)


def test_offset_unit_squares():
    a = DetectionBox(0.0, 0.0, 1.0, 1.0, 0.0)
    b = DetectionBox(0.5, 0.0, 1.0, 1.0, 0.0)
    assert rotated_iou(a, b) == pytest.approx(1.0 / 3.0)


def test_square_rotated_by_quarter_turn_is_unchanged():
    a = DetectionBox(0.0, 0.0, 2.0, 2.0, 0.0)
    assert rotated_iou(a, DetectionBox(0.0, 0.0, 2.0, 2.0, math.pi / 2)) == pytest.approx(1.0)


def test_disjoint_boxes():
    assert rotated_iou(DetectionBox(0, 0, 1, 1, 0), DetectionBox(5, 5, 1, 1, 0.3)) == 0.0


def test_iou_is_symmetric():
    a = DetectionBox(0.0, 0.0, 2.0, 4.0, 0.2)
    b = DetectionBox(0.7, 0.4, 1.5, 3.0, -0.6)
    assert rotated_iou(a, b) == pytest.approx(rotated_iou(b, a))
    assert 0.0 < rotated_iou(a, b) < 1.0


def test_rank_order_breaks_ties_by_index():
    assert list(rank_order([0.5, 0.9, 0.5, 0.9])) == [1, 3, 0, 2]
    assert list(rank_order([0.5, 0.5], indices=[7, 3])) == [1, 0]


def test_nms_suppresses_overlaps():
    boxes = [
        DetectionBox(0.0, 0.0, 1.0, 1.0, 0.0, score=0.8),
        DetectionBox(0.1, 0.0, 1.0, 1.0, 0.0, score=0.9),
        DetectionBox(3.0, 0.0, 1.0, 1.0, 0.0, score=0.7),
    ]
    kept = nms(boxes, 0.1)
    assert [b.score for b in kept] == [0.9, 0.7]


def test_nms_suppresses_at_threshold():
    a = DetectionBox(0.0, 0.0, 1.0, 1.0, 0.0, score=0.9)
    b = DetectionBox(0.5, 0.0, 1.0, 1.0, 0.0, score=0.8)
    iou = rotated_iou(a, b)
    assert len(nms([a, b], iou)) == 1
    assert len(nms([a, b], iou + 1e-6)) == 2


def test_average_precision_perfect():
    assert average_precision(np.array([0.5, 1.0]), np.array([1.0, 1.0])) == pytest.approx(1.0)


def _unit(cx, score=1.0):
    return DetectionBox(cx, 0.0, 1.0, 1.0, 0.0, score=score)


def test_ap_hand_computed():
    gts = [[_unit(0.0), _unit(5.0)]]
    dets = [[_unit(0.0, 0.9), _unit(10.0, 0.8), _unit(5.0, 0.7)]]
    assert ap_eval(dets, gts, 0.5) == pytest.approx(5.0 / 6.0)


def test_ap_duplicate_detection_is_false_positive():
    gts = [[_unit(0.0)]]
    dets = [[_unit(0.0, 0.9), _unit(0.05, 0.8)]]
    assert ap_eval(dets, gts, 0.5) == pytest.approx(1.0)
    dets = [[_unit(0.05, 0.9), _unit(0.0, 0.8)]]
    assert ap_eval(dets, gts, 0.5) == pytest.approx(1.0)


def test_ap_across_frames():
    gts = [[_unit(0.0)], [_unit(0.0)]]
    dets = [[_unit(0.0, 0.6)], [_unit(3.0, 0.9)]]
    # ranked: frame 1 FP then frame 0 TP -> precision 0.5 at recall 0.5
    assert ap_eval(dets, gts, 0.5) == pytest.approx(0.25)


def test_ap_no_detections():
    assert ap_eval([[]], [[_unit(0.0)]], 0.5) == 0.0


def test_ap_is_invariant_to_detection_order():
    gts = [[_unit(0.0), _unit(4.0)], [_unit(1.0)]]
    dets = [[_unit(0.2, 0.7), _unit(4.0, 0.4), _unit(9.0, 0.6)], [_unit(1.1, 0.5)]]
    shuffled = [dets[0][::-1], dets[1]]
    assert ap_eval(dets, gts, 0.5) == ap_eval(shuffled, gts, 0.5)


@pytest.mark.parametrize(
    "dets, gts, thr",
    [([[]], [[]], 0.5), ([[]], [[_unit(0.0)]], 0.0), ([[]], [[_unit(0.0)]], 1.0), ([[], []], [[_unit(0.0)]], 0.5)],
)
def test_ap_rejects_invalid_input(dets, gts, thr):
    with pytest.raises(ValueError):
        ap_eval(dets, gts, thr)
