"""IoU, greedy matching, all-points average precision and the mAP suite."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass
class Detection:
    cls: int
    box: tuple          # (x_min, y_min, x_max, y_max) in pixels
    confidence: float


def iou(a, b):
    """Intersection over union of two corner boxes; zero-area boxes give 0."""
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    area_a = max(ax1 - ax0, 0.0) * max(ay1 - ay0, 0.0)
    area_b = max(bx1 - bx0, 0.0) * max(by1 - by0, 0.0)
    if area_a <= 0 or area_b <= 0:
        return 0.0
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (area_a + area_b - inter)


def iou_matrix(boxes_a, boxes_b):
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = np.clip(a[:, 2] - a[:, 0], 0, None) * np.clip(a[:, 3] - a[:, 1], 0, None)
    area_b = np.clip(b[:, 2] - b[:, 0], 0, None) * np.clip(b[:, 3] - b[:, 1], 0, None)
    union = area_a[:, None] + area_b[None, :] - inter
    valid = (area_a[:, None] > 0) & (area_b[None, :] > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(valid & (union > 0), inter / union, 0.0)


@dataclass
class MatchResult:
    tp: np.ndarray              # bool per detection, in the given order
    matched_gt: np.ndarray      # gt index per detection, -1 for false positives
    fn: int

    @property
    def fp(self):
        return int((~self.tp).sum())

    @property
    def n_tp(self):
        return int(self.tp.sum())


def match_detections(det_boxes, gt_boxes, iou_thresh):
    """Greedy matching of confidence-sorted detections to ground truths.

    Each detection takes the unmatched ground truth of highest IoU (lowest
    index on ties) if that IoU reaches ``iou_thresh``.
    """
    nd = len(det_boxes)
    ng = len(gt_boxes)
    tp = np.zeros(nd, dtype=bool)
    matched = np.full(nd, -1, dtype=np.int64)
    if nd and ng:
        ious = iou_matrix(det_boxes, gt_boxes)
        taken = np.zeros(ng, dtype=bool)
        for d in range(nd):
            cand = np.where(taken, -1.0, ious[d])
            j = int(np.argmax(cand))
            if cand[j] >= iou_thresh and not taken[j]:
                taken[j] = True
                tp[d] = True
                matched[d] = j
    return MatchResult(tp, matched, ng - int(tp.sum()))


def precision_recall(flags, n_gt):
    flags = np.asarray(flags, dtype=bool)
    ctp = np.cumsum(flags)
    precision = ctp / np.arange(1, len(flags) + 1)
    recall = ctp / n_gt if n_gt else np.zeros(len(flags))
    return precision, recall


def average_precision(flags, n_gt):
    """Exact area under the precision envelope.

    ``flags`` are TP/FP markers in descending-confidence order. Returns
    ``None`` when there is nothing to score (no ground truth and no
    detections) and 0 when only false positives exist.
    """
    flags = np.asarray(flags, dtype=bool)
    if n_gt == 0:
        return None if len(flags) == 0 else 0.0
    if len(flags) == 0:
        return 0.0
    precision, recall = precision_recall(flags, n_gt)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * envelope))


@dataclass
class EvalReport:
    per_class_ap: dict = field(default_factory=dict)    # class -> threshold -> AP
    map50: float = 0.0
    map75: float = 0.0
    map: float = 0.0

    def to_dict(self):
        return {
            "per_class_ap": {str(c): {f"{t:.2f}": v for t, v in aps.items()} for c, aps in self.per_class_ap.items()},
            "map50": self.map50,
            "map75": self.map75,
            "map": self.map,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def thresholds_monotone(self):
        return all(all(a >= b - 1e-15 for a, b in zip(list(aps.values()), list(aps.values())[1:]))
                   for aps in self.per_class_ap.values())


def _class_flags(dets, gts, cls, thr):
    """Pooled ``(confidences, flags, n_gt)`` for one class over all images."""
    confs, flags, n_gt = [], [], 0
    for img, (d_img, g_img) in enumerate(zip(dets, gts)):
        d_c = sorted((d for d in d_img if d.cls == cls), key=lambda d: -d.confidence)
        g_c = [box for c, box in g_img if c == cls]
        n_gt += len(g_c)
        m = match_detections([d.box for d in d_c], g_c, thr)
        confs += [d.confidence for d in d_c]
        flags += list(m.tp)
    order = np.argsort(-np.asarray(confs, dtype=np.float64), kind="stable")
    return np.asarray(confs)[order], np.asarray(flags, dtype=bool)[order], n_gt


def map_suite(dets, gts, classes, thresholds=IOU_THRESHOLDS):
    """Per-class AP at each IoU threshold plus mAP50, mAP75 and mAP.

    ``dets[i]`` lists :class:`Detection` objects for image ``i``; ``gts[i]``
    lists ``(class_id, box)`` pairs. Classes with neither ground truth nor
    detections are left out of every mean.
    """
    report = EvalReport()
    for cls in classes:
        aps = {}
        for thr in thresholds:
            _, flags, n_gt = _class_flags(dets, gts, cls, thr)
            ap = average_precision(flags, n_gt)
            if ap is None:
                break
            aps[thr] = ap
        if aps:
            report.per_class_ap[cls] = aps
    if report.per_class_ap:
        vals = list(report.per_class_ap.values())
        report.map50 = float(np.mean([a[0.5] for a in vals])) if 0.5 in vals[0] else 0.0
        report.map75 = float(np.mean([a[0.75] for a in vals])) if 0.75 in vals[0] else 0.0
        report.map = float(np.mean([np.mean(list(a.values())) for a in vals]))
    return report


def pr_curve_rows(dets, gts, classes, thr=0.5):
    """``(class, rank, confidence, precision, recall)`` rows for CSV export."""
    rows = []
    for cls in classes:
        confs, flags, n_gt = _class_flags(dets, gts, cls, thr)
        if n_gt == 0 or len(flags) == 0:
            continue
        p, r = precision_recall(flags, n_gt)
        rows += [(cls, i, float(confs[i]), float(p[i]), float(r[i])) for i in range(len(flags))]
    return rows
