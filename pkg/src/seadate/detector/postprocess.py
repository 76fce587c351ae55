"""Turning head outputs into scored, de-duplicated detections."""
from __future__ import annotations

import numpy as np

from ..evaluation import Detection, iou_matrix
from ..ops import softmax_rows
from .loss import _sigmoid, decode_boxes


def nms(boxes, scores, iou_thresh):
    """Greedy non-maximum suppression; returns kept indices by descending score."""
    order = np.argsort(-np.asarray(scores), kind="stable")
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    keep = []
    suppressed = np.zeros(len(order), dtype=bool)
    ious = iou_matrix(boxes, boxes)
    for pos, i in enumerate(order):
        if suppressed[pos]:
            continue
        keep.append(int(i))
        suppressed[pos + 1:] |= ious[i, order[pos + 1:]] >= iou_thresh
    return keep


def decode_and_nms(preds, geom, conf_thresh=0.25, nms_iou=0.5):
    """Per-image lists of :class:`Detection`, sorted by confidence.

    Confidence is ``sigmoid(objectness) * max class probability``; boxes are
    clamped to the image and suppressed per class.
    """
    if not (0 <= conf_thresh <= 1 and 0 <= nms_iou <= 1):
        raise ValueError("thresholds must lie in [0, 1]")
    n = preds[0].shape[0]
    size = geom.image_size
    per_image = [([], [], []) for _ in range(n)]
    for h, pred in enumerate(preds):
        boxes, _ = decode_boxes(pred[:, 1:5], geom.strides[h])
        obj = _sigmoid(pred[:, 0])
        k = pred.shape[1] - 5
        probs = softmax_rows(pred[:, 5:].transpose(0, 2, 3, 1).reshape(-1, k)).reshape(n, *obj.shape[1:], k)
        cls = probs.argmax(axis=-1)
        conf = obj * probs.max(axis=-1)
        for i, r, c in zip(*np.nonzero(conf > conf_thresh)):
            b = np.clip(boxes[i, r, c], 0, size)
            if b[2] <= b[0] or b[3] <= b[1]:
                continue
            per_image[i][0].append(b)
            per_image[i][1].append(float(conf[i, r, c]))
            per_image[i][2].append(int(cls[i, r, c]))

    results = []
    for boxes, scores, classes in per_image:
        dets = []
        classes = np.asarray(classes, dtype=np.int64)
        for c in np.unique(classes):
            idx = np.nonzero(classes == c)[0]
            for j in nms([boxes[t] for t in idx], [scores[t] for t in idx], nms_iou):
                t = idx[j]
                dets.append(Detection(int(c), tuple(float(v) for v in boxes[t]), scores[t]))
        dets.sort(key=lambda d: -d.confidence)
        results.append(dets)
    return results
