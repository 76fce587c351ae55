"""Grid targets, box decoding and the three-term detection loss."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..ops import log_softmax_rows

BOX_LOG_CLIP = 8.0


@dataclass
class LossWeights:
    alpha1: float = 1.0      # detection loss
    alpha2: float = 0.1      # contrastive loss
    lam_obj: float = 1.0
    lam_loc: float = 0.05
    lam_cls: float = 0.5
    a: tuple = (1.0, 1.0, 1.0)
    b: tuple = (1.0, 1.0, 1.0)
    c: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.a, self.b, self.c = tuple(self.a), tuple(self.b), tuple(self.c)
        vals = [self.alpha1, self.alpha2, self.lam_obj, self.lam_loc, self.lam_cls, *self.a, *self.b, *self.c]
        if any(v < 0 for v in vals):
            raise ConfigError("loss weights must be nonnegative")
        if not len(self.a) == len(self.b) == len(self.c) == 3:
            raise ConfigError("per-scale weights a, b, c need one entry per head scale (3)")


@dataclass
class HeadGeometry:
    image_size: int = 64
    strides: tuple = (4, 8, 16)
    size_ratio: float = 1.5   # preferred object size is size_ratio * stride

    @property
    def grids(self):
        return tuple(self.image_size // s for s in self.strides)


@dataclass
class ScaleTargets:
    obj: np.ndarray          # (N, G, G) 1.0 at positive cells
    cls: np.ndarray          # (N, G, G) class id, -1 elsewhere
    box: np.ndarray          # (N, G, G, 4) ground-truth corners at positive cells

    @property
    def positives(self):
        return self.obj > 0


def _scale_preference(size, geom):
    """Scale indices ordered by how well their stride matches ``size``; ties prefer finer."""
    dist = [abs(np.log2(size) - np.log2(geom.size_ratio * s)) for s in geom.strides]
    return sorted(range(len(geom.strides)), key=lambda h: (round(dist[h], 12), h))


def assign_targets(gts, geom):
    """Assign each ground-truth box of each image to one grid cell.

    ``gts`` holds, per image, a sequence of ``(class_id, (x0, y0, x1, y1))``.
    A box goes to the cell containing its center at the best-matching scale;
    if that cell is already claimed by another box, the next-best scale is
    tried, and the box is dropped only when every scale is taken.
    """
    n = len(gts)
    out = [ScaleTargets(np.zeros((n, g, g)), np.full((n, g, g), -1, dtype=np.int64), np.zeros((n, g, g, 4)))
           for g in geom.grids]
    for i, boxes in enumerate(gts):
        for cls, box in boxes:
            x0, y0, x1, y1 = (float(v) for v in box)
            cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
            for h in _scale_preference(max(x1 - x0, y1 - y0), geom):
                g, s = geom.grids[h], geom.strides[h]
                col = min(max(int(cx // s), 0), g - 1)
                row = min(max(int(cy // s), 0), g - 1)
                t = out[h]
                if t.obj[i, row, col] == 0:
                    t.obj[i, row, col] = 1.0
                    t.cls[i, row, col] = int(cls)
                    t.box[i, row, col] = (x0, y0, x1, y1)
                    break
    return out


# box decoding ----------------------------------------------------------------

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def decode_boxes(raw, stride):
    """Map ``(N, 4, G, G)`` regression outputs to ``(N, G, G, 4)`` corner boxes.

    Centers are ``(cell + sigmoid(t)) * stride``; sizes are
    ``stride * exp(t)`` with ``t`` clipped to +-8.
    """
    n, _, g, _ = raw.shape
    cols = np.arange(g)[None, None, :]
    rows = np.arange(g)[None, :, None]
    sx, sy = _sigmoid(raw[:, 0]), _sigmoid(raw[:, 1])
    tw = np.clip(raw[:, 2], -BOX_LOG_CLIP, BOX_LOG_CLIP)
    th = np.clip(raw[:, 3], -BOX_LOG_CLIP, BOX_LOG_CLIP)
    cx = (cols + sx) * stride
    cy = (rows + sy) * stride
    w = stride * np.exp(tw)
    h = stride * np.exp(th)
    boxes = np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=-1)
    return boxes, (sx, sy, w, h, raw)


def decode_boxes_backward(dboxes, cache, stride):
    sx, sy, w, h, raw = cache
    d0, d1, d2, d3 = (dboxes[..., i] for i in range(4))
    dcx, dcy = d0 + d2, d1 + d3
    dw, dh = 0.5 * (d2 - d0), 0.5 * (d3 - d1)
    draw = np.zeros_like(raw)
    draw[:, 0] = dcx * stride * sx * (1 - sx)
    draw[:, 1] = dcy * stride * sy * (1 - sy)
    draw[:, 2] = dw * w * (np.abs(raw[:, 2]) < BOX_LOG_CLIP)
    draw[:, 3] = dh * h * (np.abs(raw[:, 3]) < BOX_LOG_CLIP)
    return draw


def box_iou_with_grad(p, g):
    """Row-wise IoU of ``(M, 4)`` boxes ``p`` against ``g`` and ``dIoU/dp``."""
    ix0 = np.maximum(p[:, 0], g[:, 0])
    iy0 = np.maximum(p[:, 1], g[:, 1])
    ix1 = np.minimum(p[:, 2], g[:, 2])
    iy1 = np.minimum(p[:, 3], g[:, 3])
    iw, ih = ix1 - ix0, iy1 - iy0
    overlap = (iw > 0) & (ih > 0)
    inter = np.where(overlap, iw * ih, 0.0)
    pw, ph = p[:, 2] - p[:, 0], p[:, 3] - p[:, 1]
    area_p = pw * ph
    area_g = (g[:, 2] - g[:, 0]) * (g[:, 3] - g[:, 1])
    union = area_p + area_g - inter
    iou = inter / union

    d_inter = (union + inter) / union ** 2
    d_area = -inter / union ** 2
    grad = np.zeros_like(p)
    ov = overlap.astype(np.float64)
    grad[:, 0] = d_inter * ov * -ih * (p[:, 0] > g[:, 0]) + d_area * -ph
    grad[:, 2] = d_inter * ov * ih * (p[:, 2] < g[:, 2]) + d_area * ph
    grad[:, 1] = d_inter * ov * -iw * (p[:, 1] > g[:, 1]) + d_area * -pw
    grad[:, 3] = d_inter * ov * iw * (p[:, 3] < g[:, 3]) + d_area * pw
    return iou, grad


# the loss --------------------------------------------------------------------

@dataclass
class DetectionLoss:
    total: float
    l_obj: float             # lam_obj * sum_h a_h L_obj(h)
    l_loc: float
    l_cls: float
    per_scale: list = field(default_factory=list)   # (L_obj, L_loc, L_cls) per scale, unweighted


def _bce_logits(o, t):
    return np.maximum(o, 0) - o * t + np.log1p(np.exp(-np.abs(o)))


def detection_loss_and_grad(preds, targets, weights, geom):
    """Loss over head outputs ``preds[h]`` of shape ``(N, 5 + K, G, G)``.

    Channel 0 is the objectness logit, channels 1-4 box regression, the rest
    class logits. Objectness BCE is averaged over every cell; the IoU and
    classification terms over positive cells only, and vanish on scales
    without positives. Returns ``(DetectionLoss, grads)``.
    """
    grads = []
    per_scale = []
    l_obj = l_loc = l_cls = 0.0
    for h, (pred, t) in enumerate(zip(preds, targets)):
        stride = geom.strides[h]
        d = np.zeros_like(pred)
        obj = pred[:, 0]
        lo = float(_bce_logits(obj, t.obj).mean())
        d[:, 0] = weights.lam_obj * weights.a[h] * (_sigmoid(obj) - t.obj) / obj.size

        pos = t.positives
        npos = int(pos.sum())
        ll = lc = 0.0
        if npos:
            boxes, cache = decode_boxes(pred[:, 1:5], stride)
            iou, giou = box_iou_with_grad(boxes[pos], t.box[pos])
            ll = float((1.0 - iou).mean())
            dboxes = np.zeros_like(boxes)
            dboxes[pos] = -giou * (weights.lam_loc * weights.b[h] / npos)
            d[:, 1:5] = decode_boxes_backward(dboxes, cache, stride)

            logits = pred[:, 5:].transpose(0, 2, 3, 1)[pos]          # (P, K)
            labels = t.cls[pos]
            logp = log_softmax_rows(logits)
            lc = float(-logp[np.arange(npos), labels].mean())
            dl = np.exp(logp)
            dl[np.arange(npos), labels] -= 1.0
            dcls = np.zeros(pred[:, 5:].transpose(0, 2, 3, 1).shape)
            dcls[pos] = dl * (weights.lam_cls * weights.c[h] / npos)
            d[:, 5:] = dcls.transpose(0, 3, 1, 2)
        per_scale.append((lo, ll, lc))
        l_obj += weights.a[h] * lo
        l_loc += weights.b[h] * ll
        l_cls += weights.c[h] * lc
        grads.append(d)
    l_obj *= weights.lam_obj
    l_loc *= weights.lam_loc
    l_cls *= weights.lam_cls
    return DetectionLoss(l_obj + l_loc + l_cls, l_obj, l_loc, l_cls, per_scale), grads


def detection_loss(preds, targets, weights, geom):
    return detection_loss_and_grad(preds, targets, weights, geom)[0].total


def total_loss(l_o, l_c, alpha1=1.0, alpha2=0.1):
    if alpha1 < 0 or alpha2 < 0:
        raise ConfigError("loss weights must be nonnegative")
    return alpha1 * l_o + alpha2 * l_c
