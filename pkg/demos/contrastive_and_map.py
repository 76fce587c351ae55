"""
Contrastive alignment and COCO-style scoring
============================================

Two small pieces that a detector trained on paired images leans on: an
InfoNCE loss that pulls a query embedding toward its paired key and away from
keys of earlier samples held in a FIFO queue, and an all-points average
precision over ten IoU thresholds.
"""

# %%
import math

import numpy as np

from seadate import contrastive as cl
from seadate.evaluation import IOU_THRESHOLDS, Detection, average_precision, map_suite

# %%
# With an empty queue there is nothing to contrast against and the loss is 0.
zq = np.array([[1.0, 0.0, 0.0]])
print("empty queue:", cl.infonce_loss(zq, zq, cl.KeyQueue(4, 3), 0.07))

# Two orthogonal negatives at temperature 1 give ln(1 + 2/e).
negs = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
print("two orthogonal negatives: %.9f  (ln(1+2/e) = %.9f)" % (
    cl.infonce_loss(zq, zq, negs, 1.0), math.log(1 + 2 / math.e)))

# %%
# Lower temperature sharpens the contrast: an aligned key wins more decisively.
rng = np.random.default_rng(0)
keys = rng.standard_normal((8, 3))
queue = cl.KeyQueue(8, 3).push(keys / np.linalg.norm(keys, axis=1, keepdims=True))
for tau in (1.0, 0.3, 0.07):
    print("tau %.2f  loss %.4f" % (tau, cl.infonce_loss(zq, zq, queue, tau)))

# %%
# The queue is a ring buffer: pushing past capacity evicts the oldest keys.
q = cl.KeyQueue(4, 1)
for batch in ([[0.0], [1.0], [2.0]], [[3.0], [4.0]], [[5.0]]):
    q.push(np.array(batch))
    print("after push", np.array(batch).ravel(), "->", q.entries().ravel())

# %%
# Average precision: rank detections by confidence and integrate the
# precision envelope over recall. A miss followed by a hit scores 0.5.
print("AP([FP, TP], 1 gt) =", average_precision([False, True], 1))
print("AP([TP, FP, TP], 2 gt) =", average_precision([True, False, True], 2))

# %%
# One image, one square. A loose box counts at IoU 0.5 but not at 0.75.
gts = [[(0, (10, 10, 20, 20))]]
dets = [[Detection(0, (11, 11, 21, 21), 0.9)]]
rep = map_suite(dets, gts, range(1))
print("IoU thresholds:", IOU_THRESHOLDS)
print("mAP50 %.2f  mAP75 %.2f  mAP %.2f" % (rep.map50, rep.map75, rep.map))
