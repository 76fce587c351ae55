"""SGD training, inference and checkpoints for the dual-stream detector."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass

import numpy as np

from .. import contrastive as cl
from ..errors import ConfigError, NumericalError
from ..evaluation import map_suite
from ..tensor import Param, pack_tensors, unpack_tensors
from .loss import LossWeights, assign_targets, detection_loss_and_grad, total_loss
from .model import BackboneConfig, DualStreamDetector
from .postprocess import decode_and_nms

log = logging.getLogger(__name__)

INPUT_MODES = ("both", "rgb", "ir")


@dataclass
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.98
    weight_decay: float = 0.001
    batch_size: int = 4
    epochs: int = 15
    seed: int = 0
    input_mode: str = "both"        # "rgb"/"ir" feed one modality to both streams
    grad_clip: float = 0.0          # global-norm clip; 0 disables
    checkpoint_every: int = 0       # epochs between checkpoints; 0 keeps only initial and final

    def __post_init__(self):
        if self.lr < 0 or not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ConfigError("need lr >= 0, 0 <= momentum < 1, weight_decay >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be positive and epochs nonnegative")
        if self.input_mode not in INPUT_MODES:
            raise ConfigError(f"input_mode must be one of {INPUT_MODES}, got {self.input_mode!r}")


class SGD:
    """Heavy-ball SGD with L2 weight decay folded into the gradient."""

    def __init__(self, params, lr=0.01, momentum=0.98, weight_decay=0.001, grad_clip=0.0):
        self.params = params
        self.lr, self.momentum, self.weight_decay, self.grad_clip = lr, momentum, weight_decay, grad_clip
        self.buffers = {k: np.zeros_like(p.value) for k, p in params.items()}

    def grad_norm(self):
        return float(np.sqrt(sum(np.sum(p.grad ** 2) for p in self.params.values())))

    def step(self):
        scale = 1.0
        if self.grad_clip > 0:
            norm = self.grad_norm()
            if norm > self.grad_clip:
                scale = self.grad_clip / norm
        for k, p in self.params.items():
            g = scale * p.grad + self.weight_decay * p.value
            buf = self.buffers[k]
            buf *= self.momentum
            buf += g
            p.value -= self.lr * buf


def batch_images(samples, input_mode="both"):
    a = np.stack([s.img_a for s in samples])
    b = np.stack([s.img_b for s in samples])
    if input_mode == "rgb":
        return a, a.copy()
    if input_mode == "ir":
        return b, b.copy()
    return a, b


def _diagnostics(model):
    return ", ".join(f"{k}: |w|={np.linalg.norm(p.value):.3g} |g|={np.linalg.norm(p.grad):.3g}"
                     for k, p in model.params.items())


def train_step(samples, model, opt, queue, weights, cl_cfg, input_mode="both"):
    """One forward/backward/update on a batch; returns the loss breakdown."""
    geom = model.cfg.geometry
    model.zero_grad()
    rgb, ir = batch_images(samples, input_mode)
    res = model.forward(rgb, ir)
    targets = assign_targets([s.boxes for s in samples], geom)
    det, dpreds = detection_loss_and_grad(res.preds, targets, weights, geom)
    dpreds = [weights.alpha1 * d for d in dpreds]
    l_c = 0.0
    d_rgb = d_ir = None
    if model.cfg.cl:
        heads = model.cl_heads()
        l_c, back, queue = cl.cl_step(res.deep_rgb, res.deep_ir, heads, queue, cl_cfg)
        d_rgb, d_ir, (g_q, g_k) = back(weights.alpha2)
        for k, v in g_q.named("cl.q.").items():
            model.params[k].accumulate(v)
        for k, v in g_k.named("cl.k.").items():
            model.params[k].accumulate(v)
    total = total_loss(det.total, l_c, weights.alpha1, weights.alpha2)
    if not np.isfinite(total):
        raise NumericalError(f"non-finite loss {total}; parameter/grad norms: {_diagnostics(model)}")
    model.backward(res, dpreds, d_rgb, d_ir)
    if not np.isfinite(opt.grad_norm()):
        raise NumericalError(f"non-finite gradient; parameter/grad norms: {_diagnostics(model)}")
    opt.step()
    return {"l_obj": det.l_obj, "l_loc": det.l_loc, "l_cls": det.l_cls, "l_o": det.total,
            "l_c": float(l_c), "total": float(total)}


def epoch_order(seed, epoch, n):
    return np.random.default_rng([int(seed), 7919, int(epoch)]).permutation(n)


def fit(model, dataset, train_cfg, weights, cl_cfg, on_step=None, on_epoch=None, queue=None, opt=None):
    """Train for ``train_cfg.epochs`` epochs; returns ``(trace, opt, queue)``."""
    opt = opt or SGD(model.params, train_cfg.lr, train_cfg.momentum, train_cfg.weight_decay, train_cfg.grad_clip)
    if queue is None and model.cfg.cl:
        queue = cl.KeyQueue(cl_cfg.queue_size, model.cfg.embed_dim)
    trace = []
    step = 0
    for epoch in range(1, train_cfg.epochs + 1):
        order = epoch_order(train_cfg.seed, epoch, len(dataset))
        for start in range(0, len(order), train_cfg.batch_size):
            batch = [dataset[int(i)] for i in order[start:start + train_cfg.batch_size]]
            rec = train_step(batch, model, opt, queue, weights, cl_cfg, train_cfg.input_mode)
            step += 1
            rec = {"step": step, "epoch": epoch, **rec}
            trace.append(rec)
            if on_step:
                on_step(rec)
        if on_epoch:
            on_epoch(epoch, opt, queue)
        log.info("epoch %d done, last total loss %.4f", epoch, trace[-1]["total"] if trace else float("nan"))
    return trace, opt, queue


def predict(model, samples, input_mode="both", conf_thresh=0.25, nms_iou=0.5, batch_size=8):
    dets = []
    for start in range(0, len(samples), batch_size):
        batch = [samples[i] for i in range(start, min(start + batch_size, len(samples)))]
        rgb, ir = batch_images(batch, input_mode)
        res = model.forward(rgb, ir)
        dets += decode_and_nms(res.preds, model.cfg.geometry, conf_thresh, nms_iou)
    return dets


def evaluate(model, dataset, input_mode="both", conf_thresh=0.25, nms_iou=0.5):
    samples = [dataset[i] for i in range(len(dataset))]
    dets = predict(model, samples, input_mode, conf_thresh, nms_iou)
    gts = [s.boxes for s in samples]
    return map_suite(dets, gts, range(model.cfg.num_classes)), dets, gts


# checkpoints -----------------------------------------------------------------

def save_checkpoint(directory, model, opt=None, queue=None, meta=None):
    """Write params, momentum buffers and queue state next to a JSON manifest."""
    os.makedirs(directory, exist_ok=True)
    blob, entries = pack_tensors({k: p.value for k, p in model.params.items()})
    with open(os.path.join(directory, "params.bin"), "wb") as fh:
        fh.write(blob)
    manifest = {"backbone": asdict(model.cfg), "seed": model.seed, "params": entries, "meta": meta or {}}
    if opt is not None:
        mblob, mentries = pack_tensors(opt.buffers)
        with open(os.path.join(directory, "momentum.bin"), "wb") as fh:
            fh.write(mblob)
        manifest["momentum"] = mentries
    if queue is not None:
        with open(os.path.join(directory, "queue.bin"), "wb") as fh:
            fh.write(queue.to_bytes())
        manifest["queue"] = "queue.bin"
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_checkpoint(directory):
    """Return ``(model, momentum_buffers or None, queue or None, manifest)``."""
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    cfg = BackboneConfig(**manifest["backbone"])
    with open(os.path.join(directory, "params.bin"), "rb") as fh:
        values = unpack_tensors(fh.read(), manifest["params"])
    model = DualStreamDetector(cfg, manifest["seed"], params={k: Param(v) for k, v in values.items()})
    buffers = None
    if "momentum" in manifest:
        with open(os.path.join(directory, "momentum.bin"), "rb") as fh:
            buffers = unpack_tensors(fh.read(), manifest["momentum"])
    queue = None
    if "queue" in manifest:
        with open(os.path.join(directory, manifest["queue"]), "rb") as fh:
            queue = cl.KeyQueue.from_bytes(fh.read())
    return model, buffers, queue, manifest
