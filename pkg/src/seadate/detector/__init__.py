"""Dual-stream detector: backbone, head, losses, post-processing, training."""
from .loss import (DetectionLoss, HeadGeometry, LossWeights, ScaleTargets, assign_targets, decode_boxes,
                   detection_loss, detection_loss_and_grad, total_loss)
from .model import BackboneConfig, DualStreamDetector, ForwardResult, backbone_forward, init_params
from .postprocess import decode_and_nms, nms
from .train import (SGD, TrainConfig, evaluate, fit, load_checkpoint, predict, save_checkpoint,
                    train_step)

__all__ = [
    "BackboneConfig", "DetectionLoss", "DualStreamDetector", "ForwardResult", "HeadGeometry", "LossWeights",
    "SGD", "ScaleTargets", "TrainConfig", "assign_targets", "backbone_forward", "decode_and_nms",
    "decode_boxes", "detection_loss", "detection_loss_and_grad", "evaluate", "fit", "init_params",
    "load_checkpoint", "nms", "predict", "save_checkpoint", "total_loss", "train_step",
]
