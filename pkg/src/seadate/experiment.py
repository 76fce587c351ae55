"""Training, evaluation and ablation runs that leave their artifacts on disk.

These are the workers behind the ``train``, ``eval`` and ``ablate``
commands. An ablation cell is literally a training run followed by an
evaluation of its saved checkpoint, so a cell and a separate train + eval
with the same configuration produce identical numbers.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import replace

import numpy as np

from .config import RunConfig, from_dict
from .contrastive import KeyQueue
from .detector.model import DualStreamDetector
from .detector.train import SGD, evaluate, fit, load_checkpoint, save_checkpoint
from .errors import ConfigError
from .evaluation import pr_curve_rows
from .synth import load_dataset

log = logging.getLogger(__name__)

TRACE_FIELDS = ("step", "epoch", "l_obj", "l_loc", "l_cls", "l_o", "l_c", "total")
METRICS = ("map50", "map75", "map")


def resolve_split(path, split):
    """Accept a split directory or a ``gen-data`` root holding ``split/``."""
    if os.path.exists(os.path.join(path, "manifest.json")):
        return path
    sub = os.path.join(path, split)
    if os.path.exists(os.path.join(sub, "manifest.json")):
        return sub
    raise FileNotFoundError(f"no dataset manifest in {path} or {sub}")


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def check_compatible(backbone, dataset):
    if dataset.num_classes != backbone.num_classes:
        raise ConfigError(f"dataset has {dataset.num_classes} classes but the model expects {backbone.num_classes}")
    size = dataset.config.image_size
    if size != backbone.image_size:
        raise ConfigError(f"dataset images are {size}px but the model expects {backbone.image_size}px")


def _epoch_means(trace):
    out = {}
    for rec in trace:
        out.setdefault(rec["epoch"], []).append(rec)
    return {e: {k: float(np.mean([r[k] for r in recs])) for k in ("l_o", "l_c", "total")} for e, recs in out.items()}


def train_run(cfg: RunConfig, train_ds, out_dir):
    """Train ``cfg`` on ``train_ds``; writes trace, checkpoints and a summary.

    Returns ``(summary dict, final checkpoint dir)``.
    """
    os.makedirs(out_dir, exist_ok=True)
    cfg.save(os.path.join(out_dir, "config.json"))
    check_compatible(cfg.backbone, train_ds)
    model = DualStreamDetector(cfg.backbone, seed=cfg.seed)
    tc = cfg.train
    opt = SGD(model.params, tc.lr, tc.momentum, tc.weight_decay, tc.grad_clip)
    queue = KeyQueue(cfg.contrastive.queue_size, cfg.backbone.embed_dim) if cfg.backbone.cl else None
    ckpt_root = os.path.join(out_dir, "checkpoints")
    meta = {"config": cfg.to_dict(), "input_mode": tc.input_mode}
    save_checkpoint(os.path.join(ckpt_root, "initial"), model, opt, queue, {**meta, "epoch": 0})

    trace_path = os.path.join(out_dir, "trace.jsonl")
    csv_path = os.path.join(out_dir, "trace.csv")
    with open(trace_path, "w") as jf, open(csv_path, "w", newline="") as cf:
        writer = csv.writer(cf)
        writer.writerow(TRACE_FIELDS)

        def on_step(rec):
            jf.write(json.dumps({k: rec[k] for k in TRACE_FIELDS}, sort_keys=True) + "\n")
            writer.writerow([rec[k] for k in TRACE_FIELDS])

        def on_epoch(epoch, opt_, queue_):
            jf.flush()
            if tc.checkpoint_every and epoch % tc.checkpoint_every == 0 and epoch < tc.epochs:
                save_checkpoint(os.path.join(ckpt_root, f"epoch_{epoch:03d}"), model, opt_, queue_,
                                {**meta, "epoch": epoch})

        trace, opt, queue = fit(model, train_ds, tc, cfg.loss, cfg.contrastive,
                                on_step=on_step, on_epoch=on_epoch, queue=queue, opt=opt)

    final = os.path.join(ckpt_root, "initial")
    if tc.epochs > 0:
        final = os.path.join(ckpt_root, "final")
        save_checkpoint(final, model, opt, queue, {**meta, "epoch": tc.epochs})
    means = _epoch_means(trace)
    last = means.get(tc.epochs, {"l_o": None, "l_c": None, "total": None})
    summary = {"epochs": tc.epochs, "steps": len(trace), "l_o": last["l_o"], "l_c": last["l_c"],
               "total": last["total"], "checkpoint": final}
    write_json(os.path.join(out_dir, "summary.json"), summary)
    return summary, final


def eval_run(checkpoint, dataset, out_dir, conf_thresh=None, nms_iou=None, input_mode=None):
    """Evaluate a checkpoint; writes ``report.json`` and ``pr_curve.csv``.

    Thresholds and input mode default to those recorded in the checkpoint.
    """
    model, _, _, manifest = load_checkpoint(checkpoint)
    check_compatible(model.cfg, dataset)
    saved = manifest.get("meta", {}).get("config")
    run_cfg = from_dict(saved) if saved else RunConfig(backbone=model.cfg)
    resolved = {
        "checkpoint": checkpoint,
        "dataset": dataset.directory,
        "conf_thresh": run_cfg.eval.conf_thresh if conf_thresh is None else conf_thresh,
        "nms_iou": run_cfg.eval.nms_iou if nms_iou is None else nms_iou,
        "input_mode": run_cfg.train.input_mode if input_mode is None else input_mode,
    }
    os.makedirs(out_dir, exist_ok=True)
    write_json(os.path.join(out_dir, "config.json"), resolved)
    report, dets, gts = evaluate(model, dataset, resolved["input_mode"], resolved["conf_thresh"], resolved["nms_iou"])
    doc = report.to_dict()
    doc["images"] = len(dataset)
    write_json(os.path.join(out_dir, "report.json"), doc)
    with open(os.path.join(out_dir, "pr_curve.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("class", "rank", "confidence", "precision", "recall"))
        w.writerows(pr_curve_rows(dets, gts, range(model.cfg.num_classes)))
    return doc


# ablation --------------------------------------------------------------------

def ablation_cells(cfg: RunConfig):
    """The grid as ``(name, backbone overrides, input_mode)``; ``None`` position means 'best'."""
    cells = [(f"dtf_pos{p}", {"dtf": True, "cl": False, "fusion_positions": (p,)}, "both")
             for p in cfg.ablation.positions]
    cells += [
        ("dtf_off_cl_off", {"dtf": False, "cl": False}, "both"),
        ("dtf_off_cl_on", {"dtf": False, "cl": True}, "both"),
        ("dtf_on_cl_on", {"dtf": True, "cl": True, "fusion_positions": None}, "both"),
    ]
    if cfg.ablation.single_modality:
        cells += [("rgb_only", {"dtf": False, "cl": False}, "rgb"),
                  ("ir_only", {"dtf": False, "cl": False}, "ir")]
    return cells


def cell_config(cfg, overrides, input_mode, best_position):
    bb = dict(overrides)
    if bb.get("fusion_positions", ()) is None:
        bb["fusion_positions"] = (best_position,)
    if not bb["dtf"]:
        bb.setdefault("fusion_positions", cfg.backbone.fusion_positions)
    return replace(cfg, backbone=replace(cfg.backbone, **bb), train=replace(cfg.train, input_mode=input_mode))


def best_position(rows, positions):
    """Position whose DTF-only cell scored the highest mAP50; ties go to the shallower one."""
    scored = [(rows[f"dtf_pos{p}"]["map50"], -p) for p in positions if f"dtf_pos{p}" in rows]
    if not scored:
        return positions[0]
    return -max(scored)[1]


def ablation_run(cfg: RunConfig, train_ds, test_ds, out_dir, only=None):
    """Train and evaluate every grid cell; returns the table as a dict."""
    os.makedirs(out_dir, exist_ok=True)
    cfg.save(os.path.join(out_dir, "config.json"))
    cells = ablation_cells(cfg)
    names = [c[0] for c in cells]
    if only:
        unknown = sorted(set(only) - set(names))
        if unknown:
            raise ConfigError(f"unknown ablation cells {unknown}; available: {names}")
    rows = {}
    for name, overrides, mode in cells:
        if only and name not in only:
            continue
        best = best_position(rows, cfg.ablation.positions)
        ccfg = cell_config(cfg, overrides, mode, best)
        cell_dir = os.path.join(out_dir, "cells", name)
        log.info("ablation cell %s", name)
        summary, ckpt = train_run(ccfg, train_ds, cell_dir)
        report = eval_run(ckpt, test_ds, os.path.join(cell_dir, "eval"))
        rows[name] = {
            "name": name,
            "dtf": ccfg.backbone.dtf,
            "cl": ccfg.backbone.cl,
            "fusion_positions": list(ccfg.backbone.fusion_positions) if ccfg.backbone.dtf else [],
            "input_mode": mode,
            **{m: report[m] for m in METRICS},
        }
    table = {"seed": cfg.seed, "epochs": cfg.train.epochs, "best_position": best_position(rows, cfg.ablation.positions),
             "cells": [rows[n] for n in names if n in rows]}
    write_json(os.path.join(out_dir, "ablation.json"), table)
    with open(os.path.join(out_dir, "ablation.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("name", "dtf", "cl", "fusion_positions", "input_mode", *METRICS))
        for r in table["cells"]:
            w.writerow((r["name"], r["dtf"], r["cl"], " ".join(map(str, r["fusion_positions"])), r["input_mode"],
                        *(r[m] for m in METRICS)))
    return table


def load_split(path, split):
    return load_dataset(resolve_split(path, split))

