"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the summary lines
as they are produced; they are also echoed in the terminal summary.
"""
import math
import os
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import TINY_SETS
from helpers import channel_oracle, check_attention_invariants, random_attention_case, spatial_oracle
from seadate import contrastive as cl
from seadate import fusion
from seadate.checks import run_scope
from seadate.config import load_config
from seadate.evaluation import IOU_THRESHOLDS, average_precision
from seadate.experiment import ablation_cells, ablation_run, eval_run, train_run
from seadate.synth import write_dataset
from test_contrastive import run_queue_ops
from test_evaluation import evaluator_gap

HERE = os.path.dirname(os.path.abspath(__file__))
DESK_CONFIG = os.path.join(HERE, "..", "configs", "desk.json")

# Fused-minus-best-baseline mAP50 margin, pinned at half the smallest margin
# measured over seeds 0, 1, 2 with the desk configuration (0.0881, 0.0046, 0.0953).
DIRECTIONAL_MARGIN = 0.00228

RESULTS = {}


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print("\n" + line)
    assert ok, line


def tiny_config(*extra):
    return load_config(None, list(TINY_SETS) + list(extra), environ={})


def test_criterion_1_gradient_correctness():
    t0 = time.time()
    results = run_scope("all", seed=0)
    elapsed = time.time() - t0
    reports = [r for rs in results.values() for r in rs]
    failed = [r.op for r in reports if not (r.passed and r.max_rel_error < r.tol)]
    worst = max(reports, key=lambda r: r.max_rel_error / r.tol)
    ok = not failed and elapsed < 120
    report(1, ok, f"{len(reports)} checks, worst {worst.op} {worst.max_rel_error:.2e} (tol {worst.tol:.0e}), "
                  f"{elapsed:.1f}s (<120s){'; failed: ' + ', '.join(failed) if failed else ''}")


def test_criterion_2_attention_invariants():
    cases = 120
    worst = np.zeros(3)
    for seed in range(cases):
        worst = np.maximum(worst, check_attention_invariants(random_attention_case(seed), 10_000 + seed))
    ok = worst[0] <= 1e-12 and worst[1] <= 1e-10 and worst[2] <= 1e-10
    report(2, ok, f"{cases} cases: row sums {worst[0]:.1e} (<=1e-12), spatial equivariance {worst[1]:.1e}, "
                  f"channel invariance {worst[2]:.1e} (<=1e-10)")


def test_criterion_3_oracle_equivalence():
    shapes = 60
    worst = 0.0
    seen = set()
    for seed in range(shapes):
        case = random_attention_case(1000 + seed, max_c=16, max_hw=16)
        assert case["c"] <= 16 and case["hw"] <= 16
        seen.add((case["c"], case["hw"], case["heads"], case["groups"]))
        s, _ = fusion.spatial_attention_forward(case["x_rgb"], case["x_ir"], case["spatial"])
        c, _ = fusion.channel_group_attention_forward(case["x_rgb"] + case["x_ir"], case["channel"])
        worst = max(worst, np.abs(s - spatial_oracle(case)).max(), np.abs(c - channel_oracle(case)).max())
    ok = worst <= 1e-10 and len(seen) >= 50
    report(3, ok, f"{len(seen)} distinct shapes, max deviation {worst:.1e} (<=1e-10)")


def test_criterion_4_infonce_closed_forms():
    zq = np.array([[1.0, 0.0, 0.0]])
    empty = cl.infonce_loss(zq, zq, cl.KeyQueue(4, 3), 0.07)
    sym = max(abs(cl.infonce_loss(zq, np.array([[0.6, 0.8, 0.0]]), np.tile([[0.6, 0.0, 0.8]], (n, 1)), 0.07)
                  - math.log(n + 1)) for n in (1, 3, 7, 20))
    worked = cl.infonce_loss(zq, zq, np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]), 1.0)
    worked_err = abs(worked - math.log(1 + 2 * math.exp(-1)))
    _, back = cl.infonce_batch(zq, zq, np.eye(3)[1:], 0.5)
    zero_grad = not back(1.0)[2].any()
    ok = empty == 0.0 and sym <= 1e-9 and worked_err <= 1e-9 and zero_grad
    report(4, ok, f"empty queue {empty}, ln(n+1) err {sym:.1e}, worked case {worked:.9f} "
                  f"(err {worked_err:.1e}), queue grad exactly zero: {zero_grad}")


def test_criterion_5_queue_semantics():
    ops = 0
    mismatches = 0
    for seed in range(12):
        mismatches += run_queue_ops(seed, 100)
        ops += 100
    q = cl.KeyQueue(4, 1).push(np.arange(4.0)[:, None]).push(np.array([[4.0], [5.0]]))
    fifo = q.entries().ravel().tolist() == [2.0, 3.0, 4.0, 5.0]
    report(5, mismatches == 0 and fifo and ops >= 1000,
           f"{ops} random pushes, {mismatches} mismatches vs list oracle, FIFO eviction {fifo}")


def test_criterion_6_map_oracle():
    ex1 = abs(average_precision([False, True], 1) - 0.5)
    ex2 = abs(average_precision([True, False, True], 2) - 5 / 6)
    gap = max(evaluator_gap(seed) for seed in range(200))
    thresholds_ok = IOU_THRESHOLDS == tuple(round(0.5 + 0.05 * i, 2) for i in range(10)) and len(IOU_THRESHOLDS) == 10
    ok = ex1 <= 1e-12 and ex2 <= 1e-12 and gap <= 1e-12 and thresholds_ok
    report(6, ok, f"worked examples err {max(ex1, ex2):.1e}, 200 random scene sets max gap {gap:.1e}, "
                  f"thresholds {IOU_THRESHOLDS[0]}:{0.05}:{IOU_THRESHOLDS[-1]} ({len(IOU_THRESHOLDS)})")


def test_criterion_7_ablation_structure(tmp_path):
    cfg = tiny_config("ablation.positions=[1,2,3,4]")
    train = write_dataset(cfg.gen, cfg.train_count, str(tmp_path / "data" / "train"))
    test = write_dataset(cfg.gen, cfg.test_count, str(tmp_path / "data" / "test"), start=cfg.train_count)
    table = ablation_run(cfg, train, test, str(tmp_path / "ablate"))
    names = [c["name"] for c in table["cells"]]
    expected = [n for n, _, _ in ablation_cells(cfg)]
    grid = {(c["dtf"], c["cl"]) for c in table["cells"] if c["input_mode"] == "both"}
    metrics_ok = all(set(("map50", "map75", "map")) <= set(c) for c in table["cells"])

    plain = replace(cfg, backbone=replace(cfg.backbone, dtf=False, cl=False))
    _, ck = train_run(plain, train, str(tmp_path / "plain"))
    rep = eval_run(ck, test, str(tmp_path / "plain" / "eval"))
    cell = next(c for c in table["cells"] if c["name"] == "dtf_off_cl_off")
    with open(tmp_path / "plain" / "trace.jsonl") as a, \
            open(tmp_path / "ablate" / "cells" / "dtf_off_cl_off" / "trace.jsonl") as b:
        same_trace = a.read() == b.read()
    same = same_trace and all(rep[m] == cell[m] for m in ("map50", "map75", "map"))
    ok = names == expected and len(names) == 9 and grid == {(True, False), (False, False), (False, True),
                                                            (True, True)} and metrics_ok and same
    report(7, ok, f"{len(names)} cells ({', '.join(names)}); DTF/CL grid complete: {len(grid) == 4}; "
                  f"dtf_off_cl_off bitwise equals plain train+eval: {same}")


@pytest.mark.slow
def test_criterion_8_directional_result(tmp_path):
    t0 = time.time()
    cfg = load_config(DESK_CONFIG, environ={})
    train = write_dataset(cfg.gen, cfg.train_count, str(tmp_path / "data" / "train"))
    test = write_dataset(cfg.gen, cfg.test_count, str(tmp_path / "data" / "test"), start=cfg.train_count)
    scores = {}
    for name, bb, mode in (("fused", {}, "both"), ("rgb_only", {"dtf": False, "cl": False}, "rgb"),
                           ("ir_only", {"dtf": False, "cl": False}, "ir")):
        run_cfg = replace(cfg, backbone=replace(cfg.backbone, **bb), train=replace(cfg.train, input_mode=mode))
        _, ck = train_run(run_cfg, train, str(tmp_path / name))
        scores[name] = eval_run(ck, test, str(tmp_path / name / "eval"))["map50"]
    elapsed = time.time() - t0
    margin = scores["fused"] - max(scores["rgb_only"], scores["ir_only"])
    ok = margin > DIRECTIONAL_MARGIN and cfg.train.epochs <= 15 and elapsed < 1200
    report(8, ok, f"mAP50 fused {scores['fused']:.3f}, rgb-only {scores['rgb_only']:.3f}, "
                  f"ir-only {scores['ir_only']:.3f}; margin {margin:+.3f} (> {DIRECTIONAL_MARGIN:.5f}), "
                  f"{cfg.train.epochs} epochs, {elapsed:.0f}s (<1200s)")


def test_criterion_9_determinism(tmp_path):
    cfg = tiny_config("train.epochs=2")
    traces, sums = [], []
    for run in ("a", "b"):
        ds = write_dataset(cfg.gen, cfg.train_count, str(tmp_path / run / "data"))
        train_run(cfg, ds, str(tmp_path / run / "out"))
        with open(tmp_path / run / "out" / "trace.jsonl") as fh:
            traces.append(fh.read())
        sums.append(ds.checksums())
    ok = traces[0] == traces[1] and sums[0] == sums[1] and traces[0].count("\n") == 4
    report(9, ok, f"two runs: loss traces identical {traces[0] == traces[1]} ({traces[0].count(chr(10))} steps), "
                  f"dataset checksums identical {sums[0] == sums[1]}")
