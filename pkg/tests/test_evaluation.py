import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from seadate.evaluation import (IOU_THRESHOLDS, Detection, average_precision, iou, iou_matrix, map_suite,
                                match_detections)

seeds = st.integers(0, 2**32 - 1)


def random_box(r, size=32.0):
    x0, y0 = r.uniform(0, size - 4, 2)
    w, h = r.uniform(2, 12, 2)
    return (float(x0), float(y0), float(min(x0 + w, size)), float(min(y0 + h, size)))


def jitter(r, box, amount):
    return tuple(float(v + r.uniform(-amount, amount)) for v in box)


def random_scenes(seed, n_images=3, classes=2):
    """Ground truths plus noisy detections (near-duplicates, misses, stray boxes, tied confidences)."""
    r = np.random.default_rng(seed)
    dets, gts = [], []
    for _ in range(n_images):
        g = [(int(r.integers(classes)), random_box(r)) for _ in range(int(r.integers(0, 4)))]
        d = []
        for c, b in g:
            for _ in range(int(r.integers(0, 3))):
                d.append((c if r.random() < 0.8 else int(r.integers(classes)), jitter(r, b, 3.0),
                          float(np.round(r.random(), 1))))
        for _ in range(int(r.integers(0, 3))):
            d.append((int(r.integers(classes)), random_box(r), float(np.round(r.random(), 1))))
        gts.append(g)
        dets.append(d)
    return dets, gts


def as_detections(dets):
    return [[Detection(c, b, s) for c, b, s in img] for img in dets]


# IoU -------------------------------------------------------------------------

def test_iou_examples():
    assert iou((0, 0, 2, 2), (0, 0, 2, 2)) == 1.0
    assert iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0
    assert iou((0, 0, 1, 1), (0.5, 0, 1.5, 1)) == pytest.approx(1 / 3, abs=1e-15)
    assert iou((0, 0, 0, 1), (0, 0, 1, 1)) == 0.0


@given(seeds)
def test_iou_matrix_matches_scalar(seed):
    r = np.random.default_rng(seed)
    a = [random_box(r) for _ in range(4)]
    b = [random_box(r) for _ in range(3)]
    m = iou_matrix(a, b)
    for i in range(4):
        for j in range(3):
            assert abs(m[i, j] - oracles.box_iou(a[i], b[j])) <= 1e-15
            assert 0.0 <= m[i, j] <= 1.0


# matching --------------------------------------------------------------------

def test_single_perfect_match():
    m = match_detections([(0, 0, 4, 4)], [(0, 0, 4, 4)], 0.5)
    assert (m.n_tp, m.fp, m.fn) == (1, 0, 0)


def test_duplicate_detection_is_false_positive():
    m = match_detections([(0, 0, 4, 4), (0, 0, 4, 4.2)], [(0, 0, 4, 4)], 0.5)
    assert m.tp.tolist() == [True, False]


@given(seeds, st.sampled_from(IOU_THRESHOLDS))
def test_matching_agrees_with_exhaustive_oracle(seed, thr):
    r = np.random.default_rng(seed)
    gts = [random_box(r) for _ in range(int(r.integers(0, 4)))]
    dets = [jitter(r, gts[int(r.integers(len(gts)))], 3.0) if gts and r.random() < 0.7 else random_box(r)
            for _ in range(int(r.integers(0, 5)))]
    m = match_detections(dets, gts, thr)
    assert m.tp.tolist() == oracles.exhaustive_match(dets, gts, thr)
    assert m.n_tp + m.fp == len(dets)
    assert m.n_tp + m.fn == len(gts)
    matched = [j for j in m.matched_gt if j >= 0]
    assert len(matched) == len(set(matched))


# average precision -----------------------------------------------------------

def test_ap_worked_examples():
    assert average_precision([True], 1) == 1.0
    assert abs(average_precision([False, True], 1) - 0.5) <= 1e-12
    assert abs(average_precision([True, False, True], 2) - 5 / 6) <= 1e-12
    assert average_precision([False, False], 0) == 0.0
    assert average_precision([], 0) is None
    assert average_precision([], 3) == 0.0


@given(st.lists(st.booleans(), max_size=12), st.integers(0, 6))
def test_ap_matches_envelope_oracle(flags, extra_gt):
    n_gt = sum(flags) + extra_gt
    got = average_precision(flags, n_gt)
    want = oracles.ap_all_points(flags, n_gt)
    if want is None:
        assert got is None
    else:
        assert abs(got - want) <= 1e-12 and 0.0 <= got <= 1.0


@given(st.lists(st.booleans(), min_size=1, max_size=12), st.integers(0, 4))
def test_ap_appending_monotonicity(flags, extra_gt):
    n_gt = max(sum(flags) + extra_gt, 1)
    base = average_precision(flags, n_gt)
    assert average_precision(flags + [False], n_gt) <= base + 1e-15
    assert average_precision([True] + flags, n_gt + 1) >= base - 1e-15


# the mAP suite ---------------------------------------------------------------

def test_thresholds_are_exactly_ten_steps_of_005():
    assert IOU_THRESHOLDS == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)


def test_perfect_and_total_miss():
    gts = [[(0, (0, 0, 8, 8)), (1, (10, 10, 20, 20))]]
    perfect = [[Detection(0, (0, 0, 8, 8), 0.9), Detection(1, (10, 10, 20, 20), 0.8)]]
    rep = map_suite(perfect, gts, range(2))
    assert rep.map == rep.map50 == rep.map75 == 1.0
    miss = [[Detection(0, (20, 20, 28, 28), 0.9), Detection(1, (0, 0, 3, 3), 0.8)]]
    rep = map_suite(miss, gts, range(2))
    assert rep.map == rep.map50 == rep.map75 == 0.0


def test_empty_class_set_gives_empty_report():
    rep = map_suite([[]], [[]], [])
    assert rep.per_class_ap == {} and rep.map == 0.0


def test_absent_class_is_excluded_from_mean():
    gts = [[(0, (0, 0, 8, 8))]]
    rep = map_suite([[Detection(0, (0, 0, 8, 8), 0.9)]], gts, range(3))
    assert list(rep.per_class_ap) == [0] and rep.map50 == 1.0


def evaluator_gap(seed):
    """Largest |difference| between map_suite and the brute-force evaluator on one random scene set."""
    dets, gts = random_scenes(seed)
    rep = map_suite(as_detections(dets), gts, range(2))
    per_class, m50, m75, mall = oracles.evaluate_map(dets, gts, range(2), IOU_THRESHOLDS)
    if set(per_class) != set(rep.per_class_ap):
        return float("inf")
    gap = max(abs(rep.map50 - m50), abs(rep.map75 - m75), abs(rep.map - mall))
    for c, aps in per_class.items():
        gap = max([gap] + [abs(rep.per_class_ap[c][t] - v) for t, v in aps.items()])
    return gap


@given(seeds)
def test_map_suite_matches_brute_force_evaluator(seed):
    assert evaluator_gap(seed) <= 1e-12


@given(seeds)
def test_map_invariant_to_monotone_confidence_transform(seed):
    dets, gts = random_scenes(seed)
    base = map_suite(as_detections(dets), gts, range(2))
    warped = [[(c, b, s ** 3 * 0.5 + 0.1) for c, b, s in img] for img in dets]
    other = map_suite(as_detections(warped), gts, range(2))
    assert other.to_dict() == base.to_dict()


@given(seeds)
def test_ap_nonincreasing_in_threshold(seed):
    dets, gts = random_scenes(seed)
    rep = map_suite(as_detections(dets), gts, range(2))
    assert rep.thresholds_monotone()
    assert rep.map <= rep.map50 + 1e-15
    for aps in rep.per_class_ap.values():
        assert all(0.0 <= v <= 1.0 for v in aps.values())
