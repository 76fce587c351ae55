"""Central finite-difference checking of analytic gradients.

A *differentiable operation* here is a callable ``fn(**inputs)`` returning
``(output, vjp)``: ``output`` is an array, a float, or a tuple of arrays, and
``vjp(dout)`` maps an upstream gradient of the same structure to a dict of
input gradients keyed like ``inputs``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

REL_EPS = 1e-12
# a difference quotient cannot resolve gradients below ~RESOLUTION * eps * |f| / h
RESOLUTION = 1e4


@dataclass
class GradCheckReport:
    op: str
    max_rel_error: float
    per_input: dict = field(default_factory=dict)
    passed: bool = False
    tol: float = 1e-5
    diagnostic: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        text = f"{self.op:<40s} {self.max_rel_error:10.3e}  {status}"
        if self.diagnostic:
            text += f"  ({self.diagnostic})"
        return text


def relative_error(analytic, numeric):
    a = np.abs(analytic)
    n = np.abs(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(a, n), REL_EPS)


def _parts(out):
    if isinstance(out, (tuple, list)):
        return [np.asarray(o, dtype=np.float64) for o in out]
    return [np.asarray(out, dtype=np.float64)]


def _project(out, weights):
    return float(sum(np.sum(o * w) for o, w in zip(_parts(out), weights)))


def _numeric(fn, work, weights, x, idx, h):
    orig = x[idx]
    x[idx] = orig + h
    fp = _project(fn(**work)[0], weights)
    x[idx] = orig - h
    fm = _project(fn(**work)[0], weights)
    x[idx] = orig
    return (fp - fm) / (2.0 * h)


def grad_check(fn, inputs, h=1e-6, tol=1e-5, seed=0, name="op", wrt=None, sample=None,
               skip_unresolvable=False, max_skip_fraction=0.25):
    """Compare ``fn``'s analytic gradients with central differences.

    The scalar being differentiated is ``sum(R * output)`` for a fixed
    Gaussian ``R``. ``wrt`` restricts the checked inputs; ``sample`` checks
    that many randomly chosen coordinates (drawn across all checked inputs)
    instead of every coordinate.

    ``skip_unresolvable`` is meant for sampled spot checks of large
    piecewise-smooth models. Coordinates are redrawn when both gradients lie
    below the difference resolution ``RESOLUTION * eps * |f| / h``, or when
    central differences at ``h`` and ``2h`` disagree by more than ``tol``
    (a ReLU or max kink inside the stencil). The check fails if kinks
    account for more than ``max_skip_fraction`` of the visited coordinates.
    """
    if not 1e-7 <= h <= 1e-4:
        raise ValueError(f"step h={h} outside [1e-7, 1e-4]")
    rng = np.random.default_rng(seed)
    work = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}

    out, vjp = fn(**work)
    parts = _parts(out)
    weights = [rng.standard_normal(p.shape) for p in parts]
    if isinstance(out, (tuple, list)):
        dout = tuple(weights)
    elif np.ndim(out) == 0:
        dout = float(weights[0])
    else:
        dout = weights[0]
    analytic = {k: np.asarray(v, dtype=np.float64).reshape(-1) for k, v in vjp(dout).items()}
    floor = RESOLUTION * np.finfo(np.float64).eps * max(1.0, abs(_project(out, weights))) / h
    names = list(wrt) if wrt is not None else [k for k in work if k in analytic]

    pairs = [(k, i) for k in names for i in range(work[k].size)]
    if sample is not None:
        pairs = [pairs[j] for j in rng.permutation(len(pairs))]
    target = len(pairs) if sample is None else min(sample, len(pairs))

    report = GradCheckReport(op=name, max_rel_error=0.0, tol=tol)
    report.per_input = {k: 0.0 for k in names}
    checked = kinks = tiny = 0
    for k, idx in pairs:
        if checked >= target:
            break
        x = work[k].reshape(-1)
        num = _numeric(fn, work, weights, x, idx, h)
        if not np.isfinite(num):
            report.per_input[k] = float("inf")
            report.max_rel_error = float("inf")
            report.diagnostic = f"non-finite numeric gradient for {k}[{idx}]"
            report.passed = False
            return report
        if skip_unresolvable:
            if max(abs(num), abs(analytic[k][idx])) < floor:
                tiny += 1
                continue
            if relative_error(num, _numeric(fn, work, weights, x, idx, 2 * h)) > tol:
                kinks += 1
                continue
        err = float(relative_error(analytic[k][idx], num))
        report.per_input[k] = max(report.per_input[k], err)
        report.max_rel_error = max(report.max_rel_error, err)
        checked += 1
    report.passed = report.max_rel_error < tol
    if skip_unresolvable:
        report.diagnostic = f"{checked} checked, skipped {kinks} at kinks and {tiny} below {floor:.1e}"
        if checked < target or kinks > max_skip_fraction * (checked + kinks):
            report.passed = False
            report.diagnostic += "; too few resolvable coordinates"
    return report
