"""Finite-difference gradient suites grouped by subsystem.

Each ``*_suite`` function returns a list of
:class:`~seadate.gradcheck.GradCheckReport`. :func:`run_scope` dispatches
on the scope names understood by the ``gradcheck`` command.
"""
from __future__ import annotations

import numpy as np

from . import contrastive as cl
from . import fusion, ops
from .detector import layers
from .detector.loss import HeadGeometry, LossWeights, assign_targets, decode_boxes, decode_boxes_backward
from .detector.loss import detection_loss_and_grad
from .detector.model import BackboneConfig, DualStreamDetector
from .gradcheck import grad_check

SCOPES = ("primitives", "dtf", "cl", "detector", "all")
TOL = 1e-5
DETECTOR_TOL = 1e-4


def _op(fwd, bwd):
    """Adapt a forward/backward pair into a grad_check operation."""
    def fn(**kw):
        out = fwd(**kw)
        return out, lambda d: bwd(d, **kw)
    return fn


def primitives_suite(seed=0, h=3e-5):
    rng = np.random.default_rng(seed)
    r = rng.standard_normal
    x_relu = r((4, 5))
    x_relu += 0.05 * np.sign(x_relu)     # keep every coordinate clear of the kink
    # distinct values at least 0.08 apart so no 2x2 window has a near tie
    x_pool = 0.1 * rng.permutation(96).reshape(2, 2, 4, 6) + 0.01 * r((2, 2, 4, 6))
    cases = [
        ("matmul", _op(lambda a, b: ops.matmul(a, b),
                       lambda d, a, b: dict(zip("ab", ops.matmul_backward(d, a, b)))),
         dict(a=r((3, 4)), b=r((4, 2)))),
        ("add (broadcast)", _op(lambda a, b: ops.add(a, b),
                                lambda d, a, b: dict(zip("ab", ops.add_backward(d, a.shape, b.shape)))),
         dict(a=r((3, 4)), b=r(4))),
        ("scale", _op(lambda x: ops.scale(x, 1.7), lambda d, x: {"x": ops.scale_backward(d, 1.7)}),
         dict(x=r((3, 3)))),
        ("relu", _op(lambda x: ops.relu(x), lambda d, x: {"x": ops.relu_backward(d, x)}),
         dict(x=x_relu)),
        ("transpose", _op(lambda x: ops.transpose(x), lambda d, x: {"x": ops.transpose_backward(d)}),
         dict(x=r((3, 5)))),
        ("concat", _op(lambda a, b: ops.concat([a, b], axis=1),
                       lambda d, a, b: dict(zip("ab", ops.concat_backward(d, [a.shape[1], b.shape[1]], axis=1)))),
         dict(a=r((3, 2)), b=r((3, 4)))),
        ("split", _op(lambda x: tuple(ops.split(x, [1, 3], axis=0)),
                      lambda d, x: {"x": ops.split_backward(list(d), axis=0)}),
         dict(x=r((4, 3)))),
        ("mean (global)", _op(lambda x: ops.mean(x), lambda d, x: {"x": ops.mean_backward(d, x.shape)}),
         dict(x=r((3, 4)))),
        ("row_mean", _op(lambda x: ops.row_mean(x), lambda d, x: {"x": ops.row_mean_backward(d, x.shape)}),
         dict(x=r((3, 4)))),
        ("softmax_rows", _op(lambda x: ops.softmax_rows(x),
                             lambda d, x: {"x": ops.softmax_rows_backward(d, ops.softmax_rows(x))}),
         dict(x=r((4, 5)))),
        ("layer_norm", _op(lambda x, gamma, beta: ops.layer_norm(x, gamma, beta, 1e-5),
                           lambda d, x, gamma, beta: dict(zip(("x", "gamma", "beta"),
                                                              ops.layer_norm_backward(d, x, gamma, 1e-5)))),
         dict(x=r((2, 8)), gamma=r(8), beta=r(8))),
        ("feed_forward", _op(lambda x, w1, b1, w2, b2: ops.feed_forward(x, w1, b1, w2, b2),
                             lambda d, x, w1, b1, w2, b2: dict(zip(("x", "w1", "b1", "w2", "b2"),
                                                                   ops.feed_forward_backward(d, x, w1, b1, w2)))),
         dict(x=r((3, 4)), w1=r((4, 8)), b1=r(8), w2=r((8, 4)), b2=r(4))),
        ("l2_normalize_rows", _op(lambda x: ops.l2_normalize_rows(x),
                                  lambda d, x: {"x": ops.l2_normalize_rows_backward(d, x)}),
         dict(x=r((3, 5)))),
        ("conv3x3", _conv3_op(), dict(x=r((2, 3, 4, 4)), w=r((2, 3, 3, 3)), b=r(2))),
        ("conv1x1", _op(lambda x, w, b: layers.conv1x1(x, w, b),
                        lambda d, x, w, b: dict(zip("xwb", layers.conv1x1_backward(d, x, w)))),
         dict(x=r((2, 3, 4, 4)), w=r((5, 3)), b=r(5))),
        ("maxpool2", _pool_op(), dict(x=x_pool)),
    ]
    return [grad_check(fn, inputs, h=h, tol=TOL, seed=seed + i, name=name)
            for i, (name, fn, inputs) in enumerate(cases)]


def _conv3_op():
    def fn(x, w, b):
        out, cols = layers.conv3x3(x, w, b)

        def vjp(d):
            dx, dw, db = layers.conv3x3_backward(d, cols, x.shape, w)
            return {"x": dx, "w": dw, "b": db}
        return out, vjp
    return fn


def _pool_op():
    def fn(x):
        out, idx = layers.maxpool2(x)
        return out, lambda d: {"x": layers.maxpool2_backward(d, idx, x.shape)}
    return fn


# fusion ----------------------------------------------------------------------

def _spatial_fn(x_rgb, x_ir, **kw):
    p = fusion.SpatialMHAParams.from_named(kw)
    out, cache = fusion.spatial_attention_forward(x_rgb, x_ir, p)

    def vjp(d):
        dr, di, g = fusion.spatial_attention_backward(d, cache, p)
        res = g.named()
        res.update(x_rgb=dr, x_ir=di)
        return res
    return out, vjp


def _mha_fn(x, **kw):
    p = fusion.SpatialMHAParams.from_named(kw)
    out, _, cache = fusion.multi_head_attention(x, p)

    def vjp(d):
        g = p.zeros_like()
        dx = fusion.multi_head_attention_backward(d, cache, p, g)
        res = {k: v for k, v in g.named().items() if k in ("wq", "wk", "wv", "proj")}
        res["x"] = dx
        return res
    return out, vjp


def _channel_fn(y, **kw):
    p = fusion.ChannelGroupParams.from_named(kw)
    out, cache = fusion.channel_group_attention_forward(y, p)

    def vjp(d):
        dy, g = fusion.channel_group_attention_backward(d, cache, p)
        res = g.named()
        res["y"] = dy
        return res
    return out, vjp


def _cga_fn(y, **kw):
    p = fusion.ChannelGroupParams.from_named(kw)
    out, _, cache = fusion.channel_group_attention(y, p)

    def vjp(d):
        g = p.zeros_like()
        dy = fusion.channel_group_attention_core_backward(d, cache, p, g)
        res = {k: v for k, v in g.named().items() if k in ("wq", "wk", "wv")}
        res["y"] = dy
        return res
    return out, vjp


def _fuse_fn(f_rgb, f_ir, **kw):
    block = fusion.DTFBlock.from_named(kw)
    outs, cache = fusion.dtf_fuse(f_rgb, f_ir, block)

    def vjp(d):
        dr, di, g = fusion.dtf_fuse_backward(d[0], d[1], cache, block)
        res = g.named()
        res.update(f_rgb=dr, f_ir=di)
        return res
    return outs, vjp


def dtf_suite(seed=0, h=1e-5):
    rng = np.random.default_rng(seed)
    c, hh, ww = 6, 2, 3
    sp = fusion.init_spatial(c, heads=2, rng=rng)
    ch = fusion.init_channel(c, groups=3, rng=rng)
    n = hh * ww
    reports = [
        grad_check(_mha_fn, dict(x=rng.standard_normal((2 * n, c)),
                                 **{k: v for k, v in sp.named().items()}),
                   h=h, tol=TOL, seed=seed, name="multi_head_attention (Concat(S_i) L)",
                   wrt=["x", "wq", "wk", "wv", "proj"]),
        grad_check(_spatial_fn, dict(x_rgb=rng.standard_normal((n, c)), x_ir=rng.standard_normal((n, c)),
                                     **sp.named()),
                   h=h, tol=TOL, seed=seed + 1, name="spatial_attention_forward (full stack)"),
        grad_check(_cga_fn, dict(y=rng.standard_normal((n, c)), **ch.named()),
                   h=h, tol=TOL, seed=seed + 2, name="channel_group_attention (core)",
                   wrt=["y", "wq", "wk", "wv"]),
        grad_check(_channel_fn, dict(y=rng.standard_normal((n, c)), **ch.named()),
                   h=h, tol=TOL, seed=seed + 3, name="channel_group_attention_forward (full)"),
    ]
    block = fusion.DTFBlock(sp, ch)
    reports.append(grad_check(_fuse_fn, dict(f_rgb=rng.standard_normal((c, hh, ww)),
                                             f_ir=rng.standard_normal((c, hh, ww)), **block.named()),
                              h=h, tol=TOL, seed=seed + 4, name="dtf_fuse"))
    return reports


# contrastive -----------------------------------------------------------------

def _unit(rng, shape):
    x = rng.standard_normal(shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def cl_suite(seed=0, h=1e-5):
    rng = np.random.default_rng(seed)
    c, d = 5, 6
    head = cl.init_head(c, d, rng=rng)

    def project_fn(f, **kw):
        hd = cl.ProjectionHead.from_named(kw)
        z, cache = cl.pool_and_project(f, hd)

        def vjp(dz):
            df, g = cl.pool_and_project_backward(dz, cache, hd)
            res = g.named()
            res["f"] = df
            return res
        return z, vjp

    def nce_fn(z_q, z_k, negatives):
        loss, back = cl.infonce_batch(z_q, z_k, negatives, 0.2)
        return loss, lambda dl: dict(zip(("z_q", "z_k", "negatives"), back(dl)))

    def step_fn(f_rgb, f_ir, **kw):
        h_q = cl.ProjectionHead.from_named(kw, "q.")
        h_k = cl.ProjectionHead.from_named(kw, "k.")
        queue = cl.KeyQueue(8, d).push(negs)
        loss, back, _ = cl.cl_step(f_rgb, f_ir, (h_q, h_k), queue, cl.CLConfig(0.2, 8, d))

        def vjp(dl):
            dr, di, (gq, gk) = back(dl)
            res = gq.named("q.")
            res.update(gk.named("k."))
            res.update(f_rgb=dr, f_ir=di)
            return res
        return loss, vjp

    negs = _unit(rng, (5, d))
    zq, zk = _unit(rng, (3, d)), _unit(rng, (3, d))
    nce = grad_check(nce_fn, dict(z_q=zq, z_k=zk, negatives=negs), h=h, tol=TOL, seed=seed + 1,
                     name="infonce (z_q, z_k)", wrt=["z_q", "z_k"])
    _, back = cl.infonce_batch(zq, zk, negs, 0.2)
    queue_grad_zero = bool(np.all(back(1.0)[2] == 0.0))
    nce.per_input["queue (exactly zero)"] = 0.0 if queue_grad_zero else float("inf")
    if not queue_grad_zero:
        nce.passed = False
        nce.diagnostic = "queue entries received nonzero gradient"
    h_k = cl.init_head(c, d, rng=rng)
    return [
        grad_check(project_fn, dict(f=rng.standard_normal((2, c, 3, 3)), **head.named()),
                   h=h, tol=TOL, seed=seed, name="pool_and_project"),
        nce,
        grad_check(step_fn, dict(f_rgb=rng.standard_normal((3, c, 2, 2)), f_ir=rng.standard_normal((3, c, 2, 2)),
                                 **head.named("q."), **h_k.named("k.")),
                   h=h, tol=TOL, seed=seed + 2, name="cl_step"),
    ]


# detector --------------------------------------------------------------------

def _tiny_scene_targets(geom, rng, n):
    gts = []
    for _ in range(n):
        boxes = []
        for cls in range(2):
            s = rng.uniform(5, 20)
            x, y = rng.uniform(0, geom.image_size - s, size=2)
            boxes.append((cls, (x, y, x + s, y + s)))
        gts.append(boxes)
    return gts


def detector_suite(seed=0, h=1e-5, coords=32):
    rng = np.random.default_rng(seed)
    geom = HeadGeometry(image_size=32, strides=(4, 8, 16))
    weights = LossWeights(lam_loc=1.0)
    n, k = 2, 3
    gts = _tiny_scene_targets(geom, rng, n)
    targets = assign_targets(gts, geom)
    # regression outputs near the targets so that every positive box overlaps its ground truth
    preds = [0.3 * rng.standard_normal((n, 5 + k, g, g)) for g in geom.grids]

    def loss_fn(p0, p1, p2):
        det, grads = detection_loss_and_grad([p0, p1, p2], targets, weights, geom)
        return det.total, lambda dl: {f"p{i}": dl * g for i, g in enumerate(grads)}

    def decode_fn(raw):
        boxes, cache = decode_boxes(raw, 8)
        return boxes, lambda d: {"raw": decode_boxes_backward(d, cache, 8)}

    reports = [
        grad_check(decode_fn, dict(raw=rng.standard_normal((2, 4, 3, 3))), h=h, tol=TOL, seed=seed,
                   name="decode_boxes"),
        grad_check(loss_fn, dict(p0=preds[0], p1=preds[1], p2=preds[2]), h=h, tol=TOL, seed=seed + 1,
                   name="detection_loss (L_o)"),
    ]
    reports.append(full_detector_check(seed=seed, coords=coords))
    return reports


def full_detector_check(seed=0, h=1e-5, coords=32, tol=DETECTOR_TOL):
    """Spot-check ``coords`` random parameter coordinates of the whole model.

    The scalar is the total loss ``alpha1 * L_o + alpha2 * L_c`` against a
    fixed queue snapshot, for a small model with fusion at stages 1 and 3.
    Coordinates on a ReLU or max-pool kink, or with gradients too small for
    difference quotients to resolve, are redrawn.
    """
    rng = np.random.default_rng(seed)
    cfg = BackboneConfig(widths=(4, 4, 8, 8), image_size=32, num_classes=3, fusion_positions=(1, 3),
                         dtf=True, cl=True, heads=2, groups=2, embed_dim=6)
    model = DualStreamDetector(cfg, seed=seed)
    geom = cfg.geometry
    weights = LossWeights(lam_loc=1.0)
    cl_cfg = cl.CLConfig(0.2, 8, 6)
    imgs_r = rng.standard_normal((2, 1, 32, 32))
    imgs_i = rng.standard_normal((2, 1, 32, 32))
    targets = assign_targets(_tiny_scene_targets(geom, rng, 2), geom)
    negs = _unit(rng, (5, 6))
    names = list(model.params)

    def fn(**vals):
        for k in names:
            model.params[k].value = vals[k]
        model.zero_grad()
        res = model.forward(imgs_r, imgs_i)
        det, dpreds = detection_loss_and_grad(res.preds, targets, weights, geom)
        queue = cl.KeyQueue(8, 6).push(negs)
        l_c, back, _ = cl.cl_step(res.deep_rgb, res.deep_ir, model.cl_heads(), queue, cl_cfg)
        total = weights.alpha1 * det.total + weights.alpha2 * l_c

        def vjp(dl):
            model.zero_grad()
            d_rgb, d_ir, (gq, gk) = back(weights.alpha2 * dl)
            for kk, v in gq.named("cl.q.").items():
                model.params[kk].accumulate(v)
            for kk, v in gk.named("cl.k.").items():
                model.params[kk].accumulate(v)
            model.backward(res, [weights.alpha1 * dl * d for d in dpreds], d_rgb, d_ir)
            return {kk: model.params[kk].grad.copy() for kk in names}
        return total, vjp

    start = {k: p.value.copy() for k, p in model.params.items()}
    return grad_check(fn, start, h=h, tol=tol, seed=seed, name=f"full detector ({coords} random coords)",
                      sample=coords, skip_unresolvable=True)


def run_scope(scope, seed=0):
    if scope not in SCOPES:
        raise ValueError(f"unknown scope {scope!r}; choose from {SCOPES}")
    suites = {"primitives": primitives_suite, "dtf": dtf_suite, "cl": cl_suite, "detector": detector_suite}
    names = list(suites) if scope == "all" else [scope]
    return {name: suites[name](seed=seed) for name in names}
