"""Toy dual-stream detector with optional fusion blocks and contrastive heads."""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .. import contrastive as cl
from .. import fusion
from ..errors import ConfigError, DimensionError
from ..tensor import Param
from . import layers
from .loss import HeadGeometry

STAGES = 4


@dataclass
class BackboneConfig:
    widths: tuple = (8, 16, 32, 32)
    image_size: int = 64
    in_channels: int = 1
    num_classes: int = 3
    fusion_positions: tuple = (1,)
    dtf: bool = True
    cl: bool = True
    heads: int = 2
    groups: int = 2
    ffn_ratio: float = 2.0
    embed_dim: int = 128

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.fusion_positions = tuple(sorted({int(p) for p in self.fusion_positions}))
        if len(self.widths) != STAGES:
            raise ConfigError(f"widths needs {STAGES} entries, got {len(self.widths)}")
        if self.image_size % 2 ** STAGES:
            raise ConfigError(f"image_size {self.image_size} not divisible by {2 ** STAGES}")
        if self.dtf and not self.fusion_positions:
            raise ConfigError("fusion_positions must be nonempty when dtf is enabled")
        if any(p not in range(1, STAGES + 1) for p in self.fusion_positions):
            raise ConfigError(f"fusion_positions must lie in 1..{STAGES}, got {self.fusion_positions}")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be positive")
        if self.dtf:
            for p in self.fusion_positions:
                c = self.widths[p - 1]
                if c % self.heads:
                    raise ConfigError(f"stage {p} width {c} not divisible by heads={self.heads}")
                if c % self.groups:
                    raise ConfigError(f"stage {p} width {c} not divisible by groups={self.groups}")

    @property
    def active_positions(self):
        return self.fusion_positions if self.dtf else ()

    @property
    def geometry(self):
        return HeadGeometry(image_size=self.image_size, strides=(4, 8, 16))


def _rng_for(seed, name):
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


def init_params(cfg, seed=0):
    """Named parameters, each drawn from a stream keyed by ``(seed, name)``.

    Keying by name gives every configuration sharing a parameter the same
    initial value for it, whatever other modules are present.
    """
    p = {}

    def conv(name, cout, cin, k):
        fan_in = cin * k * k
        bound = np.sqrt(6.0 / fan_in)
        shape = (cout, cin, k, k) if k > 1 else (cout, cin)
        p[name + ".w"] = _rng_for(seed, name + ".w").uniform(-bound, bound, shape)
        p[name + ".b"] = np.zeros(cout)

    for stream in ("rgb", "ir"):
        cin = cfg.in_channels
        for s, w in enumerate(cfg.widths, start=1):
            conv(f"{stream}.stage{s}", w, cin, 3)
            cin = w
    for s in cfg.active_positions:
        block = fusion.init_block(cfg.widths[s - 1], cfg.heads, cfg.groups, cfg.ffn_ratio,
                                  rng=_rng_for(seed, f"dtf{s}"))
        p.update(block.named(f"dtf{s}."))
    nout = 5 + cfg.num_classes
    for h in range(3):
        c = cfg.widths[h + 1]
        conv(f"head{h}.conv", c, c, 3)
        conv(f"head{h}.pred", nout, c, 1)
        p[f"head{h}.pred.w"] *= 0.1
        p[f"head{h}.pred.b"][0] = -np.log(99.0)   # objectness prior of 1%
    if cfg.cl:
        c = cfg.widths[-1]
        for side in ("q", "k"):
            p.update(cl.init_head(c, cfg.embed_dim, rng=_rng_for(seed, f"cl.{side}")).named(f"cl.{side}."))
    return {k: Param(v) for k, v in p.items()}


@dataclass
class ForwardResult:
    preds: list                 # per scale (N, 5 + K, G, G)
    deep_rgb: np.ndarray        # deepest stage features feeding the contrastive heads
    deep_ir: np.ndarray
    stage_feats: list = field(default_factory=list)   # per stage (rgb, ir) after any fusion
    cache: dict = field(default_factory=dict, repr=False)


class DualStreamDetector:
    """Two conv streams, fusion at selected stage boundaries, a 3-scale head.

    ``forward`` runs the network; ``backward`` accumulates gradients into
    ``self.params``. Heads read ``F_rgb + F_ir`` at stages 2, 3 and 4.
    """

    def __init__(self, cfg, seed=0, params=None):
        self.cfg = cfg
        self.seed = seed
        self.params = params if params is not None else init_params(cfg, seed)

    def value(self, name):
        return self.params[name].value

    def block(self, s):
        return fusion.DTFBlock.from_named({k: v.value for k, v in self.params.items()}, f"dtf{s}.")

    def cl_heads(self):
        vals = {k: v.value for k, v in self.params.items()}
        return (cl.ProjectionHead.from_named(vals, "cl.q."), cl.ProjectionHead.from_named(vals, "cl.k."))

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    # forward -----------------------------------------------------------------

    def forward(self, img_rgb, img_ir):
        cfg = self.cfg
        if img_rgb.shape != img_ir.shape:
            raise DimensionError(f"modality images differ: {img_rgb.shape} vs {img_ir.shape}")
        if img_rgb.ndim == 3:
            img_rgb, img_ir = img_rgb[None], img_ir[None]
        n, c, hh, ww = img_rgb.shape
        if c != cfg.in_channels or hh != cfg.image_size or ww != cfg.image_size:
            raise ConfigError(
                f"images are {c}x{hh}x{ww}, config expects {cfg.in_channels}x{cfg.image_size}x{cfg.image_size}")
        cache = {"stages": [], "fuse": {}, "heads": []}
        x = {"rgb": img_rgb, "ir": img_ir}
        feats = []
        for s in range(1, STAGES + 1):
            stage_cache = {}
            for stream in ("rgb", "ir"):
                z, cols = layers.conv3x3(x[stream], self.value(f"{stream}.stage{s}.w"), self.value(f"{stream}.stage{s}.b"))
                a = np.maximum(z, 0.0)
                pooled, idx = layers.maxpool2(a)
                stage_cache[stream] = (x[stream].shape, cols, z, idx)
                x[stream] = pooled
            if s in cfg.active_positions:
                block = self.block(s)
                outs_r, outs_i, caches = [], [], []
                for i in range(n):
                    (o_r, o_i), fc = fusion.dtf_fuse(x["rgb"][i], x["ir"][i], block)
                    outs_r.append(o_r)
                    outs_i.append(o_i)
                    caches.append(fc)
                x = {"rgb": np.stack(outs_r), "ir": np.stack(outs_i)}
                cache["fuse"][s] = (block, caches)
            cache["stages"].append(stage_cache)
            feats.append((x["rgb"], x["ir"]))

        preds = []
        for h in range(3):
            f_r, f_i = feats[h + 1]
            merged = f_r + f_i
            z, cols = layers.conv3x3(merged, self.value(f"head{h}.conv.w"), self.value(f"head{h}.conv.b"))
            a = np.maximum(z, 0.0)
            preds.append(layers.conv1x1(a, self.value(f"head{h}.pred.w"), self.value(f"head{h}.pred.b")))
            cache["heads"].append((merged.shape, cols, z, a))
        return ForwardResult(preds, feats[-1][0], feats[-1][1], feats, cache)

    # backward ----------------------------------------------------------------

    def backward(self, result, dpreds, d_deep_rgb=None, d_deep_ir=None):
        cfg = self.cfg
        cache = result.cache
        grads = {}

        def acc(name, g):
            grads[name] = grads.get(name, 0.0) + g

        dfeat = [{"rgb": 0.0, "ir": 0.0} for _ in range(STAGES)]
        for h in range(3):
            m_shape, cols, z, a = cache["heads"][h]
            da, dw, db = layers.conv1x1_backward(dpreds[h], a, self.value(f"head{h}.pred.w"))
            acc(f"head{h}.pred.w", dw)
            acc(f"head{h}.pred.b", db)
            dz = da * (z > 0)
            dm, dw, db = layers.conv3x3_backward(dz, cols, m_shape, self.value(f"head{h}.conv.w"))
            acc(f"head{h}.conv.w", dw)
            acc(f"head{h}.conv.b", db)
            dfeat[h + 1]["rgb"] = dfeat[h + 1]["rgb"] + dm
            dfeat[h + 1]["ir"] = dfeat[h + 1]["ir"] + dm
        if d_deep_rgb is not None:
            dfeat[-1]["rgb"] = dfeat[-1]["rgb"] + d_deep_rgb
        if d_deep_ir is not None:
            dfeat[-1]["ir"] = dfeat[-1]["ir"] + d_deep_ir

        for s in range(STAGES, 0, -1):
            d = dfeat[s - 1]
            shape = result.stage_feats[s - 1][0].shape
            d = {k: (np.zeros(shape) if np.isscalar(v) else v) for k, v in d.items()}
            if s in cfg.active_positions:
                block, caches = cache["fuse"][s]
                dr, di = np.empty(shape), np.empty(shape)
                for i, fc in enumerate(caches):
                    dr[i], di[i], g = fusion.dtf_fuse_backward(d["rgb"][i], d["ir"][i], fc, block)
                    for k, v in g.named(f"dtf{s}.").items():
                        acc(k, v)
                d = {"rgb": dr, "ir": di}
            for stream in ("rgb", "ir"):
                x_shape, cols, z, idx = cache["stages"][s - 1][stream]
                da = layers.maxpool2_backward(d[stream], idx, z.shape)
                dz = da * (z > 0)
                dx, dw, db = layers.conv3x3_backward(dz, cols, x_shape, self.value(f"{stream}.stage{s}.w"))
                acc(f"{stream}.stage{s}.w", dw)
                acc(f"{stream}.stage{s}.b", db)
                if s > 1:
                    dfeat[s - 2][stream] = dfeat[s - 2][stream] + dx
        for k, g in grads.items():
            self.params[k].accumulate(g)
        return grads


def backbone_forward(img_rgb, img_ir, model):
    """Per-stage ``(rgb, ir)`` feature pairs and the merged maps feeding the head."""
    res = model.forward(img_rgb, img_ir)
    pyramid = [r + i for r, i in res.stage_feats[1:]]
    return res.stage_feats, pyramid, (res.deep_rgb, res.deep_ir)
