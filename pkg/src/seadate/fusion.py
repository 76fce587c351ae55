"""Dual-attention transformer fusion of two feature maps.

Two branches run side by side on the same pair of ``(C, H, W)`` maps:

* spatial multi-head attention over the ``2HW`` pixel tokens of both
  modalities stacked together, followed by residual + LayerNorm and a
  residual feed-forward + LayerNorm;
* channel group attention over the channel tokens of the summed map
  ``Y = F_rgb + F_ir``, with the channels split into ``N_g`` groups of
  ``C_g`` so that each score matrix is only ``C_g x C_g``.

Each modality receives its own half of the spatial output plus the shared
channel output as a residual. There are no positional encodings, so the
spatial branch is equivariant to any permutation of its token rows.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import ops
from .errors import ConfigError, DimensionError


class ParamBundle:
    """Mixin for dataclasses whose fields are all arrays."""

    def named(self, prefix=""):
        return {prefix + f.name: getattr(self, f.name) for f in fields(self)}

    def zeros_like(self):
        return type(self)(**{f.name: np.zeros_like(getattr(self, f.name)) for f in fields(self)})

    @classmethod
    def from_named(cls, named, prefix=""):
        return cls(**{f.name: named[prefix + f.name] for f in fields(cls)})


@dataclass
class SpatialMHAParams(ParamBundle):
    wq: np.ndarray      # (m, C, d_k)
    wk: np.ndarray
    wv: np.ndarray
    proj: np.ndarray    # (C, C), maps the concatenated heads back to C
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    ff_w1: np.ndarray   # (C, H)
    ff_b1: np.ndarray
    ff_w2: np.ndarray   # (H, C)
    ff_b2: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray

    @property
    def heads(self):
        return self.wq.shape[0]

    @property
    def channels(self):
        return self.wq.shape[1]


@dataclass
class ChannelGroupParams(ParamBundle):
    wq: np.ndarray      # (N_g, C, C_g)
    wk: np.ndarray
    wv: np.ndarray
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    ff_w1: np.ndarray
    ff_b1: np.ndarray
    ff_w2: np.ndarray
    ff_b2: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray

    @property
    def groups(self):
        return self.wq.shape[0]

    @property
    def channels(self):
        return self.wq.shape[1]


@dataclass
class DTFBlock:
    spatial: SpatialMHAParams
    channel: ChannelGroupParams

    def __post_init__(self):
        if self.spatial.channels != self.channel.channels:
            raise DimensionError(
                f"spatial branch has C={self.spatial.channels}, channel branch has C={self.channel.channels}"
            )

    @property
    def channels(self):
        return self.spatial.channels

    def named(self, prefix=""):
        out = self.spatial.named(prefix + "spatial.")
        out.update(self.channel.named(prefix + "channel."))
        return out

    def zeros_like(self):
        return DTFBlock(self.spatial.zeros_like(), self.channel.zeros_like())

    @classmethod
    def from_named(cls, named, prefix=""):
        return cls(SpatialMHAParams.from_named(named, prefix + "spatial."),
                   ChannelGroupParams.from_named(named, prefix + "channel."))


# initialisation --------------------------------------------------------------

def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _ffn_init(rng, c, ratio):
    hidden = int(round(ratio * c))
    return dict(
        ff_w1=_uniform(rng, (c, hidden), c), ff_b1=_uniform(rng, (hidden,), c),
        ff_w2=_uniform(rng, (hidden, c), hidden), ff_b2=_uniform(rng, (c,), hidden),
    )


def _ln_init(c):
    return dict(ln1_g=np.ones(c), ln1_b=np.zeros(c), ln2_g=np.ones(c), ln2_b=np.zeros(c))


def init_spatial(channels, heads=2, ffn_ratio=2.0, rng=None):
    rng = np.random.default_rng(rng)
    if heads < 1 or channels % heads:
        raise ConfigError(f"channels C={channels} not divisible by heads m={heads}")
    dk = channels // heads
    return SpatialMHAParams(
        wq=_uniform(rng, (heads, channels, dk), channels),
        wk=_uniform(rng, (heads, channels, dk), channels),
        wv=_uniform(rng, (heads, channels, dk), channels),
        proj=_uniform(rng, (channels, channels), channels),
        **_ffn_init(rng, channels, ffn_ratio), **_ln_init(channels),
    )


def init_channel(channels, groups=2, ffn_ratio=2.0, rng=None):
    rng = np.random.default_rng(rng)
    if groups < 1 or channels % groups:
        raise ConfigError(f"channels C={channels} not divisible by groups N_g={groups}")
    cg = channels // groups
    return ChannelGroupParams(
        wq=_uniform(rng, (groups, channels, cg), channels),
        wk=_uniform(rng, (groups, channels, cg), channels),
        wv=_uniform(rng, (groups, channels, cg), channels),
        **_ffn_init(rng, channels, ffn_ratio), **_ln_init(channels),
    )


def init_block(channels, heads=2, groups=2, ffn_ratio=2.0, rng=None):
    rng = np.random.default_rng(rng)
    return DTFBlock(init_spatial(channels, heads, ffn_ratio, rng), init_channel(channels, groups, ffn_ratio, rng))


# token views -----------------------------------------------------------------

def tokens_from_map(f):
    """``(C, H, W)`` map to ``(HW, C)`` tokens in row-major scan order."""
    c = f.shape[0]
    return np.ascontiguousarray(f.reshape(c, -1).T)


def map_from_tokens(t, height, width):
    return np.ascontiguousarray(t.T.reshape(t.shape[1], height, width))


# residual / norm / feed-forward stack shared by both branches ---------------

def _post_stack(x, attn, p):
    z1 = x + attn
    s1 = ops.layer_norm(z1, p.ln1_g, p.ln1_b)
    z2 = s1 + ops.feed_forward(s1, p.ff_w1, p.ff_b1, p.ff_w2, p.ff_b2)
    s2 = ops.layer_norm(z2, p.ln2_g, p.ln2_b)
    return s2, (z1, s1, z2)


def _post_stack_backward(ds2, cache, p, g):
    z1, s1, z2 = cache
    dz2, g.ln2_g[...], g.ln2_b[...] = ops.layer_norm_backward(ds2, z2, p.ln2_g)
    dff, g.ff_w1[...], g.ff_b1[...], g.ff_w2[...], g.ff_b2[...] = ops.feed_forward_backward(
        dz2, s1, p.ff_w1, p.ff_b1, p.ff_w2)
    ds1 = dz2 + dff
    dz1, g.ln1_g[...], g.ln1_b[...] = ops.layer_norm_backward(ds1, z1, p.ln1_g)
    return dz1  # same gradient reaches the residual input and the attention output


# dense softmax attention -----------------------------------------------------

def _softmax_attend(q, k, v, scale):
    """Per-head ``softmax(q k^T * scale) v`` without a separate max pass.

    Each score row is shifted by the Cauchy-Schwarz bound
    ``|q_i| max_j |k_j| * scale`` folded into the product as an extra
    column, so exponentials never overflow. The unnormalised exponentials
    and reciprocal row sums are kept for the backward pass.
    """
    m, n, _ = q.shape
    bound = np.sqrt((q * q).sum(-1)) * scale * np.sqrt((k * k).sum(-1)).max(-1, keepdims=True)
    qa = np.concatenate([q * scale, -bound[..., None]], axis=-1)
    ka = np.concatenate([k, np.ones((m, k.shape[1], 1))], axis=-1)
    e = qa @ ka.transpose(0, 2, 1)
    np.exp(e, out=e)
    tot = e.sum(axis=-1)
    if not np.all(tot > 1e-250):
        # the bound was far from the true row maximum; shift by the exact maximum
        e = q @ k.transpose(0, 2, 1) * scale
        e -= e.max(axis=-1, keepdims=True)
        np.exp(e, out=e)
        tot = e.sum(axis=-1)
    inv = 1.0 / tot
    out = (e @ v) * inv[..., None]
    return out, (e, inv)


def _softmax_attend_backward(dout, q, k, v, out, saved, scale):
    e, inv = saved
    m, n, _ = q.shape
    ds = dout * inv[..., None]
    rowterm = (ds * out).sum(-1)
    dsa = np.concatenate([ds, -rowterm[..., None]], axis=-1)
    va = np.concatenate([v, np.ones((m, v.shape[1], 1))], axis=-1)
    g = dsa @ va.transpose(0, 2, 1)                   # (dA - rowterm) / rowsum
    g *= e
    g *= scale
    dq = g @ k
    dk = (q.transpose(0, 2, 1) @ g).transpose(0, 2, 1)
    dv = (ds.transpose(0, 2, 1) @ e).transpose(0, 2, 1)
    return dq, dk, dv


# spatial multi-head attention ------------------------------------------------

def multi_head_attention(x, p, return_weights=True):
    """Pre-residual spatial attention ``Concat(S_1..S_m) L`` over rows of ``x``.

    Returns ``(output, weights, cache)`` where ``weights`` has shape
    ``(m, N, N)`` and every row of every head sums to one (``None`` when
    ``return_weights`` is false).
    """
    if x.shape[-1] != p.channels:
        raise DimensionError(f"tokens have width {x.shape[-1]}, attention expects C={p.channels}")
    m, c, dk = p.wq.shape
    q = np.einsum("nc,hcd->hnd", x, p.wq)
    k = np.einsum("nc,hcd->hnd", x, p.wk)
    v = np.einsum("nc,hcd->hnd", x, p.wv)
    s, saved = _softmax_attend(q, k, v, 1.0 / np.sqrt(dk))     # (m, N, d_k)
    cat = s.transpose(1, 0, 2).reshape(x.shape[0], m * dk)
    weights = saved[0] * saved[1][..., None] if return_weights else None
    return cat @ p.proj, weights, (x, q, k, v, s, saved, cat)


def multi_head_attention_backward(dout, cache, p, g):
    x, q, k, v, s, saved, cat = cache
    m, c, dk = p.wq.shape
    g.proj[...] = cat.T @ dout
    ds = (dout @ p.proj.T).reshape(x.shape[0], m, dk).transpose(1, 0, 2)
    dq, dk_, dv = _softmax_attend_backward(ds, q, k, v, s, saved, 1.0 / np.sqrt(dk))
    g.wq[...] = np.einsum("nc,hnd->hcd", x, dq)
    g.wk[...] = np.einsum("nc,hnd->hcd", x, dk_)
    g.wv[...] = np.einsum("nc,hnd->hcd", x, dv)
    return (np.einsum("hnd,hcd->nc", dq, p.wq)
            + np.einsum("hnd,hcd->nc", dk_, p.wk)
            + np.einsum("hnd,hcd->nc", dv, p.wv))


def spatial_attention_forward(x_rgb, x_ir, p):
    """Spatial branch on ``(HW, C)`` token matrices; returns ``((2HW, C), cache)``."""
    if x_rgb.shape != x_ir.shape:
        raise DimensionError(f"modality token shapes differ: {x_rgb.shape} vs {x_ir.shape}")
    if p.channels % p.heads:
        raise ConfigError(f"C={p.channels} not divisible by m={p.heads}")
    x = np.concatenate([x_rgb, x_ir], axis=0)
    attn, _, mha_cache = multi_head_attention(x, p, return_weights=False)
    out, stack_cache = _post_stack(x, attn, p)
    return out, (mha_cache, stack_cache, x_rgb.shape[0])


def spatial_attention_backward(dout, cache, p):
    """Return ``(dx_rgb, dx_ir, grads)`` with ``grads`` a :class:`SpatialMHAParams`."""
    mha_cache, stack_cache, n = cache
    g = p.zeros_like()
    dz1 = _post_stack_backward(dout, stack_cache, p, g)
    dx = dz1 + multi_head_attention_backward(dz1, mha_cache, p, g)
    return dx[:n], dx[n:], g


# channel group attention -----------------------------------------------------

def channel_group_attention(y, p):
    """Pre-residual channel group attention on ``(HW, C)`` tokens.

    Per group, ``softmax(Q^T K / sqrt(C_g)) V^T`` is ``(C_g, HW)``; the
    transposed group outputs are concatenated back to ``(HW, C)``.
    Returns ``(output, weights, cache)`` with ``weights`` of shape
    ``(N_g, C_g, C_g)``.
    """
    if y.shape[-1] != p.channels:
        raise DimensionError(f"tokens have width {y.shape[-1]}, attention expects C={p.channels}")
    ng, c, cg = p.wq.shape
    q = np.einsum("nc,gck->gnk", y, p.wq)            # (N_g, HW, C_g)
    k = np.einsum("nc,gck->gnk", y, p.wk)
    v = np.einsum("nc,gck->gnk", y, p.wv)
    a = ops.softmax_rows(q.transpose(0, 2, 1) @ k / np.sqrt(cg))
    out = v @ a.transpose(0, 2, 1)                   # (N_g, HW, C_g) = (A V^T)^T
    return out.transpose(1, 0, 2).reshape(y.shape[0], c), a, (y, q, k, v, a)


def channel_group_attention_core_backward(dout, cache, p, g):
    y, q, k, v, a = cache
    ng, c, cg = p.wq.shape
    do = dout.reshape(y.shape[0], ng, cg).transpose(1, 0, 2)
    dv = do @ a
    da = do.transpose(0, 2, 1) @ v
    dscore = ops.softmax_rows_backward(da, a) / np.sqrt(cg)
    dq = k @ dscore.transpose(0, 2, 1)
    dk = q @ dscore
    g.wq[...] = np.einsum("nc,gnk->gck", y, dq)
    g.wk[...] = np.einsum("nc,gnk->gck", y, dk)
    g.wv[...] = np.einsum("nc,gnk->gck", y, dv)
    return (np.einsum("gnk,gck->nc", dq, p.wq)
            + np.einsum("gnk,gck->nc", dk, p.wk)
            + np.einsum("gnk,gck->nc", dv, p.wv))


def channel_group_attention_forward(y, p):
    if p.channels % p.groups:
        raise ConfigError(f"C={p.channels} not divisible by N_g={p.groups}")
    attn, _, cga_cache = channel_group_attention(y, p)
    out, stack_cache = _post_stack(y, attn, p)
    return out, (cga_cache, stack_cache)


def channel_group_attention_backward(dout, cache, p):
    """Return ``(dy, grads)`` for :func:`channel_group_attention_forward`."""
    cga_cache, stack_cache = cache
    g = p.zeros_like()
    dz1 = _post_stack_backward(dout, stack_cache, p, g)
    dy = dz1 + channel_group_attention_core_backward(dz1, cga_cache, p, g)
    return dy, g


# the fusion block ------------------------------------------------------------

def dtf_fuse(f_rgb, f_ir, block):
    """Fuse two ``(C, H, W)`` maps; returns ``((F'_rgb, F'_ir), cache)``.

    ``F'_m = F_m + S''_m + C''`` where ``S''_m`` is modality ``m``'s half of
    the spatial branch output and ``C''`` the channel branch output on the
    summed map.
    """
    if f_rgb.shape != f_ir.shape:
        raise DimensionError(f"modality maps differ in shape: {f_rgb.shape} vs {f_ir.shape}")
    c, h, w = f_rgb.shape
    if c != block.channels:
        raise DimensionError(f"maps have C={c}, block expects C={block.channels}")
    x_rgb = tokens_from_map(f_rgb)
    x_ir = tokens_from_map(f_ir)
    s2, s_cache = spatial_attention_forward(x_rgb, x_ir, block.spatial)
    c2, c_cache = channel_group_attention_forward(x_rgb + x_ir, block.channel)
    n = h * w
    out_rgb = f_rgb + map_from_tokens(s2[:n] + c2, h, w)
    out_ir = f_ir + map_from_tokens(s2[n:] + c2, h, w)
    return (out_rgb, out_ir), (s_cache, c_cache, (h, w))


def dtf_fuse_backward(d_rgb, d_ir, cache, block):
    """Return ``(df_rgb, df_ir, grads)`` with ``grads`` a :class:`DTFBlock`."""
    s_cache, c_cache, (h, w) = cache
    t_rgb = tokens_from_map(d_rgb)
    t_ir = tokens_from_map(d_ir)
    dx_rgb, dx_ir, gs = spatial_attention_backward(np.concatenate([t_rgb, t_ir]), s_cache, block.spatial)
    dy, gc = channel_group_attention_backward(t_rgb + t_ir, c_cache, block.channel)
    df_rgb = d_rgb + map_from_tokens(dx_rgb + dy, h, w)
    df_ir = d_ir + map_from_tokens(dx_ir + dy, h, w)
    return df_rgb, df_ir, DTFBlock(gs, gc)
