"""
Fusing two feature maps with dual attention
===========================================

Two modalities of the same scene arrive as (C, H, W) feature maps. The
fusion block lets every location of either map attend to every location of
both (spatial branch), and lets channels of the summed map attend to each
other in groups (channel branch). Both results are added back to the inputs.
"""

# %%
# A pair of small maps. The second one only "sees" the lower-right corner.
import numpy as np

from seadate import fusion
from seadate.gradcheck import grad_check

rng = np.random.default_rng(0)
C, H, W = 8, 4, 4
f_rgb = rng.standard_normal((C, H, W))
f_ir = np.zeros((C, H, W))
f_ir[:, 2:, 2:] = 2.0 + rng.standard_normal((C, 2, 2))

# %%
# Maps become token matrices by a row-major scan: one row per pixel.
x_rgb = fusion.tokens_from_map(f_rgb)
x_ir = fusion.tokens_from_map(f_ir)
print("tokens per modality:", x_rgb.shape)
assert np.array_equal(fusion.map_from_tokens(x_rgb, H, W), f_rgb)

# %%
# Spatial branch: multi-head attention over all 2HW tokens at once.
block = fusion.init_block(C, heads=2, groups=2, rng=rng)
tokens = np.concatenate([x_rgb, x_ir])
_, weights, _ = fusion.multi_head_attention(tokens, block.spatial)
print("attention weights (heads, queries, keys):", weights.shape)
print("rows sum to one:", np.allclose(weights.sum(-1), 1.0))

# How much of each query's attention goes to the other modality's tokens?
n = H * W
cross = np.concatenate([weights[:, :n, n:].sum(-1), weights[:, n:, :n].sum(-1)], axis=1).mean(0)
print("mean cross-modal attention share: %.3f" % cross.mean())

# %%
# Channel branch: groups of channels attend to each other on Y = F_rgb + F_ir.
# The weights are (groups, C_g, C_g) and do not depend on pixel order.
y = x_rgb + x_ir
_, a, _ = fusion.channel_group_attention(y, block.channel)
perm = rng.permutation(n)
_, a_perm, _ = fusion.channel_group_attention(y[perm], block.channel)
print("channel weights:", a.shape, " unchanged by shuffling pixels:", np.allclose(a, a_perm))

# %%
# The full block returns both enhanced maps.
(out_rgb, out_ir), _ = fusion.dtf_fuse(f_rgb, f_ir, block)
print("enhanced shapes:", out_rgb.shape, out_ir.shape)
print("ir map change inside / outside its visible corner: %.3f / %.3f" % (
    np.abs(out_ir - f_ir)[:, 2:, 2:].mean(), np.abs(out_ir - f_ir)[:, :2, :2].mean()))

# %%
# Every backward pass is checked against central differences.


def fused(f_rgb, f_ir):
    (a, b), cache = fusion.dtf_fuse(f_rgb, f_ir, block)

    def vjp(d):
        d_rgb, d_ir, _ = fusion.dtf_fuse_backward(d[0], d[1], cache, block)
        return {"f_rgb": d_rgb, "f_ir": d_ir}

    return (a, b), vjp


print(grad_check(fused, {"f_rgb": f_rgb, "f_ir": f_ir}, h=1e-5, name="dtf_fuse").line())
