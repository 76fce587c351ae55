"""Random-case builders shared by the unit and acceptance tests."""
import numpy as np

import oracles
from seadate import fusion


def random_attention_case(seed, max_c=16, max_hw=16):
    """A random spatial + channel parameter set with C <= max_c and HW <= max_hw."""
    r = np.random.default_rng(seed)
    heads = int(r.choice([1, 2, 4]))
    groups = int(r.choice([1, 2, 4]))
    lcm = int(np.lcm(heads, groups))
    c = lcm * int(r.integers(1, max_c // lcm + 1))
    c = max(c, 2 if lcm == 1 else lcm)
    hw = int(r.integers(1, max_hw + 1))
    sp = fusion.init_spatial(c, heads, rng=r)
    ch = fusion.init_channel(c, groups, rng=r)
    # perturb LN parameters so they are exercised too
    for p in (sp, ch):
        for name in ("ln1_g", "ln1_b", "ln2_g", "ln2_b"):
            getattr(p, name)[...] += 0.3 * r.standard_normal(c)
    x_rgb = r.standard_normal((hw, c))
    x_ir = r.standard_normal((hw, c))
    return dict(c=c, hw=hw, heads=heads, groups=groups, spatial=sp, channel=ch, x_rgb=x_rgb, x_ir=x_ir, rng=r)


def spatial_oracle(case, pre_ln=False):
    p = case["spatial"]
    return np.array(oracles.spatial_branch(case["x_rgb"], case["x_ir"], p.wq, p.wk, p.wv, p.proj, p.ln1_g,
                                           p.ln1_b, p.ff_w1, p.ff_b1, p.ff_w2, p.ff_b2, p.ln2_g, p.ln2_b,
                                           pre_ln=pre_ln))


def channel_oracle(case, y=None, pre_ln=False):
    p = case["channel"]
    y = case["x_rgb"] + case["x_ir"] if y is None else y
    return np.array(oracles.channel_branch(y, p.wq, p.wk, p.wv, p.ln1_g, p.ln1_b, p.ff_w1, p.ff_b1,
                                           p.ff_w2, p.ff_b2, p.ln2_g, p.ln2_b, pre_ln=pre_ln))


def check_attention_invariants(case, perm_seed):
    """Max deviations for (row sums, spatial equivariance, channel-score invariance)."""
    r = np.random.default_rng(perm_seed)
    sp, ch = case["spatial"], case["channel"]
    x = np.concatenate([case["x_rgb"], case["x_ir"]])
    y = case["x_rgb"] + case["x_ir"]
    out, w_s, _ = fusion.multi_head_attention(x, sp)
    out_c, w_c, _ = fusion.channel_group_attention(y, ch)
    rowsum = max(np.abs(w_s.sum(-1) - 1).max(), np.abs(w_c.sum(-1) - 1).max())
    perm = r.permutation(len(x))
    out_p, _, _ = fusion.multi_head_attention(x[perm], sp)
    equiv = np.abs(out_p - out[perm]).max()
    perm_y = r.permutation(len(y))
    out_cp, w_cp, _ = fusion.channel_group_attention(y[perm_y], ch)
    invar = max(np.abs(w_cp - w_c).max(), np.abs(out_cp - out_c[perm_y]).max())
    return rowsum, equiv, invar
