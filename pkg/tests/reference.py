"""Naive loop-based reference forward pass.

Deliberately written with explicit Python loops and per-node vector math,
independent of the vectorized implementation in privrec.gnn, so equivalence
tests compare two genuinely different code paths.
"""

import numpy as np


def _sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def reference_forward(params, nodes, a_out, a_in, positions, user_features,
                      clip_norm, steps, noise=None):
    """Single-graph forward pass.

    ``noise`` is a list of (noise_out, noise_in) arrays of shape (m, d+d')
    per step, or None for the noise-free mode.  Returns every quantity the
    production path exposes.
    """
    d = params.item_embed.shape[1]
    dp = params.user_proj.shape[1]
    m = len(nodes)

    e_u = np.zeros(dp)
    for j in range(params.user_proj.shape[0]):
        e_u = e_u + user_features[j] * params.user_proj[j]

    e = np.stack([params.item_embed[g].copy() for g in nodes])
    for t in range(steps):
        joint = np.zeros((m, d + dp))
        for i in range(m):
            joint[i, :d] = e[i]
            joint[i, d:] = e_u
        clipped = np.zeros_like(joint)
        for i in range(m):
            norm = np.sqrt(np.sum(joint[i] ** 2))
            if norm > 0:
                clipped[i] = joint[i] * clip_norm / norm

        agg_out = np.zeros_like(joint)
        agg_in = np.zeros_like(joint)
        for i in range(m):
            for j in range(m):
                agg_out[i] += a_out[i, j] * clipped[j]
                agg_in[i] += a_in[i, j] * clipped[j]
        if noise is not None and noise[t][0] is not None:
            agg_out = agg_out + noise[t][0]
            agg_in = agg_in + noise[t][1]

        e_next = np.zeros_like(e)
        for i in range(m):
            lin_o = agg_out[i] @ params.w_out + params.b_out
            lin_i = agg_in[i] @ params.w_in + params.b_in
            a = np.concatenate([lin_o, lin_i])
            r = _sig(a @ params.gru_wx_r + e[i] @ params.gru_wh_r + params.gru_b_r)
            z = _sig(a @ params.gru_wx_z + e[i] @ params.gru_wh_z + params.gru_b_z)
            cand = np.tanh(a @ params.gru_wx_n + r * (e[i] @ params.gru_wh_n)
                           + params.gru_b_n)
            e_next[i] = (1.0 - z) * cand + z * e[i]
        e = e_next

    z_l = e[positions[-1]]
    z_g = np.zeros(d)
    for s in positions:
        gate = _sig(params.attn_w1 @ z_l + params.attn_w2 @ e[s] + params.attn_b)
        z_g = z_g + float(params.attn_q @ gate) * e[s]
    z_cat = np.concatenate([z_g, z_l, e_u])
    z_u = params.out_proj @ z_cat

    table = params.item_embed.copy()
    for i, g in enumerate(nodes):
        table[g] = e[i]
    scores = np.array([float(table[v] @ z_u) for v in range(table.shape[0])])
    shift = scores - scores.max()
    exp = np.exp(shift)
    probs = exp / exp.sum()
    return {"e_u": e_u, "e_t": e, "z_l": z_l, "z_g": z_g, "z_u": z_u,
            "scores": scores, "probs": probs}


def reference_bce_loss(probs, label):
    total = -np.log(probs[label])
    for i, p in enumerate(probs):
        if i != label:
            total -= np.log1p(-p)
    return float(total)
