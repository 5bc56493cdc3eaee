"""Gated graph network with privately perturbed neighbor aggregation.

One propagation step concatenates the user embedding onto every item
embedding, rescales each joint row to a fixed L2 norm, sum-aggregates over
the out/in adjacency matrices with per-entry Gaussian noise, applies two
affine transforms, and feeds the concatenated result into a GRU cell that
updates the item states.  After T steps an attention readout combines the
final item states with the user embedding into a single vector that scores
every item in the vocabulary via a softmax.

Forward and backward passes are implemented directly in numpy (float64).
Gradients flow through the row rescaling, the aggregation (noise is a
constant per draw), the GRU, the readout and the softmax loss, and are
verified against central finite differences in the test suite.

Everything operates on batches of padded graphs: ``(B, M, ...)`` arrays
with boolean masks.  Padded node rows never reach the loss (their adjacency
columns are zero and they are excluded from readout and scoring), so they
contribute exactly zero gradient.  Single-graph convenience wrappers add a
leading batch axis of one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields

import numpy as np

LOSS_BCE_FULL = "bce_full"  # full-vocabulary binary cross-entropy of the softmax vector
LOSS_CE = "ce"  # plain categorical cross-entropy, for ablation

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelDims:
    n_items: int
    item_dim: int  # d
    user_dim: int  # d'
    feature_width: int  # d0

    @property
    def joint_width(self) -> int:
        return self.item_dim + self.user_dim


@dataclass
class ModelParams:
    """All trainable tensors.  Shapes follow the (d, d') convention:

    user_proj (d0, d'), item_embed (|V|, d), w_out/w_in (d+d', d) with bias
    (d,), three GRU gates with input width 2d and state width d, attention
    vector q (d,), attention transforms (d, d) with bias (d,), and the
    output projection (d, 2d+d').
    """

    user_proj: np.ndarray
    item_embed: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray
    w_in: np.ndarray
    b_in: np.ndarray
    gru_wx_z: np.ndarray
    gru_wh_z: np.ndarray
    gru_b_z: np.ndarray
    gru_wx_r: np.ndarray
    gru_wh_r: np.ndarray
    gru_b_r: np.ndarray
    gru_wx_n: np.ndarray
    gru_wh_n: np.ndarray
    gru_b_n: np.ndarray
    attn_q: np.ndarray
    attn_w1: np.ndarray
    attn_w2: np.ndarray
    attn_b: np.ndarray
    out_proj: np.ndarray

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def dims(self) -> ModelDims:
        d0, dp = self.user_proj.shape
        n_items, d = self.item_embed.shape
        return ModelDims(n_items, d, dp, d0)

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: v.copy() for k, v in self.as_dict().items()})


def param_shapes(dims: ModelDims) -> dict:
    d, dp, d0 = dims.item_dim, dims.user_dim, dims.feature_width
    w = dims.joint_width
    shapes = {
        "user_proj": (d0, dp),
        "item_embed": (dims.n_items, d),
        "w_out": (w, d),
        "b_out": (d,),
        "w_in": (w, d),
        "b_in": (d,),
        "attn_q": (d,),
        "attn_w1": (d, d),
        "attn_w2": (d, d),
        "attn_b": (d,),
        "out_proj": (d, 2 * d + dp),
    }
    for gate in ("z", "r", "n"):
        shapes[f"gru_wx_{gate}"] = (2 * d, d)
        shapes[f"gru_wh_{gate}"] = (d, d)
        shapes[f"gru_b_{gate}"] = (d,)
    return shapes


def init_params(dims: ModelDims, rng) -> ModelParams:
    """Uniform initialization in [-1/sqrt(d), 1/sqrt(d)] for every tensor."""
    bound = 1.0 / np.sqrt(dims.item_dim)
    arrays = {
        name: rng.uniform(-bound, bound, size=shape)
        for name, shape in param_shapes(dims).items()
    }
    return ModelParams(**arrays)


def zero_grads(params: ModelParams) -> dict:
    return {k: np.zeros_like(v) for k, v in params.as_dict().items()}


# ---------------------------------------------------------------------------
# spec'd operations (single-graph views of the batched kernels below)
# ---------------------------------------------------------------------------


def init_embeddings(perturbed_values, item_index, params: ModelParams):
    """Initial user embedding (features x projection) and one item embedding (table row)."""
    vals = np.asarray(perturbed_values, dtype=float)
    if vals.shape != (params.user_proj.shape[0],):
        raise ValueError(
            f"feature width {vals.shape} does not match projection input {params.user_proj.shape[0]}"
        )
    if not (0 <= item_index < params.item_embed.shape[0]):
        raise ValueError(f"item index {item_index} outside table of {params.item_embed.shape[0]}")
    return vals @ params.user_proj, params.item_embed[item_index].copy()


def clip_rows(h, norm_bound):
    """Rescale every nonzero row to L2 norm exactly ``norm_bound``; zero rows stay zero."""
    if norm_bound <= 0:
        raise ValueError(f"norm bound must be positive, got {norm_bound}")
    h = np.asarray(h, dtype=float)
    norms = np.linalg.norm(h, axis=-1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)
    return np.where(norms > 0.0, h * (norm_bound / safe), 0.0)


def noisy_aggregate(a, h_bar, sigma, rng=None):
    """Sum aggregation ``a @ h_bar`` plus i.i.d. Gaussian(0, sigma^2) per entry.

    sigma = 0 is the non-private mode and returns the exact product (the
    random stream is not consumed).  Fresh noise is drawn on every call.
    """
    a = np.asarray(a, dtype=float)
    h_bar = np.asarray(h_bar, dtype=float)
    if a.shape[-1] != h_bar.shape[-2]:
        raise ValueError(f"shape mismatch: adjacency {a.shape} vs rows {h_bar.shape}")
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    out = np.matmul(a, h_bar)
    if sigma > 0:
        if rng is None:
            raise ValueError("sigma > 0 requires a random stream")
        out = out + sigma * rng.standard_normal(out.shape)
    return out


@dataclass
class ForwardState:
    """Item/user embeddings plus the intermediates of the latest step."""

    user_embed: np.ndarray
    item_embeds: np.ndarray
    joint: np.ndarray | None = None
    clipped: np.ndarray | None = None
    agg_out: np.ndarray | None = None
    agg_in: np.ndarray | None = None


def propagate_step(state: ForwardState, graph, params: ModelParams, clip_norm,
                   sigma=0.0, rng=None) -> ForwardState:
    """One propagation step over a single behavior graph."""
    e = np.asarray(state.item_embeds, dtype=float)[None]
    e_u = np.asarray(state.user_embed, dtype=float)[None]
    a_out = np.asarray(graph.a_out, dtype=float)[None]
    a_in = np.asarray(graph.a_in, dtype=float)[None]
    noise_out = noise_in = None
    if sigma > 0:
        if rng is None:
            raise ValueError("sigma > 0 requires a random stream")
        shape = (1, e.shape[1], e.shape[2] + e_u.shape[1])
        noise_out = sigma * rng.standard_normal(shape)
        noise_in = sigma * rng.standard_normal(shape)
    step = _propagate(params, a_out, a_in, e, e_u, clip_norm, noise_out, noise_in)
    return ForwardState(
        user_embed=state.user_embed,
        item_embeds=step["e_new"][0],
        joint=step["joint"][0],
        clipped=step["clipped"][0],
        agg_out=step["agg_out"][0],
        agg_in=step["agg_in"][0],
    )


def readout(item_embeds, positions, user_embed, params: ModelParams) -> np.ndarray:
    """Unified user representation from final item states and sequence positions."""
    positions = np.asarray(positions, dtype=np.int64)
    if positions.size == 0:
        raise ValueError("cannot read out an empty sequence")
    e_t = np.asarray(item_embeds, dtype=float)[None]
    e_u = np.asarray(user_embed, dtype=float)[None]
    pos = positions[None]
    mask = np.ones_like(pos, dtype=bool)
    last = np.array([positions[-1]], dtype=np.int64)
    out = _readout(params, e_t, pos, mask, last, e_u)
    return out["z_u"][0]


@dataclass
class PredictionOutput:
    probs: np.ndarray
    loss: float


def predict_and_loss(z_u, item_table, label, loss_kind: str = LOSS_BCE_FULL) -> PredictionOutput:
    """Softmax scores of every item against ``z_u`` and the training loss."""
    table = np.asarray(item_table, dtype=float)
    if not (0 <= label < table.shape[0]):
        raise ValueError(f"label {label} outside vocabulary of {table.shape[0]}")
    scores = (table @ np.asarray(z_u, dtype=float))[None]
    probs, losses, _ = _softmax_loss(scores, np.array([label]), loss_kind)
    return PredictionOutput(probs[0], float(losses[0]))


# ---------------------------------------------------------------------------
# batched kernels
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    """Padded mini-batch of subsequence graphs.

    ``nodes`` holds global item indices per local node (pad 0, masked);
    ``positions`` maps sequence positions to local node indices (pad 0,
    masked); ``last_index`` is the local node of the final real position.
    """

    a_out: np.ndarray  # (B, M, M)
    a_in: np.ndarray  # (B, M, M)
    nodes: np.ndarray  # (B, M) int64
    node_mask: np.ndarray  # (B, M) bool
    positions: np.ndarray  # (B, L) int64
    pos_mask: np.ndarray  # (B, L) bool
    last_index: np.ndarray  # (B,) int64
    user_features: np.ndarray  # (B, d0)
    labels: np.ndarray  # (B,) int64

    @property
    def size(self) -> int:
        return self.labels.shape[0]


def draw_noise(rng, sigma, steps, batch_size, max_nodes, joint_width):
    """Pre-draw the per-step aggregation noise (used to freeze noise in tests)."""
    if sigma <= 0:
        return [(None, None)] * steps
    shape = (batch_size, max_nodes, joint_width)
    return [
        (sigma * rng.standard_normal(shape), sigma * rng.standard_normal(shape))
        for _ in range(steps)
    ]


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _propagate(params, a_out, a_in, e, e_u, clip_norm, noise_out, noise_in):
    """One batched propagation step; returns every intermediate for backprop."""
    b, m, d = e.shape
    joint = np.concatenate([e, np.broadcast_to(e_u[:, None, :], (b, m, e_u.shape[1]))], axis=2)
    norms = np.linalg.norm(joint, axis=2, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)
    unit = np.where(norms > 0.0, joint / safe, 0.0)
    clipped = clip_norm * unit

    agg_out = np.matmul(a_out, clipped)
    agg_in = np.matmul(a_in, clipped)
    if noise_out is not None:
        agg_out = agg_out + noise_out
    if noise_in is not None:
        agg_in = agg_in + noise_in

    lin_out = agg_out @ params.w_out + params.b_out
    lin_in = agg_in @ params.w_in + params.b_in
    a = np.concatenate([lin_out, lin_in], axis=2)  # (B, M, 2d)

    r = _sigmoid(a @ params.gru_wx_r + e @ params.gru_wh_r + params.gru_b_r)
    z = _sigmoid(a @ params.gru_wx_z + e @ params.gru_wh_z + params.gru_b_z)
    hh = e @ params.gru_wh_n
    cand = np.tanh(a @ params.gru_wx_n + r * hh + params.gru_b_n)
    e_new = (1.0 - z) * cand + z * e

    return {
        "e_prev": e,
        "joint": joint,
        "norms": norms,
        "unit": unit,
        "clipped": clipped,
        "agg_out": agg_out,
        "agg_in": agg_in,
        "a": a,
        "r": r,
        "z": z,
        "hh": hh,
        "cand": cand,
        "e_new": e_new,
    }


def _propagate_backward(params, step, a_out, a_in, clip_norm, d_e_new, grads):
    """Backprop one step; returns (d_e_prev, d_user_embed_contribution)."""
    e = step["e_prev"]
    r, z, cand, hh, a = step["r"], step["z"], step["cand"], step["hh"], step["a"]
    d = e.shape[2]

    dz = d_e_new * (e - cand)
    dcand = d_e_new * (1.0 - z)
    de = d_e_new * z

    dpre_n = dcand * (1.0 - cand**2)
    da = dpre_n @ params.gru_wx_n.T
    grads["gru_wx_n"] += np.einsum("bmi,bmj->ij", a, dpre_n)
    grads["gru_b_n"] += dpre_n.sum(axis=(0, 1))
    dr = dpre_n * hh
    dhh = dpre_n * r
    de += dhh @ params.gru_wh_n.T
    grads["gru_wh_n"] += np.einsum("bmi,bmj->ij", e, dhh)

    dpre_r = dr * r * (1.0 - r)
    da += dpre_r @ params.gru_wx_r.T
    grads["gru_wx_r"] += np.einsum("bmi,bmj->ij", a, dpre_r)
    grads["gru_b_r"] += dpre_r.sum(axis=(0, 1))
    de += dpre_r @ params.gru_wh_r.T
    grads["gru_wh_r"] += np.einsum("bmi,bmj->ij", e, dpre_r)

    dpre_z = dz * z * (1.0 - z)
    da += dpre_z @ params.gru_wx_z.T
    grads["gru_wx_z"] += np.einsum("bmi,bmj->ij", a, dpre_z)
    grads["gru_b_z"] += dpre_z.sum(axis=(0, 1))
    de += dpre_z @ params.gru_wh_z.T
    grads["gru_wh_z"] += np.einsum("bmi,bmj->ij", e, dpre_z)

    da_out, da_in = da[:, :, :d], da[:, :, d:]
    grads["w_out"] += np.einsum("bmw,bmd->wd", step["agg_out"], da_out)
    grads["b_out"] += da_out.sum(axis=(0, 1))
    grads["w_in"] += np.einsum("bmw,bmd->wd", step["agg_in"], da_in)
    grads["b_in"] += da_in.sum(axis=(0, 1))

    d_agg_out = da_out @ params.w_out.T
    d_agg_in = da_in @ params.w_in.T
    d_clipped = np.einsum("bji,bjw->biw", a_out, d_agg_out)
    d_clipped += np.einsum("bji,bjw->biw", a_in, d_agg_in)

    # joint rows were rescaled to norm C: d_joint = (C/n) (g - (u.g) u)
    unit, norms = step["unit"], step["norms"]
    inner = np.sum(unit * d_clipped, axis=2, keepdims=True)
    scale = np.where(norms > 0.0, clip_norm / np.where(norms > 0.0, norms, 1.0), 0.0)
    d_joint = scale * (d_clipped - inner * unit)

    de += d_joint[:, :, :d]
    d_user = d_joint[:, :, d:].sum(axis=1)
    return de, d_user


def _readout(params, e_t, positions, pos_mask, last_index, e_u):
    b = e_t.shape[0]
    e_seq = np.take_along_axis(e_t, positions[:, :, None], axis=1)  # (B, L, d)
    z_l = e_t[np.arange(b), last_index]  # (B, d)
    u_att = z_l[:, None, :] @ params.attn_w1.T + e_seq @ params.attn_w2.T + params.attn_b
    g = _sigmoid(u_att)
    alpha = np.where(pos_mask, g @ params.attn_q, 0.0)  # (B, L)
    z_g = np.einsum("bl,bld->bd", alpha, e_seq)
    z_cat = np.concatenate([z_g, z_l, e_u], axis=1)
    z_u = z_cat @ params.out_proj.T
    return {
        "e_seq": e_seq,
        "z_l": z_l,
        "g": g,
        "alpha": alpha,
        "z_g": z_g,
        "z_cat": z_cat,
        "z_u": z_u,
    }


def _readout_backward(params, cache, batch, d_z_u, d_e_t, grads):
    """Backprop the readout; scatters into ``d_e_t`` and returns d_user_embed."""
    ro = cache
    d = ro["z_l"].shape[1]
    grads["out_proj"] += np.einsum("bd,bk->dk", d_z_u, ro["z_cat"])
    d_z_cat = d_z_u @ params.out_proj
    d_z_g = d_z_cat[:, :d]
    d_z_l = d_z_cat[:, d : 2 * d].copy()
    d_user = d_z_cat[:, 2 * d :].copy()

    d_alpha = np.einsum("bd,bld->bl", d_z_g, ro["e_seq"])
    d_alpha = np.where(batch.pos_mask, d_alpha, 0.0)
    d_e_seq = ro["alpha"][:, :, None] * d_z_g[:, None, :]

    grads["attn_q"] += np.einsum("bl,bld->d", d_alpha, ro["g"])
    dg = d_alpha[:, :, None] * params.attn_q
    du = dg * ro["g"] * (1.0 - ro["g"])
    grads["attn_w1"] += np.einsum("bld,bk->dk", du, ro["z_l"])
    grads["attn_w2"] += np.einsum("bld,blk->dk", du, ro["e_seq"])
    grads["attn_b"] += du.sum(axis=(0, 1))
    d_z_l += np.einsum("bld,dk->bk", du, params.attn_w1)
    d_e_seq += du @ params.attn_w2

    b = d_e_t.shape[0]
    rows = np.broadcast_to(np.arange(b)[:, None], batch.positions.shape)
    np.add.at(d_e_t, (rows[batch.pos_mask], batch.positions[batch.pos_mask]),
              d_e_seq[batch.pos_mask])
    np.add.at(d_e_t, (np.arange(b), batch.last_index), d_z_l)
    return d_user


def _softmax_loss(scores, labels, loss_kind):
    """Stable softmax plus the per-sample loss and its gradient w.r.t. scores."""
    shifted = scores - scores.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    probs = exp / total
    log_probs = shifted - np.log(total)
    b = scores.shape[0]
    rows = np.arange(b)

    with np.errstate(divide="ignore", invalid="ignore"):
        if loss_kind == LOSS_CE:
            losses = -log_probs[rows, labels]
            d_scores = probs.copy()
            d_scores[rows, labels] -= 1.0
        elif loss_kind == LOSS_BCE_FULL:
            log_one_minus = np.log1p(-probs)
            log_one_minus[rows, labels] = 0.0  # label term uses log(p), not log(1-p)
            losses = -(log_probs[rows, labels] + log_one_minus.sum(axis=1))
            g = 1.0 / (1.0 - probs)
            g[rows, labels] = -1.0 / probs[rows, labels]
            inner = np.sum(probs * g, axis=1, keepdims=True)
            d_scores = probs * (g - inner)
        else:
            raise ValueError(f"unknown loss kind {loss_kind!r}")
    return probs, losses, d_scores


def forward_batch(params: ModelParams, batch: Batch, clip_norm, steps, sigma=0.0,
                  rng=None, noise=None, keep_cache=False):
    """Full forward pass over a padded batch; returns (scores, cache-or-None).

    ``noise`` may carry pre-drawn per-step noise pairs (see
    :func:`draw_noise`); otherwise noise is drawn from ``rng`` when
    sigma > 0.
    """
    b, m = batch.nodes.shape
    dims = params.dims
    if noise is None:
        noise = draw_noise(rng, sigma, steps, b, m, dims.joint_width) if sigma > 0 else \
            [(None, None)] * steps
    elif len(noise) != steps:
        raise ValueError(f"expected {steps} noise pairs, got {len(noise)}")

    e_u = batch.user_features @ params.user_proj
    e = params.item_embed[batch.nodes] * batch.node_mask[:, :, None]

    step_caches = []
    for t in range(steps):
        step = _propagate(params, batch.a_out, batch.a_in, e, e_u, clip_norm,
                          noise[t][0], noise[t][1])
        e = step["e_new"]
        step_caches.append(step)

    ro = _readout(params, e, batch.positions, batch.pos_mask, batch.last_index, e_u)

    scores = ro["z_u"] @ params.item_embed.T  # (B, |V|)
    local = np.einsum("bmd,bd->bm", e, ro["z_u"])
    rows = np.broadcast_to(np.arange(b)[:, None], batch.nodes.shape)
    sel = batch.node_mask
    scores[rows[sel], batch.nodes[sel]] = local[sel]

    if not keep_cache:
        return scores, None
    return scores, {"e_u": e_u, "e_t": e, "steps": step_caches, "readout": ro,
                    "local": local}


def loss_and_grads(params: ModelParams, batch: Batch, clip_norm, steps, sigma=0.0,
                   rng=None, noise=None, loss_kind: str = LOSS_BCE_FULL):
    """Mean loss over the batch and gradients for every parameter tensor."""
    scores, cache = forward_batch(params, batch, clip_norm, steps, sigma, rng, noise,
                                  keep_cache=True)
    probs, losses, d_scores = _softmax_loss(scores, batch.labels, loss_kind)
    loss = float(losses.mean())
    b = batch.size
    d_scores = d_scores / b

    grads = zero_grads(params)
    e_t = cache["e_t"]
    ro = cache["readout"]
    rows = np.broadcast_to(np.arange(b)[:, None], batch.nodes.shape)
    sel = batch.node_mask

    # split score gradient into the table part and the local (propagated) part
    d_local = np.zeros(batch.nodes.shape)
    d_local[sel] = d_scores[rows[sel], batch.nodes[sel]]
    d_base = d_scores.copy()
    d_base[rows[sel], batch.nodes[sel]] = 0.0

    z_u = ro["z_u"]
    d_z_u = d_base @ params.item_embed
    grads["item_embed"] += d_base.T @ z_u
    d_z_u += np.einsum("bm,bmd->bd", d_local, e_t)
    d_e_t = d_local[:, :, None] * z_u[:, None, :]

    d_user = _readout_backward(params, ro, batch, d_z_u, d_e_t, grads)

    d_e = d_e_t
    for step in reversed(cache["steps"]):
        d_e, d_u = _propagate_backward(params, step, batch.a_out, batch.a_in,
                                       clip_norm, d_e, grads)
        d_user += d_u

    # initial embeddings: table lookup for items, feature projection for the user
    np.add.at(grads["item_embed"], batch.nodes[sel], d_e[sel])
    grads["user_proj"] += batch.user_features.T @ d_user

    return loss, grads, {"probs": probs, "losses": losses}


def score_batch(params: ModelParams, batch: Batch, clip_norm, steps, sigma=0.0, rng=None):
    scores, _ = forward_batch(params, batch, clip_norm, steps, sigma, rng)
    return scores


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, params: ModelParams, privacy: dict, user_features=None,
                    extra: dict | None = None):
    """Versioned npz checkpoint: every tensor with its shape header plus the
    privacy record (and the perturbed user-feature matrix the model was
    trained with, so evaluation reuses the same release)."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "privacy": privacy,
        "dims": params.dims.__dict__,
    }
    if extra:
        meta.update(extra)
    arrays = dict(params.as_dict())
    if user_features is not None:
        arrays["user_features"] = np.asarray(user_features)
    np.savez(path, meta=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path):
    """Returns (params, meta dict, user_features or None)."""
    with np.load(path) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version: {meta.get('version')!r}")
        names = {f.name for f in fields(ModelParams)}
        params = ModelParams(**{k: data[k] for k in names})
        feats = data["user_features"] if "user_features" in data else None
    return params, meta, feats
