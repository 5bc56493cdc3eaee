"""Training loop: sample materialization, padded batching, Adam, EdgeRand.

Subsequence samples are materialized once (graph + positions + label),
grouped into mini-batches of similar node count to limit padding waste, and
trained with a hand-rolled Adam optimizer.  Gradients come from
:func:`privrec.gnn.loss_and_grads`; aggregation noise is drawn fresh at
every propagation step of every forward pass.

The EdgeRand baseline instead perturbs each behavior graph once (both
adjacency matrices, independent Gaussian noise) and then trains with
noise-free aggregation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .metrics import mrr_at_k, rank_items, recall_at_k
from .gnn import (
    LOSS_BCE_FULL,
    Batch,
    ModelDims,
    ModelParams,
    _softmax_loss,
    init_params,
    loss_and_grads,
    score_batch,
    zero_grads,
)
from .pipeline import build_graph


@dataclass
class GraphSample:
    """One subsequence ready for the model: local graph + positions + label."""

    user_index: int
    nodes: np.ndarray  # (m,) global item indices
    a_out: np.ndarray  # (m, m)
    a_in: np.ndarray  # (m, m)
    positions: np.ndarray  # (L,) local node index per sequence position
    label: int


def materialize_samples(split_samples, item_vocab, user_vocab) -> list:
    """Build GraphSamples for every (user, prefix, label) record."""
    out = []
    for s in split_samples:
        graph = build_graph(list(s.items), item_vocab)
        local = {v: i for i, v in enumerate(graph.node_ids)}
        positions = np.array([local[v] for v in s.items], dtype=np.int64)
        out.append(
            GraphSample(
                user_index=user_vocab[s.user],
                nodes=graph.node_indices,
                a_out=graph.a_out.astype(float),
                a_in=graph.a_in.astype(float),
                positions=positions,
                label=item_vocab[s.label],
            )
        )
    return out


def apply_edgerand(samples, sigma, rng) -> list:
    """Perturb every graph once: independent Gaussian noise on both matrices.

    The transpose relation between the matrices is intentionally broken by
    the independent draws.  sigma = 0 is the identity transform.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return list(samples)
    out = []
    for s in samples:
        shape = s.a_out.shape
        out.append(
            replace(
                s,
                a_out=s.a_out + sigma * rng.standard_normal(shape),
                a_in=s.a_in + sigma * rng.standard_normal(shape),
            )
        )
    return out


def make_batches(samples, user_features, batch_size, rng=None) -> list:
    """Group samples into padded batches of similar node count.

    With an rng the sample order is shuffled first; the grouping sort is
    stable, so batch composition stays random within equal sizes.
    """
    order = np.arange(len(samples))
    if rng is not None:
        rng.shuffle(order)
    order = order[np.argsort([samples[i].nodes.size for i in order], kind="stable")]

    batches = []
    for start in range(0, len(order), batch_size):
        chunk = [samples[i] for i in order[start : start + batch_size]]
        batches.append(_pad_batch(chunk, user_features))
    return batches


def _pad_batch(chunk, user_features) -> Batch:
    b = len(chunk)
    m = max(s.nodes.size for s in chunk)
    l = max(s.positions.size for s in chunk)
    a_out = np.zeros((b, m, m))
    a_in = np.zeros((b, m, m))
    nodes = np.zeros((b, m), dtype=np.int64)
    node_mask = np.zeros((b, m), dtype=bool)
    positions = np.zeros((b, l), dtype=np.int64)
    pos_mask = np.zeros((b, l), dtype=bool)
    last_index = np.zeros(b, dtype=np.int64)
    labels = np.zeros(b, dtype=np.int64)
    feats = np.zeros((b, user_features.shape[1]))
    for i, s in enumerate(chunk):
        mi, li = s.nodes.size, s.positions.size
        a_out[i, :mi, :mi] = s.a_out
        a_in[i, :mi, :mi] = s.a_in
        nodes[i, :mi] = s.nodes
        node_mask[i, :mi] = True
        positions[i, :li] = s.positions
        pos_mask[i, :li] = True
        last_index[i] = s.positions[-1]
        labels[i] = s.label
        feats[i] = user_features[s.user_index]
    return Batch(a_out, a_in, nodes, node_mask, positions, pos_mask, last_index,
                 feats, labels)


@dataclass
class TrainConfig:
    epochs: int = 10
    learning_rate: float = 1e-3
    batch_size: int = 64
    loss: str = LOSS_BCE_FULL
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    k_values: tuple = (5, 10, 20)
    epoch_eval_splits: tuple = ("train", "valid")
    exclude_seen: bool = False


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ModelParams) -> "AdamState":
        zeros = zero_grads(params)
        return cls(0, zeros, {k: v.copy() for k, v in zeros.items()})


def adam_update(params: ModelParams, grads: dict, state: AdamState, cfg: TrainConfig):
    state.step += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    correct1 = 1.0 - b1**state.step
    correct2 = 1.0 - b2**state.step
    for name, g in grads.items():
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / correct1
        v_hat = state.v[name] / correct2
        getattr(params, name)[...] -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


@dataclass
class TrainResult:
    params: ModelParams
    log: list  # one record per (epoch, split)
    forward_passes: int  # sample-level forward passes with sigma > 0


def evaluate_samples(params, samples, user_features, clip_norm, steps, sigma, rng,
                     k_values=(5, 10, 20), batch_size=128, exclude_seen=False,
                     loss_kind=LOSS_BCE_FULL):
    """Recall@K / MRR@K (percent) plus mean loss over a sample list."""
    if not samples:
        return {}
    hits = {k: 0 for k in k_values}
    rr = {k: 0.0 for k in k_values}
    total_loss = 0.0
    n = 0
    for batch in make_batches(samples, user_features, batch_size):
        scores = score_batch(params, batch, clip_norm, steps, sigma, rng)
        if exclude_seen:
            rows = np.broadcast_to(np.arange(batch.size)[:, None], batch.nodes.shape)
            sel = batch.node_mask
            scores[rows[sel], batch.nodes[sel]] = -1e300
        _, losses, _ = _softmax_loss(scores, batch.labels, loss_kind)
        total_loss += float(losses.sum())
        for i in range(batch.size):
            ranked = rank_items(scores[i])
            for k in k_values:
                hits[k] += recall_at_k(ranked, batch.labels[i], k)
                rr[k] += mrr_at_k(ranked, batch.labels[i], k)
        n += batch.size
    metrics = {"loss": total_loss / n}
    for k in k_values:
        metrics[f"recall@{k}"] = 100.0 * hits[k] / n
        metrics[f"mrr@{k}"] = 100.0 * rr[k] / n
    return metrics


def train_model(train_samples, valid_samples, user_features, dims: ModelDims,
                clip_norm, steps, sigma, cfg: TrainConfig, rng) -> TrainResult:
    """Train the model; returns final parameters and the per-epoch log.

    Raises RuntimeError with a diagnostic if the loss becomes non-finite.
    """
    if not train_samples:
        raise ValueError("empty training set")
    seeds = rng.integers(0, 2**63 - 1, size=3)
    init_rng = np.random.default_rng(seeds[0])
    train_rng = np.random.default_rng(seeds[1])
    eval_rng = np.random.default_rng(seeds[2])

    params = init_params(dims, init_rng)
    state = AdamState.for_params(params)
    log = []
    noisy_passes = 0

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        batches = make_batches(train_samples, user_features, cfg.batch_size, train_rng)
        epoch_loss = 0.0
        n_seen = 0
        for batch in batches:
            loss, grads, _ = loss_and_grads(params, batch, clip_norm, steps, sigma,
                                            train_rng, loss_kind=cfg.loss)
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"training diverged: non-finite loss at epoch {epoch} "
                    f"(batch of {batch.size})"
                )
            adam_update(params, grads, state, cfg)
            epoch_loss += loss * batch.size
            n_seen += batch.size
            if sigma > 0:
                noisy_passes += batch.size
        wall = time.perf_counter() - t0

        splits = {"train": train_samples, "valid": valid_samples}
        for split in ("train", "valid"):
            record = {"epoch": epoch, "split": split, "loss": None, "wall_time": wall}
            for k in cfg.k_values:
                record[f"recall@{k}"] = None
                record[f"mrr@{k}"] = None
            if split == "train":
                record["loss"] = epoch_loss / n_seen
            if split in cfg.epoch_eval_splits and splits[split]:
                metrics = evaluate_samples(
                    params, splits[split], user_features, clip_norm, steps, sigma,
                    eval_rng, cfg.k_values, cfg.batch_size, cfg.exclude_seen, cfg.loss,
                )
                record.update(metrics)
                if sigma > 0:
                    noisy_passes += len(splits[split])
            if split == "valid" and not splits[split]:
                continue
            log.append(record)

    return TrainResult(params, log, noisy_passes)
