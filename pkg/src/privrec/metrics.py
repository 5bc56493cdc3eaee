"""Top-K ranking metrics: Recall@K and MRR@K."""

from __future__ import annotations

import numpy as np


def rank_items(scores) -> np.ndarray:
    """Item indices in descending score order; ties broken by ascending index."""
    scores = np.asarray(scores, dtype=float)
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores contain non-finite values")
    # stable sort of the negated scores keeps ascending index order on ties
    return np.argsort(-scores, kind="stable")


def _rank_of(ranked, label, k):
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    top = np.asarray(ranked)[:k]
    hit = np.nonzero(top == label)[0]
    return int(hit[0]) + 1 if hit.size else 0


def recall_at_k(ranked, label, k) -> int:
    """1 if the label appears in the first k ranked items, else 0."""
    return 1 if _rank_of(ranked, label, k) else 0


def mrr_at_k(ranked, label, k) -> float:
    """Reciprocal rank of the label if ranked within the top k, else 0."""
    rank = _rank_of(ranked, label, k)
    return 1.0 / rank if rank else 0.0
