"""Synthetic datasets with planted sequential structure.

Two generators:

* :func:`planted_markov_dataset` — users belong to groups, each group has
  its own random item-permutation cycle; the next item follows the group's
  cycle with probability ``fidelity`` and is uniform otherwise.  User
  features (one categorical group label, one noisy numerical group score,
  one uninformative categorical) correlate with the planted dynamics, so
  the user-feature pathway genuinely helps prediction.
* :func:`cycle_dataset` — a deterministic single cycle; small enough that a
  working model must overfit it almost perfectly.
"""

from __future__ import annotations

import numpy as np

from .features import CATEGORICAL, NUMERICAL, FeatureField, FeatureSchema
from .pipeline import InteractionLog


def planted_markov_dataset(n_users=200, n_items=50, seq_len=30, n_groups=2,
                           fidelity=0.85, seed=0):
    """Returns (InteractionLog, raw feature rows by user, fitted FeatureSchema)."""
    rng = np.random.default_rng(seed)
    cycles = [rng.permutation(n_items) for _ in range(n_groups)]
    group_names = [chr(ord("A") + g) for g in range(n_groups)]

    records = []
    raw_features = {}
    for u in range(n_users):
        user = f"u{u:04d}"
        g = int(rng.integers(n_groups))
        cur = int(rng.integers(n_items))
        for t in range(seq_len):
            records.append((user, f"i{cur:04d}", t))
            if rng.random() < fidelity:
                cur = int(cycles[g][cur])
            else:
                cur = int(rng.integers(n_items))
        score = float(np.clip(g + 0.15 * rng.standard_normal(), -0.5, n_groups - 0.5))
        raw_features[user] = [
            group_names[g],
            f"{score:.4f}",
            group_names[int(rng.integers(n_groups))],  # uninformative
        ]

    schema = FeatureSchema(
        (
            FeatureField("group", CATEGORICAL, tuple(group_names)),
            FeatureField("group_score", NUMERICAL, value_range=(-0.5, n_groups - 0.5)),
            FeatureField("decoy", CATEGORICAL, tuple(group_names)),
        )
    )
    return InteractionLog(records), raw_features, schema


def cycle_dataset(n_users=20, n_items=10, seq_len=12, seed=0):
    """Deterministic cycle: user u starts at item u mod n and always steps +1."""
    rng = np.random.default_rng(seed)
    records = []
    raw_features = {}
    for u in range(n_users):
        user = f"u{u:02d}"
        cur = u % n_items
        for t in range(seq_len):
            records.append((user, f"i{cur:02d}", t))
            cur = (cur + 1) % n_items
        raw_features[user] = ["X" if u % 2 == 0 else "Y", f"{rng.random():.4f}"]

    schema = FeatureSchema(
        (
            FeatureField("parity", CATEGORICAL, ("X", "Y")),
            FeatureField("noise", NUMERICAL, value_range=(0.0, 1.0)),
        )
    )
    return InteractionLog(records), raw_features, schema
