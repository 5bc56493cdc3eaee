"""Interaction logs, core filtering, chronological splits, and behavior graphs.

Each user's interactions form a chronological sequence.  Sequences are
turned into (prefix, next-item) training pairs and, per pair, into a small
directed weighted graph whose edge weights count consecutive transitions.
The in-adjacency is the transpose of the out-adjacency; counts are kept
un-normalized so that deleting one interaction moves single matrix entries
by one rather than rescaling whole rows.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np


@dataclass
class InteractionLog:
    """Flat list of (user_id, item_id, timestamp) records."""

    records: list

    def __len__(self):
        return len(self.records)

    def by_user(self) -> dict:
        """Per-user item sequences, sorted by timestamp (stable on ties)."""
        grouped = {}
        for user, item, ts in self.records:
            grouped.setdefault(user, []).append((ts, item))
        out = {}
        for user, rows in grouped.items():
            rows.sort(key=lambda r: r[0])  # sort() is stable: ties keep input order
            out[user] = [item for _, item in rows]
        return out


def read_interactions(path, delimiter: str = ",") -> InteractionLog:
    """Read ``user_id,item_id,timestamp`` rows (one header line)."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"interaction file {path} is empty")
        for row in reader:
            if not row:
                continue
            if len(row) < 3:
                raise ValueError(f"malformed interaction row in {path}: {row!r}")
            records.append((row[0].strip(), row[1].strip(), int(row[2])))
    return InteractionLog(records)


def write_interactions(path, log: InteractionLog, delimiter: str = ","):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(["user_id", "item_id", "timestamp"])
        writer.writerows(log.records)


def ten_core_filter(log: InteractionLog, min_count: int = 10) -> InteractionLog:
    """Iteratively drop users and items with fewer than ``min_count`` interactions.

    Repeats until a fixed point: the maximal subset where every remaining
    user and item has at least ``min_count`` interactions.
    """
    records = list(log.records)
    while True:
        user_counts = Counter(r[0] for r in records)
        item_counts = Counter(r[1] for r in records)
        kept = [
            r
            for r in records
            if user_counts[r[0]] >= min_count and item_counts[r[1]] >= min_count
        ]
        if len(kept) == len(records):
            break
        records = kept
    if not records and len(log.records) > 0:
        warnings.warn(f"{min_count}-core filtering removed every interaction", stacklevel=2)
    return InteractionLog(records)


@dataclass
class SplitSample:
    """One labeled prefix: predict ``label`` from the item sequence ``items``."""

    user: object
    items: tuple
    label: object


@dataclass
class SplitDataset:
    train: list
    valid: list
    test: list
    item_vocabulary: dict = field(default_factory=dict)  # item id -> dense index
    user_vocabulary: dict = field(default_factory=dict)

    @property
    def n_items(self):
        return len(self.item_vocabulary)

    @property
    def n_users(self):
        return len(self.user_vocabulary)


def chronological_split(
    log: InteractionLog,
    train_frac: float = 0.8,
    valid_frac: float = 0.1,
    max_len: int | None = None,
    seed: int = 0,
) -> SplitDataset:
    """Per-user chronological split into prefix/label pairs.

    The first ceil(train_frac * n_u) interactions of each user form the
    training pool; the remainder is the test pool.  Training pairs are all
    prefixes ({v1..vj}, v_{j+1}) inside the pool; each test label keeps its
    full history (training pool included) as the prefix.  Validation is a
    seeded random ``valid_frac`` of the training pairs, held out from
    training.  Prefixes longer than ``max_len`` keep the most recent items.

    Item/user indices are assigned by first appearance in the filtered
    data, so every prefix item and label is in the vocabulary.
    """
    if not (0.0 < train_frac < 1.0):
        raise ValueError(f"train_frac must be in (0, 1), got {train_frac}")
    if not (0.0 <= valid_frac < 1.0):
        raise ValueError(f"valid_frac must be in [0, 1), got {valid_frac}")

    sequences = log.by_user()
    item_vocab: dict = {}
    user_vocab: dict = {}
    train_pairs: list = []
    test_pairs: list = []

    for user, seq in sequences.items():
        if user not in user_vocab:
            user_vocab[user] = len(user_vocab)
        for item in seq:
            if item not in item_vocab:
                item_vocab[item] = len(item_vocab)
        cut = math.ceil(train_frac * len(seq))
        for j in range(1, cut):
            prefix = _truncate(seq[:j], max_len)
            train_pairs.append(SplitSample(user, tuple(prefix), seq[j]))
        for j in range(cut, len(seq)):
            prefix = _truncate(seq[:j], max_len)
            test_pairs.append(SplitSample(user, tuple(prefix), seq[j]))

    rng = np.random.default_rng(seed)
    n_valid = int(round(valid_frac * len(train_pairs)))
    valid_pairs: list = []
    if n_valid > 0:
        picked = set(rng.choice(len(train_pairs), size=n_valid, replace=False).tolist())
        valid_pairs = [p for i, p in enumerate(train_pairs) if i in picked]
        train_pairs = [p for i, p in enumerate(train_pairs) if i not in picked]

    return SplitDataset(train_pairs, valid_pairs, test_pairs, item_vocab, user_vocab)


def _truncate(items, max_len):
    if max_len is not None and len(items) > max_len:
        return items[-max_len:]
    return list(items)


@dataclass
class BehaviorGraph:
    """Directed weighted graph of one behavior sequence.

    ``a_out[i, j]`` counts consecutive transitions node_i -> node_j;
    ``a_in`` is its transpose.  Nodes are the distinct items of the
    sequence in first-appearance order; ``node_indices`` carries their
    dense vocabulary indices.
    """

    node_ids: tuple
    node_indices: np.ndarray
    a_out: np.ndarray
    a_in: np.ndarray


def build_graph(sequence, vocab: dict) -> BehaviorGraph:
    """Build the transition-count graph of one item-id sequence."""
    if len(sequence) == 0:
        raise ValueError("cannot build a graph from an empty sequence")
    unknown = [v for v in sequence if v not in vocab]
    if unknown:
        raise ValueError(f"items not in vocabulary: {unknown[:5]!r}")

    local: dict = {}
    for item in sequence:
        if item not in local:
            local[item] = len(local)
    m = len(local)
    a_out = np.zeros((m, m), dtype=np.int64)
    for src, dst in zip(sequence[:-1], sequence[1:]):
        a_out[local[src], local[dst]] += 1
    node_ids = tuple(local)
    indices = np.array([vocab[v] for v in node_ids], dtype=np.int64)
    return BehaviorGraph(node_ids, indices, a_out, a_out.T.copy())


def save_manifest(path, dataset: SplitDataset):
    """Persist a split as structured text so runs can share identical splits."""
    payload = {
        "item_vocabulary": {str(k): v for k, v in dataset.item_vocabulary.items()},
        "user_vocabulary": {str(k): v for k, v in dataset.user_vocabulary.items()},
    }
    for name in ("train", "valid", "test"):
        payload[name] = [
            [str(s.user), [str(v) for v in s.items], str(s.label)]
            for s in getattr(dataset, name)
        ]
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_manifest(path) -> SplitDataset:
    with open(path) as fh:
        payload = json.load(fh)
    splits = {
        name: [SplitSample(u, tuple(items), label) for u, items, label in payload[name]]
        for name in ("train", "valid", "test")
    }
    return SplitDataset(
        splits["train"],
        splits["valid"],
        splits["test"],
        dict(payload["item_vocabulary"]),
        dict(payload["user_vocabulary"]),
    )
