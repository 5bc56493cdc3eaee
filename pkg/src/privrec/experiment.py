"""Experiment orchestration: methods x privacy budgets x seeds.

``run_experiment`` ingests a dataset, builds one fixed chronological split,
then trains and evaluates every (method, epsilon2, seed) cell.  Methods:

* ``dipsgnn``     — perturbed user features + Gaussian noise inside the
                    aggregation step, calibrated for (epsilon2, delta) over
                    the configured number of propagation steps.
* ``edgerand``    — perturbed user features + Gaussian noise added once to
                    each behavior graph's adjacency matrices (sensitivity 1,
                    single release), noise-free aggregation afterwards.
* ``nonprivate``  — raw features, no noise anywhere.

Reports are plain delimited text with one row per (method, epsilon1,
epsilon2, seed, split, metric, K) plus mean/std aggregate rows, and every
row carries the full privacy provenance.  Identical config + seeds produce
bit-identical report files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .accountant import calibrate_sigma, delta_default
from .features import FeatureSchema, FeatureVector, encode_table, read_feature_file
from .gnn import LOSS_BCE_FULL, ModelDims
from .ldp import perturb_features
from .pipeline import chronological_split, read_interactions, ten_core_filter
from .training import (
    TrainConfig,
    apply_edgerand,
    evaluate_samples,
    materialize_samples,
    train_model,
)

METHODS = ("dipsgnn", "edgerand", "nonprivate")

REPORT_COLUMNS = (
    "method", "epsilon1", "epsilon2", "delta", "steps", "clip_norm", "sigma",
    "seed", "epochs", "split", "metric", "k", "value",
)


@dataclass
class ExperimentConfig:
    # dataset
    interactions: str | None = None
    features: str | None = None
    delimiter: str = ","
    feature_schema: list = field(default_factory=list)
    min_interactions: int = 10
    train_frac: float = 0.8
    valid_frac: float = 0.1
    max_seq_len: int | None = None
    split_seed: int = 0
    # model
    item_dim: int = 100
    user_dim: int = 50
    # privacy
    epsilon1: float = 20.0
    epsilon2_values: tuple = (5.0,)
    delta: float | None = None  # None: derived from the training edge count
    steps: int = 1
    clip_norm: float = 1.0
    # training
    methods: tuple = ("dipsgnn",)
    seeds: tuple = (0,)
    epochs: int = 10
    learning_rate: float = 1e-3
    batch_size: int = 64
    k_values: tuple = (5, 10, 20)
    loss: str = LOSS_BCE_FULL
    exclude_seen: bool = False
    epoch_eval_splits: tuple = ("train", "valid")
    report_splits: tuple = ("valid", "test")

    def __post_init__(self):
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError(f"seeds must be distinct, got {self.seeds}")
        if any(k <= 0 for k in self.k_values):
            raise ValueError(f"k values must be positive, got {self.k_values}")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}; expected one of {METHODS}")

    def to_dict(self) -> dict:
        def enc(v):
            if isinstance(v, float) and math.isinf(v):
                return "inf"
            if isinstance(v, tuple):
                return [enc(x) for x in v]
            return v

        return {k: enc(v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        def dec(v):
            if v == "inf":
                return math.inf
            if isinstance(v, list):
                return tuple(dec(x) for x in v)
            return v

        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        decoded = {k: (v if k == "feature_schema" else dec(v)) for k, v in data.items()}
        return cls(**decoded)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()[:16]


@dataclass
class EvalReport:
    rows: list
    meta: dict

    def value(self, method, epsilon2, seed, split, metric, k):
        """Look up one metric value; ``seed`` may be an int, 'mean' or 'std'."""
        for row in self.rows:
            if (
                row["method"] == method
                and _same_eps(row["epsilon2"], epsilon2)
                and str(row["seed"]) == str(seed)
                and row["split"] == split
                and row["metric"] == metric
                and int(row["k"]) == int(k)
            ):
                return float(row["value"])
        raise KeyError(f"no row for {(method, epsilon2, seed, split, metric, k)}")


def _same_eps(a, b):
    fa, fb = float(a), float(b)
    if math.isinf(fa) or math.isinf(fb):
        return math.isinf(fa) and math.isinf(fb)
    return math.isclose(fa, fb)


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isinf(value):
            return "inf"
        return repr(value)
    return str(value)


def perturb_user_features(schema: FeatureSchema, encoded: np.ndarray, epsilon1,
                          rng) -> np.ndarray:
    """Perturb every user's encoded row once under the feature budget."""
    out = np.zeros_like(encoded)
    for i in range(encoded.shape[0]):
        out[i] = perturb_features(FeatureVector(schema, encoded[i]), epsilon1, rng).values
    return out


def run_experiment(config: ExperimentConfig, out_dir=None, log=None,
                   raw_features=None, schema=None) -> EvalReport:
    """Run every (method, epsilon2, seed) cell and assemble the report."""
    if log is None:
        if config.interactions is None:
            raise ValueError("config has no interactions path and no log was passed")
        log = read_interactions(config.interactions, config.delimiter)
    if raw_features is None:
        if config.features is None:
            raise ValueError("config has no features path and no table was passed")
        raw_features = read_feature_file(config.features, config.delimiter)
    if schema is None:
        schema = FeatureSchema.from_dict(config.feature_schema)

    filtered = ten_core_filter(log, config.min_interactions)
    dataset = chronological_split(
        filtered, config.train_frac, config.valid_frac, config.max_seq_len,
        config.split_seed,
    )
    n_items = dataset.n_items
    if n_items == 0:
        raise ValueError("dataset is empty after filtering")
    if any(k > n_items for k in config.k_values):
        raise ValueError(f"k values {config.k_values} exceed vocabulary size {n_items}")

    users = list(dataset.user_vocabulary)
    schema = schema.fit_ranges(raw_features, users)
    encoded = encode_table(schema, raw_features, users)

    sequences = filtered.by_user()
    total_edges = sum(max(0, math.ceil(config.train_frac * len(s)) - 1)
                      for s in sequences.values())
    delta = config.delta if config.delta is not None else delta_default(max(1, total_edges))

    splits = {
        "train": materialize_samples(dataset.train, dataset.item_vocabulary,
                                     dataset.user_vocabulary),
        "valid": materialize_samples(dataset.valid, dataset.item_vocabulary,
                                     dataset.user_vocabulary),
        "test": materialize_samples(dataset.test, dataset.item_vocabulary,
                                    dataset.user_vocabulary),
    }
    dims = ModelDims(n_items, config.item_dim, config.user_dim, schema.width)
    train_cfg = TrainConfig(
        epochs=config.epochs,
        learning_rate=config.learning_rate,
        batch_size=config.batch_size,
        loss=config.loss,
        k_values=config.k_values,
        epoch_eval_splits=config.epoch_eval_splits,
        exclude_seen=config.exclude_seen,
    )

    rows: list = []
    cells: list = []
    for method in config.methods:
        for eps2 in config.epsilon2_values:
            for seed in config.seeds:
                cell = _run_cell(config, method, eps2, seed, delta, splits, encoded,
                                 schema, dims, train_cfg, out_dir)
                rows.extend(cell.pop("rows"))
                cells.append(cell)

    rows.extend(_aggregate_rows(rows, config))
    meta = {
        "config": config.to_dict(),
        "config_hash": config.hash(),
        "delta": delta,
        "n_items": n_items,
        "n_users": len(users),
        "train_edges": total_edges,
        "samples": {k: len(v) for k, v in splits.items()},
        "cells": cells,
    }
    report = EvalReport(rows, meta)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_report(os.path.join(out_dir, "report.csv"), report)
        with open(os.path.join(out_dir, "report_meta.json"), "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
    return report


def _run_cell(config, method, eps2, seed, delta, splits, encoded, schema, dims,
              train_cfg, out_dir):
    rng = np.random.default_rng(seed)
    stream_seeds = rng.integers(0, 2**63 - 1, size=4)
    feature_rng = np.random.default_rng(stream_seeds[0])
    graph_rng = np.random.default_rng(stream_seeds[1])
    train_rng = np.random.default_rng(stream_seeds[2])
    eval_rng = np.random.default_rng(stream_seeds[3])

    # privacy: aggregation noise for dipsgnn, one-shot graph noise for edgerand
    agg_sigma = 0.0
    mechanism_sigma = 0.0
    if method == "dipsgnn":
        agg_sigma = 0.0 if math.isinf(eps2) else calibrate_sigma(
            eps2, delta, config.steps, config.clip_norm)
        mechanism_sigma = agg_sigma
    elif method == "edgerand":
        mechanism_sigma = 0.0 if math.isinf(eps2) else calibrate_sigma(eps2, delta, 1, 1.0)

    if method == "nonprivate" or math.isinf(config.epsilon1):
        features = encoded
    else:
        features = perturb_user_features(schema, encoded, config.epsilon1, feature_rng)

    cell_splits = splits
    if method == "edgerand" and mechanism_sigma > 0:
        cell_splits = {name: apply_edgerand(samples, mechanism_sigma, graph_rng)
                       for name, samples in splits.items()}

    result = train_model(
        cell_splits["train"], cell_splits["valid"], features, dims,
        config.clip_norm, config.steps, agg_sigma, train_cfg, train_rng,
    )

    eval_passes = 0
    rows = []
    base = {
        "method": method,
        "epsilon1": config.epsilon1 if method != "nonprivate" else math.inf,
        "epsilon2": eps2 if method != "nonprivate" else math.inf,
        "delta": delta,
        "steps": config.steps,
        "clip_norm": config.clip_norm,
        "sigma": mechanism_sigma,
        "seed": seed,
        "epochs": config.epochs,
    }
    for split in config.report_splits:
        samples = cell_splits[split]
        if not samples:
            continue
        metrics = evaluate_samples(
            result.params, samples, features, config.clip_norm, config.steps,
            agg_sigma, eval_rng, config.k_values, config.batch_size,
            config.exclude_seen, config.loss,
        )
        if agg_sigma > 0:
            eval_passes += len(samples)
        for k in config.k_values:
            for metric in ("recall", "mrr"):
                rows.append({**base, "split": split, "metric": metric, "k": k,
                             "value": metrics[f"{metric}@{k}"]})

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        tag = f"{method}_eps2-{_fmt(float(eps2))}_seed{seed}"
        with open(os.path.join(out_dir, f"train_log_{tag}.jsonl"), "w") as fh:
            for record in result.log:
                fh.write(json.dumps(record) + "\n")

    return {
        "method": method,
        "epsilon2": _fmt(float(eps2)),
        "seed": int(seed),
        "sigma": mechanism_sigma,
        "noisy_forward_passes": result.forward_passes + eval_passes,
        "rows": rows,
    }


def _aggregate_rows(rows, config):
    groups: dict = {}
    for row in rows:
        key = (row["method"], _fmt(float(row["epsilon2"])), row["split"],
               row["metric"], row["k"])
        groups.setdefault(key, []).append(row)
    out = []
    for key, members in groups.items():
        values = np.array([m["value"] for m in members], dtype=float)
        for stat, value in (("mean", values.mean()), ("std", values.std())):
            out.append({**members[0], "seed": stat, "value": float(value)})
    return out


def write_report(path, report: EvalReport):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for row in report.rows:
            writer.writerow([_fmt(row[c]) for c in REPORT_COLUMNS])


def read_report(path) -> EvalReport:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    return EvalReport(rows, {})
