"""Command line interface: ingest, calibrate, train, evaluate, sweep."""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from .accountant import PrivacySpec, calibrate_sigma, delta_default
from .experiment import (
    ExperimentConfig,
    perturb_user_features,
    run_experiment,
)
from .features import FeatureSchema, encode_table, read_feature_file, schema_to_json
from .gnn import ModelDims, load_checkpoint, save_checkpoint
from .pipeline import (
    chronological_split,
    load_manifest,
    read_interactions,
    save_manifest,
    ten_core_filter,
)
from .training import TrainConfig, apply_edgerand, evaluate_samples, materialize_samples, train_model


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="privrec",
        description="Differentially private sequential recommendation experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="filter, split and persist a dataset")
    p_ingest.add_argument("--config", required=True)
    p_ingest.add_argument("--out-dir", required=True)

    p_cal = sub.add_parser("calibrate", help="calibrate the aggregation noise scale")
    p_cal.add_argument("--epsilon2", type=float, required=True)
    p_cal.add_argument("--delta", type=float, default=None)
    p_cal.add_argument("--num-edges", type=int, default=None,
                       help="derive delta as 0.9/num_edges when --delta is not given")
    p_cal.add_argument("--steps", type=int, default=1)
    p_cal.add_argument("--clip-norm", type=float, default=1.0)
    p_cal.add_argument("--epsilon1", type=float, default=20.0)

    p_train = sub.add_parser("train", help="train one method on one seed")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--method", default=None)
    p_train.add_argument("--seed", type=int, required=True)
    p_train.add_argument("--out-dir", required=True)

    p_eval = sub.add_parser("evaluate", help="evaluate a checkpoint on a split")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p_eval.add_argument("--seed", type=int, required=True)
    p_eval.add_argument("--out-dir", required=True)

    p_sweep = sub.add_parser("sweep", help="run every (method, budget, seed) cell")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--seed", type=int, required=True,
                         help="base seed; used when the config lists no seeds")
    p_sweep.add_argument("--out-dir", required=True)

    args = parser.parse_args(argv)
    return {
        "ingest": _cmd_ingest,
        "calibrate": _cmd_calibrate,
        "train": _cmd_train,
        "evaluate": _cmd_evaluate,
        "sweep": _cmd_sweep,
    }[args.command](args)


def _cmd_ingest(args) -> int:
    config = ExperimentConfig.from_file(args.config)
    log = read_interactions(config.interactions, config.delimiter)
    filtered = ten_core_filter(log, config.min_interactions)
    dataset = chronological_split(
        filtered, config.train_frac, config.valid_frac, config.max_seq_len,
        config.split_seed,
    )
    raw = read_feature_file(config.features, config.delimiter)
    schema = FeatureSchema.from_dict(config.feature_schema)
    schema = schema.fit_ranges(raw, list(dataset.user_vocabulary))

    os.makedirs(args.out_dir, exist_ok=True)
    save_manifest(os.path.join(args.out_dir, "splits.json"), dataset)
    with open(os.path.join(args.out_dir, "schema.json"), "w") as fh:
        fh.write(schema_to_json(schema))
    print(json.dumps({
        "interactions": len(filtered),
        "users": dataset.n_users,
        "items": dataset.n_items,
        "train_pairs": len(dataset.train),
        "valid_pairs": len(dataset.valid),
        "test_pairs": len(dataset.test),
    }))
    return 0


def _cmd_calibrate(args) -> int:
    delta = args.delta
    if delta is None:
        if args.num_edges is None:
            raise SystemExit("calibrate needs --delta or --num-edges")
        delta = delta_default(args.num_edges)
    sigma = calibrate_sigma(args.epsilon2, delta, args.steps, args.clip_norm)
    spec = PrivacySpec(args.epsilon1, args.epsilon2, delta, args.steps,
                       args.clip_norm, sigma)
    print(json.dumps({"epsilon2": spec.epsilon2, "delta": spec.delta,
                      "T": spec.steps_T, "C": spec.embed_norm_C,
                      "sigma": spec.sigma}))
    return 0


def _prepare(config):
    log = read_interactions(config.interactions, config.delimiter)
    filtered = ten_core_filter(log, config.min_interactions)
    dataset = chronological_split(
        filtered, config.train_frac, config.valid_frac, config.max_seq_len,
        config.split_seed,
    )
    raw = read_feature_file(config.features, config.delimiter)
    schema = FeatureSchema.from_dict(config.feature_schema)
    schema = schema.fit_ranges(raw, list(dataset.user_vocabulary))
    encoded = encode_table(schema, raw, list(dataset.user_vocabulary))
    sequences = filtered.by_user()
    edges = sum(max(0, math.ceil(config.train_frac * len(s)) - 1)
                for s in sequences.values())
    delta = config.delta if config.delta is not None else delta_default(max(1, edges))
    return dataset, schema, encoded, delta


def _cmd_train(args) -> int:
    config = ExperimentConfig.from_file(args.config)
    method = args.method or config.methods[0]
    eps2 = config.epsilon2_values[0]
    dataset, schema, encoded, delta = _prepare(config)

    rng = np.random.default_rng(args.seed)
    seeds = rng.integers(0, 2**63 - 1, size=4)
    feature_rng = np.random.default_rng(seeds[0])
    graph_rng = np.random.default_rng(seeds[1])
    train_rng = np.random.default_rng(seeds[2])

    agg_sigma = 0.0
    mech_sigma = 0.0
    if method == "dipsgnn" and not math.isinf(eps2):
        agg_sigma = mech_sigma = calibrate_sigma(eps2, delta, config.steps, config.clip_norm)
    elif method == "edgerand" and not math.isinf(eps2):
        mech_sigma = calibrate_sigma(eps2, delta, 1, 1.0)

    if method == "nonprivate" or math.isinf(config.epsilon1):
        features = encoded
    else:
        features = perturb_user_features(schema, encoded, config.epsilon1, feature_rng)

    train = materialize_samples(dataset.train, dataset.item_vocabulary,
                                dataset.user_vocabulary)
    valid = materialize_samples(dataset.valid, dataset.item_vocabulary,
                                dataset.user_vocabulary)
    if method == "edgerand" and mech_sigma > 0:
        train = apply_edgerand(train, mech_sigma, graph_rng)
        valid = apply_edgerand(valid, mech_sigma, graph_rng)

    dims = ModelDims(dataset.n_items, config.item_dim, config.user_dim, schema.width)
    train_cfg = TrainConfig(
        epochs=config.epochs, learning_rate=config.learning_rate,
        batch_size=config.batch_size, loss=config.loss, k_values=config.k_values,
        epoch_eval_splits=config.epoch_eval_splits, exclude_seen=config.exclude_seen,
    )
    result = train_model(train, valid, features, dims, config.clip_norm,
                         config.steps, agg_sigma, train_cfg, train_rng)

    os.makedirs(args.out_dir, exist_ok=True)
    privacy = {
        "epsilon1": config.epsilon1, "epsilon2": "inf" if math.isinf(eps2) else eps2,
        "delta": delta, "steps_T": config.steps, "embed_norm_C": config.clip_norm,
        "sigma": mech_sigma,
    }
    extra = {"method": method, "seed": args.seed, "agg_sigma": agg_sigma,
             "loss": config.loss, "k_values": list(config.k_values),
             "noisy_forward_passes": result.forward_passes}
    save_checkpoint(os.path.join(args.out_dir, "model.npz"), result.params,
                    privacy, features, extra)
    save_manifest(os.path.join(args.out_dir, "splits.json"), dataset)
    with open(os.path.join(args.out_dir, "train_log.jsonl"), "w") as fh:
        for record in result.log:
            fh.write(json.dumps(record) + "\n")
    last = [r for r in result.log if r["epoch"] == config.epochs]
    print(json.dumps({"method": method, "seed": args.seed, "sigma": mech_sigma,
                      "final": last}))
    return 0


def _cmd_evaluate(args) -> int:
    params, meta, features = load_checkpoint(args.checkpoint)
    if features is None:
        raise SystemExit("checkpoint carries no user features; cannot evaluate")
    dataset = load_manifest(args.manifest)
    samples = materialize_samples(getattr(dataset, args.split),
                                  dataset.item_vocabulary, dataset.user_vocabulary)
    rng = np.random.default_rng(args.seed)
    if meta.get("method") == "edgerand" and meta["privacy"]["sigma"] > 0:
        samples = apply_edgerand(samples, meta["privacy"]["sigma"], rng)
    metrics = evaluate_samples(
        params, samples, features, meta["privacy"]["embed_norm_C"],
        meta["privacy"]["steps_T"], meta.get("agg_sigma", 0.0), rng,
        tuple(meta.get("k_values", (5, 10, 20))), loss_kind=meta.get("loss", "bce_full"),
    )
    os.makedirs(args.out_dir, exist_ok=True)
    out = {"split": args.split, "seed": args.seed, **metrics}
    with open(os.path.join(args.out_dir, f"eval_{args.split}.json"), "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
    print(json.dumps(out))
    return 0


def _cmd_sweep(args) -> int:
    config = ExperimentConfig.from_file(args.config)
    if not config.seeds:
        config = ExperimentConfig.from_dict(
            {**config.to_dict(), "seeds": [args.seed + i for i in range(5)]}
        )
    report = run_experiment(config, out_dir=args.out_dir)
    means = [r for r in report.rows if r["seed"] == "mean"]
    print(json.dumps({"report": os.path.join(args.out_dir, "report.csv"),
                      "mean_rows": len(means)}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
