"""End-to-end experiment harness and CLI tests on small synthetic datasets."""

import json
import math

import numpy as np
import pytest

from privrec.cli import main as cli_main
from privrec.experiment import (
    ExperimentConfig,
    read_report,
    run_experiment,
)
from privrec.features import write_feature_file
from privrec.pipeline import write_interactions
from privrec.synthetic import cycle_dataset, planted_markov_dataset


@pytest.fixture(scope="module")
def small_dataset():
    return planted_markov_dataset(40, 12, 14, seed=1)


def small_config(schema, **overrides):
    base = dict(
        feature_schema=schema.to_dict(),
        item_dim=12,
        user_dim=4,
        epsilon1=20.0,
        epsilon2_values=(5.0,),
        steps=1,
        clip_norm=0.5,
        methods=("dipsgnn",),
        seeds=(0,),
        epochs=2,
        learning_rate=0.01,
        batch_size=32,
        k_values=(5, 10),
        valid_frac=0.1,
        epoch_eval_splits=(),
    )
    base.update(overrides)
    return ExperimentConfig(**base)


class TestRunExperiment:
    def test_report_invariants(self, small_dataset):
        log, raw, schema = small_dataset
        config = small_config(schema, methods=("dipsgnn", "edgerand", "nonprivate"),
                              seeds=(0, 1))
        report = run_experiment(config, log=log, raw_features=raw, schema=schema)
        for method in config.methods:
            for seed in ("mean", 0, 1):
                for split in ("valid", "test"):
                    r5 = report.value(method, 5.0 if method != "nonprivate" else math.inf,
                                      seed, split, "recall", 5)
                    r10 = report.value(method, 5.0 if method != "nonprivate" else math.inf,
                                       seed, split, "recall", 10)
                    m10 = report.value(method, 5.0 if method != "nonprivate" else math.inf,
                                       seed, split, "mrr", 10)
                    assert 0.0 <= r5 <= r10 <= 100.0
                    assert 0.0 <= m10 <= r10
        # provenance completeness: every row carries the full parameter bundle
        for row in report.rows:
            for col in ("epsilon1", "epsilon2", "delta", "steps", "clip_norm",
                        "sigma", "seed", "epochs"):
                assert row[col] is not None and row[col] != ""

    def test_sigma_strictly_decreasing_in_budget(self, small_dataset):
        log, raw, schema = small_dataset
        config = small_config(schema, epsilon2_values=(3.0, 4.0, 5.0))
        report = run_experiment(config, log=log, raw_features=raw, schema=schema)
        sigmas = [c["sigma"] for c in report.meta["cells"]]
        assert sigmas[0] > sigmas[1] > sigmas[2] > 0

    def test_infinite_budget_means_zero_sigma(self, small_dataset):
        log, raw, schema = small_dataset
        config = small_config(schema, epsilon2_values=(math.inf,))
        report = run_experiment(config, log=log, raw_features=raw, schema=schema)
        assert report.meta["cells"][0]["sigma"] == 0.0
        assert report.value("dipsgnn", math.inf, 0, "test", "recall", 10) >= 0.0

    def test_deterministic_given_seed(self, small_dataset, tmp_path):
        log, raw, schema = small_dataset
        config = small_config(schema, methods=("dipsgnn", "edgerand"))
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            run_experiment(config, out_dir=out, log=log, raw_features=raw,
                           schema=schema)
            outs.append(out)
        assert (outs[0] / "report.csv").read_bytes() == (outs[1] / "report.csv").read_bytes()
        assert (outs[0] / "report_meta.json").read_bytes() == (
            outs[1] / "report_meta.json"
        ).read_bytes()

    def test_nonprivate_overfits_planted_cycle(self):
        log, raw, schema = cycle_dataset(20, 10, 12, seed=0)
        config = ExperimentConfig(
            feature_schema=schema.to_dict(), item_dim=16, user_dim=4,
            epsilon2_values=(math.inf,), methods=("nonprivate",), seeds=(0,),
            epochs=10, learning_rate=0.03, batch_size=32, k_values=(1, 5),
            valid_frac=0.0, clip_norm=1.0, epoch_eval_splits=(),
            report_splits=("train", "test"),
        )
        report = run_experiment(config, log=log, raw_features=raw, schema=schema)
        assert report.value("nonprivate", math.inf, 0, "train", "recall", 1) >= 90.0

    def test_k_exceeding_vocabulary_rejected(self, small_dataset):
        log, raw, schema = small_dataset
        config = small_config(schema, k_values=(5, 500))
        with pytest.raises(ValueError, match="vocabulary"):
            run_experiment(config, log=log, raw_features=raw, schema=schema)


class TestExperimentConfig:
    def test_duplicate_seeds_rejected(self):
        with pytest.raises(ValueError, match="distinct"):
            ExperimentConfig(seeds=(1, 1))

    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError, match="unknown method"):
            ExperimentConfig(methods=("magic",))

    def test_json_roundtrip_with_infinity(self, tmp_path):
        config = ExperimentConfig(epsilon2_values=(3.0, math.inf), seeds=(0, 4))
        path = tmp_path / "config.json"
        path.write_text(json.dumps(config.to_dict()))
        back = ExperimentConfig.from_file(path)
        assert back == config
        assert back.hash() == config.hash()

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValueError, match="unknown config keys"):
            ExperimentConfig.from_dict({"nope": 1})


@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    log, raw, schema = planted_markov_dataset(30, 10, 14, seed=3)
    write_interactions(root / "interactions.csv", log)
    write_feature_file(root / "features.csv", raw, [f.name for f in schema.fields])
    config = {
        "interactions": str(root / "interactions.csv"),
        "features": str(root / "features.csv"),
        "feature_schema": schema.to_dict(),
        "item_dim": 10,
        "user_dim": 4,
        "epsilon2_values": [5.0],
        "clip_norm": 0.5,
        "methods": ["dipsgnn"],
        "seeds": [0],
        "epochs": 2,
        "learning_rate": 0.01,
        "batch_size": 32,
        "k_values": [5],
        "valid_frac": 0.1,
        "epoch_eval_splits": [],
    }
    config_path = root / "config.json"
    config_path.write_text(json.dumps(config))
    return root, config_path


class TestCli:
    def test_ingest(self, cli_workspace, capsys):
        root, config = cli_workspace
        assert cli_main(["ingest", "--config", str(config),
                         "--out-dir", str(root / "ingest")]) == 0
        stats = json.loads(capsys.readouterr().out)
        assert stats["users"] == 30 and stats["items"] == 10
        assert (root / "ingest" / "splits.json").exists()
        assert (root / "ingest" / "schema.json").exists()

    def test_calibrate_prints_record(self, capsys):
        assert cli_main(["calibrate", "--epsilon2", "5", "--delta", "1e-5"]) == 0
        record = json.loads(capsys.readouterr().out)
        assert record["epsilon2"] == 5.0
        assert record["sigma"] == pytest.approx(1.054534, abs=1e-5)
        assert set(record) == {"epsilon2", "delta", "T", "C", "sigma"}

    def test_calibrate_delta_from_edges(self, capsys):
        assert cli_main(["calibrate", "--epsilon2", "5", "--num-edges", "1000"]) == 0
        record = json.loads(capsys.readouterr().out)
        assert record["delta"] == pytest.approx(0.0009)

    def test_train_then_evaluate(self, cli_workspace, capsys):
        root, config = cli_workspace
        out = root / "train"
        assert cli_main(["train", "--config", str(config), "--seed", "0",
                         "--out-dir", str(out)]) == 0
        capsys.readouterr()
        assert (out / "model.npz").exists()
        assert (out / "train_log.jsonl").exists()
        assert cli_main(["evaluate", "--checkpoint", str(out / "model.npz"),
                         "--manifest", str(out / "splits.json"), "--split", "test",
                         "--seed", "1", "--out-dir", str(out)]) == 0
        result = json.loads(capsys.readouterr().out)
        assert "recall@5" in result and 0.0 <= result["recall@5"] <= 100.0
        assert (out / "eval_test.json").exists()

    def test_sweep_reports_are_bit_identical(self, cli_workspace, capsys):
        root, config = cli_workspace
        for name in ("s1", "s2"):
            assert cli_main(["sweep", "--config", str(config), "--seed", "0",
                             "--out-dir", str(root / name)]) == 0
            capsys.readouterr()
        a = (root / "s1" / "report.csv").read_bytes()
        b = (root / "s2" / "report.csv").read_bytes()
        assert a == b
        report = read_report(root / "s1" / "report.csv")
        assert any(r["seed"] == "mean" for r in report.rows)
        assert any(r["seed"] == "std" for r in report.rows)
