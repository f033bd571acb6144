import dataclasses
import json
import os

import pandas as pd
import pytest

from fedsim import harness, model
from fedsim.errors import ConfigurationError, DivergenceError


def _metrics_lines(path):
    """The metrics CSV text with the wall_ms column cut off"""
    with open(path, encoding="utf-8") as f:
        return [line.rsplit(",", 1)[0] for line in f.read().splitlines()]


def _read_json(path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def test_config_round_trip(synth_config):
    values = json.loads(json.dumps(synth_config.to_dict()))
    assert values["hidden"] == [8]
    assert values["synth"] == {"classes": 4, "per_class": 30, "dims": 4, "separation": 6.0}
    assert harness.ExperimentConfig.from_dict(values) == synth_config


@pytest.mark.parametrize(
    "synth, expected",
    [
        (True, harness.SynthSpec()),
        (False, None),
        (None, None),
        ({"classes": 3}, harness.SynthSpec(classes=3)),
    ],
)
def test_config_from_dict_synth(synth, expected):
    assert harness.ExperimentConfig.from_dict({"synth": synth}).synth == expected


def test_config_from_dict_errors():
    with pytest.raises(ConfigurationError, match="Unknown config field"):
        harness.ExperimentConfig.from_dict({"rounds": 3, "colour": "red"})

    with pytest.raises(ConfigurationError, match="synth:"):
        harness.ExperimentConfig.from_dict({"synth": {"colours": 3}})

    with pytest.raises(ConfigurationError, match="synth:"):
        harness.ExperimentConfig.from_dict({"synth": "blobs"})


def test_config_with_overrides(synth_config):
    assert synth_config.with_overrides(rounds=None, mu=None) is synth_config

    overridden = synth_config.with_overrides(rounds=9, strategy="scaffold", synth=True)
    assert overridden.rounds == 9
    assert overridden.strategy == "scaffold"
    assert overridden.synth == harness.SynthSpec()
    assert overridden.epochs == synth_config.epochs


def test_config_defaults(settings):
    cfg = harness.ExperimentConfig()
    assert (cfg.rounds, cfg.epochs, cfg.lr0, cfg.decay, cfg.decay_interval) == (
        100,
        10,
        0.01,
        0.8,
        10,
    )
    assert cfg.plan.client_count == 5
    assert harness.ExperimentConfig(partition="noniid_category").plan.client_count == 7

    settings.FEDSIM_OUTPUT_DIR = "somewhere"
    settings.FEDSIM_CHECKPOINTS = True
    assert cfg.resolved_output_dir == "somewhere"
    assert cfg.checkpoints_enabled
    assert not dataclasses.replace(cfg, checkpoints=False).checkpoints_enabled
    assert dataclasses.replace(cfg, output_dir="here").resolved_output_dir == "here"


def test_build_strategy(synth_config):
    assert synth_config.build_strategy() == harness.fl.FedAvg()
    assert dataclasses.replace(synth_config, strategy="FedProx", mu=0.1).build_strategy() == (
        harness.fl.FedProx(mu=0.1)
    )
    assert dataclasses.replace(synth_config, strategy="scaffold").build_strategy() == (
        harness.fl.Scaffold(server_lr=1.0)
    )


@pytest.mark.parametrize(
    "overrides, match",
    [
        ({"synth": None}, "data: give exactly one"),
        ({"data": "train.csv"}, "data: give exactly one"),
        ({"granularity": "attacks99"}, "granularity:"),
        ({"test_fraction": 1.0}, "test_fraction:"),
        ({"rounds": 0}, "rounds:"),
        ({"epochs": 0}, "epochs:"),
        ({"lr0": 0.0}, "lr0:"),
        ({"decay": 1.5}, "decay:"),
        ({"decay_interval": 0}, "decay_interval:"),
        ({"batch_size": 0}, "batch_size:"),
        ({"hidden": (8, 0)}, "hidden:"),
        ({"seed": -1}, "seed:"),
        ({"mu": -0.1}, "mu: must be > 0"),
        ({"strategy": "fedprox"}, "mu: required"),
        ({"strategy": "fedsgd"}, "strategy:"),
        ({"partition": "dirichlet"}, "partition: Unknown partition mode"),
        ({"clients": 0}, "partition: client_count"),
        ({"shards_per_client": 0}, "partition: shards_per_client"),
        ({"partition": "noniid_category", "clients": None}, "partition: category"),
    ],
)
def test_config_validate(synth_config, overrides, match):
    with pytest.raises(ConfigurationError, match=match):
        dataclasses.replace(synth_config, **overrides).validate()


def test_config_validate_ok(synth_config):
    assert synth_config.validate() is synth_config


def test_load_config(config_file, synth_config, tmp_path):
    assert harness.load_config(config_file) == synth_config

    not_object = tmp_path / "list.json"
    not_object.write_text("[1, 2]")
    with pytest.raises(ConfigurationError, match="does not hold a config"):
        harness.load_config(not_object)

    broken = tmp_path / "broken.json"
    broken.write_text("{rounds: 3")
    with pytest.raises(ConfigurationError, match="not valid JSON"):
        harness.load_config(broken)

    with pytest.raises(FileNotFoundError):
        harness.load_config(tmp_path / "missing.json")


def test_load_sweep(tmp_path, synth_config):
    listed = tmp_path / "listed.json"
    listed.write_text(json.dumps([synth_config.to_dict(), {"synth": True, "rounds": 2}]))
    configs = harness.load_sweep(listed)
    assert configs == [
        synth_config,
        harness.ExperimentConfig(synth=harness.SynthSpec(), rounds=2),
    ]

    based = tmp_path / "based.json"
    based.write_text(
        json.dumps(
            {
                "base": synth_config.to_dict(),
                "runs": [{"name": "avg"}, {"name": "prox", "strategy": "fedprox", "mu": 0.1}],
            }
        )
    )
    avg, prox = harness.load_sweep(based)
    assert avg == dataclasses.replace(synth_config, name="avg")
    assert prox == dataclasses.replace(synth_config, name="prox", strategy="fedprox", mu=0.1)

    not_sweep = tmp_path / "config.json"
    not_sweep.write_text(json.dumps(synth_config.to_dict()))
    with pytest.raises(ConfigurationError, match="not a sweep file"):
        harness.load_sweep(not_sweep)


def test_mu_sweep(synth_config):
    configs = harness.mu_sweep(synth_config, [0.01, 0.4])
    assert [cfg.name for cfg in configs] == ["fedprox_mu0.01", "fedprox_mu0.4"]
    assert [cfg.mu for cfg in configs] == [0.01, 0.4]
    assert {cfg.strategy for cfg in configs} == {"fedprox"}
    assert len(harness.mu_sweep(synth_config)) == 6


def test_run_experiment_outputs(synth_config):
    metrics_path = harness.run_experiment(synth_config)
    output_dir = synth_config.output_dir
    assert metrics_path == os.path.join(output_dir, "metrics.csv")

    metrics = harness.read_metrics(metrics_path)
    assert list(metrics.columns) == list(harness.METRICS_COLUMNS)
    assert metrics["round"].tolist() == [1, 2, 3]
    assert metrics["lr"].tolist() == [0.1, 0.1, 0.1]
    assert metrics["global_accuracy"].between(0, 1).all()
    assert (metrics["global_loss"] >= 0).all()
    assert (metrics["wall_ms"] >= 0).all()

    manifest = _read_json(os.path.join(output_dir, "manifest.json"))
    assert harness.ExperimentConfig.from_dict(manifest["config"]) == synth_config
    assert manifest["mode"] == "federated"
    assert manifest["strategy"] == {"name": "fedavg"}
    assert manifest["clients"] == 3
    assert manifest["mlp"] == [4, 8, 4]
    assert manifest["dataset"]["train_rows"] + manifest["dataset"]["server_test_rows"] == 120
    assert manifest["dataset"]["dropped_rows"] == 0
    assert manifest["dataset"]["label_names"] == ["class_0", "class_1", "class_2", "class_3"]
    assert len(manifest["inputs_hash"]) == 40

    summary = pd.read_csv(os.path.join(output_dir, "partition.csv"))
    assert summary["client_id"].tolist() == [0, 1, 2]
    assert summary["n_rows"].sum() == manifest["dataset"]["train_rows"]

    final = _read_json(os.path.join(output_dir, "final_metrics.json"))
    assert set(final) == {"accuracy", "precision", "recall", "f1"}
    assert final["accuracy"] == pytest.approx(metrics["global_accuracy"].iloc[-1])

    assert not os.path.exists(os.path.join(output_dir, "checkpoints"))
    assert not os.path.exists(os.path.join(output_dir, "train.csv"))


def test_run_experiment_deterministic(synth_config, tmp_path):
    first = harness.run_experiment(synth_config)
    second = harness.run_experiment(
        dataclasses.replace(synth_config, output_dir=str(tmp_path / "again"))
    )
    assert _metrics_lines(first) == _metrics_lines(second)

    reseeded = harness.run_experiment(
        dataclasses.replace(synth_config, seed=8, output_dir=str(tmp_path / "reseeded"))
    )
    assert _metrics_lines(first) != _metrics_lines(reseeded)


def test_manifest_replays_run(synth_config, tmp_path):
    metrics_path = harness.run_experiment(synth_config)
    manifest_path = os.path.join(synth_config.output_dir, "manifest.json")
    replay = harness.load_config(manifest_path).with_overrides(
        output_dir=str(tmp_path / "replay")
    )
    assert _metrics_lines(harness.run_experiment(replay)) == _metrics_lines(metrics_path)


def test_run_experiment_checkpoints(synth_config):
    cfg = dataclasses.replace(synth_config, strategy="scaffold", checkpoints=True)
    harness.run_experiment(cfg)

    checkpoint_dir = os.path.join(cfg.output_dir, "checkpoints")
    assert sorted(os.listdir(checkpoint_dir)) == ["round_1.bin", "round_2.bin", "round_3.bin"]

    vectors = model.read_vectors(os.path.join(checkpoint_dir, "round_3.bin"))
    # Global parameters, server control, then one control per client
    param_count = model.MlpConfig((4, 8, 4)).param_count
    assert len(vectors) == 5
    assert {len(vector) for vector in vectors} == {param_count}


def test_run_experiment_dump_data(synth_config):
    harness.run_experiment(dataclasses.replace(synth_config, dump_data=True))

    train = pd.read_csv(os.path.join(synth_config.output_dir, "train.csv"))
    server_test = pd.read_csv(os.path.join(synth_config.output_dir, "server_test.csv"))
    assert len(train) + len(server_test) == 120
    assert "label" in train.columns


def test_baseline_matches_single_client_fedavg(synth_config, tmp_path):
    baseline = harness.run_centralized_baseline(
        dataclasses.replace(synth_config, strategy="scaffold", partition="label_shard")
    )
    single = harness.run_experiment(
        dataclasses.replace(synth_config, clients=1, output_dir=str(tmp_path / "single"))
    )
    assert _metrics_lines(baseline) == _metrics_lines(single)

    manifest = _read_json(os.path.join(synth_config.output_dir, "manifest.json"))
    assert manifest["mode"] == "centralized"
    assert manifest["clients"] == 1


def test_run_experiment_noniid_csv(ciciot_csv, tmp_path):
    cfg = harness.ExperimentConfig(
        data=str(ciciot_csv),
        partition="noniid_category",
        rounds=2,
        epochs=1,
        batch_size=8,
        lr0=0.05,
        hidden=(8,),
        seed=3,
        output_dir=str(tmp_path / "noniid"),
    )
    metrics = harness.read_metrics(harness.run_experiment(cfg))
    assert len(metrics) == 2

    manifest = _read_json(os.path.join(cfg.output_dir, "manifest.json"))
    assert manifest["clients"] == 7
    assert manifest["dataset"]["dropped_rows"] == 1
    assert len(manifest["dataset"]["label_names"]) == 8
    assert manifest["mlp"] == [2, 8, 8]

    summary = pd.read_csv(os.path.join(cfg.output_dir, "partition.csv"))
    assert len(summary) == 7
    assert (summary["n_rows"] > 0).all()


def test_prepare_partition(synth_config):
    clients, label_names = harness.prepare_partition(
        dataclasses.replace(synth_config, partition="label_shard", clients=4)
    )
    assert label_names == ("class_0", "class_1", "class_2", "class_3")
    held = sorted(sorted(set(client.labels.tolist())) for client in clients)
    assert held == [[0], [1], [2], [3]]
    assert not os.path.exists(synth_config.output_dir)


def test_run_experiment_divergence(synth_config):
    with pytest.raises(DivergenceError, match="round=1"):
        harness.run_experiment(dataclasses.replace(synth_config, lr0=1e300))


def test_sweep(synth_config, tmp_path):
    base = dataclasses.replace(synth_config, output_dir=None)
    configs = [
        *harness.mu_sweep(base, [0.01, 0.1]),
        dataclasses.replace(base, lr0=1e300, name="diverges"),
        dataclasses.replace(base, strategy="scaffold"),
    ]
    output_dir = tmp_path / "sweep"
    summary_path = harness.sweep(configs, str(output_dir))
    assert summary_path == os.path.join(str(output_dir), "summary.csv")

    summary = pd.read_csv(summary_path)
    assert list(summary.columns) == list(harness.SUMMARY_COLUMNS)
    assert summary["config_id"].tolist() == [
        "fedprox_mu0.01",
        "fedprox_mu0.1",
        "diverges",
        "run_003",
    ]
    assert summary["status"].tolist() == ["ok", "ok", "failed", "ok"]
    assert summary["best_accuracy"].isna().tolist() == [False, False, True, False]

    for _, row in summary[summary["status"] == "ok"].iterrows():
        metrics = harness.read_metrics(output_dir / row["config_id"] / "metrics.csv")
        assert row["best_accuracy"] == metrics["global_accuracy"].max()
        best_round = metrics["round"][metrics["global_accuracy"] == row["best_accuracy"]]
        assert row["best_round"] == best_round.iloc[0]
        assert row["final_loss"] == metrics["global_loss"].iloc[-1]


def test_sweep_empty(tmp_path):
    with pytest.raises(ConfigurationError, match="at least one config"):
        harness.sweep([], str(tmp_path))


def test_sweep_rejects_repeated_names(synth_config, tmp_path):
    base = dataclasses.replace(synth_config, output_dir=None)
    configs = [
        dataclasses.replace(base, name="avg"),
        dataclasses.replace(base, name="run_002"),
        dataclasses.replace(base, strategy="scaffold"),
        dataclasses.replace(base, name="avg", epochs=2),
    ]

    with pytest.raises(ConfigurationError, match=r"repeated: \['avg', 'run_002'\]"):
        harness.sweep(configs, str(tmp_path / "sweep"))

    assert not (tmp_path / "sweep").exists()


def _blobs_config(tmp_path, name, **overrides):
    values = {
        "synth": harness.SynthSpec(classes=8, per_class=500, dims=8, separation=6.0),
        "rounds": 30,
        "seed": 11,
        "output_dir": str(tmp_path / name),
        **overrides,
    }
    return harness.ExperimentConfig(**values)


def _final_accuracy(metrics_path):
    return harness.read_metrics(metrics_path)["global_accuracy"].iloc[-1]


def _best_accuracy(metrics_path):
    return harness.read_metrics(metrics_path)["global_accuracy"].max()


@pytest.mark.slow
def test_iid_at_least_label_shard(tmp_path):
    iid = harness.run_experiment(_blobs_config(tmp_path, "iid", clients=5))
    sharded = harness.run_experiment(
        _blobs_config(tmp_path, "sharded", partition="label_shard", clients=8)
    )
    assert _final_accuracy(iid) >= 0.90
    assert _final_accuracy(iid) >= _final_accuracy(sharded)


@pytest.mark.slow
def test_fedprox_keeps_label_shard_accuracy(tmp_path):
    sharded = {"partition": "label_shard", "clients": 8, "rounds": 50}
    fedavg = harness.run_experiment(_blobs_config(tmp_path, "fedavg", **sharded))
    fedprox = harness.run_experiment(
        _blobs_config(tmp_path, "fedprox", strategy="fedprox", mu=0.04, **sharded)
    )
    assert _best_accuracy(fedprox) >= _best_accuracy(fedavg)



@pytest.mark.slow
def test_baseline_dominates_federated(tmp_path):
    baseline = harness.run_centralized_baseline(_blobs_config(tmp_path, "baseline"))
    federated = harness.run_experiment(
        _blobs_config(tmp_path, "federated", partition="label_shard", clients=8)
    )
    assert _final_accuracy(baseline) >= 0.95
    assert _best_accuracy(baseline) >= _best_accuracy(federated)


@pytest.mark.slow
@pytest.mark.skipif(
    not os.environ.get("FEDSIM_CICIOT2023_CSV"),
    reason="FEDSIM_CICIOT2023_CSV does not point at a CICIoT2023 subsample",
)
def test_ciciot2023_subsample(tmp_path):
    dataset = {"data": os.environ["FEDSIM_CICIOT2023_CSV"], "rounds": 20, "epochs": 2}
    baseline = harness.run_centralized_baseline(
        harness.ExperimentConfig(output_dir=str(tmp_path / "baseline"), **dataset)
    )
    assert _final_accuracy(baseline) >= 0.90

    noniid = {"partition": "noniid_category", **dataset}
    fedavg = harness.run_experiment(
        harness.ExperimentConfig(output_dir=str(tmp_path / "fedavg"), **noniid)
    )
    fedavg_best = _best_accuracy(fedavg)
    for mu in (0.04, 0.4):
        fedprox = harness.run_experiment(
            harness.ExperimentConfig(
                strategy="fedprox", mu=mu, output_dir=str(tmp_path / f"mu{mu}"), **noniid
            )
        )
        assert _best_accuracy(fedprox) > fedavg_best
