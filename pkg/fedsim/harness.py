"""
Experiment recipes and the runners that turn them into metrics files.

A run loads or generates data, prepares it, partitions it across clients,
trains with the configured strategy and writes everything under the run's
output directory:

- `metrics.csv`: one row per round.
- `manifest.json`: the resolved config plus dataset and input hashes.
  Passing it back as `--config` replays the run.
- `partition.csv`: rows per client and class.
- `final_metrics.json`: accuracy and macro precision/recall/F1 of the final model.
- `checkpoints/round_<t>.bin`: when checkpoints are enabled.
"""

from __future__ import annotations

import dataclasses
import json
import os
from collections import Counter
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from fedsim import categories, data, features, fl, model, partition, registry, utils
from fedsim.errors import (
    ConfigurationError,
    DivergenceError,
    InternalError,
    SchemaError,
)
from fedsim.numerics import SeededRng
from fedsim.version import __version__

LOGGER = utils.LOGGER

METRICS_COLUMNS = (
    "round",
    "lr",
    "global_accuracy",
    "global_loss",
    "mean_client_loss",
    "wall_ms",
)
SUMMARY_COLUMNS = ("config_id", "status", "best_accuracy", "best_round", "final_loss")

# Both sets of mu values the FedProx experiments were reported with
DEFAULT_MUS = (0.01, 0.02, 0.04, 0.1, 0.2, 0.4)


@dataclasses.dataclass(frozen=True)
class SynthSpec:
    """Gaussian-blob dataset used when no CSV is given"""

    classes: int = 8
    per_class: int = 500
    dims: int = 8
    separation: float = 6.0


@dataclasses.dataclass(frozen=True)
class MetricsRow:
    round: int
    lr: float
    global_accuracy: float
    global_loss: float
    mean_client_loss: float
    wall_ms: float

    @classmethod
    def from_report(cls, report: fl.RoundReport) -> MetricsRow:
        return cls(
            round=report.round,
            lr=report.lr,
            global_accuracy=float(report.global_accuracy),
            global_loss=float(report.global_loss),
            mean_client_loss=report.mean_client_loss,
            wall_ms=round(report.wall_ms, 3),
        )


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """
    Everything needed to run one experiment.

    Defaults follow the reference protocol: 100 rounds of 10 local epochs,
    SGD at lr 0.01 decayed by 0.8 every 10 rounds, 5 IID clients (7 for
    category partitioning).
    """

    data: Union[str, None] = None
    synth: Union[SynthSpec, None] = None
    label_column: Union[str, None] = None
    granularity: str = categories.CATEGORIES8
    test_fraction: float = 0.2
    partition: str = partition.IID
    clients: Union[int, None] = None
    shards_per_client: int = 1
    strategy: str = "fedavg"
    mu: Union[float, None] = None
    server_lr: float = 1.0
    rounds: int = 100
    epochs: int = 10
    lr0: float = 0.01
    decay: float = 0.8
    decay_interval: int = 10
    batch_size: int = model.DEFAULT_BATCH_SIZE
    hidden: Tuple[int, ...] = model.DEFAULT_HIDDEN
    seed: int = 0
    output_dir: Union[str, None] = None
    checkpoints: Union[bool, None] = None
    dump_data: bool = False
    name: Union[str, None] = None

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> ExperimentConfig:
        """
        Build a config from JSON values.

        Raises:
            ConfigurationError: Unknown fields or malformed values.
        """
        known = {field.name for field in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigurationError(f"Unknown config field(s): {', '.join(unknown)}")

        values = dict(values)
        synth = values.get("synth")
        if synth is True:
            values["synth"] = SynthSpec()
        elif isinstance(synth, dict):
            try:
                values["synth"] = SynthSpec(**synth)
            except TypeError as exc:
                raise ConfigurationError(f"synth: {exc}") from None
        elif synth in (False, None):
            values["synth"] = None
        elif not isinstance(synth, SynthSpec):
            raise ConfigurationError("synth: must be true or an object of blob parameters")

        if "hidden" in values:
            values["hidden"] = tuple(values["hidden"])

        return cls(**values)

    def to_dict(self) -> Dict[str, Any]:
        values = dataclasses.asdict(self)
        values["hidden"] = list(self.hidden)
        return values

    def with_overrides(self, **overrides: Any) -> ExperimentConfig:
        """Replace fields, ignoring overrides that are None"""
        overrides = {key: value for key, value in overrides.items() if value is not None}
        if overrides.get("synth") is True:
            overrides["synth"] = SynthSpec()

        return dataclasses.replace(self, **overrides) if overrides else self

    @property
    def plan(self) -> partition.PartitionPlan:
        return partition.PartitionPlan(
            mode=self.partition,
            client_count=self.clients,
            shards_per_client=self.shards_per_client,
        )

    @property
    def resolved_output_dir(self) -> str:
        return self.output_dir or features.output_dir()

    @property
    def checkpoints_enabled(self) -> bool:
        return features.checkpoints() if self.checkpoints is None else self.checkpoints

    def build_strategy(self) -> fl.Strategy:
        try:
            strategy_class = registry.get(self.strategy)
        except KeyError as exc:
            raise ConfigurationError(f"strategy: {exc.args[0]}") from None

        if strategy_class is fl.FedProx:
            if self.mu is None:
                raise ConfigurationError("mu: required for the fedprox strategy")
            return fl.FedProx(mu=self.mu)
        elif strategy_class is fl.Scaffold:
            return fl.Scaffold(server_lr=self.server_lr)
        else:
            return strategy_class()

    def validate(self) -> ExperimentConfig:
        """
        Check every field.

        Raises:
            ConfigurationError: Naming the first invalid field.
        """

        def _check(condition: bool, field: str, message: str):
            if not condition:
                raise ConfigurationError(f"{field}: {message}")

        _check(
            (self.data is None) != (self.synth is None),
            "data",
            "give exactly one of data or synth",
        )
        _check(
            self.granularity in categories.GRANULARITIES,
            "granularity",
            f"must be one of {', '.join(categories.GRANULARITIES)}",
        )
        _check(0 < self.test_fraction < 1, "test_fraction", "must be in (0, 1)")
        _check(self.rounds >= 1, "rounds", "must be >= 1")
        _check(self.epochs >= 1, "epochs", "must be >= 1")
        _check(self.lr0 > 0, "lr0", "must be > 0")
        _check(0 < self.decay <= 1, "decay", "must be in (0, 1]")
        _check(self.decay_interval >= 1, "decay_interval", "must be >= 1")
        _check(self.batch_size >= 1, "batch_size", "must be >= 1")
        _check(all(size >= 1 for size in self.hidden), "hidden", "layer widths must be >= 1")
        _check(0 <= self.seed < 2**64, "seed", "must be an unsigned 64-bit integer")
        _check(self.mu is None or self.mu > 0, "mu", "must be > 0")

        try:
            plan = self.plan
        except ConfigurationError as exc:
            raise ConfigurationError(f"partition: {exc}") from None

        _check(
            plan.mode != partition.NONIID_CATEGORY or self.data is not None,
            "partition",
            "category partitioning needs a labelled CSV, not synthetic data",
        )

        self.build_strategy()
        return self


def load_config(path: "str | os.PathLike[str]") -> ExperimentConfig:
    """
    Read a config JSON file. A run manifest is accepted too, which replays
    the run it describes.
    """
    values = _read_json(path)
    if isinstance(values, dict) and "config" in values and "fedsim_version" in values:
        values = values["config"]

    if not isinstance(values, dict):
        raise ConfigurationError(f'"{path}" does not hold a config object')

    return ExperimentConfig.from_dict(values)


def load_sweep(path: "str | os.PathLike[str]") -> List[ExperimentConfig]:
    """
    Read a sweep file: either a list of configs, or `{"base": {...}, "runs": [...]}`
    where every run overrides the base.
    """
    values = _read_json(path)
    if isinstance(values, list):
        return [ExperimentConfig.from_dict(run) for run in values]

    if isinstance(values, dict) and "runs" in values:
        base = values.get("base", {})
        return [ExperimentConfig.from_dict({**base, **run}) for run in values["runs"]]

    raise ConfigurationError(f'"{path}" is not a sweep file')


def _read_json(path: "str | os.PathLike[str]") -> Any:
    with open(path, encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f'"{path}" is not valid JSON: {exc}') from None


def mu_sweep(
    base: ExperimentConfig, mus: Sequence[float] = DEFAULT_MUS
) -> List[ExperimentConfig]:
    """FedProx configs for every mu, named after it"""
    return [
        base.with_overrides(strategy="fedprox", mu=float(mu), name=f"fedprox_mu{mu:g}")
        for mu in mus
    ]


@dataclasses.dataclass
class _Pipeline:
    """The prepared inputs of one run"""

    prepared: data.PreparedData
    mlp: model.MlpConfig
    initial_params: model.ParameterVector
    manifest: Dict[str, Any]
    rng: SeededRng


def _build_pipeline(cfg: ExperimentConfig) -> _Pipeline:
    rng = SeededRng(cfg.seed)
    if cfg.data is not None:
        dataset, dropped = data.read_csv(cfg.data, label_column=cfg.label_column)
        if dropped:
            LOGGER.warning("fedsim: Dropped %s malformed row(s) from %s.", dropped, cfg.data)

        inputs_hash = utils.git_blob_hash(cfg.data)
        prepared = data.prepare(
            dataset,
            rng.split("prepare"),
            granularity=cfg.granularity,
            test_fraction=cfg.test_fraction,
        )
    else:
        synth = cfg.synth or SynthSpec()
        dropped = 0
        dataset = data.synth_generate(
            synth.classes, synth.per_class, synth.dims, synth.separation, rng.split("synth")
        )
        inputs_hash = utils.json_hash({"synth": dataclasses.asdict(synth), "seed": cfg.seed})
        prepared = data.prepare(
            dataset,
            rng.split("prepare"),
            granularity=None,
            test_fraction=cfg.test_fraction,
        )

    mlp = model.MlpConfig.for_data(
        prepared.train.n_features, prepared.train.n_classes, hidden=cfg.hidden
    )
    manifest = {
        "fedsim_version": __version__,
        "config": cfg.to_dict(),
        "dataset": {
            "fingerprint": data.fingerprint(prepared.train),
            "server_test_fingerprint": data.fingerprint(prepared.server_test),
            "train_rows": prepared.train.n_rows,
            "server_test_rows": prepared.server_test.n_rows,
            "dropped_rows": dropped,
            "label_names": list(prepared.train.label_names),
        },
        "inputs_hash": inputs_hash,
        "mlp": list(mlp.layer_sizes),
    }
    return _Pipeline(
        prepared=prepared,
        mlp=mlp,
        initial_params=model.init_params(mlp, rng.split("init")),
        manifest=manifest,
        rng=rng,
    )


def _train_and_write(
    cfg: ExperimentConfig,
    pipeline: _Pipeline,
    client_datasets: Sequence[data.Dataset],
    strategy: fl.Strategy,
    mode: str,
) -> str:
    output_dir = utils.ensure_dir(cfg.resolved_output_dir)
    train, server_test = pipeline.prepared.train, pipeline.prepared.server_test
    partition.write_summary(
        client_datasets, train.label_names, os.path.join(output_dir, "partition.csv")
    )
    if cfg.dump_data:
        data.dump_csv(train, os.path.join(output_dir, "train.csv"), cfg.label_column)
        data.dump_csv(server_test, os.path.join(output_dir, "server_test.csv"), cfg.label_column)

    clients = fl.make_clients(
        [model.MlpObjective(pipeline.mlp, dataset) for dataset in client_datasets],
        pipeline.mlp.param_count,
    )
    server = fl.ServerState.initial(
        pipeline.initial_params, lr0=cfg.lr0, decay=cfg.decay, decay_interval=cfg.decay_interval
    )
    checkpoint_dir = os.path.join(output_dir, "checkpoints")
    final = {}

    def _on_round(state: fl.ServerState, report: fl.RoundReport) -> None:
        final["server"] = state
        if cfg.checkpoints_enabled:
            fl.save_checkpoint(state, clients, checkpoint_dir, strategy=strategy)

    LOGGER.info(
        "fedsim: Running %s %s with %s client(s) for %s round(s).",
        mode,
        strategy,
        len(clients),
        cfg.rounds,
    )
    reports = fl.run_training(
        server,
        clients,
        strategy,
        cfg.rounds,
        cfg.epochs,
        cfg.batch_size,
        pipeline.rng.split("training"),
        evaluator=fl.dataset_evaluator(pipeline.mlp, server_test),
        on_round=_on_round,
    )

    metrics_path = os.path.join(output_dir, "metrics.csv")
    write_metrics([MetricsRow.from_report(report) for report in reports], metrics_path)

    manifest = {
        **pipeline.manifest,
        "mode": mode,
        "strategy": strategy.to_dict(),
        "clients": len(clients),
    }
    _write_json(manifest, os.path.join(output_dir, "manifest.json"))
    _write_json(
        model.classification_report(
            pipeline.mlp, final["server"].global_params, server_test
        ),
        os.path.join(output_dir, "final_metrics.json"),
    )
    return metrics_path


def write_metrics(rows: Sequence[MetricsRow], path: "str | os.PathLike[str]") -> None:
    frame = pd.DataFrame([dataclasses.asdict(row) for row in rows], columns=list(METRICS_COLUMNS))
    frame["wall_ms"] = frame["wall_ms"].map(lambda value: f"{value:.3f}")
    frame.to_csv(path, index=False, float_format="%.17g")


def read_metrics(path: "str | os.PathLike[str]") -> pd.DataFrame:
    return pd.read_csv(path)


def _write_json(values: Dict[str, Any], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(values, f, indent=2, sort_keys=True)
        f.write("\n")


def run_experiment(cfg: ExperimentConfig) -> str:
    """
    Run a federated experiment end to end.

    Returns:
        The path of the written `metrics.csv`.

    Raises:
        ConfigurationError: The config is invalid.
        DivergenceError: Training produced non-finite values.
    """
    cfg.validate()
    pipeline = _build_pipeline(cfg)
    client_datasets = partition.partition(
        pipeline.prepared.train, cfg.plan, pipeline.rng.split("partition")
    )
    return _train_and_write(cfg, pipeline, client_datasets, cfg.build_strategy(), "federated")


def prepare_partition(cfg: ExperimentConfig) -> Tuple[List[data.Dataset], Tuple[str, ...]]:
    """Prepare and partition the data of a config without training"""
    cfg.validate()
    pipeline = _build_pipeline(cfg)
    train = pipeline.prepared.train
    clients = partition.partition(train, cfg.plan, pipeline.rng.split("partition"))
    return clients, tuple(train.label_names)


def run_centralized_baseline(cfg: ExperimentConfig) -> str:
    """
    Train the same MLP on the pooled training data.

    The pool is the single-client IID deal of the training set, and training
    runs `rounds` blocks of `epochs` epochs with the same learning-rate
    schedule, so the metrics line up with the federated runs round for round.
    The partition and strategy of the config are ignored.
    """
    cfg.validate()
    pipeline = _build_pipeline(cfg)
    pooled = partition.partition_iid(pipeline.prepared.train, 1, pipeline.rng.split("partition"))
    return _train_and_write(cfg, pipeline, pooled, fl.FedAvg(), "centralized")


def _run_id(cfg: ExperimentConfig, index: int) -> str:
    return cfg.name or f"run_{index:03d}"


def sweep(
    cfgs: Sequence[ExperimentConfig], output_dir: Union[str, None] = None
) -> str:
    """
    Run configs one after another, each in its own subdirectory.

    A failing run is logged and recorded with status `failed`; the sweep
    carries on.

    Returns:
        The path of `summary.csv`.

    Raises:
        ConfigurationError: No configs, or two configs share a run name.
    """
    if not cfgs:
        raise ConfigurationError("A sweep needs at least one config")

    run_ids = [_run_id(cfg, index) for index, cfg in enumerate(cfgs)]
    duplicates = sorted(run_id for run_id, count in Counter(run_ids).items() if count > 1)
    if duplicates:
        raise ConfigurationError(f"Sweep run names must be unique, repeated: {duplicates}")

    output_dir = utils.ensure_dir(output_dir or features.output_dir())
    rows = []
    for cfg, run_id in zip(cfgs, run_ids):
        run_cfg = cfg.with_overrides(output_dir=os.path.join(output_dir, run_id))
        try:
            metrics = read_metrics(run_experiment(run_cfg))
        except (ConfigurationError, SchemaError, DivergenceError, InternalError, OSError) as exc:
            LOGGER.error("fedsim: Sweep run %s failed: %s", run_id, exc)
            rows.append({"config_id": run_id, "status": "failed"})
            continue

        best = int(np.argmax(metrics["global_accuracy"].to_numpy()))
        rows.append(
            {
                "config_id": run_id,
                "status": "ok",
                "best_accuracy": float(metrics["global_accuracy"].iloc[best]),
                "best_round": int(metrics["round"].iloc[best]),
                "final_loss": float(metrics["global_loss"].iloc[-1]),
            }
        )

    summary_path = os.path.join(output_dir, "summary.csv")
    frame = pd.DataFrame(rows, columns=list(SUMMARY_COLUMNS))
    frame["best_round"] = pd.to_numeric(frame["best_round"]).astype("Int64")
    frame.to_csv(summary_path, index=False, float_format="%.17g")
    return summary_path
