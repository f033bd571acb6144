from fedsim.data import (
    Dataset,
    PreparedData,
    load_csv,
    prepare,
    synth_generate,
)
from fedsim.errors import (
    ConfigurationError,
    DivergenceError,
    EmptyDatasetError,
    InternalError,
    NonFiniteError,
    SchemaError,
)
from fedsim.fl import (
    ClientState,
    ClientUpdate,
    FedAvg,
    FedProx,
    RoundPlan,
    RoundReport,
    Scaffold,
    ServerState,
    Strategy,
    build_strategy,
    run_round,
    run_training,
)
from fedsim.harness import (
    ExperimentConfig,
    load_config,
    mu_sweep,
    run_centralized_baseline,
    run_experiment,
    sweep,
)
from fedsim.model import (
    MlpConfig,
    MlpObjective,
    QuadraticObjective,
    evaluate,
    local_train,
)
from fedsim.numerics import SeededRng
from fedsim.partition import PartitionPlan
from fedsim.registry import (
    register,
    registered,
)
from fedsim.version import __version__

__all__ = [
    "build_strategy",
    "ClientState",
    "ClientUpdate",
    "ConfigurationError",
    "Dataset",
    "DivergenceError",
    "EmptyDatasetError",
    "evaluate",
    "ExperimentConfig",
    "FedAvg",
    "FedProx",
    "InternalError",
    "load_config",
    "load_csv",
    "local_train",
    "MlpConfig",
    "MlpObjective",
    "mu_sweep",
    "NonFiniteError",
    "PartitionPlan",
    "prepare",
    "PreparedData",
    "QuadraticObjective",
    "register",
    "registered",
    "RoundPlan",
    "RoundReport",
    "run_centralized_baseline",
    "run_experiment",
    "run_round",
    "run_training",
    "Scaffold",
    "SchemaError",
    "SeededRng",
    "ServerState",
    "Strategy",
    "sweep",
    "synth_generate",
    "__version__",
]
