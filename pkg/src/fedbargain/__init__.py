"""Deterministic simulator coupling a leader-follower incentive game between
an edge server and heterogeneous user devices to a synchronous
federated-learning training loop."""

__version__ = "0.1.0"

from .cost import (
    AccuracyLaw,
    UeProfile,
    global_rounds,
    local_iter_energy,
    local_iter_time,
    local_iterations,
    per_round_cost,
    session_cost,
)
from .data import (
    Dataset,
    IdxFormatError,
    PartitionSpec,
    gen_synthetic,
    load_idx,
    partition,
    partition_indices,
    write_idx,
)
from .fl import (
    AggregateResult,
    AggregatorKind,
    FairWeighted,
    FedAvg,
    FedProx,
    RoundRecord,
    SolverConfig,
    TrainingDivergedError,
    aggregate,
    init_weights,
    local_solve,
    loss_and_grad,
    train_federated,
    training_accuracy,
)
from .game import (
    GameConfig,
    StackelbergOutcome,
    TraceRound,
    best_response,
    bs_utility,
    interaction_loop,
    leader_optimize,
    nash_lower_level,
    ue_utility,
)
from .harness import (
    ConfigError,
    RunReport,
    ScenarioConfig,
    SweepResult,
    build_config,
    config_hash,
    default_config,
    default_profiles,
    leader_curve,
    load_config,
    run_end_to_end,
    sweep_commtime,
    sweep_reward,
)

__all__ = [
    "AccuracyLaw",
    "AggregateResult",
    "AggregatorKind",
    "ConfigError",
    "Dataset",
    "FairWeighted",
    "FedAvg",
    "FedProx",
    "GameConfig",
    "IdxFormatError",
    "PartitionSpec",
    "RoundRecord",
    "RunReport",
    "ScenarioConfig",
    "SolverConfig",
    "StackelbergOutcome",
    "SweepResult",
    "TraceRound",
    "TrainingDivergedError",
    "UeProfile",
    "aggregate",
    "best_response",
    "bs_utility",
    "build_config",
    "config_hash",
    "default_config",
    "default_profiles",
    "gen_synthetic",
    "global_rounds",
    "init_weights",
    "interaction_loop",
    "leader_curve",
    "leader_optimize",
    "load_config",
    "load_idx",
    "local_iter_energy",
    "local_iter_time",
    "local_iterations",
    "local_solve",
    "loss_and_grad",
    "nash_lower_level",
    "partition",
    "partition_indices",
    "per_round_cost",
    "run_end_to_end",
    "session_cost",
    "sweep_commtime",
    "sweep_reward",
    "train_federated",
    "training_accuracy",
    "ue_utility",
    "write_idx",
    "__version__",
]
