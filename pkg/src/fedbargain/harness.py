"""Experiment orchestration: configuration, sweeps, end-to-end runs, emission.

Configurations are JSON with a strict schema: unknown keys are rejected with
their full path, omitted keys fall back to the documented five-device
default scenario. Every emitted CSV has a fixed column order with floats at
17 significant digits; every JSON report embeds the resolved config hash and
master seed so runs can be reproduced exactly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from . import __version__
from .cost import AccuracyLaw, UeProfile, local_iterations, global_rounds
from .data import Dataset, PartitionSpec, gen_synthetic, load_idx, partition
from .fl import (
    AggregatorKind,
    FairWeighted,
    FedAvg,
    FedProx,
    RoundRecord,
    SolverConfig,
    TrainingDivergedError,
    train_federated,
)
from .game import (
    GameConfig,
    StackelbergOutcome,
    best_response,
    bs_utility,
    interaction_loop,
    leader_optimize,
    nash_lower_level,
)

DATA_DIR_ENV = "FEDBARGAIN_DATA_DIR"

REWARD_SWEEP_COLUMNS = ("r", "ue_id", "theta_star", "local_iters", "utility")
COMMTIME_SWEEP_COLUMNS = ("tau", "ue_id", "theta_star", "local_iters", "utility")
LEADER_CURVE_COLUMNS = (
    "r",
    "theta_hat",
    "global_rounds",
    "bs_utility",
    "normalized_utility",
)


class ConfigError(ValueError):
    """Unreadable, malformed, or invalid configuration."""


@dataclass(frozen=True)
class SyntheticSource:
    """Generator parameters for the built-in blob dataset."""

    classes: int = 3
    features: int = 10
    samples: int = 600
    separation: float = 3.0
    seed: int = 42


@dataclass(frozen=True)
class IdxSource:
    """Paths to an IDX image/label pair; relative paths resolve against
    ``data_dir`` if set, else the FEDBARGAIN_DATA_DIR environment variable."""

    images: str
    labels: str
    data_dir: str | None = None

    def resolve(self) -> tuple[str, str]:
        base = self.data_dir or os.environ.get(DATA_DIR_ENV) or ""
        def _resolve(p: str) -> str:
            return p if os.path.isabs(p) or not base else os.path.join(base, p)
        return _resolve(self.images), _resolve(self.labels)


@dataclass(frozen=True)
class TrainingConfig:
    eps_global: float = 0.02
    max_rounds: int = 200
    time_scale: float = 1.0

    def __post_init__(self) -> None:
        if not self.eps_global > 0:
            raise ValueError(f"eps_global must be > 0, got {self.eps_global}")
        if self.max_rounds < 1:
            raise ValueError(f"max_rounds must be >= 1, got {self.max_rounds}")
        if self.time_scale < 0:
            raise ValueError(f"time_scale must be >= 0, got {self.time_scale}")


@dataclass(frozen=True)
class Sweeps:
    """Value grids for the reward, communication-time and accuracy sweeps."""

    reward: tuple[float, ...]
    commtime: tuple[float, ...]
    commtime_ue: int = 0
    commtime_reward: float | None = None
    theta: tuple[float, ...] | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    profiles: tuple[UeProfile, ...]
    game: GameConfig
    solver: SolverConfig
    aggregator: AggregatorKind
    partition: PartitionSpec
    dataset: SyntheticSource | IdxSource
    training: TrainingConfig
    sweeps: Sweeps
    seed: int
    output_dir: str | None = None


@dataclass(frozen=True)
class SweepResult:
    """One tabular sweep: fixed columns, one row per sweep point, metadata."""

    name: str
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]
    metadata: dict[str, Any]

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [row[i] for row in self.rows]


@dataclass
class RunReport:
    """Outcome of an equilibrium-then-train run."""

    status: str
    equilibrium: StackelbergOutcome
    theta_used: tuple[float, ...]
    theta_scale: float
    records: list[RoundRecord]
    rounds_used: int
    reached_target: bool
    final_accuracy: float | None
    final_loss: float | None
    total_sim_time: float
    error: str | None
    metadata: dict[str, Any]


# ---------------------------------------------------------------------------
# Default scenario: five devices with spread CPU frequencies and channel
# qualities, equal data sizes.
# ---------------------------------------------------------------------------

_DEFAULT_SEED = 42


def default_profiles() -> tuple[UeProfile, ...]:
    freqs = (1.0e9, 1.5e9, 2.0e9, 2.5e9, 3.0e9)
    taus = (0.2, 0.4, 0.6, 0.8, 1.0)
    cycles = (8.0e5, 9.0e5, 1.0e6, 1.1e6, 1.2e6)
    return tuple(
        UeProfile(
            id=i,
            cpu_freq=freqs[i],
            eff_capacitance=2e-28,
            cycles_per_sample=cycles[i],
            data_size=120,
            comm_time_norm=taus[i],
            weight_energy=1.0,
            weight_time=1.0,
            cost_sensitivity=1.0,
        )
        for i in range(5)
    )


def default_config(seed: int = _DEFAULT_SEED) -> ScenarioConfig:
    """The built-in scenario used when a config file supplies no overrides."""
    return build_config({}, seed_override=seed)


# ---------------------------------------------------------------------------
# Config parsing / validation
# ---------------------------------------------------------------------------


def _expect_mapping(value: Any, path: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{path} must be an object, got {type(value).__name__}")
    return value


def _check_keys(mapping: dict, allowed: Iterable[str], path: str) -> None:
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key {path}.{unknown[0]}" if path else
                          f"unknown key {unknown[0]}")


def _as_float(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path} must be a number, got {value!r}")
    return float(value)


def _as_int(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path} must be an integer, got {value!r}")
    return value


def _as_str(value: Any, path: str) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"{path} must be a string, got {value!r}")
    return value


def _opt(mapping: dict, key: str, default: Any) -> Any:
    return mapping[key] if key in mapping else default


_PROFILE_KEYS = {
    "id",
    "cpu_freq",
    "eff_capacitance",
    "cycles_per_sample",
    "data_size",
    "comm_time_norm",
    "weight_energy",
    "weight_time",
    "cost_sensitivity",
}
_PROFILE_REQUIRED = (
    "cpu_freq",
    "eff_capacitance",
    "cycles_per_sample",
    "data_size",
    "comm_time_norm",
)


def _parse_profile(raw: Any, index: int) -> UeProfile:
    path = f"profiles[{index}]"
    mapping = _expect_mapping(raw, path)
    _check_keys(mapping, _PROFILE_KEYS, path)
    for key in _PROFILE_REQUIRED:
        if key not in mapping:
            raise ConfigError(f"{path}.{key} is required")
    try:
        return UeProfile(
            id=_as_int(_opt(mapping, "id", index), f"{path}.id"),
            cpu_freq=_as_float(mapping["cpu_freq"], f"{path}.cpu_freq"),
            eff_capacitance=_as_float(
                mapping["eff_capacitance"], f"{path}.eff_capacitance"
            ),
            cycles_per_sample=_as_float(
                mapping["cycles_per_sample"], f"{path}.cycles_per_sample"
            ),
            data_size=_as_float(mapping["data_size"], f"{path}.data_size"),
            comm_time_norm=_as_float(
                mapping["comm_time_norm"], f"{path}.comm_time_norm"
            ),
            weight_energy=_as_float(
                _opt(mapping, "weight_energy", 1.0), f"{path}.weight_energy"
            ),
            weight_time=_as_float(
                _opt(mapping, "weight_time", 1.0), f"{path}.weight_time"
            ),
            cost_sensitivity=_as_float(
                _opt(mapping, "cost_sensitivity", 1.0), f"{path}.cost_sensitivity"
            ),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from exc


def _parse_law(raw: Any, path: str) -> AccuracyLaw:
    mapping = _expect_mapping(raw, path)
    _check_keys(mapping, {"nu", "a", "theta_min", "theta_max"}, path)
    try:
        return AccuracyLaw(
            nu=_as_float(_opt(mapping, "nu", 10.0), f"{path}.nu"),
            a=_as_float(_opt(mapping, "a", 1.0), f"{path}.a"),
            theta_min=_as_float(_opt(mapping, "theta_min", 0.01), f"{path}.theta_min"),
            theta_max=_as_float(_opt(mapping, "theta_max", 0.99), f"{path}.theta_max"),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from exc


def _parse_game(raw: Any) -> GameConfig:
    mapping = _expect_mapping(raw, "game")
    _check_keys(
        mapping,
        {
            "law",
            "reward_min",
            "reward_max",
            "beta",
            "kappa_acc",
            "follower_tol",
            "leader_grid",
            "max_interaction_rounds",
        },
        "game",
    )
    try:
        return GameConfig(
            law=_parse_law(_opt(mapping, "law", {}), "game.law"),
            reward_min=_as_float(_opt(mapping, "reward_min", 0.0), "game.reward_min"),
            reward_max=_as_float(_opt(mapping, "reward_max", 10.0), "game.reward_max"),
            beta=_as_float(_opt(mapping, "beta", 40.0), "game.beta"),
            kappa_acc=_as_float(_opt(mapping, "kappa_acc", 4.0), "game.kappa_acc"),
            follower_tol=_as_float(
                _opt(mapping, "follower_tol", 1e-6), "game.follower_tol"
            ),
            leader_grid=_as_int(_opt(mapping, "leader_grid", 256), "game.leader_grid"),
            max_interaction_rounds=_as_int(
                _opt(mapping, "max_interaction_rounds", 20),
                "game.max_interaction_rounds",
            ),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"game: {exc}") from exc


def _parse_solver(raw: Any) -> SolverConfig:
    mapping = _expect_mapping(raw, "solver")
    _check_keys(mapping, {"l2_reg", "max_local_iters"}, "solver")
    try:
        return SolverConfig(
            l2_reg=_as_float(_opt(mapping, "l2_reg", 1e-2), "solver.l2_reg"),
            max_local_iters=_as_int(
                _opt(mapping, "max_local_iters", 2000), "solver.max_local_iters"
            ),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"solver: {exc}") from exc


def _parse_aggregator(raw: Any) -> AggregatorKind:
    mapping = _expect_mapping(raw, "aggregator")
    _check_keys(mapping, {"kind", "mu", "q"}, "aggregator")
    kind = _as_str(_opt(mapping, "kind", "fedavg"), "aggregator.kind").lower()
    try:
        if kind == "fedavg":
            _check_keys(mapping, {"kind"}, "aggregator")
            return FedAvg()
        if kind == "fedprox":
            _check_keys(mapping, {"kind", "mu"}, "aggregator")
            return FedProx(mu=_as_float(_opt(mapping, "mu", 0.0), "aggregator.mu"))
        if kind == "fair":
            _check_keys(mapping, {"kind", "q"}, "aggregator")
            return FairWeighted(q=_as_float(_opt(mapping, "q", 1.0), "aggregator.q"))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"aggregator: {exc}") from exc
    raise ConfigError(
        f"aggregator.kind must be one of 'fedavg', 'fedprox', 'fair', got {kind!r}"
    )


def _parse_partition(raw: Any, num_profiles: int, master_seed: int) -> PartitionSpec:
    mapping = _expect_mapping(raw, "partition")
    _check_keys(mapping, {"mode", "alpha", "num_clients", "seed"}, "partition")
    num_clients = _as_int(
        _opt(mapping, "num_clients", num_profiles), "partition.num_clients"
    )
    if num_clients != num_profiles:
        raise ConfigError(
            f"partition.num_clients ({num_clients}) must equal the number of "
            f"profiles ({num_profiles})"
        )
    alpha = _opt(mapping, "alpha", None)
    try:
        return PartitionSpec(
            num_clients=num_clients,
            seed=_as_int(_opt(mapping, "seed", master_seed), "partition.seed"),
            mode=_as_str(_opt(mapping, "mode", "iid"), "partition.mode"),
            alpha=None if alpha is None else _as_float(alpha, "partition.alpha"),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"partition: {exc}") from exc


def _parse_dataset(raw: Any, master_seed: int) -> SyntheticSource | IdxSource:
    mapping = _expect_mapping(raw, "dataset")
    source_type = _as_str(_opt(mapping, "type", "synthetic"), "dataset.type")
    if source_type == "synthetic":
        _check_keys(
            mapping,
            {"type", "classes", "features", "samples", "separation", "seed"},
            "dataset",
        )
        src = SyntheticSource(
            classes=_as_int(_opt(mapping, "classes", 3), "dataset.classes"),
            features=_as_int(_opt(mapping, "features", 10), "dataset.features"),
            samples=_as_int(_opt(mapping, "samples", 600), "dataset.samples"),
            separation=_as_float(
                _opt(mapping, "separation", 3.0), "dataset.separation"
            ),
            seed=_as_int(_opt(mapping, "seed", master_seed), "dataset.seed"),
        )
        if src.classes < 2:
            raise ConfigError("dataset.classes must be >= 2")
        if src.features < 1:
            raise ConfigError("dataset.features must be >= 1")
        if src.samples < src.classes:
            raise ConfigError("dataset.samples must be >= dataset.classes")
        if src.separation < 0:
            raise ConfigError("dataset.separation must be >= 0")
        return src
    if source_type == "idx":
        _check_keys(mapping, {"type", "images", "labels", "data_dir"}, "dataset")
        for key in ("images", "labels"):
            if key not in mapping:
                raise ConfigError(f"dataset.{key} is required for type 'idx'")
        data_dir = _opt(mapping, "data_dir", None)
        return IdxSource(
            images=_as_str(mapping["images"], "dataset.images"),
            labels=_as_str(mapping["labels"], "dataset.labels"),
            data_dir=None if data_dir is None else _as_str(data_dir, "dataset.data_dir"),
        )
    raise ConfigError(
        f"dataset.type must be 'synthetic' or 'idx', got {source_type!r}"
    )


def _parse_training(raw: Any) -> TrainingConfig:
    mapping = _expect_mapping(raw, "training")
    _check_keys(mapping, {"eps_global", "max_rounds", "time_scale"}, "training")
    try:
        return TrainingConfig(
            eps_global=_as_float(
                _opt(mapping, "eps_global", 0.02), "training.eps_global"
            ),
            max_rounds=_as_int(_opt(mapping, "max_rounds", 200), "training.max_rounds"),
            time_scale=_as_float(
                _opt(mapping, "time_scale", 1.0), "training.time_scale"
            ),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"training: {exc}") from exc


def _parse_grid(raw: Any, path: str) -> tuple[float, ...]:
    mapping = _expect_mapping(raw, path)
    if "values" in mapping:
        _check_keys(mapping, {"values"}, path)
        values = mapping["values"]
        if not isinstance(values, list) or not values:
            raise ConfigError(f"{path}.values must be a non-empty array")
        return tuple(
            _as_float(v, f"{path}.values[{i}]") for i, v in enumerate(values)
        )
    _check_keys(mapping, {"min", "max", "points"}, path)
    for key in ("min", "max", "points"):
        if key not in mapping:
            raise ConfigError(f"{path}.{key} is required (or give {path}.values)")
    lo = _as_float(mapping["min"], f"{path}.min")
    hi = _as_float(mapping["max"], f"{path}.max")
    points = _as_int(mapping["points"], f"{path}.points")
    if points < 2:
        raise ConfigError(f"{path}.points must be >= 2 (use values for one point)")
    if not lo < hi:
        raise ConfigError(f"{path}.min must be < {path}.max")
    step = (hi - lo) / (points - 1)
    grid = [lo + i * step for i in range(points)]
    grid[-1] = hi
    return tuple(grid)


def _parse_sweeps(raw: Any, game: GameConfig) -> Sweeps:
    mapping = _expect_mapping(raw, "sweeps")
    _check_keys(
        mapping,
        {"reward", "commtime", "commtime_ue", "commtime_reward", "theta"},
        "sweeps",
    )
    if "reward" in mapping:
        reward = _parse_grid(mapping["reward"], "sweeps.reward")
    else:
        reward = _parse_grid(
            {"min": game.reward_min, "max": game.reward_max, "points": 50},
            "sweeps.reward",
        )
    for i, r in enumerate(reward):
        if not game.reward_min <= r <= game.reward_max:
            raise ConfigError(
                f"sweeps.reward.values[{i}] = {r} outside "
                f"[{game.reward_min}, {game.reward_max}]"
            )
    if "commtime" in mapping:
        commtime = _parse_grid(mapping["commtime"], "sweeps.commtime")
    else:
        commtime = tuple((i + 1) / 10 for i in range(10))
    for i, tau in enumerate(commtime):
        if not 0.0 < tau <= 1.0:
            raise ConfigError(
                f"sweeps.commtime.values[{i}] = {tau} outside (0, 1]"
            )
    commtime_ue = _as_int(_opt(mapping, "commtime_ue", 0), "sweeps.commtime_ue")
    commtime_reward = _opt(mapping, "commtime_reward", None)
    if commtime_reward is not None:
        commtime_reward = _as_float(commtime_reward, "sweeps.commtime_reward")
        if not game.reward_min <= commtime_reward <= game.reward_max:
            raise ConfigError(
                f"sweeps.commtime_reward = {commtime_reward} outside "
                f"[{game.reward_min}, {game.reward_max}]"
            )
    theta = None
    if _opt(mapping, "theta", None) is not None:
        theta = _parse_grid(mapping["theta"], "sweeps.theta")
        for i, t in enumerate(theta):
            if not game.law.theta_min <= t <= game.law.theta_max:
                raise ConfigError(
                    f"sweeps.theta.values[{i}] = {t} outside "
                    f"[{game.law.theta_min}, {game.law.theta_max}]"
                )
    return Sweeps(
        reward=reward,
        commtime=commtime,
        commtime_ue=commtime_ue,
        commtime_reward=commtime_reward,
        theta=theta,
    )


_TOP_KEYS = {
    "seed",
    "profiles",
    "game",
    "solver",
    "aggregator",
    "partition",
    "dataset",
    "training",
    "sweeps",
    "output_dir",
}


def build_config(raw: Any, seed_override: int | None = None) -> ScenarioConfig:
    """Validate a raw JSON object into a fully resolved scenario."""
    mapping = _expect_mapping(raw, "config")
    _check_keys(mapping, _TOP_KEYS, "")
    if seed_override is not None:
        seed = seed_override
    else:
        seed = _as_int(_opt(mapping, "seed", _DEFAULT_SEED), "seed")

    if "profiles" in mapping:
        raw_profiles = mapping["profiles"]
        if not isinstance(raw_profiles, list) or not raw_profiles:
            raise ConfigError("profiles must be a non-empty array")
        profiles = tuple(
            _parse_profile(p, i) for i, p in enumerate(raw_profiles)
        )
        ids = [p.id for p in profiles]
        if len(set(ids)) != len(ids):
            raise ConfigError("profiles must have distinct ids")
    else:
        profiles = default_profiles()

    game = _parse_game(_opt(mapping, "game", {}))
    solver = _parse_solver(_opt(mapping, "solver", {}))
    aggregator = _parse_aggregator(_opt(mapping, "aggregator", {}))
    part = _parse_partition(_opt(mapping, "partition", {}), len(profiles), seed)
    dataset = _parse_dataset(_opt(mapping, "dataset", {}), seed)
    training = _parse_training(_opt(mapping, "training", {}))
    sweeps = _parse_sweeps(_opt(mapping, "sweeps", {}), game)

    if sweeps.commtime_ue not in {p.id for p in profiles}:
        raise ConfigError(
            f"sweeps.commtime_ue = {sweeps.commtime_ue} matches no profile id"
        )

    if isinstance(dataset, SyntheticSource):
        if dataset.samples < part.num_clients:
            raise ConfigError("dataset.samples must cover partition.num_clients")

    output_dir = _opt(mapping, "output_dir", None)
    if output_dir is not None:
        output_dir = _as_str(output_dir, "output_dir")

    return ScenarioConfig(
        profiles=profiles,
        game=game,
        solver=solver,
        aggregator=aggregator,
        partition=part,
        dataset=dataset,
        training=training,
        sweeps=sweeps,
        seed=seed,
        output_dir=output_dir,
    )


def load_config(path: str | Path, seed_override: int | None = None) -> ScenarioConfig:
    """Read, parse and validate a JSON scenario file."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"invalid JSON in {path} at line {exc.lineno}, column {exc.colno}: "
            f"{exc.msg}"
        ) from exc
    return build_config(raw, seed_override=seed_override)


# ---------------------------------------------------------------------------
# Resolved-config serialization and hashing
# ---------------------------------------------------------------------------


def _aggregator_to_dict(kind: AggregatorKind) -> dict[str, Any]:
    if isinstance(kind, FedProx):
        return {"kind": "fedprox", "mu": kind.mu}
    if isinstance(kind, FairWeighted):
        return {"kind": "fair", "q": kind.q}
    return {"kind": "fedavg"}


def scenario_to_dict(cfg: ScenarioConfig) -> dict[str, Any]:
    """Fully resolved configuration as a JSON-serializable dict."""
    return {
        "seed": cfg.seed,
        "profiles": [dataclasses.asdict(p) for p in cfg.profiles],
        "game": {
            "law": dataclasses.asdict(cfg.game.law),
            "reward_min": cfg.game.reward_min,
            "reward_max": cfg.game.reward_max,
            "beta": cfg.game.beta,
            "kappa_acc": cfg.game.kappa_acc,
            "follower_tol": cfg.game.follower_tol,
            "leader_grid": cfg.game.leader_grid,
            "max_interaction_rounds": cfg.game.max_interaction_rounds,
        },
        "solver": dataclasses.asdict(cfg.solver),
        "aggregator": _aggregator_to_dict(cfg.aggregator),
        "partition": dataclasses.asdict(cfg.partition),
        "dataset": dataclasses.asdict(cfg.dataset)
        | {"type": "synthetic" if isinstance(cfg.dataset, SyntheticSource) else "idx"},
        "training": dataclasses.asdict(cfg.training),
        "sweeps": {
            "reward": {"values": list(cfg.sweeps.reward)},
            "commtime": {"values": list(cfg.sweeps.commtime)},
            "commtime_ue": cfg.sweeps.commtime_ue,
            "commtime_reward": cfg.sweeps.commtime_reward,
            "theta": None
            if cfg.sweeps.theta is None
            else {"values": list(cfg.sweeps.theta)},
        },
        "output_dir": cfg.output_dir,
    }


def config_hash(cfg: ScenarioConfig) -> str:
    canonical = json.dumps(scenario_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _metadata(cfg: ScenarioConfig, **extra: Any) -> dict[str, Any]:
    meta: dict[str, Any] = {
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "version": __version__,
    }
    meta.update(extra)
    return meta


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------


def _format_cell(value: Any) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Deterministic CSV: header row, '\\n' newlines, 17-significant-digit
    floats."""
    lines = [",".join(columns)]
    lines.extend(",".join(_format_cell(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_json(path: Path, payload: Any) -> None:
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _emit_sweep(result: SweepResult, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(out_dir / f"{result.name}.csv", result.columns, result.rows)
    write_json(out_dir / f"{result.name}.meta.json", result.metadata)


def _map_points(
    fn: Callable, points: Sequence, workers: int
) -> list:
    # Ordered assembly keeps output independent of scheduling.
    if workers <= 1:
        return [fn(p) for p in points]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, points))


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


def sweep_reward(
    cfg: ScenarioConfig, out_dir: Path | None = None, workers: int = 1
) -> SweepResult:
    """Best-response accuracy of every device across the reward grid."""
    law = cfg.game.law

    def eval_point(reward: float) -> list[tuple]:
        rows = []
        for p in cfg.profiles:
            theta, utility = best_response(p, reward, cfg.game)
            rows.append((reward, p.id, theta, local_iterations(theta, law), utility))
        return rows

    nested = _map_points(eval_point, cfg.sweeps.reward, workers)
    rows = tuple(row for group in nested for row in group)
    result = SweepResult(
        name="reward_sweep",
        columns=REWARD_SWEEP_COLUMNS,
        rows=rows,
        metadata=_metadata(cfg, sweep="reward", points=len(cfg.sweeps.reward)),
    )
    if out_dir is not None:
        _emit_sweep(result, Path(out_dir))
    return result


def sweep_commtime(
    cfg: ScenarioConfig,
    ue_id: int | None = None,
    out_dir: Path | None = None,
    workers: int = 1,
) -> SweepResult:
    """One device's best response as its channel quality degrades.

    The chosen profile is swept over the communication-time grid with every
    other field fixed, at a fixed reward (default: midpoint of the reward
    bounds).
    """
    if ue_id is None:
        ue_id = cfg.sweeps.commtime_ue
    by_id = {p.id: p for p in cfg.profiles}
    if ue_id not in by_id:
        raise ConfigError(f"no profile with id {ue_id}")
    base = by_id[ue_id]
    reward = cfg.sweeps.commtime_reward
    if reward is None:
        reward = 0.5 * (cfg.game.reward_min + cfg.game.reward_max)
    law = cfg.game.law

    def eval_point(tau: float) -> tuple:
        profile = dataclasses.replace(base, comm_time_norm=tau)
        theta, utility = best_response(profile, reward, cfg.game)
        return (tau, ue_id, theta, local_iterations(theta, law), utility)

    rows = tuple(_map_points(eval_point, cfg.sweeps.commtime, workers))
    result = SweepResult(
        name="commtime_sweep",
        columns=COMMTIME_SWEEP_COLUMNS,
        rows=rows,
        metadata=_metadata(
            cfg,
            sweep="commtime",
            ue_id=ue_id,
            reward=reward,
            points=len(cfg.sweeps.commtime),
        ),
    )
    if out_dir is not None:
        _emit_sweep(result, Path(out_dir))
    return result


def _normalize(values: Sequence[float]) -> list[float]:
    peak = max(values)
    if peak > 0:
        return [v / peak for v in values]
    trough = min(values)
    span = peak - trough
    if span == 0:
        return [1.0 for _ in values]
    return [(v - trough) / span for v in values]


def _outcome_to_dict(outcome: StackelbergOutcome) -> dict[str, Any]:
    return {
        "reward_star": outcome.reward_star,
        "theta_star": list(outcome.theta_star),
        "leader_utility": outcome.leader_utility,
        "payments": list(outcome.payments),
        "converged": outcome.converged,
        "trace": [
            {
                "round": t.round,
                "reward": t.reward,
                "thetas": list(t.thetas),
                "leader_utility": t.leader_utility,
            }
            for t in outcome.trace
        ],
    }


def leader_curve(
    cfg: ScenarioConfig, out_dir: Path | None = None, workers: int = 1
) -> SweepResult:
    """Leader utility across the reward grid, normalized by its maximum,
    together with the equilibrium summary."""
    law = cfg.game.law

    def eval_point(reward: float) -> tuple:
        thetas = nash_lower_level(cfg.profiles, reward, cfg.game)
        theta_hat = max(thetas)
        return (
            reward,
            theta_hat,
            global_rounds(theta_hat, law),
            bs_utility(cfg.profiles, reward, thetas, cfg.game),
        )

    points = _map_points(eval_point, cfg.sweeps.reward, workers)
    normalized = _normalize([p[3] for p in points])
    rows = tuple(p + (norm,) for p, norm in zip(points, normalized))

    outcome = leader_optimize(cfg.profiles, cfg.game)
    argmax_index = max(
        range(len(rows)), key=lambda i: (rows[i][4], -i)
    )
    result = SweepResult(
        name="leader_curve",
        columns=LEADER_CURVE_COLUMNS,
        rows=rows,
        metadata=_metadata(
            cfg,
            sweep="leader_curve",
            points=len(cfg.sweeps.reward),
            curve_argmax_r=rows[argmax_index][0],
            reward_star=outcome.reward_star,
        ),
    )
    if out_dir is not None:
        out = Path(out_dir)
        _emit_sweep(result, out)
        write_json(
            out / "equilibrium.json",
            _outcome_to_dict(outcome) | _metadata(cfg),
        )
    return result


# ---------------------------------------------------------------------------
# End-to-end run
# ---------------------------------------------------------------------------

ROUNDS_STATIC_COLUMNS = (
    "round",
    "global_loss",
    "global_accuracy",
    "global_grad_norm",
    "sim_time",
)


def rounds_columns(num_clients: int) -> tuple[str, ...]:
    per_client = []
    for prefix in ("iters", "ratio", "capped"):
        per_client.extend(f"{prefix}_{k}" for k in range(num_clients))
    return ROUNDS_STATIC_COLUMNS + tuple(per_client)


def _record_row(rec: RoundRecord) -> tuple:
    return (
        rec.round,
        rec.global_loss,
        rec.global_accuracy,
        rec.global_grad_norm,
        rec.sim_time,
        *rec.local_iters,
        *rec.grad_ratios,
        *rec.capped,
    )


def load_dataset(cfg: ScenarioConfig) -> Dataset:
    """Materialize the configured dataset source."""
    if isinstance(cfg.dataset, SyntheticSource):
        src = cfg.dataset
        return gen_synthetic(
            src.classes, src.features, src.samples, src.separation, src.seed
        )
    images, labels = cfg.dataset.resolve()
    return load_idx(images, labels)


def run_end_to_end(
    cfg: ScenarioConfig,
    out_dir: Path | None = None,
    theta_scale: float = 1.0,
) -> RunReport:
    """Compute the reward equilibrium, train at the equilibrium accuracies,
    and emit round records plus a reproducible report.

    ``theta_scale`` uniformly rescales the equilibrium accuracies (clamped
    to the strategy bounds) before training, for what-if comparisons.
    """
    if theta_scale <= 0:
        raise ValueError(f"theta_scale must be > 0, got {theta_scale}")
    law = cfg.game.law
    outcome = interaction_loop(cfg.profiles, cfg.game)
    theta_used = tuple(
        min(max(t * theta_scale, law.theta_min), law.theta_max)
        for t in outcome.theta_star
    )

    ds = load_dataset(cfg)
    shards = partition(ds, cfg.partition)

    status = "ok"
    error = None
    records: list[RoundRecord]
    try:
        _, records = train_federated(
            shards,
            theta_used,
            cfg.aggregator,
            cfg.solver,
            eps_global=cfg.training.eps_global,
            max_rounds=cfg.training.max_rounds,
            seed=cfg.seed,
            profiles=cfg.profiles,
            time_scale=cfg.training.time_scale,
        )
    except TrainingDivergedError as exc:
        status = "diverged"
        error = str(exc)
        records = exc.records

    reached = bool(
        records and records[-1].global_grad_norm <= cfg.training.eps_global
    )
    report = RunReport(
        status=status,
        equilibrium=outcome,
        theta_used=theta_used,
        theta_scale=theta_scale,
        records=records,
        rounds_used=len(records),
        reached_target=reached,
        final_accuracy=records[-1].global_accuracy if records else None,
        final_loss=records[-1].global_loss if records else None,
        total_sim_time=sum(r.sim_time for r in records),
        error=error,
        metadata=_metadata(cfg),
    )
    if out_dir is not None:
        emit_run_report(report, cfg, Path(out_dir))
    return report


def emit_run_report(report: RunReport, cfg: ScenarioConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(
        out_dir / "rounds.csv",
        rounds_columns(len(cfg.profiles)),
        [_record_row(r) for r in report.records],
    )
    payload = {
        "status": report.status,
        "error": report.error,
        "equilibrium": _outcome_to_dict(report.equilibrium),
        "theta_used": list(report.theta_used),
        "theta_scale": report.theta_scale,
        "rounds_used": report.rounds_used,
        "reached_target": report.reached_target,
        "final_accuracy": report.final_accuracy,
        "final_loss": report.final_loss,
        "total_sim_time": report.total_sim_time,
    }
    payload.update(report.metadata)
    write_json(out_dir / "report.json", payload)
