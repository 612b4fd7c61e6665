"""Synchronous federated training of a multinomial logistic regression model.

Model weights are a (K, d+1) float array: one row per class, the last
column holding the bias. Clients run deterministic full-batch gradient
descent until the gradient norm drops to their assigned fraction ``theta``
of its starting value, then the server aggregates. Everything is exactly
reproducible: zero initial weights, a fixed step from a Lipschitz bound,
clients processed in order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cost import UeProfile, local_iter_time
from .data import Dataset


@dataclass(frozen=True)
class SolverConfig:
    """Local solver knobs. ``l2_reg`` must stay positive for the
    gradient-ratio stopping rule to terminate (linear convergence needs
    strong convexity)."""

    l2_reg: float = 1e-2
    max_local_iters: int = 2000

    def __post_init__(self) -> None:
        if self.l2_reg < 0:
            raise ValueError(f"l2_reg must be >= 0, got {self.l2_reg}")
        if self.max_local_iters < 1:
            raise ValueError("max_local_iters must be >= 1")


@dataclass(frozen=True)
class FedAvg:
    """Data-size-weighted model averaging."""


@dataclass(frozen=True)
class FedProx:
    """FedAvg plus a proximal pull of strength ``mu`` toward the broadcast
    model in each local objective."""

    mu: float = 0.0

    def __post_init__(self) -> None:
        if not np.isfinite(self.mu) or self.mu < 0:
            raise ValueError(f"mu must be finite and >= 0, got {self.mu}")


@dataclass(frozen=True)
class FairWeighted:
    """Aggregation weights boosted by local loss to exponent ``q``; devices
    that are doing poorly count for more. q = 0 reduces to FedAvg."""

    q: float = 0.0

    def __post_init__(self) -> None:
        if not np.isfinite(self.q) or self.q < 0:
            raise ValueError(f"q must be finite and >= 0, got {self.q}")


AggregatorKind = FedAvg | FedProx | FairWeighted


@dataclass(frozen=True)
class AggregateResult:
    """Aggregated model plus the client weight vector actually used."""

    model: np.ndarray
    client_weights: np.ndarray
    fedavg_fallback: bool = False


@dataclass(frozen=True)
class RoundRecord:
    """One synchronous round: per-client effort and global progress.

    ``sim_time`` is the simulated wall clock of the round: the slowest
    client's compute time plus its communication time (zero when no device
    profiles were supplied).
    """

    round: int
    local_iters: tuple[int, ...]
    grad_ratios: tuple[float, ...]
    capped: tuple[bool, ...]
    global_loss: float
    global_accuracy: float
    global_grad_norm: float
    sim_time: float


class TrainingDivergedError(RuntimeError):
    """Weights went non-finite mid-training; carries the records so far."""

    def __init__(self, round_index: int, records: list[RoundRecord]):
        super().__init__(f"non-finite weights after round {round_index}")
        self.round_index = round_index
        self.records = records


def init_weights(num_classes: int, num_features: int) -> np.ndarray:
    """Zero-initialized (K, d+1) weight matrix, bias in the last column."""
    return np.zeros((num_classes, num_features + 1))


def _augment(features: np.ndarray) -> np.ndarray:
    return np.hstack([features, np.ones((features.shape[0], 1))])


def loss_and_grad(
    weights: np.ndarray, shard: Dataset, l2: float
) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy plus (l2/2)*||W||_F^2, with gradient.

    Logits are max-shifted before exponentiation so large weights cannot
    overflow.
    """
    if not np.all(np.isfinite(weights)):
        raise ValueError("weights contain non-finite entries")
    n, d = shard.features.shape
    k_model, cols = weights.shape
    if cols != d + 1 or k_model != shard.num_classes:
        raise ValueError(
            f"weights shape {weights.shape} does not match shard with "
            f"{shard.num_classes} classes and {d} features"
        )
    design = _augment(shard.features)
    logits = design @ weights.T
    logits -= logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    denom = exp.sum(axis=1, keepdims=True)
    log_probs = logits - np.log(denom)
    loss = -log_probs[np.arange(n), shard.labels].mean()
    loss += 0.5 * l2 * float(np.sum(weights * weights))

    probs = exp / denom
    probs[np.arange(n), shard.labels] -= 1.0
    grad = probs.T @ design / n + l2 * weights
    return float(loss), grad


def lipschitz_bound(shard: Dataset, l2: float) -> float:
    """Smoothness bound for the regularized objective on this shard.

    Uses the worst-case softmax curvature (1/4) times the largest squared
    row norm of the bias-augmented design matrix.
    """
    row_sq = (shard.features * shard.features).sum(axis=1) + 1.0
    return 0.25 * float(row_sq.max()) + l2


def local_solve(
    w_global: np.ndarray,
    shard: Dataset,
    theta: float,
    cfg: SolverConfig,
    prox: tuple[float, np.ndarray] | None = None,
) -> tuple[np.ndarray, int, float]:
    """Fixed-step gradient descent until ||grad|| <= theta * ||grad at start||.

    With ``prox=(mu, anchor)`` the objective gains (mu/2)*||w - anchor||^2.
    Returns ``(w_local, iterations, achieved_ratio)``; a zero starting
    gradient returns immediately (the client is already optimal). Iterations
    are capped at ``cfg.max_local_iters``; the caller can detect the cap by
    ``achieved_ratio > theta``.
    """
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must be in (0, 1), got {theta}")
    if not np.all(np.isfinite(w_global)):
        raise ValueError("w_global contains non-finite entries")
    mu = 0.0
    anchor = None
    if prox is not None:
        mu, anchor = prox
        if mu < 0:
            raise ValueError(f"proximal mu must be >= 0, got {mu}")

    step = 1.0 / (lipschitz_bound(shard, cfg.l2_reg) + mu)

    def objective(w: np.ndarray) -> tuple[float, np.ndarray]:
        loss, grad = loss_and_grad(w, shard, cfg.l2_reg)
        if mu != 0.0:
            diff = w - anchor
            loss += 0.5 * mu * float(np.sum(diff * diff))
            grad = grad + mu * diff
        return loss, grad

    loss, grad = objective(w_global)
    g0 = float(np.linalg.norm(grad))
    if g0 == 0.0:
        return w_global.copy(), 0, 0.0

    w = w_global.copy()
    gnorm = g0
    iters = 0
    while gnorm > theta * g0 and iters < cfg.max_local_iters:
        w -= step * grad
        iters += 1
        new_loss, grad = objective(w)
        gnorm = float(np.linalg.norm(grad))
        # Fixed step 1/L guarantees monotone descent; a violation means the
        # bound (or the gradient) is wrong.
        if new_loss > loss + 1e-9 * (1.0 + abs(loss)):
            raise ArithmeticError(
                f"objective rose from {loss} to {new_loss} at iteration {iters}"
            )
        loss = new_loss
    return w, iters, gnorm / g0


def aggregation_weights(
    sizes: Sequence[float], losses: Sequence[float], kind: AggregatorKind
) -> tuple[np.ndarray, bool]:
    """Normalized client weights for an aggregation rule.

    Falls back to plain data-size weighting (flagged) when fairness
    weighting degenerates, e.g. every local loss is zero.
    """
    size_arr = np.asarray(sizes, dtype=float)
    if np.any(size_arr <= 0):
        raise ValueError("shard sizes must be positive")
    base = size_arr / size_arr.sum()
    if isinstance(kind, FairWeighted):
        raw = size_arr * np.asarray(losses, dtype=float) ** kind.q
        total = raw.sum()
        if not np.all(np.isfinite(raw)) or total <= 0:
            return base, True
        return raw / total, False
    return base, False


def aggregate(
    updates: Sequence[tuple[np.ndarray, float, float]], kind: AggregatorKind
) -> AggregateResult:
    """Combine client models ``(w_local, shard_size, local_loss)`` into one."""
    if not updates:
        raise ValueError("updates must be non-empty")
    shape = updates[0][0].shape
    for w, _, _ in updates:
        if w.shape != shape:
            raise ValueError(f"inconsistent update shapes {w.shape} vs {shape}")
    weights, fallback = aggregation_weights(
        [u[1] for u in updates], [u[2] for u in updates], kind
    )
    stacked = np.stack([u[0] for u in updates])
    model = np.tensordot(weights, stacked, axes=1)
    return AggregateResult(model=model, client_weights=weights, fedavg_fallback=fallback)


def _union(shards: Sequence[Dataset]) -> Dataset:
    return Dataset(
        features=np.concatenate([s.features for s in shards]),
        labels=np.concatenate([s.labels for s in shards]),
        num_classes=shards[0].num_classes,
    )


def training_accuracy(weights: np.ndarray, ds: Dataset) -> float:
    """Fraction of samples whose argmax logit matches the label."""
    logits = _augment(ds.features) @ weights.T
    return float((logits.argmax(axis=1) == ds.labels).mean())


def train_federated(
    shards: Sequence[Dataset],
    theta_vec: Sequence[float],
    kind: AggregatorKind,
    cfg: SolverConfig,
    eps_global: float,
    max_rounds: int,
    seed: int,
    profiles: Sequence[UeProfile] | None = None,
    time_scale: float = 1.0,
) -> tuple[np.ndarray, list[RoundRecord]]:
    """Run synchronous rounds until the full-data gradient norm reaches
    ``eps_global`` or ``max_rounds`` elapse.

    The loop is fully deterministic (zero init, fixed steps, clients in
    order); ``seed`` is recorded by callers for provenance but injects no
    randomness here. ``profiles`` (optional, one per shard) supply the
    per-iteration compute time and communication time that make up each
    round's simulated duration.
    """
    if len(shards) != len(theta_vec) or not shards:
        raise ValueError(
            f"need one theta per shard, got {len(theta_vec)} for {len(shards)}"
        )
    if profiles is not None and len(profiles) != len(shards):
        raise ValueError("profiles, when given, must match shards one-to-one")
    if eps_global <= 0:
        raise ValueError(f"eps_global must be > 0, got {eps_global}")
    if max_rounds < 1:
        raise ValueError(f"max_rounds must be >= 1, got {max_rounds}")

    union = _union(shards)
    weights = init_weights(union.num_classes, union.features.shape[1])
    records: list[RoundRecord] = []

    for rnd in range(max_rounds):
        updates = []
        iters: list[int] = []
        ratios: list[float] = []
        capped: list[bool] = []
        for k, shard in enumerate(shards):
            prox = (kind.mu, weights) if isinstance(kind, FedProx) else None
            w_k, it_k, ratio_k = local_solve(weights, shard, theta_vec[k], cfg, prox)
            local_loss, _ = loss_and_grad(w_k, shard, cfg.l2_reg)
            updates.append((w_k, float(len(shard.labels)), local_loss))
            iters.append(it_k)
            ratios.append(ratio_k)
            capped.append(it_k >= cfg.max_local_iters and ratio_k > theta_vec[k])

        weights = aggregate(updates, kind).model
        if not np.all(np.isfinite(weights)):
            raise TrainingDivergedError(rnd, records)

        global_loss, global_grad = loss_and_grad(weights, union, cfg.l2_reg)
        grad_norm = float(np.linalg.norm(global_grad))
        sim_time = 0.0
        if profiles is not None:
            sim_time = max(
                it * local_iter_time(p) + p.comm_time_norm * time_scale
                for it, p in zip(iters, profiles)
            )
        records.append(
            RoundRecord(
                round=rnd,
                local_iters=tuple(iters),
                grad_ratios=tuple(ratios),
                capped=tuple(capped),
                global_loss=global_loss,
                global_accuracy=training_accuracy(weights, union),
                global_grad_norm=grad_norm,
                sim_time=sim_time,
            )
        )
        if grad_norm <= eps_global:
            break

    return weights, records
