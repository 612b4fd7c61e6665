"""Two-level incentive game between an edge server and user devices.

The server (leader) posts a reward rate; each device (follower) picks its
local relative accuracy to maximize reward minus session cost. Follower
problems are decoupled, so the profile of independent best responses is the
unique lower-level Nash equilibrium, and the leader's problem reduces to a
one-dimensional search over the reward rate with followers' responses
embedded (backward induction).

Best responses are found by golden-section search under a unimodality
assumption, cross-checked against a coarse utility grid; a disagreement
beyond tolerance triggers a dense-grid fallback, so a wrong assumption
degrades to a slower exact answer rather than a wrong one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

from .cost import AccuracyLaw, UeProfile, session_cost

_INV_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_COARSE_GRID = 64
_DENSE_GRID = 4096


@dataclass(frozen=True)
class GameConfig:
    """Global game constants: accuracy law, strategy bounds, leader utility."""

    law: AccuracyLaw
    reward_min: float
    reward_max: float
    beta: float
    kappa_acc: float
    follower_tol: float = 1e-6
    leader_grid: int = 256
    max_interaction_rounds: int = 20

    def __post_init__(self) -> None:
        if not 0.0 <= self.reward_min < self.reward_max:
            raise ValueError(
                f"need 0 <= reward_min < reward_max, got "
                f"[{self.reward_min}, {self.reward_max}]"
            )
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if not self.kappa_acc > 0:
            raise ValueError(f"kappa_acc must be > 0, got {self.kappa_acc}")
        if not self.follower_tol > 0:
            raise ValueError(f"follower_tol must be > 0, got {self.follower_tol}")
        if self.leader_grid < 2:
            raise ValueError(f"leader_grid must be >= 2, got {self.leader_grid}")
        if self.max_interaction_rounds < 1:
            raise ValueError("max_interaction_rounds must be >= 1")


@dataclass(frozen=True)
class TraceRound:
    """One leader-follower exchange: offer, responses, resulting utility."""

    round: int
    reward: float
    thetas: tuple[float, ...]
    leader_utility: float


@dataclass(frozen=True)
class StackelbergOutcome:
    """Equilibrium reward, per-device strategies, payments and the trace."""

    reward_star: float
    theta_star: tuple[float, ...]
    leader_utility: float
    payments: tuple[float, ...]
    trace: tuple[TraceRound, ...]
    converged: bool = True


def ue_utility(
    profile: UeProfile, theta: float, reward: float, law: AccuracyLaw
) -> float:
    """Follower utility: payment per unit of contributed accuracy minus cost."""
    if reward < 0:
        raise ValueError(f"reward must be >= 0, got {reward}")
    return reward * (1.0 - theta) - session_cost(profile, theta, law)


def _linspace(lo: float, hi: float, n: int) -> list[float]:
    step = (hi - lo) / (n - 1)
    pts = [lo + i * step for i in range(n)]
    pts[-1] = hi
    return pts


def _argmax(values: Sequence[float]) -> int:
    # max() keeps the first of equal values, i.e. ties break to lower index.
    return max(range(len(values)), key=lambda i: (values[i], -i))


def _golden_max(
    fn: Callable[[float], float], lo: float, hi: float, tol: float
) -> tuple[float, float]:
    """Maximize a unimodal ``fn`` on [lo, hi] to within ``tol`` in x.

    Ties fall toward the lower end of the interval.
    """
    a, b = lo, hi
    c = b - _INV_GOLDEN * (b - a)
    d = a + _INV_GOLDEN * (b - a)
    f_c, f_d = fn(c), fn(d)
    while b - a > tol:
        if f_c >= f_d:
            b, d, f_d = d, c, f_c
            c = b - _INV_GOLDEN * (b - a)
            f_c = fn(c)
        else:
            a, c, f_c = c, d, f_d
            d = a + _INV_GOLDEN * (b - a)
            f_d = fn(d)
    candidates = [(a, fn(a)), (c, f_c), (d, f_d), (b, fn(b))]
    return max(candidates, key=lambda cand: (cand[1], -cand[0]))


def best_response(
    profile: UeProfile, reward: float, cfg: GameConfig
) -> tuple[float, float]:
    """Utility-maximizing accuracy for one device at the offered reward.

    Returns ``(theta_star, utility_star)``. Golden-section search is
    cross-checked against a 64-point grid; if the grid wins by more than
    10x the follower tolerance, the search falls back to a 4096-point grid
    refined locally. Ties break toward smaller theta.
    """
    if not cfg.reward_min <= reward <= cfg.reward_max:
        raise ValueError(
            f"reward {reward} outside [{cfg.reward_min}, {cfg.reward_max}]"
        )
    law = cfg.law

    def utility(theta: float) -> float:
        return ue_utility(profile, theta, reward, law)

    candidates = [_golden_max(utility, law.theta_min, law.theta_max, cfg.follower_tol)]

    coarse = _linspace(law.theta_min, law.theta_max, _COARSE_GRID)
    coarse_vals = [utility(t) for t in coarse]
    i = _argmax(coarse_vals)
    candidates.append((coarse[i], coarse_vals[i]))

    if coarse_vals[i] > candidates[0][1] + 10.0 * cfg.follower_tol:
        dense = _linspace(law.theta_min, law.theta_max, _DENSE_GRID)
        dense_vals = [utility(t) for t in dense]
        j = _argmax(dense_vals)
        candidates.append((dense[j], dense_vals[j]))
        lo = dense[max(j - 1, 0)]
        hi = dense[min(j + 1, _DENSE_GRID - 1)]
        candidates.append(_golden_max(utility, lo, hi, cfg.follower_tol))

    return max(candidates, key=lambda cand: (cand[1], -cand[0]))


def nash_lower_level(
    profiles: Sequence[UeProfile], reward: float, cfg: GameConfig
) -> tuple[float, ...]:
    """Per-device best responses; decoupled utilities make this the unique
    lower-level Nash equilibrium up to the follower tolerance."""
    if not profiles:
        raise ValueError("profiles must be non-empty")
    return tuple(best_response(p, reward, cfg)[0] for p in profiles)


def bs_utility(
    profiles: Sequence[UeProfile],
    reward: float,
    thetas: Sequence[float],
    cfg: GameConfig,
) -> float:
    """Leader utility: concave benefit of the worst local accuracy minus
    total payments.

    Synchronous aggregation is bottlenecked by the sloppiest device, hence
    the max over theta entries.
    """
    if len(thetas) != len(profiles):
        raise ValueError(
            f"{len(thetas)} responses for {len(profiles)} profiles"
        )
    for theta in thetas:
        if not cfg.law.theta_min <= theta <= cfg.law.theta_max:
            raise ValueError(f"theta {theta} outside strategy bounds")
    theta_hat = max(thetas)
    benefit = cfg.beta * math.log(1.0 + cfg.kappa_acc * (1.0 - theta_hat))
    payments = reward * sum(1.0 - t for t in thetas)
    return benefit - payments


def _solve_leader(
    profiles: Sequence[UeProfile], cfg: GameConfig
) -> tuple[float, tuple[float, ...], float]:
    """Grid-then-refine maximization of the leader objective over reward."""

    def objective(reward: float) -> float:
        thetas = nash_lower_level(profiles, reward, cfg)
        return bs_utility(profiles, reward, thetas, cfg)

    grid = _linspace(cfg.reward_min, cfg.reward_max, cfg.leader_grid)
    values = [objective(r) for r in grid]
    i = _argmax(values)
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, cfg.leader_grid - 1)]
    tol = cfg.follower_tol * (cfg.reward_max - cfg.reward_min)
    refined = _golden_max(objective, lo, hi, tol)
    reward_star, _ = max(
        [(grid[i], values[i]), refined], key=lambda cand: (cand[1], -cand[0])
    )
    thetas = nash_lower_level(profiles, reward_star, cfg)
    return reward_star, thetas, bs_utility(profiles, reward_star, thetas, cfg)


def _payments(reward: float, thetas: Sequence[float]) -> tuple[float, ...]:
    return tuple(reward * (1.0 - t) for t in thetas)


def leader_optimize(
    profiles: Sequence[UeProfile], cfg: GameConfig
) -> StackelbergOutcome:
    """Backward-induction equilibrium: optimal reward against best responses.

    Deterministic: identical inputs yield identical outcomes. Ties break
    toward the smaller reward.
    """
    if not profiles:
        raise ValueError("profiles must be non-empty")
    reward_star, thetas, utility = _solve_leader(profiles, cfg)
    trace = (TraceRound(0, reward_star, thetas, utility),)
    return StackelbergOutcome(
        reward_star=reward_star,
        theta_star=thetas,
        leader_utility=utility,
        payments=_payments(reward_star, thetas),
        trace=trace,
        converged=True,
    )


def interaction_loop(
    profiles: Sequence[UeProfile], cfg: GameConfig
) -> StackelbergOutcome:
    """Round-by-round leader/follower exchange, recorded as an explicit trace.

    Round 0 broadcasts the midpoint reward; each later round the leader
    re-solves its problem against the devices' best-response behavior and
    the devices respond. Stops once the offer moves by at most
    ``follower_tol`` of the reward range, or after ``max_interaction_rounds``
    (then flagged as non-converged rather than raising). Because followers
    are decoupled, the fixed point coincides with ``leader_optimize``.
    """
    if not profiles:
        raise ValueError("profiles must be non-empty")
    reward = 0.5 * (cfg.reward_min + cfg.reward_max)
    thetas = nash_lower_level(profiles, reward, cfg)
    trace = [TraceRound(0, reward, thetas, bs_utility(profiles, reward, thetas, cfg))]

    tol = cfg.follower_tol * (cfg.reward_max - cfg.reward_min)
    converged = False
    for rnd in range(1, cfg.max_interaction_rounds + 1):
        new_reward, thetas, utility = _solve_leader(profiles, cfg)
        trace.append(TraceRound(rnd, new_reward, thetas, utility))
        moved = abs(new_reward - reward)
        reward = new_reward
        if moved <= tol:
            converged = True
            break

    return StackelbergOutcome(
        reward_star=reward,
        theta_star=thetas,
        leader_utility=trace[-1].leader_utility,
        payments=_payments(reward, thetas),
        trace=tuple(trace),
        converged=converged,
    )
