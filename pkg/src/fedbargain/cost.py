"""Device-level compute/communication cost model and accuracy-iteration laws.

All quantities live in plain SI-ish units: CPU frequency in cycles/s,
energy in joules, time in seconds. Costs are combined into one abstract
currency through the per-device weights, so reward and cost are directly
comparable in the incentive game.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class UeProfile:
    """One follower device: compute capability, data and channel cost structure.

    ``eff_capacitance`` is the effective switched capacitance of the chip,
    so energy per CPU cycle is ``eff_capacitance * cpu_freq**2``.
    ``comm_time_norm`` is the normalized per-round communication time in
    (0, 1]; 1 denotes the worst channel.
    """

    id: int
    cpu_freq: float
    eff_capacitance: float
    cycles_per_sample: float
    data_size: float
    comm_time_norm: float
    weight_energy: float
    weight_time: float
    cost_sensitivity: float

    def __post_init__(self) -> None:
        if not self.cpu_freq > 0:
            raise ValueError(f"cpu_freq must be > 0, got {self.cpu_freq}")
        if not self.eff_capacitance > 0:
            raise ValueError(
                f"eff_capacitance must be > 0, got {self.eff_capacitance}"
            )
        if not self.cycles_per_sample > 0:
            raise ValueError(
                f"cycles_per_sample must be > 0, got {self.cycles_per_sample}"
            )
        if not self.data_size >= 1:
            raise ValueError(f"data_size must be >= 1, got {self.data_size}")
        if not 0.0 < self.comm_time_norm <= 1.0:
            raise ValueError(
                f"comm_time_norm must be in (0, 1], got {self.comm_time_norm}"
            )
        if self.weight_energy < 0 or self.weight_time < 0:
            raise ValueError("weight_energy and weight_time must be >= 0")
        if self.weight_energy == 0 and self.weight_time == 0:
            raise ValueError("weight_energy and weight_time cannot both be zero")
        if self.cost_sensitivity < 0:
            raise ValueError(
                f"cost_sensitivity must be >= 0, got {self.cost_sensitivity}"
            )


@dataclass(frozen=True)
class AccuracyLaw:
    """Coefficients linking local relative accuracy to iteration counts.

    A local solve to relative accuracy ``theta`` needs ``nu * ln(1/theta)``
    iterations; reaching the global target then takes ``a / (1 - theta)``
    rounds. ``theta_min``/``theta_max`` bound the admissible strategies away
    from the singularities at 0 and 1.
    """

    nu: float = 10.0
    a: float = 1.0
    theta_min: float = 0.01
    theta_max: float = 0.99

    def __post_init__(self) -> None:
        if not self.nu > 0:
            raise ValueError(f"nu must be > 0, got {self.nu}")
        if not self.a > 0:
            raise ValueError(f"a must be > 0, got {self.a}")
        if not 0.0 < self.theta_min < self.theta_max < 1.0:
            raise ValueError(
                "need 0 < theta_min < theta_max < 1, got "
                f"[{self.theta_min}, {self.theta_max}]"
            )


def local_iter_time(profile: UeProfile) -> float:
    """Seconds for one local pass over the device's data."""
    return profile.cycles_per_sample * profile.data_size / profile.cpu_freq


def local_iter_energy(profile: UeProfile) -> float:
    """Joules for one local pass; quadratic in CPU frequency (DVFS model)."""
    return (
        profile.eff_capacitance
        * profile.cycles_per_sample
        * profile.data_size
        * profile.cpu_freq**2
    )


def local_iterations(theta: float, law: AccuracyLaw) -> float:
    """Local iterations needed to reach relative accuracy ``theta``.

    Strictly decreasing in theta; zero at theta = 1 (no work for a vacuous
    target).
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"theta must be in (0, 1], got {theta}")
    return law.nu * math.log(1.0 / theta)


def global_rounds(theta: float, law: AccuracyLaw) -> float:
    """Global rounds needed when local solves stop at accuracy ``theta``.

    Strictly increasing in theta and divergent as theta -> 1: sloppier local
    work must be paid back in communication rounds.
    """
    if not 0.0 <= theta < 1.0:
        raise ValueError(f"theta must be in [0, 1), got {theta}")
    return law.a / (1.0 - theta)


def per_round_cost(profile: UeProfile, theta: float, law: AccuracyLaw) -> float:
    """Weighted device cost of a single global round at accuracy ``theta``.

    Compute cost (energy + time per iteration, weighted) scales with the
    iteration count; the communication term is paid once per round.
    """
    c_iter = (
        profile.weight_energy * local_iter_energy(profile)
        + profile.weight_time * local_iter_time(profile)
    )
    c_com = profile.weight_time * profile.comm_time_norm
    return c_iter * local_iterations(theta, law) + c_com


def session_cost(profile: UeProfile, theta: float, law: AccuracyLaw) -> float:
    """Total device cost of a full training session at accuracy ``theta``."""
    return (
        profile.cost_sensitivity
        * per_round_cost(profile, theta, law)
        * global_rounds(theta, law)
    )
