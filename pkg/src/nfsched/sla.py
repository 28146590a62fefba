"""Service-level objectives and their reward signals.

Three objectives are supported: maximize throughput under an energy budget,
minimize energy above a throughput floor, and maximize the throughput/energy
ratio.  Rewards are computed from the per-chain observations of one control
interval and are never negative.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

from .validation import ensure_nonnegative, ensure_positive


@dataclass(frozen=True)
class MaxThroughput:
    """Throughput reward gated by an energy budget per control interval."""

    energy_cap: float
    reward_scale: float = 1.0

    def __post_init__(self):
        ensure_positive("energy_cap", self.energy_cap)
        ensure_positive("reward_scale", self.reward_scale)


@dataclass(frozen=True)
class MinEnergy:
    """Energy-headroom reward gated by a total-throughput floor (Gb/s).

    reference_energy sets the headroom scale; use default_reference_energy()
    to derive it from the server envelope.
    """

    throughput_floor: float
    reference_energy: float
    reward_scale: float = 1.0

    def __post_init__(self):
        ensure_positive("throughput_floor", self.throughput_floor)
        ensure_positive("reference_energy", self.reference_energy)
        ensure_positive("reward_scale", self.reward_scale)


@dataclass(frozen=True)
class EnergyEfficiency:
    """Reward equal to delivered Gb/s per kilojoule."""

    reward_scale: float = 1.0

    def __post_init__(self):
        ensure_positive("reward_scale", self.reward_scale)


SlaSpec = Union[MaxThroughput, MinEnergy, EnergyEfficiency]


def default_reference_energy(p_max: float, dt: float, cores_max: int) -> float:
    """Headroom scale for MinEnergy: peak watts times interval per core slot."""
    return float(p_max) * float(dt) * int(cores_max)


def total_throughput(observations) -> float:
    return float(sum(o.throughput_gbps for o in observations))


def total_energy(observations) -> float:
    return float(sum(o.energy_joules for o in observations))


def efficiency(observations) -> float:
    """Gb/s delivered per kJ consumed; zero when no energy was drawn."""
    energy = total_energy(observations)
    if energy <= 0:
        return 0.0
    return 1000.0 * total_throughput(observations) / energy


def is_violation(spec: SlaSpec, observations) -> bool:
    if isinstance(spec, MaxThroughput):
        return total_energy(observations) > spec.energy_cap
    if isinstance(spec, MinEnergy):
        return total_throughput(observations) < spec.throughput_floor
    if isinstance(spec, EnergyEfficiency):
        return False
    raise TypeError(f"unknown SLA spec: {spec!r}")


def reward(spec: SlaSpec, observations) -> float:
    """Scalar reward for one control interval; zero whenever the objective's
    constraint is violated."""
    if isinstance(spec, MaxThroughput):
        if is_violation(spec, observations):
            return 0.0
        return spec.reward_scale * total_throughput(observations)
    if isinstance(spec, MinEnergy):
        if is_violation(spec, observations):
            return 0.0
        headroom = (spec.reference_energy - total_energy(observations))
        headroom /= spec.reference_energy
        return spec.reward_scale * float(min(1.0, max(0.0, headroom)))
    if isinstance(spec, EnergyEfficiency):
        return spec.reward_scale * efficiency(observations)
    raise TypeError(f"unknown SLA spec: {spec!r}")


def energy_saving(e_nf: float, e_train: float, e_baseline: float) -> float:
    """Relative energy delta of a scheduler (serving plus training) against a
    baseline consumption.  Positive when the scheduler consumed more than the
    baseline, negative when it consumed less.
    """
    ensure_nonnegative("e_nf", e_nf)
    ensure_nonnegative("e_train", e_train)
    ensure_nonnegative("e_baseline", e_baseline)
    spent = float(e_nf) + float(e_train)
    if spent <= 0:
        raise ValueError("e_nf + e_train must be positive")
    return (spent - float(e_baseline)) / spent
