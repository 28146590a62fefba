"""Analytic simulator of network-function chains under five resource knobs.

Each chain processes one packet flow and is controlled through fractional CPU
cores, a discrete core frequency, a share of the last-level cache, the DMA
descriptor ring size and the packet batch size.  The model maps an allocation
to per-chain throughput, CPU utilization, cache miss rate and an energy split
of the server power draw over one control interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import sla as sla_mod
from .validation import (
    as_float_vector,
    as_int_vector,
    ensure_finite,
    ensure_fraction,
    ensure_positive,
)

# 100 MHz DVFS ladder between 1.2 and 2.1 GHz.
DEFAULT_FREQ_LEVELS = tuple(float(round(1.2e9 + 1e8 * i)) for i in range(10))


@dataclass(frozen=True)
class KnobRanges:
    """Hardware envelope the knobs are projected into."""

    cores_max: int = 16
    freq_levels: tuple[float, ...] = DEFAULT_FREQ_LEVELS
    llc_total: int = 20 * 1024 * 1024
    llc_ddio_reserved: float = 0.1
    dma_desc_range: tuple[int, int] = (64, 4096)
    batch_range: tuple[int, int] = (1, 256)
    line_rate: float = 10e9

    def __post_init__(self):
        ensure_positive("cores_max", self.cores_max)
        levels = tuple(float(f) for f in self.freq_levels)
        if len(levels) == 0:
            raise ValueError("freq_levels must be non-empty")
        ensure_positive("freq_levels", levels)
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError("freq_levels must be strictly increasing")
        object.__setattr__(self, "freq_levels", levels)
        ensure_positive("llc_total", self.llc_total)
        ensure_fraction("llc_ddio_reserved", self.llc_ddio_reserved)
        for name in ("dma_desc_range", "batch_range"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ValueError(f"{name} must satisfy 0 < lo <= hi, got {(lo, hi)}")
        ensure_positive("line_rate", self.line_rate)

    @property
    def freq_min(self) -> float:
        return self.freq_levels[0]

    @property
    def freq_max(self) -> float:
        return self.freq_levels[-1]

    @property
    def llc_usable(self) -> float:
        """LLC bytes available to chains once the DDIO slice is set aside."""
        return (1.0 - self.llc_ddio_reserved) * self.llc_total


@dataclass(frozen=True)
class FlowSpec:
    """Offered load for one chain: packet arrival rate, size and chain depth."""

    arrival_rate: float  # packets/s
    packet_size: int = 1518  # bytes on the wire
    chain_length: int = 3  # NFs traversed per packet

    def __post_init__(self):
        ensure_finite("arrival_rate", self.arrival_rate)
        if self.arrival_rate < 0:
            raise ValueError("arrival_rate must be >= 0")
        ensure_positive("packet_size", self.packet_size)
        ensure_positive("chain_length", self.chain_length)


@dataclass(frozen=True)
class PowerParams:
    """Server power curve: idle/peak watts and the curvature exponent."""

    p_idle: float = 100.0
    p_max: float = 250.0
    exponent: float = 1.4

    def __post_init__(self):
        ensure_positive("p_idle", self.p_idle)
        ensure_positive("p_max", self.p_max)
        if self.p_max < self.p_idle:
            raise ValueError("p_max must be >= p_idle")
        if not (1.0 < self.exponent <= 2.0):
            raise ValueError("exponent must lie in (1, 2]")


@dataclass(frozen=True)
class ModelConstants:
    """Calibration constants of the service and power model."""

    base_cycles: float = 300.0  # cycles per packet per NF at zero miss rate
    miss_penalty: float = 4.0  # relative cycle inflation at 100% misses
    call_overhead_cycles: float = 40000.0  # per-batch driver/syscall cost
    miss_floor: float = 0.01  # compulsory miss rate
    dvfs_power_exponent: float = 2.0  # frequency weight in utilization

    def __post_init__(self):
        ensure_positive("base_cycles", self.base_cycles)
        ensure_positive("miss_penalty", self.miss_penalty)
        ensure_positive("call_overhead_cycles", self.call_overhead_cycles)
        ensure_fraction("miss_floor", self.miss_floor)
        ensure_positive("dvfs_power_exponent", self.dvfs_power_exponent)


DEFAULT_CONSTANTS = ModelConstants()


@dataclass
class ResourceAllocation:
    """Per-chain knob settings, one array entry per chain."""

    cores: np.ndarray
    freq_hz: np.ndarray
    llc_frac: np.ndarray
    dma: np.ndarray
    batch: np.ndarray

    def __post_init__(self):
        n = len(np.atleast_1d(self.cores))
        self.cores = as_float_vector("cores", np.atleast_1d(self.cores), n)
        self.freq_hz = as_float_vector("freq_hz", np.atleast_1d(self.freq_hz), n)
        self.llc_frac = as_float_vector("llc_frac", np.atleast_1d(self.llc_frac), n)
        self.dma = as_int_vector("dma", np.atleast_1d(self.dma), n)
        self.batch = as_int_vector("batch", np.atleast_1d(self.batch), n)

    @property
    def n_chains(self) -> int:
        return self.cores.shape[0]

    def validate(self, ranges: KnobRanges) -> None:
        """Raise ValueError unless every knob is inside the hardware envelope."""
        if np.any(self.cores < 0):
            raise ValueError("cores must be >= 0")
        total = float(self.cores.sum())
        if total > ranges.cores_max * (1 + 1e-9):
            raise ValueError(
                f"core total {total:.6g} exceeds cores_max {ranges.cores_max}"
            )
        levels = np.asarray(ranges.freq_levels)
        if not np.all(np.isin(self.freq_hz, levels)):
            raise ValueError("freq_hz entries must be drawn from ranges.freq_levels")
        ensure_fraction("llc_frac", self.llc_frac)
        if float(self.llc_frac.sum()) > 1 + 1e-9:
            raise ValueError("llc_frac must sum to at most 1")
        lo, hi = ranges.dma_desc_range
        if np.any(self.dma < lo) or np.any(self.dma > hi):
            raise ValueError(f"dma entries must lie in [{lo}, {hi}]")
        lo, hi = ranges.batch_range
        if np.any(self.batch < lo) or np.any(self.batch > hi):
            raise ValueError(f"batch entries must lie in [{lo}, {hi}]")

    def copy(self) -> "ResourceAllocation":
        return ResourceAllocation(
            self.cores.copy(),
            self.freq_hz.copy(),
            self.llc_frac.copy(),
            self.dma.copy(),
            self.batch.copy(),
        )

    def as_matrix(self) -> np.ndarray:
        """Knob matrix with one row per chain: cores, freq, llc, dma, batch."""
        return np.column_stack(
            [self.cores, self.freq_hz, self.llc_frac, self.dma, self.batch]
        ).astype(np.float64)


@dataclass(frozen=True)
class ChainObservation:
    """What the control plane sees for one chain after a control interval."""

    throughput_gbps: float
    energy_joules: float
    cpu_util: float
    arrival_rate: float


@dataclass(frozen=True)
class StepOutcome:
    observations: tuple[ChainObservation, ...]
    miss_rates: np.ndarray
    sla_violated: bool
    reward: float


def cache_miss_rate(llc_frac, dma, batch, packet_size, ranges: KnobRanges,
                    constants: ModelConstants = DEFAULT_CONSTANTS):
    """LLC miss rate of a chain given its cache share and working set.

    The working set is the packet buffer footprint (DMA ring plus one batch);
    the share is taken from the LLC left over after the DDIO reservation.
    Misses fall to the compulsory floor once the working set fits.
    """
    ensure_fraction("llc_frac", llc_frac)
    ensure_positive("dma", dma)
    ensure_positive("batch", batch)
    ensure_positive("packet_size", packet_size)
    share_bytes = np.asarray(llc_frac, dtype=np.float64) * ranges.llc_usable
    working_set = (np.asarray(batch, dtype=np.float64) + np.asarray(dma)) * packet_size
    overflow = np.clip(1.0 - share_bytes / working_set, 0.0, 1.0)
    miss = constants.miss_floor + (1.0 - constants.miss_floor) * overflow
    return miss if np.ndim(miss) else float(miss)


def cycles_per_packet(batch, miss_rate, chain_length,
                      constants: ModelConstants = DEFAULT_CONSTANTS):
    """CPU cycles needed per packet: per-NF work inflated by misses, plus the
    per-call overhead amortized over the batch."""
    per_nf = constants.base_cycles * np.asarray(chain_length, dtype=np.float64)
    work = per_nf * (1.0 + constants.miss_penalty * np.asarray(miss_rate))
    overhead = constants.call_overhead_cycles / np.asarray(batch, dtype=np.float64)
    return work + overhead


def service_rate(cores, freq_hz, batch, miss_rate, arrival_rate, packet_size,
                 chain_length, ranges: KnobRanges,
                 constants: ModelConstants = DEFAULT_CONSTANTS):
    """Delivered packet rate: CPU capacity capped by arrivals and line rate."""
    cores_arr = np.asarray(cores, dtype=np.float64)
    if np.any(cores_arr < 0):
        raise ValueError("cores must be >= 0")
    cpp = cycles_per_packet(batch, miss_rate, chain_length, constants)
    capacity = cores_arr * np.asarray(freq_hz, dtype=np.float64) / cpp
    line_pps = ranges.line_rate / (8.0 * np.asarray(packet_size, dtype=np.float64))
    delivered = np.minimum(capacity, np.minimum(arrival_rate, line_pps))
    return delivered if np.ndim(delivered) else float(delivered)


def power_draw(util, params: PowerParams = PowerParams()):
    """Server power in watts for an aggregate utilization in [0, 1].

    The curve rises steeply out of idle and flattens toward the peak, matching
    measured server behaviour; the exponent controls the bend.
    """
    ensure_fraction("util", util)
    u = np.asarray(util, dtype=np.float64)
    shape = 2.0 * u - np.power(u, params.exponent)
    p = (params.p_max - params.p_idle) * shape + params.p_idle
    return p if np.ndim(p) else float(p)


class ChainEnv:
    """Deterministic multi-chain environment advancing one control interval
    per step.

    Rewards and violation flags come from the attached service-level objective
    (see :mod:`nfsched.sla`); without one, rewards are zero.
    """

    def __init__(self, flows, ranges: KnobRanges | None = None,
                 power: PowerParams | None = None,
                 constants: ModelConstants | None = None,
                 sla=None, dt: float = 1.0, jitter: float = 0.0, seed: int = 0):
        self.flows = tuple(flows)
        if not self.flows:
            raise ValueError("at least one flow is required")
        self.ranges = ranges if ranges is not None else KnobRanges()
        self.power = power if power is not None else PowerParams()
        self.constants = constants if constants is not None else ModelConstants()
        self.sla = sla
        ensure_positive("dt", dt)
        self.dt = float(dt)
        ensure_fraction("jitter", jitter)
        self.jitter = float(jitter)
        self._seed = int(seed)
        self._arrivals = np.array([f.arrival_rate for f in self.flows])
        self._packet_sizes = np.array([f.packet_size for f in self.flows], dtype=float)
        self._chain_lengths = np.array([f.chain_length for f in self.flows], dtype=float)
        # Normalization ceilings for the observation vector.
        self._obs_max = np.array([
            self.ranges.line_rate / 1e9,
            self.power.p_max * self.dt,
            1.0,
            self.ranges.line_rate / (8.0 * 64.0),
        ])
        self.reset(seed)

    @property
    def seed(self) -> int:
        return self._seed

    @property
    def n_chains(self) -> int:
        return len(self.flows)

    @property
    def state_dim(self) -> int:
        return 4 * self.n_chains

    @property
    def action_dim(self) -> int:
        return 5 * self.n_chains

    def clone(self, seed: int | None = None) -> "ChainEnv":
        """Fresh environment with identical configuration."""
        return ChainEnv(
            self.flows, self.ranges, self.power, self.constants, self.sla,
            dt=self.dt, jitter=self.jitter,
            seed=self._seed if seed is None else seed,
        )

    def reset(self, seed: int | None = None) -> tuple[ChainObservation, ...]:
        if seed is not None:
            self._seed = int(seed)
        self._rng = np.random.default_rng(self._seed)
        self.step_count = 0
        obs = tuple(
            ChainObservation(0.0, 0.0, 0.0, float(a)) for a in self._arrivals
        )
        self._last_obs = obs
        return obs

    def step(self, alloc: ResourceAllocation, dt: float | None = None) -> StepOutcome:
        if alloc.n_chains != self.n_chains:
            raise ValueError(
                f"allocation covers {alloc.n_chains} chains, environment has {self.n_chains}"
            )
        alloc.validate(self.ranges)
        dt = self.dt if dt is None else float(dt)
        ensure_positive("dt", dt)

        arrivals = self._arrivals.astype(np.float64)
        if self.jitter > 0:
            wobble = self._rng.uniform(-self.jitter, self.jitter, size=self.n_chains)
            arrivals = arrivals * (1.0 + wobble)

        miss = np.asarray(cache_miss_rate(
            alloc.llc_frac, alloc.dma, alloc.batch, self._packet_sizes,
            self.ranges, self.constants))
        cpp = cycles_per_packet(alloc.batch, miss, self._chain_lengths, self.constants)
        available = alloc.cores * alloc.freq_hz
        line_pps = self.ranges.line_rate / (8.0 * self._packet_sizes)
        delivered = np.minimum(np.where(available > 0, available / cpp, 0.0),
                               np.minimum(arrivals, line_pps))
        throughput = delivered * self._packet_sizes * 8.0 / 1e9

        demand = arrivals * cpp
        busy = np.divide(demand, available, out=np.zeros_like(demand),
                         where=available > 0)
        util = np.where(available > 0, np.minimum(1.0, busy),
                        (arrivals > 0).astype(np.float64))

        # Aggregate utilization weighs busy cores by a frequency power factor,
        # so running the same cycles at a lower DVFS level costs less energy.
        freq_weight = (alloc.freq_hz / self.ranges.freq_max) ** self.constants.dvfs_power_exponent
        agg_util = float(np.clip(
            np.sum(util * alloc.cores * freq_weight) / self.ranges.cores_max, 0.0, 1.0))
        watts = power_draw(agg_util, self.power)
        core_total = float(alloc.cores.sum())
        if core_total > 0:
            share = alloc.cores / core_total
        else:
            share = np.full(self.n_chains, 1.0 / self.n_chains)
        energy = watts * dt * share

        obs = tuple(
            ChainObservation(float(t), float(e), float(x), float(a))
            for t, e, x, a in zip(throughput, energy, util, arrivals)
        )
        if self.sla is not None:
            rew = sla_mod.reward(self.sla, obs)
            violated = sla_mod.is_violation(self.sla, obs)
        else:
            rew, violated = 0.0, False
        self.step_count += 1
        self._last_obs = obs
        return StepOutcome(obs, miss, bool(violated), float(rew))

    def state_vector(self, observations) -> np.ndarray:
        """Flatten observations into a [0, 1]-normalized vector."""
        raw = np.array([
            (o.throughput_gbps, o.energy_joules, o.cpu_util, o.arrival_rate)
            for o in observations
        ])
        return np.clip(raw / self._obs_max, 0.0, 1.0).ravel()

    def project_action(self, raw: np.ndarray) -> ResourceAllocation:
        """Map a raw action in [-1, 1]^(5n) onto a feasible allocation.

        Oversubscribed cores and LLC shares are renormalized proportionally,
        the frequency snaps to the nearest level (ties toward the lower one)
        and the integer knobs round half-up into their ranges.
        """
        raw = np.asarray(raw, dtype=np.float64)
        if raw.shape != (self.action_dim,):
            raise ValueError(f"raw action must have shape ({self.action_dim},)")
        ensure_finite("raw action", raw)
        unit = (np.clip(raw, -1.0, 1.0).reshape(self.n_chains, 5) + 1.0) / 2.0
        r = self.ranges

        cores = unit[:, 0] * r.cores_max
        total = cores.sum()
        if total > r.cores_max:
            cores = cores * (r.cores_max / total)

        levels = np.asarray(r.freq_levels)
        target = r.freq_min + unit[:, 1] * (r.freq_max - r.freq_min)
        idx = np.searchsorted(levels, target).clip(1, len(levels) - 1)
        lower, upper = levels[idx - 1], levels[idx]
        freq = np.where(target - lower <= upper - target, lower, upper)

        llc = unit[:, 2]
        s = llc.sum()
        if s > 1.0:
            llc = llc / s

        dma_lo, dma_hi = r.dma_desc_range
        dma = np.floor(dma_lo + unit[:, 3] * (dma_hi - dma_lo) + 0.5).astype(np.int64)
        batch_lo, batch_hi = r.batch_range
        batch = np.floor(batch_lo + unit[:, 4] * (batch_hi - batch_lo) + 0.5).astype(np.int64)

        return ResourceAllocation(
            cores, freq,
            llc,
            np.clip(dma, dma_lo, dma_hi),
            np.clip(batch, batch_lo, batch_hi),
        )

    def default_allocation(self) -> ResourceAllocation:
        """Static reference allocation: one core per chain at the top DVFS
        level, an even LLC split and mid-range ring/batch settings."""
        n = self.n_chains
        r = self.ranges
        return ResourceAllocation(
            np.full(n, min(1.0, r.cores_max / n)),
            np.full(n, r.freq_max),
            np.full(n, 1.0 / n),
            np.full(n, int(np.clip(1024, *r.dma_desc_range)), dtype=np.int64),
            np.full(n, int(np.clip(32, *r.batch_range)), dtype=np.int64),
        )
