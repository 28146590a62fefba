"""Experiment configuration: YAML scenario files validated into typed builders.

A scenario file has four sections:

    scenario:   flows, knob ranges, power parameters, model constants, dt, jitter
    sla:        objective kind and its thresholds (optional)
    scheduler:  kind plus hyperparameters
    run:        total_steps, eval_every, seed, num_actors, deterministic, out_dir

Numeric leaves are coerced with float()/int() so YAML's sometimes-surprising
scalar typing (e.g. "1e10" parsing as a string) never leaks into the model.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import yaml

from .env import ChainEnv, FlowSpec, KnobRanges, ModelConstants, PowerParams
from .schedulers import (DdpgScheduler, EePstateScheduler, HeuristicScheduler,
                         QLearningScheduler, StaticScheduler)
from .sla import (EnergyEfficiency, MaxThroughput, MinEnergy,
                  default_reference_energy)


class ConfigError(ValueError):
    """A configuration file or value the run cannot proceed with."""


_TOP_KEYS = {"scenario", "sla", "scheduler", "run"}
_SCENARIO_KEYS = {"flows", "ranges", "power", "constants", "dt", "jitter"}
_FLOW_KEYS = {"arrival_rate", "packet_size", "chain_length"}
_RANGE_KEYS = {"cores_max", "freq_levels", "llc_total", "llc_ddio_reserved",
               "dma_desc_range", "batch_range", "line_rate"}
_POWER_KEYS = {"p_idle", "p_max", "exponent"}
_CONSTANT_KEYS = {"base_cycles", "miss_penalty", "call_overhead_cycles",
                  "miss_floor", "dvfs_power_exponent"}
_SLA_KEYS = {"kind", "energy_cap", "throughput_floor", "reference_energy",
             "reward_scale"}
_SCHEDULER_KEYS = {"kind", "params"}
_RUN_KEYS = {"total_steps", "eval_every", "eval_episodes", "seed", "num_actors",
             "deterministic", "out_dir"}

SCHEDULER_KINDS = ("ddpg", "heuristic", "qlearning", "ee_pstate", "static")
SLA_KINDS = ("max_throughput", "min_energy", "efficiency")


def _require_mapping(name: str, value) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{name} section must be a mapping")
    return value


def _reject_unknown(name: str, mapping: dict, allowed) -> None:
    unknown = set(mapping) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {name}: {', '.join(sorted(unknown))}")


def _float(mapping: dict, key: str, default=None) -> float:
    value = mapping.get(key, default)
    if value is None:
        raise ConfigError(f"missing required value: {key}")
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key} must be a number, got {value!r}") from exc


def _int(mapping: dict, key: str, default=None) -> int:
    value = mapping.get(key, default)
    if value is None:
        raise ConfigError(f"missing required value: {key}")
    try:
        as_float = float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key} must be an integer, got {value!r}") from exc
    if as_float != int(as_float):
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    return int(as_float)


@dataclass
class ExperimentConfig:
    """Validated view over one scenario file."""

    scenario: dict
    sla: dict | None
    scheduler: dict
    run: dict

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = _require_mapping("config", raw)
        _reject_unknown("config", raw, _TOP_KEYS)
        scenario = _require_mapping("scenario", raw.get("scenario"))
        _reject_unknown("scenario", scenario, _SCENARIO_KEYS)
        flows = scenario.get("flows")
        if not flows:
            raise ConfigError("scenario.flows must list at least one flow")
        for i, flow in enumerate(flows):
            flow = _require_mapping(f"scenario.flows[{i}]", flow)
            _reject_unknown(f"scenario.flows[{i}]", flow, _FLOW_KEYS)
            _float(flow, "arrival_rate")
        for section, keys in (("ranges", _RANGE_KEYS), ("power", _POWER_KEYS),
                              ("constants", _CONSTANT_KEYS)):
            _reject_unknown(f"scenario.{section}",
                            _require_mapping(section, scenario.get(section)), keys)

        sla = raw.get("sla")
        if sla is not None:
            sla = _require_mapping("sla", sla)
            _reject_unknown("sla", sla, _SLA_KEYS)
            if sla.get("kind") not in SLA_KINDS:
                raise ConfigError(
                    f"sla.kind must be one of {SLA_KINDS}, got {sla.get('kind')!r}")

        scheduler = _require_mapping("scheduler", raw.get("scheduler"))
        _reject_unknown("scheduler", scheduler, _SCHEDULER_KEYS)
        if scheduler.get("kind") not in SCHEDULER_KINDS:
            raise ConfigError(
                f"scheduler.kind must be one of {SCHEDULER_KINDS}, "
                f"got {scheduler.get('kind')!r}")
        _require_mapping("scheduler.params", scheduler.get("params"))

        run = _require_mapping("run", raw.get("run"))
        _reject_unknown("run", run, _RUN_KEYS)
        config = cls(scenario=scenario, sla=sla, scheduler=scheduler, run=run)
        if config.total_steps <= 0:
            raise ConfigError("run.total_steps must be positive")
        if config.eval_every <= 0:
            raise ConfigError("run.eval_every must be positive")
        if config.num_actors < 1:
            raise ConfigError("run.num_actors must be at least 1")
        return config

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        return cls.from_dict(raw)

    # run section accessors --------------------------------------------------

    @property
    def total_steps(self) -> int:
        return _int(self.run, "total_steps", 10_000)

    @property
    def eval_every(self) -> int:
        return _int(self.run, "eval_every", 5000)

    @property
    def eval_episodes(self) -> int:
        return _int(self.run, "eval_episodes", 5)

    @property
    def seed(self) -> int:
        return _int(self.run, "seed", 0)

    @property
    def num_actors(self) -> int:
        return _int(self.run, "num_actors", 1)

    @property
    def deterministic(self) -> bool:
        return bool(self.run.get("deterministic", True))

    @property
    def out_dir(self) -> Path:
        return Path(self.run.get("out_dir", "runs/out"))

    @property
    def scheduler_kind(self) -> str:
        return self.scheduler["kind"]

    def with_overrides(self, seed=None, deterministic=None, out_dir=None):
        run = dict(self.run)
        if seed is not None:
            run["seed"] = int(seed)
        if deterministic is not None:
            run["deterministic"] = bool(deterministic)
        if out_dir is not None:
            run["out_dir"] = str(out_dir)
        return ExperimentConfig(self.scenario, self.sla, self.scheduler, run)

    def scenario_signature(self) -> tuple:
        """Hashable identity of the physics + objective + seed; comparison
        runs must agree on it."""

        def freeze(obj):
            if isinstance(obj, dict):
                return tuple(sorted((k, freeze(v)) for k, v in obj.items()))
            if isinstance(obj, list):
                return tuple(freeze(v) for v in obj)
            return obj

        return freeze({"scenario": self.scenario, "sla": self.sla,
                       "seed": self.seed})

    # builders ----------------------------------------------------------------

    def build_sla(self):
        if self.sla is None:
            return None
        kind = self.sla["kind"]
        scale = _float(self.sla, "reward_scale", 1.0)
        if kind == "max_throughput":
            return MaxThroughput(energy_cap=_float(self.sla, "energy_cap"),
                                 reward_scale=scale)
        if kind == "min_energy":
            reference = self.sla.get("reference_energy")
            if reference is None:
                power = _require_mapping("power", self.scenario.get("power"))
                ranges = _require_mapping("ranges", self.scenario.get("ranges"))
                reference = default_reference_energy(
                    _float(power, "p_max", 250.0),
                    _float(self.scenario, "dt", 1.0),
                    _float(ranges, "cores_max", 16.0))
            return MinEnergy(throughput_floor=_float(self.sla, "throughput_floor"),
                             reference_energy=float(reference), reward_scale=scale)
        return EnergyEfficiency(reward_scale=scale)

    def build_env(self) -> ChainEnv:
        s = self.scenario
        flows = [FlowSpec(arrival_rate=_float(f, "arrival_rate"),
                          packet_size=_int(f, "packet_size", 1518),
                          chain_length=_int(f, "chain_length", 3))
                 for f in s["flows"]]
        kwargs = {}
        ranges = s.get("ranges")
        if ranges:
            rk = dict(ranges)
            if "freq_levels" in rk:
                rk["freq_levels"] = tuple(float(v) for v in rk["freq_levels"])
            for key in ("dma_desc_range", "batch_range"):
                if key in rk:
                    lo, hi = rk[key]
                    rk[key] = (int(lo), int(hi))
            for key in ("cores_max", "llc_total", "llc_ddio_reserved", "line_rate"):
                if key in rk:
                    rk[key] = float(rk[key])
            kwargs["ranges"] = KnobRanges(**rk)
        power = s.get("power")
        if power:
            kwargs["power"] = PowerParams(**{k: float(v) for k, v in power.items()})
        constants = s.get("constants")
        if constants:
            kwargs["constants"] = ModelConstants(
                **{k: float(v) for k, v in constants.items()})
        try:
            return ChainEnv(flows, sla=self.build_sla(),
                            dt=_float(s, "dt", 1.0),
                            jitter=_float(s, "jitter", 0.0),
                            seed=self.seed, **kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid scenario: {exc}") from exc

    def build_scheduler(self, replay_recorder=None):
        kind = self.scheduler_kind
        params = dict(self.scheduler.get("params") or {})
        try:
            if kind == "static":
                return StaticScheduler(**params)
            if kind == "heuristic":
                return HeuristicScheduler(**params)
            if kind == "ee_pstate":
                return EePstateScheduler(**params)
            if kind == "qlearning":
                params.setdefault("seed", self.seed)
                return QLearningScheduler(**params)
            params.setdefault("seed", self.seed)
            params.setdefault("num_actors", self.num_actors)
            params.setdefault("threaded",
                              not self.deterministic and self.num_actors > 1)
            if "hidden" in params:
                params["hidden"] = tuple(int(h) for h in params["hidden"])
            return DdpgScheduler(replay_recorder=replay_recorder, **params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid scheduler.params for {kind}: {exc}") from exc
