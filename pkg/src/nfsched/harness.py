"""Experiment orchestration: training runs, evaluation, knob sweeps, and
scheduler comparison, with every artifact written as deterministic CSV.

Conventions used throughout: one episode is 200 control steps, summary
windows cover the trailing 1000 steps, and no output file ever contains a
timestamp, so identical (config, seed) pairs reproduce identical bytes.
"""

from __future__ import annotations

import csv
import json
import threading
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .agent import DdpgAgent, NumericsError
from .config import ConfigError, ExperimentConfig
from .env import ChainEnv, ResourceAllocation, StepOutcome
from .mlp import load_mlp, save_mlp
from .replay import PrioritizedBuffer
from .schedulers import (BaseScheduler, DdpgScheduler, EePstateScheduler,
                         HeuristicScheduler, QLearningScheduler,
                         StaticScheduler)
from .sla import energy_saving

EPISODE_LEN = 200
SUMMARY_WINDOW = 1000

METRICS_COLUMNS = ("step", "chain_id", "T_gbps", "E_joules", "util",
                   "miss_rate", "cores", "freq_hz", "llc_frac", "dma", "batch",
                   "reward", "sla_violated")
EVAL_COLUMNS = ("step", "mean_T_gbps", "mean_E_joules", "lambda_gbps_per_kj",
                "violation_rate")
REPLAY_COLUMNS = ("learner_step", "size", "root_priority", "eviction_count",
                  "flush_count")
BENCH_COLUMNS = ("knob", "value", "T_gbps", "E_joules", "miss_rate")
COMPARE_COLUMNS = ("scheduler", "mean_T_gbps", "mean_E_joules",
                   "lambda_gbps_per_kj", "violation_rate", "energy_saving")


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, columns, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


class MetricsWriter:
    """Collects per-step, per-chain metric rows; thread-safe; rows are
    sorted by (step, chain) on save so output bytes never depend on
    interleaving."""

    def __init__(self):
        self._rows = []
        self._lock = threading.Lock()

    def record(self, step: int, alloc: ResourceAllocation, outcome: StepOutcome):
        rows = [
            (int(step), i,
             float(obs.throughput_gbps), float(obs.energy_joules),
             float(obs.cpu_util), float(outcome.miss_rates[i]),
             float(alloc.cores[i]), float(alloc.freq_hz[i]),
             float(alloc.llc_frac[i]), int(alloc.dma[i]), int(alloc.batch[i]),
             float(outcome.reward), int(outcome.sla_violated))
            for i, obs in enumerate(outcome.observations)
        ]
        with self._lock:
            self._rows.extend(rows)

    def __len__(self) -> int:
        with self._lock:
            return len(self._rows)

    def save(self, path) -> Path:
        with self._lock:
            rows = sorted(self._rows, key=lambda r: (r[0], r[1]))
        return write_csv(path, METRICS_COLUMNS, rows)


def _window_summary(window) -> dict:
    t = np.array([w[0] for w in window])
    e = np.array([w[1] for w in window])
    violated = np.array([w[2] for w in window], dtype=float)
    total_e = float(e.sum())
    return {
        "window_steps": len(window),
        "mean_T_gbps": float(t.mean()) if len(t) else 0.0,
        "mean_E_joules": float(e.mean()) if len(e) else 0.0,
        "lambda_gbps_per_kj": 1000.0 * float(t.sum()) / total_e if total_e > 0 else 0.0,
        "violation_rate": float(violated.mean()) if len(violated) else 0.0,
    }


# -- checkpoints -------------------------------------------------------------------


def save_checkpoint(scheduler: BaseScheduler, directory) -> Path:
    """Persist a fitted scheduler's policy state plus a manifest naming it."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    params = {k: v for k, v in scheduler.get_params().items()
              if k != "replay_recorder" and not callable(v)}
    manifest = {"params": params}

    if isinstance(scheduler, DdpgScheduler):
        manifest["kind"] = "ddpg"
        manifest["params"]["hidden"] = list(scheduler.hidden)
        manifest["learner_steps"] = int(scheduler.learner_steps_)
        agent = scheduler.agent_
        manifest["state_dim"] = agent.state_dim
        manifest["action_dim"] = agent.action_dim
        for name in ("actor", "critic", "target_actor", "target_critic"):
            save_mlp(getattr(agent, name), directory / f"{name}.net")
    elif isinstance(scheduler, QLearningScheduler):
        manifest["kind"] = "qlearning"
        np.savez(directory / "table.npz", values=scheduler.table_.values,
                 epsilon=scheduler.table_.epsilon)
    elif isinstance(scheduler, HeuristicScheduler):
        manifest["kind"] = "heuristic"
        manifest["state"] = {
            "allocation": _allocation_to_lists(scheduler.allocation_),
            "freq_index": int(scheduler.freq_index_),
            "batch": int(scheduler.batch_),
            "best_lambda": float(scheduler.best_lambda_),
        }
    elif isinstance(scheduler, EePstateScheduler):
        manifest["kind"] = "ee_pstate"
        manifest["state"] = {
            "allocation": _allocation_to_lists(scheduler.allocation_),
            "levels": [p.level for p in scheduler.predictors_],
            "trends": [p.trend for p in scheduler.predictors_],
        }
    elif isinstance(scheduler, StaticScheduler):
        manifest["kind"] = "static"
        manifest["state"] = {"allocation": _allocation_to_lists(scheduler.allocation_)}
        manifest["params"] = {}
    else:
        raise ConfigError(f"cannot checkpoint {type(scheduler).__name__}")

    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return directory


def _allocation_to_lists(alloc: ResourceAllocation) -> dict:
    return {
        "cores": [float(v) for v in alloc.cores],
        "freq_hz": [float(v) for v in alloc.freq_hz],
        "llc_frac": [float(v) for v in alloc.llc_frac],
        "dma": [int(v) for v in alloc.dma],
        "batch": [int(v) for v in alloc.batch],
    }


def _allocation_from_lists(state: dict) -> ResourceAllocation:
    return ResourceAllocation(
        np.array(state["cores"]), np.array(state["freq_hz"]),
        np.array(state["llc_frac"]), np.array(state["dma"]),
        np.array(state["batch"]))


def load_checkpoint(directory, env: ChainEnv) -> BaseScheduler:
    """Rebuild a fitted scheduler from a checkpoint directory, bound to the
    given environment."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"no checkpoint manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    kind = manifest.get("kind")
    params = manifest.get("params", {})

    if kind == "ddpg":
        params["hidden"] = tuple(params.get("hidden", (64, 64)))
        scheduler = DdpgScheduler(**params)
        actor = load_mlp(directory / "actor.net")
        if (actor.layer_sizes[0] != env.state_dim
                or actor.layer_sizes[-1] != env.action_dim):
            raise ConfigError(
                f"checkpoint dimensions {actor.layer_sizes[0]}/{actor.layer_sizes[-1]} "
                f"do not match environment {env.state_dim}/{env.action_dim}")
        agent = DdpgAgent(env.state_dim, env.action_dim, hidden=params["hidden"],
                          seed=params.get("seed", 0))
        agent.actor = actor
        agent.critic = load_mlp(directory / "critic.net")
        agent.target_actor = load_mlp(directory / "target_actor.net")
        agent.target_critic = load_mlp(directory / "target_critic.net")
        scheduler.agent_ = agent
        scheduler.learner_steps_ = int(manifest.get("learner_steps", 0))
        scheduler.buffer_ = PrioritizedBuffer(int(scheduler.buffer_capacity))
    elif kind == "qlearning":
        scheduler = QLearningScheduler(**params)
        scheduler._setup(env)
        payload = np.load(directory / "table.npz")
        if payload["values"].shape != scheduler.table_.values.shape:
            raise ConfigError("checkpoint table does not match configuration")
        scheduler.table_.values = payload["values"]
        scheduler.table_.epsilon = float(payload["epsilon"])
    elif kind == "heuristic":
        scheduler = HeuristicScheduler(**params)
        state = manifest["state"]
        scheduler.allocation_ = _allocation_from_lists(state["allocation"])
        scheduler.freq_index_ = int(state["freq_index"])
        scheduler.batch_ = int(state["batch"])
        scheduler.best_lambda_ = float(state["best_lambda"])
    elif kind == "ee_pstate":
        scheduler = EePstateScheduler(**params)
        scheduler._setup(env)
        state = manifest["state"]
        scheduler.allocation_ = _allocation_from_lists(state["allocation"])
        for predictor, level, trend in zip(scheduler.predictors_,
                                           state["levels"], state["trends"]):
            predictor.level = level
            predictor.trend = float(trend)
    elif kind == "static":
        scheduler = StaticScheduler()
        scheduler.allocation_ = _allocation_from_lists(manifest["state"]["allocation"])
    else:
        raise ConfigError(f"unknown checkpoint kind {kind!r}")

    scheduler.env_ = env
    return scheduler


# -- training ----------------------------------------------------------------------


@dataclass
class TrainResult:
    scheduler: BaseScheduler
    out_dir: Path
    metrics_path: Path
    eval_path: Path
    checkpoint_dir: Path
    replay_stats_path: Path | None
    summary: dict
    total_training_energy: float
    aborted: bool = False
    error: str | None = None


def train(config: ExperimentConfig) -> TrainResult:
    """Run one training configuration end to end and persist its artifacts."""
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    env = config.build_env()

    replay_rows: list[tuple] = []

    def replay_recorder(step, stats):
        replay_rows.append((int(step), int(stats["size"]),
                            float(stats["root_priority"]),
                            int(stats["evictions"]), int(stats["flushes"])))

    is_ddpg = config.scheduler_kind == "ddpg"
    scheduler = config.build_scheduler(
        replay_recorder=replay_recorder if is_ddpg else None)

    writer = MetricsWriter()
    window = deque(maxlen=SUMMARY_WINDOW)
    eval_rows: list[tuple] = []
    energy_total = 0.0
    checkpoint_dir = out / "checkpoint"
    serial = config.deterministic or config.num_actors == 1

    def recorder(step, alloc, outcome):
        nonlocal energy_total
        writer.record(step, alloc, outcome)
        t = sum(o.throughput_gbps for o in outcome.observations)
        e = sum(o.energy_joules for o in outcome.observations)
        energy_total += e
        window.append((t, e, outcome.sla_violated))
        if (step + 1) % config.eval_every == 0:
            s = _window_summary(window)
            eval_rows.append((step + 1, s["mean_T_gbps"], s["mean_E_joules"],
                              s["lambda_gbps_per_kj"], s["violation_rate"]))
            if serial:
                save_checkpoint(scheduler, checkpoint_dir)

    aborted = False
    error = None
    try:
        scheduler.fit(env, config.total_steps, recorder=recorder)
    except NumericsError as exc:
        aborted = True
        error = str(exc)
        with open(out / "abort.json", "w") as fh:
            json.dump({"error": error, "steps_recorded": len(writer) // env.n_chains},
                      fh, indent=2, sort_keys=True)
            fh.write("\n")

    metrics_path = writer.save(out / "metrics.csv")
    eval_path = write_csv(out / "eval.csv", EVAL_COLUMNS, eval_rows)
    replay_path = None
    if is_ddpg:
        replay_path = write_csv(out / "replay_stats.csv", REPLAY_COLUMNS, replay_rows)
    if not aborted:
        save_checkpoint(scheduler, checkpoint_dir)

    return TrainResult(
        scheduler=scheduler, out_dir=out, metrics_path=metrics_path,
        eval_path=eval_path, checkpoint_dir=checkpoint_dir,
        replay_stats_path=replay_path, summary=_window_summary(window),
        total_training_energy=energy_total, aborted=aborted, error=error)


# -- evaluation --------------------------------------------------------------------


@dataclass
class EvalSummary:
    episodes: int
    mean_T_gbps: float
    std_T_gbps: float
    mean_E_joules: float
    std_E_joules: float
    lambda_gbps_per_kj: float
    std_lambda: float
    violation_rate: float
    std_violation_rate: float
    mean_reward: float
    total_energy: float

    def as_row(self) -> tuple:
        return (self.episodes, self.mean_T_gbps, self.std_T_gbps,
                self.mean_E_joules, self.std_E_joules, self.lambda_gbps_per_kj,
                self.std_lambda, self.violation_rate, self.std_violation_rate,
                self.mean_reward, self.total_energy)


EVAL_SUMMARY_COLUMNS = ("episodes", "mean_T_gbps", "std_T_gbps",
                        "mean_E_joules", "std_E_joules", "lambda_gbps_per_kj",
                        "std_lambda", "violation_rate", "std_violation_rate",
                        "mean_reward", "total_energy")


def evaluate(scheduler: BaseScheduler, config: ExperimentConfig,
             episodes: int | None = None, recorder=None) -> EvalSummary:
    """Greedy evaluation over fixed-length episodes on fresh environment
    clones; learning and exploration stay off."""
    episodes = config.eval_episodes if episodes is None else int(episodes)
    if episodes < 1:
        raise ConfigError("episodes must be at least 1")
    env = config.build_env()
    per_episode = []
    for k in range(episodes):
        ep_env = env.clone(seed=config.seed + 10_000 + k)
        totals = {"t": 0.0, "e": 0.0, "violations": 0, "reward": 0.0}

        def collect(step, alloc, outcome, totals=totals):
            totals["t"] += sum(o.throughput_gbps for o in outcome.observations)
            totals["e"] += sum(o.energy_joules for o in outcome.observations)
            totals["violations"] += int(outcome.sla_violated)
            totals["reward"] += outcome.reward
            if recorder is not None:
                recorder(step, alloc, outcome)

        scheduler.run(ep_env, EPISODE_LEN, learn=False, recorder=collect)
        lam = 1000.0 * totals["t"] / totals["e"] if totals["e"] > 0 else 0.0
        per_episode.append((totals["t"] / EPISODE_LEN, totals["e"] / EPISODE_LEN,
                            lam, totals["violations"] / EPISODE_LEN,
                            totals["reward"] / EPISODE_LEN, totals["e"]))

    stats = np.array(per_episode)
    return EvalSummary(
        episodes=episodes,
        mean_T_gbps=float(stats[:, 0].mean()), std_T_gbps=float(stats[:, 0].std()),
        mean_E_joules=float(stats[:, 1].mean()), std_E_joules=float(stats[:, 1].std()),
        lambda_gbps_per_kj=float(stats[:, 2].mean()), std_lambda=float(stats[:, 2].std()),
        violation_rate=float(stats[:, 3].mean()),
        std_violation_rate=float(stats[:, 3].std()),
        mean_reward=float(stats[:, 4].mean()),
        total_energy=float(stats[:, 5].sum()))


# -- knob sweeps --------------------------------------------------------------------


_SWEEP_KNOBS = ("cores", "freq_hz", "llc_frac", "dma", "batch")


def bench_sweep(config: ExperimentConfig, knob: str, values) -> list[dict]:
    """Hold everything at the default allocation, sweep one knob, and report
    (value, throughput, energy, miss rate) per point.  Values may be scalars
    or per-chain vectors."""
    if knob not in _SWEEP_KNOBS:
        raise ConfigError(f"knob must be one of {_SWEEP_KNOBS}, got {knob!r}")
    env = config.build_env()
    base = env.default_allocation()
    rows = []
    for value in values:
        alloc = base.copy()
        arr = np.atleast_1d(np.asarray(value, dtype=np.float64))
        if arr.shape[0] not in (1, env.n_chains):
            raise ConfigError(
                f"value for {knob} must be scalar or one entry per chain")
        target = getattr(alloc, knob)
        target[:] = arr if arr.shape[0] == env.n_chains else arr[0]
        probe = env.clone()
        probe.reset()
        outcome = probe.step(alloc)
        rows.append({
            "knob": knob,
            "value": ":".join(repr(float(v)) for v in arr),
            "T_gbps": sum(o.throughput_gbps for o in outcome.observations),
            "E_joules": sum(o.energy_joules for o in outcome.observations),
            "miss_rate": float(np.mean(outcome.miss_rates)),
        })
    return rows


# -- comparison ---------------------------------------------------------------------


def compare(configs: list[ExperimentConfig], out_dir=None,
            episodes: int | None = None) -> list[dict]:
    """Train and evaluate each configuration on the identical scenario and
    rank the schedulers by energy efficiency.  Energy saving is measured
    against the static baseline, charging learners for their training
    energy (negative saving = consumed less than the baseline)."""
    if not configs:
        raise ConfigError("compare needs at least one configuration")
    signature = configs[0].scenario_signature()
    for other in configs[1:]:
        if other.scenario_signature() != signature:
            raise ConfigError("compare requires identical scenario/sla/seed "
                              "sections across configurations")
    out_dir = Path(out_dir) if out_dir is not None else configs[0].out_dir / "compare"

    baseline_cfg = ExperimentConfig(configs[0].scenario, configs[0].sla,
                                    {"kind": "static", "params": {}},
                                    dict(configs[0].run))
    static = StaticScheduler()
    static.fit(baseline_cfg.build_env(), 1)
    baseline = evaluate(static, baseline_cfg, episodes)

    rows = []
    for index, cfg in enumerate(configs):
        run_cfg = cfg.with_overrides(
            out_dir=out_dir / f"{index}_{cfg.scheduler_kind}")
        result = train(run_cfg)
        if result.aborted:
            raise NumericsError(
                f"{cfg.scheduler_kind} aborted during comparison: {result.error}")
        summary = evaluate(result.scheduler, cfg, episodes)
        train_energy = (0.0 if cfg.scheduler_kind == "static"
                        else result.total_training_energy)
        saving = energy_saving(summary.total_energy, train_energy,
                               baseline.total_energy)
        rows.append({
            "scheduler": cfg.scheduler_kind,
            "mean_T_gbps": summary.mean_T_gbps,
            "mean_E_joules": summary.mean_E_joules,
            "lambda_gbps_per_kj": summary.lambda_gbps_per_kj,
            "violation_rate": summary.violation_rate,
            "energy_saving": saving,
        })
    rows.sort(key=lambda r: -r["lambda_gbps_per_kj"])
    write_csv(out_dir / "compare.csv", COMPARE_COLUMNS,
              [tuple(r[c] for c in COMPARE_COLUMNS) for r in rows])
    return rows
