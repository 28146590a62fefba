"""Energy-aware resource scheduling for virtualized network-function chains."""

from .agent import DdpgAgent, NumericsError
from .config import ConfigError, ExperimentConfig
from .env import (
    ChainEnv,
    ChainObservation,
    FlowSpec,
    KnobRanges,
    ModelConstants,
    PowerParams,
    ResourceAllocation,
    StepOutcome,
    cache_miss_rate,
    cycles_per_packet,
    power_draw,
    service_rate,
)
from .harness import (
    EvalSummary,
    TrainResult,
    bench_sweep,
    compare,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .mlp import Mlp, load_mlp, save_mlp
from .replay import LocalBuffer, ParamServer, PrioritizedBuffer, Transition
from .schedulers import (
    DdpgScheduler,
    DesPredictor,
    EePstateScheduler,
    HeuristicScheduler,
    QLearningScheduler,
    QTable,
    StaticScheduler,
)
from .sla import (
    EnergyEfficiency,
    MaxThroughput,
    MinEnergy,
    SlaSpec,
    default_reference_energy,
    efficiency,
    energy_saving,
)

__version__ = "0.1.0"

__all__ = [
    "ChainEnv",
    "ChainObservation",
    "FlowSpec",
    "KnobRanges",
    "ModelConstants",
    "PowerParams",
    "ResourceAllocation",
    "StepOutcome",
    "cache_miss_rate",
    "cycles_per_packet",
    "power_draw",
    "service_rate",
    "EnergyEfficiency",
    "MaxThroughput",
    "MinEnergy",
    "SlaSpec",
    "default_reference_energy",
    "efficiency",
    "energy_saving",
    "Mlp",
    "load_mlp",
    "save_mlp",
    "DdpgAgent",
    "NumericsError",
    "LocalBuffer",
    "ParamServer",
    "PrioritizedBuffer",
    "Transition",
    "DdpgScheduler",
    "DesPredictor",
    "EePstateScheduler",
    "HeuristicScheduler",
    "QLearningScheduler",
    "QTable",
    "StaticScheduler",
    "ConfigError",
    "ExperimentConfig",
    "EvalSummary",
    "TrainResult",
    "bench_sweep",
    "compare",
    "evaluate",
    "load_checkpoint",
    "save_checkpoint",
    "train",
    "__version__",
]
