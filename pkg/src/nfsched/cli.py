"""Command-line entry points: train, eval, bench, compare.

Exit codes: 0 on success, 1 for configuration problems, 2 when a run aborts
on non-finite numbers.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness
from .agent import NumericsError
from .config import ConfigError, ExperimentConfig


class _Parser(argparse.ArgumentParser):
    # usage mistakes are configuration errors (exit 1), not argparse's 2
    def error(self, message):
        raise ConfigError(message)


def _add_common(sub):
    sub.add_argument("--config", required=True, type=Path,
                     help="scenario/experiment YAML file")
    sub.add_argument("--seed", type=int, default=None,
                     help="override run.seed")
    sub.add_argument("--deterministic", action="store_true", default=None,
                     help="force single-threaded reproducible mode")
    sub.add_argument("--out", type=Path, default=None,
                     help="override run.out_dir")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nfsched",
                     description="Energy-aware resource scheduling for "
                                 "virtual network-function chains")
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="run one training configuration")
    _add_common(train)

    evaluate = commands.add_parser("eval", help="evaluate a checkpoint greedily")
    _add_common(evaluate)
    evaluate.add_argument("--checkpoint", type=Path, default=None,
                          help="checkpoint directory "
                               "(default: <out_dir>/checkpoint)")
    evaluate.add_argument("--episodes", type=int, default=None)

    bench = commands.add_parser("bench", help="sweep one knob from defaults")
    _add_common(bench)
    bench.add_argument("--knob", required=True,
                       help="cores | freq_hz | llc_frac | dma | batch")
    bench.add_argument("--values", required=True,
                       help="comma-separated points; ':' separates per-chain "
                            "entries within a point, e.g. 0.9:0.1,0.2:0.8")

    compare = commands.add_parser("compare",
                                  help="train and rank several configurations")
    compare.add_argument("--config", required=True, nargs="+", type=Path)
    compare.add_argument("--seed", type=int, default=None)
    compare.add_argument("--deterministic", action="store_true", default=None)
    compare.add_argument("--out", type=Path, default=None)
    compare.add_argument("--episodes", type=int, default=None)
    return parser


def _load(args, out_override=True) -> ExperimentConfig:
    config = ExperimentConfig.from_file(args.config)
    return config.with_overrides(seed=args.seed, deterministic=args.deterministic,
                                 out_dir=args.out if out_override else None)


def _print_table(columns, rows):
    cells = [[f"{v:.6g}" if isinstance(v, float) else str(v) for v in row]
             for row in rows]
    widths = [max(len(str(col)), *(len(r[i]) for r in cells)) if cells else len(str(col))
              for i, col in enumerate(columns)]
    print("  ".join(str(c).ljust(w) for c, w in zip(columns, widths)))
    for row in cells:
        print("  ".join(v.ljust(w) for v, w in zip(row, widths)))


def _cmd_train(args) -> int:
    config = _load(args)
    result = harness.train(config)
    summary = result.summary
    print(f"scheduler: {config.scheduler_kind}")
    print(f"steps: {config.total_steps}  window: {summary['window_steps']}")
    print(f"mean throughput: {summary['mean_T_gbps']:.4f} Gb/s")
    print(f"mean energy: {summary['mean_E_joules']:.2f} J/step")
    print(f"efficiency: {summary['lambda_gbps_per_kj']:.4f} Gb/s per kJ")
    print(f"violation rate: {summary['violation_rate']:.4f}")
    print(f"metrics: {result.metrics_path}")
    print(f"checkpoint: {result.checkpoint_dir}")
    if result.aborted:
        print(f"numeric abort: {result.error}", file=sys.stderr)
        return 2
    return 0


def _cmd_eval(args) -> int:
    config = _load(args)
    env = config.build_env()
    checkpoint = args.checkpoint or config.out_dir / "checkpoint"
    scheduler = harness.load_checkpoint(checkpoint, env)
    summary = harness.evaluate(scheduler, config, args.episodes)
    out = config.out_dir
    harness.write_csv(out / "eval_summary.csv", harness.EVAL_SUMMARY_COLUMNS,
                      [summary.as_row()])
    _print_table(harness.EVAL_SUMMARY_COLUMNS, [summary.as_row()])
    return 0


def _parse_points(text: str):
    points = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if ":" in part:
                points.append(tuple(float(v) for v in part.split(":")))
            else:
                points.append(float(part))
        except ValueError as exc:
            raise ConfigError(f"cannot parse sweep value {part!r}") from exc
    if not points:
        raise ConfigError("--values produced no sweep points")
    return points


def _cmd_bench(args) -> int:
    config = _load(args)
    rows = harness.bench_sweep(config, args.knob, _parse_points(args.values))
    out = config.out_dir
    harness.write_csv(out / "bench.csv", harness.BENCH_COLUMNS,
                      [tuple(r[c] for c in harness.BENCH_COLUMNS) for r in rows])
    _print_table(harness.BENCH_COLUMNS,
                 [tuple(r[c] for c in harness.BENCH_COLUMNS) for r in rows])
    return 0


def _cmd_compare(args) -> int:
    configs = []
    for path in args.config:
        config = ExperimentConfig.from_file(path)
        configs.append(config.with_overrides(seed=args.seed,
                                             deterministic=args.deterministic))
    rows = harness.compare(configs, out_dir=args.out, episodes=args.episodes)
    _print_table(harness.COMPARE_COLUMNS,
                 [tuple(r[c] for c in harness.COMPARE_COLUMNS) for r in rows])
    return 0


_COMMANDS = {"train": _cmd_train, "eval": _cmd_eval, "bench": _cmd_bench,
             "compare": _cmd_compare}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except NumericsError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
