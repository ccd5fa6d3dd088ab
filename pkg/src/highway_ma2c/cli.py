"""Command line interface: train, evaluate, ablation, rollout.

Every RunConfig field is exposed as a flag (kebab-case). A config file can
seed the run; explicitly passed flags override file values.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import harness
from .config import (
    ConfigError,
    DENSITY_CHOICES,
    RunConfig,
    SCOPE_CHOICES,
    TRUNK_CHOICES,
    load_config,
)
from .ma2c import CheckpointError

log = logging.getLogger(__name__)

_CHOICES = {
    "density_mode": DENSITY_CHOICES,
    "reward_scope": SCOPE_CHOICES,
    "trunk": TRUNK_CHOICES,
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config", type=Path, default=None, help="flat key = value config file"
    )
    defaults = RunConfig()
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        default = getattr(defaults, f.name)
        if f.name == "seeds":
            parser.add_argument(
                "--seed",
                dest="seeds",
                type=int,
                action="append",
                default=None,
                help=f"training seed, repeatable (default {list(default)})",
            )
        elif f.name == "density_mode":
            parser.add_argument(
                "--density",
                "--density-mode",
                dest="density_mode",
                choices=_CHOICES[f.name],
                default=None,
                help=f"traffic density mode (default {default})",
            )
        elif f.name in _CHOICES:
            parser.add_argument(
                flag, choices=_CHOICES[f.name], default=None,
                help=f"(default {default})",
            )
        elif _FIELD_PARSERS[f.name] is bool:
            parser.add_argument(
                flag,
                action=argparse.BooleanOptionalAction,
                default=None,
                help=f"(default {default})",
            )
        else:
            parser.add_argument(
                flag,
                type=_FIELD_PARSERS[f.name],
                default=None,
                help=f"(default {default})",
            )


_FIELD_PARSERS = {}
for _f in fields(RunConfig):
    _FIELD_PARSERS[_f.name] = {
        "str": str,
        "int": int,
        "float": float,
        "bool": bool,
        "tuple[int, ...]": None,
    }[_f.type if isinstance(_f.type, str) else _f.type.__name__]


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig()
    if args.config is not None:
        config = load_config(args.config, config)
    overrides = {}
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is None:
            continue
        overrides[f.name] = tuple(value) if f.name == "seeds" else value
    return dataclasses.replace(config, **overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="highway-ma2c",
        description=(
            "Two-lane mixed-traffic simulator with a multi-agent "
            "advantage actor-critic lane-change trainer"
        ),
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a policy, one run per seed")
    _add_config_flags(p_train)
    p_train.add_argument("--name", default="train", help="run directory name")
    p_train.add_argument(
        "--resume", type=Path, default=None, help="checkpoint to continue from"
    )

    p_eval = sub.add_parser("evaluate", help="greedy evaluation of a checkpoint")
    _add_config_flags(p_eval)
    p_eval.add_argument("--checkpoint", type=Path, required=True)
    p_eval.add_argument("--episodes", type=int, default=3)
    p_eval.add_argument("--eval-seed", type=int, default=0)
    p_eval.add_argument(
        "--save",
        type=Path,
        default=None,
        help="metrics row destination (default: eval_<density>_s<seed>.csv "
        "next to the checkpoint)",
    )

    p_abl = sub.add_parser("ablation", help="run both arms of one ablation axis")
    _add_config_flags(p_abl)
    p_abl.add_argument(
        "--axis", choices=sorted(harness.ABLATION_AXES), required=True
    )
    p_abl.add_argument("--name", default=None, help="run directory name")

    p_roll = sub.add_parser("rollout", help="export a per-step trace of one episode")
    _add_config_flags(p_roll)
    p_roll.add_argument("--checkpoint", type=Path, required=True)
    p_roll.add_argument("--steps", type=int, default=100)
    p_roll.add_argument("--rollout-seed", type=int, default=0)
    p_roll.add_argument(
        "--trace", type=Path, default=None, help="trace file path (default run dir)"
    )
    return parser


def _cmd_train(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    run_dir = harness.run_training(config, args.name, resume=args.resume)
    print(f"run directory: {run_dir}")
    for seed in config.seeds:
        print(f"  seed {seed}: {run_dir / f'seed_{seed}' / harness.METRICS_FILE}")
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    row, metrics = harness.evaluate_checkpoint(
        args.checkpoint, config, args.episodes, args.eval_seed
    )
    print(
        f"return {metrics.return_mean:.3f} +- {metrics.return_std:.3f} | "
        f"collision rate {metrics.collision_rate:.3f} | "
        f"mean speed {metrics.mean_speed:.2f} m/s | "
        f"accel std {metrics.accel_std:.3f} m/s^2 | "
        f"lane changes/episode {metrics.lane_changes_per_episode:.2f}"
    )
    save_path = args.save
    if save_path is None:
        save_path = args.checkpoint.parent / (
            f"eval_{config.density_mode}_s{args.eval_seed}.csv"
        )
    harness.write_metrics([row], save_path)
    print(f"saved: {save_path}")
    return 0


def _cmd_ablation(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    run_dir = harness.run_ablation(config, args.axis, args.name)
    print(f"run directory: {run_dir}")
    print(f"comparison table: {run_dir / 'comparison.csv'}")
    return 0


def _cmd_rollout(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    bundle, _, _ = harness.PolicyBundle.load(args.checkpoint)
    if bundle.n_obs != config.n_obs:
        raise CheckpointError(
            f"checkpoint expects n_obs={bundle.n_obs}, config has {config.n_obs}"
        )
    records = harness.rollout_trace(bundle, config, args.rollout_seed, args.steps)
    trace_path = args.trace
    if trace_path is None:
        run_dir = harness.prepare_run_dir(config, "rollout")
        trace_path = run_dir / harness.TRACE_FILE
    harness.write_trace(records, trace_path)
    print(f"trace: {trace_path} ({len(records)} steps)")
    if config.figures:
        from . import plots

        figure_path = Path(trace_path).with_suffix(".png")
        plots.rollout_figure(records, figure_path)
        print(f"figure: {figure_path}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    handlers = {
        "train": _cmd_train,
        "evaluate": _cmd_evaluate,
        "ablation": _cmd_ablation,
        "rollout": _cmd_rollout,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, CheckpointError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
