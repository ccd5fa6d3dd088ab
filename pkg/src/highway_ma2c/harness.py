"""Reproducibility surface: run directories, metrics tables, ablation
runners, rollout traces and baseline policies.

Every run directory is self-describing: the config snapshot, the metrics
table and the checkpoints are enough to resume or re-evaluate the run. The
delimited outputs are the primary artifacts; matplotlib figures are rendered
next to them as a convenience report and can be switched off.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import ma2c
from .config import RunConfig, save_config
from .env import HighwayEnv
from .ma2c import (
    EvalMetrics,
    EvalRecord,
    IdlePolicy,
    PolicyBundle,
    RandomPolicy,
    TrainResult,
)

log = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
CONFIG_FILE = "config.txt"
SUMMARY_FILE = "summary.txt"
BEST_CHECKPOINT = "best.ckpt"
LAST_CHECKPOINT = "last.ckpt"
TRACE_FILE = "trace.jsonl"

#: Fixed column order of the metrics table. Wall-clock time lives in the
#: run summary instead so that identically seeded runs are byte-identical.
METRICS_COLUMNS = (
    "step",
    "episode",
    "eval_return_mean",
    "eval_return_std",
    "collision_rate",
    "mean_speed",
    "accel_std",
    "lane_changes_per_episode",
)


@dataclass
class MetricsRow:
    step: int
    episode: int
    eval_return_mean: float
    eval_return_std: float
    collision_rate: float
    mean_speed: float
    accel_std: float
    lane_changes_per_episode: float

    @classmethod
    def from_eval(cls, record: EvalRecord) -> "MetricsRow":
        m = record.metrics
        return cls(
            step=record.step,
            episode=record.episode,
            eval_return_mean=m.return_mean,
            eval_return_std=m.return_std,
            collision_rate=m.collision_rate,
            mean_speed=m.mean_speed,
            accel_std=m.accel_std,
            lane_changes_per_episode=m.lane_changes_per_episode,
        )


def _format_cell(value) -> str:
    if isinstance(value, int):
        return str(value)
    return format(value, ".10g")


def write_metrics(rows: list[MetricsRow], path: Path) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for row in rows:
            writer.writerow(
                _format_cell(getattr(row, col)) for col in METRICS_COLUMNS
            )


def read_metrics(path: Path) -> list[MetricsRow]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != METRICS_COLUMNS:
            raise ValueError(f"unexpected metrics header {header!r} in {path}")
        rows = []
        for raw in reader:
            rows.append(
                MetricsRow(
                    step=int(raw[0]),
                    episode=int(raw[1]),
                    eval_return_mean=float(raw[2]),
                    eval_return_std=float(raw[3]),
                    collision_rate=float(raw[4]),
                    mean_speed=float(raw[5]),
                    accel_std=float(raw[6]),
                    lane_changes_per_episode=float(raw[7]),
                )
            )
    return rows


def baseline_policy(kind: str):
    """Reference policies usable wherever a checkpoint policy is."""
    if kind == "random":
        return RandomPolicy()
    if kind == "idle":
        return IdlePolicy()
    raise ValueError(f"unknown baseline policy {kind!r}")


def _unique_dir(base: Path) -> Path:
    if not base.exists():
        return base
    for i in range(2, 10_000):
        candidate = base.with_name(f"{base.name}-{i}")
        if not candidate.exists():
            return candidate
    raise RuntimeError(f"cannot find a free run directory near {base}")


def prepare_run_dir(config: RunConfig, name: str) -> Path:
    run_dir = _unique_dir(config.output_root() / name)
    run_dir.mkdir(parents=True)
    save_config(config, run_dir / CONFIG_FILE)
    return run_dir


def train_one_seed(
    config: RunConfig,
    seed: int,
    seed_dir: Path,
    *,
    resume: Optional[Path] = None,
) -> TrainResult:
    """Train a single seed into ``seed_dir`` and write all its artifacts."""
    seed_dir.mkdir(parents=True, exist_ok=True)
    save_config(dataclasses.replace(config, seeds=(seed,)), seed_dir / CONFIG_FILE)

    initial = None
    start_step = start_episode = 0
    if resume is not None:
        initial, start_step, start_episode = PolicyBundle.load(resume)
        if initial.trunk != config.trunk:
            raise ValueError(
                f"checkpoint {resume} holds a {initial.trunk}-trunk policy but "
                f"the run requests trunk={config.trunk}; pass a matching "
                f"checkpoint or change the trunk setting"
            )

    started = time.perf_counter()
    result = ma2c.train(
        config.env_config(),
        config.hyperparams(seed),
        config.density_mode,
        config.trunk,
        initial_bundle=initial,
        start_step=start_step,
        start_episode=start_episode,
    )
    elapsed = time.perf_counter() - started

    rows = [MetricsRow.from_eval(rec) for rec in result.evals]
    write_metrics(rows, seed_dir / METRICS_FILE)
    result.best_bundle.save(
        seed_dir / BEST_CHECKPOINT, result.steps, result.episodes
    )
    result.bundle.save(seed_dir / LAST_CHECKPOINT, result.steps, result.episodes)

    final = rows[-1] if rows else None
    summary = [
        f"density_mode: {config.density_mode}",
        f"seed: {seed}",
        f"trunk: {config.trunk}",
        f"reward_scope: {config.reward_scope}",
        f"steps: {result.steps}",
        f"episodes: {result.episodes}",
        f"wall_clock_s: {elapsed:.2f}",
    ]
    if final is not None:
        summary += [
            f"final_eval_return_mean: {final.eval_return_mean:.4f}",
            f"final_eval_return_std: {final.eval_return_std:.4f}",
            f"final_collision_rate: {final.collision_rate:.4f}",
            f"final_accel_std: {final.accel_std:.4f}",
        ]
    (seed_dir / SUMMARY_FILE).write_text("\n".join(summary) + "\n")

    if config.figures and rows:
        from . import plots

        plots.learning_curve(rows, seed_dir / "learning_curve.png")
    return result


def run_training(
    config: RunConfig,
    name: str = "train",
    *,
    resume: Optional[Path] = None,
) -> Path:
    """Run one training per configured seed under a fresh run directory."""
    run_dir = prepare_run_dir(config, name)
    for seed in config.seeds:
        log.info("training seed %d into %s", seed, run_dir)
        train_one_seed(config, seed, run_dir / f"seed_{seed}", resume=resume)
    return run_dir


ABLATION_AXES = {
    "reward_scope": (
        ("local", {"reward_scope": "local"}),
        ("global", {"reward_scope": "global"}),
    ),
    "trunk": (
        ("shared", {"trunk": "shared"}),
        ("separate", {"trunk": "separate"}),
    ),
    "comfort": (
        ("comfort_on", {"w_c": 1.0}),
        ("comfort_off", {"w_c": 0.0}),
    ),
    "politeness": (
        ("p0", {"politeness": 0.0}),
        ("p1", {"politeness": 1.0}),
    ),
}


def ablation_arms(config: RunConfig, axis: str) -> list[tuple[str, RunConfig]]:
    """The two run configs of one ablation axis; they differ in nothing else."""
    if axis not in ABLATION_AXES:
        raise ValueError(
            f"unknown ablation axis {axis!r}; choose from {sorted(ABLATION_AXES)}"
        )
    return [
        (arm_name, dataclasses.replace(config, **overrides))
        for arm_name, overrides in ABLATION_AXES[axis]
    ]


def run_ablation(config: RunConfig, axis: str, name: Optional[str] = None) -> Path:
    """Run both arms of one ablation axis with identical seeds.

    Emits per-arm run directories plus a comparison table (and figure) of
    the arms' final evaluation statistics.
    """
    arms = ablation_arms(config, axis)
    run_dir = prepare_run_dir(config, name or f"ablation_{axis}")

    comparison: list[dict] = []
    for arm_name, arm_config in arms:
        arm_dir = run_dir / arm_name
        for seed in arm_config.seeds:
            result = train_one_seed(arm_config, seed, arm_dir / f"seed_{seed}")
            final = result.evals[-1].metrics if result.evals else None
            comparison.append(
                {
                    "arm": arm_name,
                    "seed": seed,
                    "final_eval_return_mean": final.return_mean if final else 0.0,
                    "final_eval_return_std": final.return_std if final else 0.0,
                    "collision_rate": final.collision_rate if final else 0.0,
                    "accel_std": final.accel_std if final else 0.0,
                    "lane_changes_per_episode": (
                        final.lane_changes_per_episode if final else 0.0
                    ),
                }
            )

    table_path = run_dir / "comparison.csv"
    with table_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(comparison[0].keys()))
        writer.writeheader()
        for row in comparison:
            writer.writerow(
                {k: _format_cell(v) if not isinstance(v, str) else v for k, v in row.items()}
            )

    if config.figures:
        from . import plots

        plots.ablation_comparison(comparison, axis, run_dir / "comparison.png")
    return run_dir


def evaluate_checkpoint(
    checkpoint: Path | str,
    config: RunConfig,
    episodes: int,
    seed: int,
) -> tuple[MetricsRow, EvalMetrics]:
    """Greedy evaluation of a stored policy, returned MetricsRow-shaped."""
    bundle, step, episode = PolicyBundle.load(checkpoint)
    if bundle.n_obs != config.n_obs:
        raise ValueError(
            f"checkpoint expects {bundle.n_obs} observation rows but the "
            f"config uses n_obs={config.n_obs}"
        )
    metrics = ma2c.evaluate(
        bundle, config.density_mode, episodes, seed, config.env_config()
    )
    row = MetricsRow.from_eval(EvalRecord(step=step, episode=episode, metrics=metrics))
    return row, metrics


def rollout_trace(
    policy,
    config: RunConfig,
    seed: int,
    steps: int,
) -> list[dict]:
    """Per-step world records of one greedy episode, at most ``steps`` long.

    Each record is self-describing and carries every vehicle's id, kind,
    lane, x, y, v, a and the action the policy took for it (null for HDVs).
    The episode that unfolds equals the first evaluation episode for the
    same seed, so statistics recomputed from the trace match evaluate().
    """
    sim = HighwayEnv(config.env_config(), config.density_mode, seed)
    rng = np.random.default_rng(seed + 1)
    records: list[dict] = []
    for step_index in range(steps):
        actions = {
            agent: policy.act(obs, rng=rng, greedy=True)
            for agent, obs in sorted(sim.observations.items())
        }
        result = sim.step(actions)
        records.append(
            {
                "step": step_index + 1,
                "time_s": round(sim.world.step_count * sim.world.dt, 6),
                "done": result.done,
                "vehicles": [
                    {
                        "id": veh.id,
                        "kind": veh.kind.value,
                        "lane": veh.lane,
                        "x": veh.x,
                        "y": veh.y,
                        "v": veh.v,
                        "a": veh.a,
                        "action": (
                            int(actions[veh.id]) if veh.id in actions else None
                        ),
                    }
                    for veh in sim.world.vehicles
                ],
            }
        )
        if result.done:
            break
    return records


def write_trace(records: list[dict], path: Path) -> None:
    with Path(path).open("w") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")


def read_trace(path: Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line]
