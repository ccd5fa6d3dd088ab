"""Run configuration: one flat record covering every tunable of a run.

Configs round-trip through a flat ``key = value`` text format whose keys
equal the RunConfig field names; the effective config is snapshotted
verbatim into every run directory so runs are self-describing.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .core import RoadConfig
from .env import EnvConfig, RewardConfig
from .hdv import IdmParams, MobilParams
from .ma2c import Hyperparams, TRUNK_SEPARATE, TRUNK_SHARED

OUTPUT_ROOT_ENV = "HIGHWAY_MA2C_RUNS"

DENSITY_CHOICES = ("D1", "D2", "D3")
SCOPE_CHOICES = ("local", "global")
TRUNK_CHOICES = (TRUNK_SHARED, TRUNK_SEPARATE)


class ConfigError(ValueError):
    """Raised for unparseable or inconsistent run configuration."""


@dataclass
class RunConfig:
    # scenario
    density_mode: str = "D1"
    seeds: tuple[int, ...] = (0, 1)
    total_steps: int = 50_000
    trunk: str = TRUNK_SHARED
    reward_scope: str = "local"

    # road
    road_length: float = 520.0
    lane_count: int = 2
    lane_width: float = 4.0
    road_speed_min: float = 20.0
    road_speed_max: float = 30.0
    lane_change_time: float = 1.0

    # reward
    w_s: float = 200.0
    w_d: float = 4.0
    w_v: float = 1.0
    w_c: float = 1.0
    t_d: float = 1.2
    a_th: float = 3.0
    v_min: float = 20.0
    v_max: float = 30.0
    neighbor_radius: float = 60.0

    # human drivers
    idm_v0: float = 30.0
    idm_headway: float = 1.5
    idm_a_max: float = 3.0
    idm_b_comf: float = 5.0
    idm_delta: float = 4.0
    idm_s0: float = 10.0
    politeness: float = 0.0
    b_safe: float = 9.0
    delta_a_th: float = 0.1

    # environment
    n_obs: int = 5
    obs_range: float = 100.0
    horizon: int = 100
    dt: float = 0.2
    speed_step: float = 2.5
    speed_gain: float = 2.0
    spawn_min_gap: float = 15.0

    # optimization; the loss-term coefficients are tuned so that the value
    # loss (returns reach the hundreds under the collision weight) does not
    # drown the policy gradient through the shared trunk, and exploration
    # survives long enough to escape early attractors
    gamma: float = 0.99
    eta: float = 5e-4
    rollout_len: int = 20
    eval_every: int = 200
    eval_episodes: int = 3
    entropy_coef: float = 0.05
    value_coef: float = 0.05
    advantage_norm: bool = True
    grad_clip: float = 0.5

    # harness
    out_dir: str = ""
    figures: bool = True

    def __post_init__(self) -> None:
        if self.density_mode not in DENSITY_CHOICES:
            raise ConfigError(f"density_mode must be one of {DENSITY_CHOICES}")
        if self.reward_scope not in SCOPE_CHOICES:
            raise ConfigError(f"reward_scope must be one of {SCOPE_CHOICES}")
        if self.trunk not in TRUNK_CHOICES:
            raise ConfigError(f"trunk must be one of {TRUNK_CHOICES}")
        if not self.seeds:
            raise ConfigError("need at least one seed")

    def road_config(self) -> RoadConfig:
        return RoadConfig(
            length=self.road_length,
            lane_count=self.lane_count,
            lane_width=self.lane_width,
            speed_min=self.road_speed_min,
            speed_max=self.road_speed_max,
            lane_change_time=self.lane_change_time,
        )

    def reward_config(self) -> RewardConfig:
        radius = self.neighbor_radius
        if self.reward_scope == "global":
            radius = self.road_length  # covers every vehicle on the road
        return RewardConfig(
            w_s=self.w_s,
            w_d=self.w_d,
            w_v=self.w_v,
            w_c=self.w_c,
            t_d=self.t_d,
            a_th=self.a_th,
            v_min=self.v_min,
            v_max=self.v_max,
            neighbor_radius=radius,
        )

    def idm_params(self) -> IdmParams:
        return IdmParams(
            v0=self.idm_v0,
            T=self.idm_headway,
            a_max=self.idm_a_max,
            b_comf=self.idm_b_comf,
            delta=self.idm_delta,
            s0=self.idm_s0,
        )

    def mobil_params(self) -> MobilParams:
        return MobilParams(
            p=self.politeness, b_safe=self.b_safe, delta_a_th=self.delta_a_th
        )

    def env_config(self) -> EnvConfig:
        return EnvConfig(
            road=self.road_config(),
            reward=self.reward_config(),
            idm=self.idm_params(),
            mobil=self.mobil_params(),
            n_obs=self.n_obs,
            obs_range=self.obs_range,
            horizon=self.horizon,
            dt=self.dt,
            speed_step=self.speed_step,
            speed_gain=self.speed_gain,
            spawn_min_gap=self.spawn_min_gap,
        )

    def hyperparams(self, seed: int) -> Hyperparams:
        return Hyperparams(
            gamma=self.gamma,
            eta=self.eta,
            rollout_len=self.rollout_len,
            total_steps=self.total_steps,
            eval_every=self.eval_every,
            eval_episodes=self.eval_episodes,
            entropy_coef=self.entropy_coef,
            value_coef=self.value_coef,
            advantage_norm=self.advantage_norm,
            grad_clip=self.grad_clip,
            seed=seed,
        )

    def output_root(self) -> Path:
        if self.out_dir:
            return Path(self.out_dir)
        return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse_value(raw: str, target_type: Any) -> Any:
    raw = raw.strip()
    if target_type is bool:
        lowered = raw.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean from {raw!r}")
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    if target_type is str:
        return raw
    if target_type == tuple[int, ...]:
        if not raw:
            return ()
        return tuple(int(part) for part in raw.split(","))
    raise ConfigError(f"unsupported config field type {target_type!r}")


def config_to_text(config: RunConfig) -> str:
    lines = ["# highway-ma2c run configuration"]
    for f in fields(RunConfig):
        lines.append(f"{f.name} = {_format_value(getattr(config, f.name))}")
    return "\n".join(lines) + "\n"


def save_config(config: RunConfig, path: Path | str) -> None:
    Path(path).write_text(config_to_text(config))


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse the flat key = value format, starting from ``base`` or defaults."""
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        try:
            values[key] = _parse_value(raw, _FIELD_TYPES[key])
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    if base is None:
        return RunConfig(**values)
    return dataclasses.replace(base, **values)


def load_config(path: Path | str, base: RunConfig | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config_text(path.read_text(), base)


def diff_configs(a: RunConfig, b: RunConfig) -> list[str]:
    """Names of the fields on which two configs disagree."""
    return [
        f.name
        for f in fields(RunConfig)
        if getattr(a, f.name) != getattr(b, f.name)
    ]


# dataclass field annotations are strings under ``from __future__ import
# annotations``; map them back to concrete types for parsing
_FIELD_TYPES: dict[str, Any] = {}
for _f in fields(RunConfig):
    _hint = _f.type
    if _hint in ("str", str):
        _FIELD_TYPES[_f.name] = str
    elif _hint in ("int", int):
        _FIELD_TYPES[_f.name] = int
    elif _hint in ("float", float):
        _FIELD_TYPES[_f.name] = float
    elif _hint in ("bool", bool):
        _FIELD_TYPES[_f.name] = bool
    elif _hint in ("tuple[int, ...]", tuple[int, ...]):
        _FIELD_TYPES[_f.name] = tuple[int, ...]
    else:
        raise TypeError(f"unhandled RunConfig field type {_hint!r} for {_f.name}")
