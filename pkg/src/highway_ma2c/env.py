"""Multi-agent highway POMDP on top of the traffic core.

Each AV observes a fixed-shape matrix of nearby vehicles, picks one of five
meta actions, and receives a multi-objective reward (safety, headway, speed,
comfort) averaged over its nearby AVs (local reward). One env step maps AV
actions to low-level commands, lets every HDV decide via IDM/MOBIL, advances
the world, and scores the result.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Mapping, Optional

import numpy as np

from . import core, hdv
from .core import LaneDecision, RoadConfig, VehicleKind, WorldState
from .hdv import IdmParams, MobilParams

FEATURES = 4  # dx, dy, dvx, dvy per observation row


class AvAction(IntEnum):
    SLOWER = 0
    IDLE = 1
    FASTER = 2
    LANE_LEFT = 3
    LANE_RIGHT = 4


@dataclass(frozen=True)
class RewardConfig:
    """Weights and thresholds of the multi-objective reward."""

    w_s: float = 200.0  # safety (collision) weight
    w_d: float = 4.0  # headway weight
    w_v: float = 1.0  # speed weight
    w_c: float = 1.0  # comfort weight
    t_d: float = 1.2  # time-headway threshold, s
    a_th: float = 3.0  # comfort acceleration threshold, m/s^2
    v_min: float = 20.0
    v_max: float = 30.0
    neighbor_radius: float = 60.0  # local-reward averaging radius, m

    def __post_init__(self) -> None:
        if min(self.w_s, self.w_d, self.w_v, self.w_c) < 0:
            raise ValueError("reward weights must be nonnegative")
        if self.t_d <= 0:
            raise ValueError("t_d must be positive")
        if self.v_min >= self.v_max:
            raise ValueError("v_min must be below v_max")


@dataclass(frozen=True)
class EnvConfig:
    """Everything needed to build and step the POMDP."""

    road: RoadConfig = RoadConfig()
    reward: RewardConfig = RewardConfig()
    idm: IdmParams = IdmParams()
    mobil: MobilParams = MobilParams()
    n_obs: int = 5  # observation rows (ego + padded neighbors)
    obs_range: float = 100.0  # observation cutoff, m
    horizon: int = 100  # episode length bound, steps
    dt: float = 0.2
    speed_step: float = 2.5  # FASTER/SLOWER target increment, m/s
    speed_gain: float = 2.0  # proportional speed-tracking gain, 1/s
    accel_min: float = -5.0
    accel_max: float = 3.0
    spawn_min_gap: float = 15.0
    spawn_speed_range: tuple[float, float] = (25.0, 30.0)
    hdv_desired_speed_range: tuple[float, float] = (25.0, 30.0)


@dataclass
class RewardBreakdown:
    r_s: float
    r_d: float
    r_v: float
    r_c: float


@dataclass
class StepInfo:
    collisions: list[tuple[int, int]]
    speeds: dict[int, float]
    accels: dict[int, float]
    components: dict[int, RewardBreakdown]
    lane_changes: dict[int, bool]


@dataclass
class StepResult:
    observations: dict[int, np.ndarray]
    rewards: dict[int, float]  # local rewards, averaged over nearby AVs
    raw_rewards: dict[int, float]  # per-agent rewards before averaging
    done: bool
    info: StepInfo


def build_observation(
    world: WorldState, agent: int, n_obs: int, obs_range: float
) -> np.ndarray:
    """Fixed-shape (n_obs, 4) feature matrix for one AV, entries in [-1, 1].

    Row 0 holds the ego's absolute kinematics normalized by road length,
    total road width and the road speed limit. The remaining rows hold the
    nearest vehicles within ``obs_range`` (nearest first, ties by id) with
    kinematics relative to the ego; missing rows stay zero.
    """
    ego = world.vehicle(agent)
    if ego.kind is not VehicleKind.AV:
        raise ValueError(f"vehicle {agent} is not an AV")
    road = world.road
    width_total = road.lane_count * road.lane_width
    v_scale = road.speed_max

    obs = np.zeros((n_obs, FEATURES), dtype=np.float64)
    ego_vy = core.lateral_speed(ego, road)
    obs[0] = (
        ego.x / road.length,
        ego.y / width_total,
        ego.v / v_scale,
        ego_vy / v_scale,
    )
    for row, other_id in enumerate(
        core.neighbors(world, agent, obs_range)[: n_obs - 1], start=1
    ):
        other = world.vehicle(other_id)
        obs[row] = (
            (other.x - ego.x) / obs_range,
            (other.y - ego.y) / width_total,
            (other.v - ego.v) / v_scale,
            (core.lateral_speed(other, road) - ego_vy) / v_scale,
        )
    np.clip(obs, -1.0, 1.0, out=obs)
    return obs


def reward_safety(world: WorldState, agent: int) -> float:
    """-1 if the agent is in any colliding pair of this world, else 0."""
    return _safety_from_pairs(agent, core.detect_collisions(world))


def _safety_from_pairs(agent: int, pairs: list[tuple[int, int]]) -> float:
    return -1.0 if any(agent in pair for pair in pairs) else 0.0


def reward_headway(
    v_t: float, d_headway: Optional[float], config: RewardConfig
) -> float:
    """log(d / (v * t_d)), clamped to [-2, 2]; 0 with no leader ahead."""
    if d_headway is None:
        return 0.0
    if d_headway <= 0.0:
        return -2.0
    value = math.log(d_headway / (max(v_t, 1e-6) * config.t_d))
    return min(max(value, -2.0), 2.0)


def reward_speed(v_t: float, config: RewardConfig) -> float:
    """Linear speed incentive, capped at 1 and floored at -1."""
    value = (v_t - config.v_min) / (config.v_max - config.v_min)
    return min(max(value, -1.0), 1.0)


def reward_comfort(a_t: float, changed_lane: bool, config: RewardConfig) -> float:
    """Comfort term in {-2, -1, 0}: harsh acceleration and lane-change hits."""
    penalty = 0.0
    if abs(a_t) >= config.a_th:
        penalty -= 1.0
    if changed_lane:
        penalty -= 1.0
    return penalty


def agent_reward(components: RewardBreakdown, config: RewardConfig) -> float:
    """Weighted combination; the comfort magnitude always reduces the total."""
    return (
        config.w_s * components.r_s
        + config.w_d * components.r_d
        + config.w_v * components.r_v
        - config.w_c * abs(components.r_c)
    )


def local_reward(
    agent: int,
    raw_rewards: Mapping[int, float],
    world: WorldState,
    radius: float,
) -> float:
    """Mean raw reward over the agent and its AV neighbors within ``radius``.

    Members are summed in ascending-id order so that when the radius covers
    the whole road every agent receives a bit-identical value.
    """
    if agent not in raw_rewards:
        raise KeyError(f"agent {agent} has no raw reward this step")
    members = {agent}
    members.update(
        vid for vid in core.neighbors(world, agent, radius) if vid in raw_rewards
    )
    ordered = sorted(members)
    return sum(raw_rewards[vid] for vid in ordered) / len(ordered)


def _av_command(
    veh: core.VehicleState, action: AvAction, config: EnvConfig
) -> tuple[float, float, LaneDecision, bool]:
    """Map one meta action to (new target speed, accel, decision, initiated)."""
    target = veh.v_target
    decision = LaneDecision.KEEP
    initiated = False
    if action is AvAction.FASTER:
        target = min(target + config.speed_step, config.reward.v_max)
    elif action is AvAction.SLOWER:
        target = max(target - config.speed_step, config.reward.v_min)
    elif action in (AvAction.LANE_LEFT, AvAction.LANE_RIGHT):
        offset = -1 if action is AvAction.LANE_LEFT else 1
        candidate = veh.lane + offset
        if not veh.changing_lane() and 0 <= candidate < config.road.lane_count:
            decision = (
                LaneDecision.LEFT if action is AvAction.LANE_LEFT else LaneDecision.RIGHT
            )
            initiated = True
        # otherwise the action degrades to IDLE
    accel = config.speed_gain * (target - veh.v)
    accel = min(max(accel, config.accel_min), config.accel_max)
    return target, accel, decision, initiated


def env_step(
    world: WorldState,
    actions: Mapping[int, AvAction | int],
    config: EnvConfig,
) -> tuple[WorldState, StepResult]:
    """One synchronized step of the multi-agent POMDP.

    ``actions`` must be keyed by exactly the live AVs. The episode is done
    when any collision occurs, when the last AV leaves the road, or when the
    step counter reaches the horizon.
    """
    live_avs = set(world.av_ids())
    if set(actions) != live_avs:
        raise ValueError(
            f"actions must be keyed by the live AVs {sorted(live_avs)}, "
            f"got {sorted(actions)}"
        )

    commands: dict[int, tuple[float, LaneDecision]] = {}
    lane_changes: dict[int, bool] = {}
    vehicles = []
    staged = WorldState(
        step_count=world.step_count,
        dt=world.dt,
        road=world.road,
        vehicles=vehicles,
        rng=world.rng,
    )
    for veh in world.vehicles:
        if veh.kind is VehicleKind.AV:
            action = AvAction(actions[veh.id])
            target, accel, decision, initiated = _av_command(veh, action, config)
            commands[veh.id] = (accel, decision)
            lane_changes[veh.id] = initiated
            vehicles.append(replace(veh, v_target=target))
        else:
            vehicles.append(veh)

    for hid in staged.hdv_ids():
        commands[hid] = hdv.hdv_decide(staged, hid, config.idm, config.mobil)

    new_world = core.advance(staged, commands)
    pairs = core.detect_collisions(new_world)

    observations: dict[int, np.ndarray] = {}
    raw_rewards: dict[int, float] = {}
    components: dict[int, RewardBreakdown] = {}
    speeds: dict[int, float] = {}
    accels: dict[int, float] = {}
    for aid in sorted(new_world.av_ids()):
        veh = new_world.vehicle(aid)
        ahead = core.leader(new_world, aid, veh.lane)
        breakdown = RewardBreakdown(
            r_s=_safety_from_pairs(aid, pairs),
            r_d=reward_headway(veh.v, ahead[1] if ahead else None, config.reward),
            r_v=reward_speed(veh.v, config.reward),
            r_c=reward_comfort(veh.a, lane_changes.get(aid, False), config.reward),
        )
        components[aid] = breakdown
        raw_rewards[aid] = agent_reward(breakdown, config.reward)
        speeds[aid] = veh.v
        accels[aid] = veh.a
        observations[aid] = build_observation(
            new_world, aid, config.n_obs, config.obs_range
        )

    rewards = {
        aid: local_reward(aid, raw_rewards, new_world, config.reward.neighbor_radius)
        for aid in raw_rewards
    }

    all_exited = bool(live_avs) and not new_world.av_ids()
    done = bool(pairs) or all_exited or new_world.step_count >= config.horizon

    info = StepInfo(
        collisions=pairs,
        speeds=speeds,
        accels=accels,
        components=components,
        lane_changes={aid: lane_changes.get(aid, False) for aid in raw_rewards},
    )
    return new_world, StepResult(
        observations=observations,
        rewards=rewards,
        raw_rewards=raw_rewards,
        done=done,
        info=info,
    )


def env_reset(
    density_mode: str, seed: int, config: EnvConfig
) -> tuple[WorldState, dict[int, np.ndarray]]:
    """Fresh spawn plus initial observations for every AV."""
    world = core.spawn_world(
        density_mode,
        seed,
        config.road,
        dt=config.dt,
        min_gap=config.spawn_min_gap,
        speed_range=config.spawn_speed_range,
        hdv_desired_speed_range=config.hdv_desired_speed_range,
    )
    observations = {
        aid: build_observation(world, aid, config.n_obs, config.obs_range)
        for aid in world.av_ids()
    }
    return world, observations


class HighwayEnv:
    """Stateful convenience wrapper with an auto-advancing spawn seed stream.

    Episode k of two wrappers built with the same (config, density, seed) is
    bit-identical, which is what ties training, evaluation and trace export
    together.
    """

    def __init__(self, config: EnvConfig, density_mode: str, seed: int):
        self.config = config
        self.density_mode = density_mode
        self._spawn_stream = np.random.default_rng(seed)
        self.world: WorldState = None  # type: ignore[assignment]
        self.observations: dict[int, np.ndarray] = {}
        self.reset()

    def reset(self) -> dict[int, np.ndarray]:
        spawn_seed = int(self._spawn_stream.integers(0, 2**63 - 1))
        self.world, self.observations = env_reset(
            self.density_mode, spawn_seed, self.config
        )
        return self.observations

    def step(self, actions: Mapping[int, AvAction | int]) -> StepResult:
        self.world, result = env_step(self.world, actions, self.config)
        self.observations = result.observations
        return result

    def av_ids(self) -> list[int]:
        return self.world.av_ids()
