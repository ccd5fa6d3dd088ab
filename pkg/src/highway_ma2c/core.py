"""Physical substrate of the simulator: road geometry, vehicle kinematics,
spawning, spatial queries and collision detection.

All state is treated as a value: operations take a world and return a new
one, so independent worlds can be simulated in parallel with no coordination.
Lane 0 is the leftmost lane and LEFT decreases the lane index.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Mapping, Optional

import numpy as np

VEHICLE_LENGTH = 5.0
VEHICLE_WIDTH = 2.0

#: AV/HDV count ranges per traffic density mode: (av_lo, av_hi, hdv_lo, hdv_hi)
DENSITY_MODES = {
    "D1": (1, 3, 1, 3),
    "D2": (2, 4, 2, 4),
    "D3": (4, 6, 4, 6),
}


class SpawnError(RuntimeError):
    """Raised when the requested vehicle count cannot be placed on the road."""


class VehicleKind(Enum):
    AV = "AV"
    HDV = "HDV"


class LaneDecision(Enum):
    KEEP = 0
    LEFT = 1
    RIGHT = 2


@dataclass(frozen=True)
class RoadConfig:
    """Straight multi-lane roadway plus the driving conventions tied to it."""

    length: float = 520.0
    lane_count: int = 2
    lane_width: float = 4.0
    speed_min: float = 20.0
    speed_max: float = 30.0
    lane_change_time: float = 1.0  # seconds for a full lateral transition

    def __post_init__(self) -> None:
        if self.length <= 0:
            raise ValueError("road length must be positive")
        if self.lane_count < 2:
            raise ValueError("need at least two lanes")
        if self.lane_width <= 0:
            raise ValueError("lane width must be positive")
        if self.speed_min >= self.speed_max:
            raise ValueError("speed_min must be below speed_max")
        if self.lane_change_time <= 0:
            raise ValueError("lane_change_time must be positive")

    def lane_center(self, lane: int) -> float:
        return lane * self.lane_width


@dataclass
class VehicleState:
    """Kinematic record of one vehicle.

    ``lane_change_progress`` is 1.0 when the vehicle is tracking a lane
    center and in [0, 1) while a lateral transition is running. ``v_target``
    is the desired speed: the IDM free speed for HDVs, the speed-ladder
    target for AVs.
    """

    id: int
    kind: VehicleKind
    lane: int
    target_lane: int
    x: float
    y: float
    v: float
    a: float = 0.0
    lane_change_progress: float = 1.0
    length: float = VEHICLE_LENGTH
    width: float = VEHICLE_WIDTH
    v_target: float = 30.0

    def changing_lane(self) -> bool:
        return self.lane_change_progress < 1.0


def lateral_speed(vehicle: VehicleState, road: RoadConfig) -> float:
    """Signed lateral speed; nonzero only while a lane change is running."""
    if not vehicle.changing_lane():
        return 0.0
    direction = math.copysign(
        1.0, road.lane_center(vehicle.target_lane) - vehicle.y
    )
    return direction * road.lane_width / road.lane_change_time


@dataclass
class WorldState:
    """Complete simulation state: vehicles, clock and the spawn RNG stream."""

    step_count: int
    dt: float
    road: RoadConfig
    vehicles: list[VehicleState]
    rng: np.random.Generator

    def vehicle(self, vehicle_id: int) -> VehicleState:
        for veh in self.vehicles:
            if veh.id == vehicle_id:
                return veh
        raise KeyError(f"unknown vehicle id {vehicle_id}")

    def ids(self) -> list[int]:
        return [veh.id for veh in self.vehicles]

    def av_ids(self) -> list[int]:
        return [v.id for v in self.vehicles if v.kind is VehicleKind.AV]

    def hdv_ids(self) -> list[int]:
        return [v.id for v in self.vehicles if v.kind is VehicleKind.HDV]


def spawn_world(
    density_mode: str,
    seed: int,
    road: RoadConfig = RoadConfig(),
    *,
    dt: float = 0.2,
    min_gap: float = 15.0,
    speed_range: tuple[float, float] = (25.0, 30.0),
    hdv_desired_speed_range: tuple[float, float] = (25.0, 30.0),
) -> WorldState:
    """Spawn a fresh world for one traffic density mode.

    Vehicle counts are drawn uniformly from the mode's ranges, initial
    speeds uniformly from ``speed_range``, and same-lane bumper gaps are at
    least ``min_gap``. Deterministic for a fixed seed.
    """
    if density_mode not in DENSITY_MODES:
        raise ValueError(f"unknown density mode {density_mode!r}")
    av_lo, av_hi, hdv_lo, hdv_hi = DENSITY_MODES[density_mode]
    rng = np.random.default_rng(seed)
    n_av = int(rng.integers(av_lo, av_hi + 1))
    n_hdv = int(rng.integers(hdv_lo, hdv_hi + 1))
    n = n_av + n_hdv

    lanes = [int(l) for l in rng.integers(0, road.lane_count, size=n)]
    margin = VEHICLE_LENGTH / 2.0
    spacing = min_gap + VEHICLE_LENGTH  # center-to-center separation
    usable = road.length - 2.0 * margin

    slots: list[tuple[int, float]] = []
    for lane in range(road.lane_count):
        count = lanes.count(lane)
        if count == 0:
            continue
        free = usable - (count - 1) * spacing
        if free < 0:
            raise SpawnError(
                f"cannot place {count} vehicles in lane {lane} of a "
                f"{road.length} m road at {min_gap} m minimum gaps"
            )
        offsets = np.sort(rng.uniform(0.0, free, size=count))
        for i, off in enumerate(offsets):
            slots.append((lane, margin + float(off) + i * spacing))

    speeds = rng.uniform(*speed_range, size=n)
    kinds = [VehicleKind.AV] * n_av + [VehicleKind.HDV] * n_hdv
    kinds = [kinds[i] for i in rng.permutation(n)]

    vehicles: list[VehicleState] = []
    for vid, ((lane, x), kind) in enumerate(zip(slots, kinds)):
        v = float(speeds[vid])
        if kind is VehicleKind.HDV:
            v_target = float(rng.uniform(*hdv_desired_speed_range))
        else:
            v_target = v
        vehicles.append(
            VehicleState(
                id=vid,
                kind=kind,
                lane=lane,
                target_lane=lane,
                x=x,
                y=road.lane_center(lane),
                v=v,
                v_target=v_target,
            )
        )
    return WorldState(step_count=0, dt=dt, road=road, vehicles=vehicles, rng=rng)


def _advance_vehicle(
    veh: VehicleState, accel: float, decision: LaneDecision, road: RoadConfig, dt: float
) -> VehicleState:
    v_new = max(veh.v + accel * dt, 0.0)
    x_new = veh.x + v_new * dt

    lane = veh.lane
    target = veh.target_lane
    progress = veh.lane_change_progress
    y = veh.y

    if progress >= 1.0 and decision is not LaneDecision.KEEP:
        candidate = lane - 1 if decision is LaneDecision.LEFT else lane + 1
        if 0 <= candidate < road.lane_count:
            target = candidate
            progress = 0.0
        # otherwise there is no such lane and the decision degrades to KEEP

    if progress < 1.0:
        progress = progress + dt / road.lane_change_time
        target_center = road.lane_center(target)
        direction = math.copysign(1.0, target_center - y)
        if progress >= 1.0 - 1e-9:
            progress = 1.0
            lane = target
            y = target_center
        else:
            y = target_center - (1.0 - progress) * direction * road.lane_width
            if progress >= 0.5:
                lane = target

    return replace(
        veh,
        lane=lane,
        target_lane=target,
        x=x_new,
        y=y,
        v=v_new,
        a=accel,
        lane_change_progress=progress,
    )


def advance(
    world: WorldState, commands: Mapping[int, tuple[float, LaneDecision]]
) -> WorldState:
    """One semi-implicit Euler step for every vehicle.

    ``commands`` maps vehicle id to (acceleration, lane decision). Lane
    decisions toward a nonexistent lane, or issued mid-transition, degrade
    to KEEP. Vehicles that leave the road (x > length) are removed.
    """
    updated: list[VehicleState] = []
    for veh in world.vehicles:
        try:
            accel, decision = commands[veh.id]
        except KeyError:
            raise ValueError(f"no command for vehicle {veh.id}") from None
        if not math.isfinite(accel):
            raise ValueError(f"non-finite acceleration for vehicle {veh.id}")
        moved = _advance_vehicle(veh, accel, decision, world.road, world.dt)
        if moved.x <= world.road.length:
            updated.append(moved)
    return WorldState(
        step_count=world.step_count + 1,
        dt=world.dt,
        road=world.road,
        vehicles=updated,
        rng=world.rng,
    )


def detect_collisions(world: WorldState) -> list[tuple[int, int]]:
    """Axis-aligned rectangle overlap test over all vehicle pairs.

    Returns each colliding pair once as (lower id, higher id).
    """
    pairs: list[tuple[int, int]] = []
    vehicles = world.vehicles
    for i in range(len(vehicles)):
        a = vehicles[i]
        for j in range(i + 1, len(vehicles)):
            b = vehicles[j]
            if abs(a.x - b.x) < (a.length + b.length) / 2.0 and abs(
                a.y - b.y
            ) < (a.width + b.width) / 2.0:
                pairs.append((min(a.id, b.id), max(a.id, b.id)))
    return pairs


def neighbors(world: WorldState, vehicle_id: int, radius: float) -> list[int]:
    """Ids of all other vehicles with |dx| <= radius, nearest first.

    Ties in longitudinal distance are broken by ascending id.
    """
    ego = world.vehicle(vehicle_id)
    found = [
        (abs(veh.x - ego.x), veh.id)
        for veh in world.vehicles
        if veh.id != vehicle_id and abs(veh.x - ego.x) <= radius
    ]
    found.sort()
    return [vid for _, vid in found]


def leader(
    world: WorldState, vehicle_id: int, lane: int
) -> Optional[tuple[int, float, float]]:
    """Nearest vehicle strictly ahead of ``vehicle_id`` in ``lane``.

    Returns (leader id, bumper-to-bumper gap, v_ego - v_leader), or None.
    """
    ego = world.vehicle(vehicle_id)
    best: Optional[VehicleState] = None
    for veh in world.vehicles:
        if veh.id == vehicle_id or veh.lane != lane or veh.x <= ego.x:
            continue
        if best is None or veh.x < best.x:
            best = veh
    if best is None:
        return None
    gap = best.x - ego.x - (best.length + ego.length) / 2.0
    return best.id, gap, ego.v - best.v


def follower(
    world: WorldState, vehicle_id: int, lane: int
) -> Optional[tuple[int, float, float]]:
    """Nearest vehicle strictly behind ``vehicle_id`` in ``lane``.

    Returns (follower id, bumper-to-bumper gap, v_follower - v_ego), or None.
    """
    ego = world.vehicle(vehicle_id)
    best: Optional[VehicleState] = None
    for veh in world.vehicles:
        if veh.id == vehicle_id or veh.lane != lane or veh.x >= ego.x:
            continue
        if best is None or veh.x > best.x:
            best = veh
    if best is None:
        return None
    gap = ego.x - best.x - (best.length + ego.length) / 2.0
    return best.id, gap, best.v - ego.v
