"""Human-driven vehicle behavior.

Longitudinal control follows the Intelligent Driver Model (IDM); lateral
decisions follow the MOBIL criterion (safety bound on the braking imposed
to the new follower, plus a politeness-weighted incentive inequality).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

from . import core
from .core import LaneDecision, VehicleKind, WorldState

#: Hard deceleration floor, m/s^2. Matches the MOBIL safety bound default.
BRAKE_LIMIT = 9.0


@dataclass(frozen=True)
class IdmParams:
    """IDM parameters. ``v0`` is the desired (free-flow) speed."""

    v0: float = 30.0
    T: float = 1.5  # desired time headway, s
    a_max: float = 3.0
    b_comf: float = 5.0  # comfortable deceleration magnitude
    delta: float = 4.0
    s0: float = 10.0  # minimum bumper gap, m

    def __post_init__(self) -> None:
        for name in ("v0", "T", "a_max", "b_comf", "delta", "s0"):
            if getattr(self, name) <= 0:
                raise ValueError(f"IdmParams.{name} must be strictly positive")


@dataclass(frozen=True)
class MobilParams:
    p: float = 0.0  # politeness coefficient in [0, 1]
    b_safe: float = 9.0  # max braking magnitude imposed to the new follower
    delta_a_th: float = 0.1  # incentive threshold, m/s^2

    def __post_init__(self) -> None:
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("politeness must lie in [0, 1]")
        if self.b_safe <= 0:
            raise ValueError("b_safe must be positive")
        if self.delta_a_th < 0:
            raise ValueError("delta_a_th must be nonnegative")


def desired_gap(v: float, dv: float, params: IdmParams) -> float:
    """Desired bumper gap s* = s0 + v*T + v*dv / (2*sqrt(a_max*b_comf))."""
    return params.s0 + v * params.T + v * dv / (
        2.0 * math.sqrt(params.a_max * params.b_comf)
    )


def _idm_raw(
    v: float, gap: Optional[float], v_leader: Optional[float], params: IdmParams
) -> float:
    """Unclamped IDM acceleration; -inf when already overlapping the leader.

    The raw value is what MOBIL counterfactuals compare: clamping it at the
    braking floor would make the safety veto unsatisfiable.
    """
    free = 1.0 - (v / params.v0) ** params.delta
    if gap is None:
        return params.a_max * free
    if gap <= 0.0:
        return -math.inf
    dv = v - (v_leader if v_leader is not None else 0.0)
    s_star = desired_gap(v, dv, params)
    return params.a_max * (free - (s_star / gap) ** 2)


def idm_acceleration(
    v: float,
    gap: Optional[float],
    v_leader: Optional[float],
    params: IdmParams,
) -> float:
    """IDM acceleration command, clamped to [-BRAKE_LIMIT, a_max].

    With no leader (gap None) the interaction term vanishes. A nonpositive
    gap means the vehicles already overlap and returns the emergency value
    -BRAKE_LIMIT.
    """
    if v < 0:
        raise ValueError("speed must be nonnegative")
    if gap is not None and gap <= 0.0:
        return -BRAKE_LIMIT
    raw = _idm_raw(v, gap, v_leader, params)
    return min(max(raw, -BRAKE_LIMIT), params.a_max)


def equilibrium_gap(v: float, params: IdmParams) -> float:
    """Analytic steady-state bumper gap behind a leader cruising at ``v``.

    Setting the IDM acceleration to zero at matched speeds gives
    s_eq = s*(v) / sqrt(1 - (v/v0)^delta). For v well below v0 (or a large
    exponent) this approaches the desired gap s*(v) itself.
    """
    free = 1.0 - (v / params.v0) ** params.delta
    if free <= 0:
        raise ValueError("no finite equilibrium at or above the desired speed")
    return desired_gap(v, 0.0, params) / math.sqrt(free)


def mobil_safety(a_new_follower_after: float, params: MobilParams) -> bool:
    """Safety criterion: the new follower's post-change braking is bounded."""
    return a_new_follower_after >= -params.b_safe


def mobil_incentive(
    a_c: float,
    a_c_tilde: float,
    a_n: float,
    a_n_tilde: float,
    a_o: float,
    a_o_tilde: float,
    params: MobilParams,
) -> bool:
    """Incentive criterion over ego (c), new follower (n) and old follower (o).

    True iff (a~_c - a_c) + p * ((a~_n - a_n) + (a~_o - a_o)) >= delta_a_th,
    with tilde marking post-change accelerations.
    """
    gain = (a_c_tilde - a_c) + params.p * (
        (a_n_tilde - a_n) + (a_o_tilde - a_o)
    )
    return gain >= params.delta_a_th


def _pair_gap(rear: core.VehicleState, front: core.VehicleState) -> float:
    return front.x - rear.x - (front.length + rear.length) / 2.0


def _raw_accel_toward(
    world: WorldState,
    ego: core.VehicleState,
    lane: int,
    params: IdmParams,
) -> float:
    """Raw IDM acceleration the ego would have facing the leader in ``lane``."""
    ahead = core.leader(world, ego.id, lane)
    own = replace(params, v0=ego.v_target)
    if ahead is None:
        return _idm_raw(ego.v, None, None, own)
    _, gap, _ = ahead
    lead = world.vehicle(ahead[0])
    return _idm_raw(ego.v, gap, lead.v, own)


def _follower_raw_accel(
    world: WorldState,
    fol: core.VehicleState,
    lead: Optional[core.VehicleState],
    params: IdmParams,
) -> float:
    own = replace(params, v0=fol.v_target)
    if lead is None:
        return _idm_raw(fol.v, None, None, own)
    return _idm_raw(fol.v, _pair_gap(fol, lead), lead.v, own)


def hdv_decide(
    world: WorldState,
    vehicle_id: int,
    idm: IdmParams,
    mobil: MobilParams,
) -> tuple[float, LaneDecision]:
    """Joint longitudinal + lateral decision for one HDV.

    For each adjacent lane the counterfactual accelerations of the ego, the
    prospective new follower and the old follower are evaluated as if the
    ego appeared instantaneously in the target lane at its current x and v.
    A change is proposed only when both MOBIL criteria hold; if both sides
    qualify the larger ego gain wins, ties to LEFT. Vehicles that are
    mid-transition keep following the leader in their target lane.
    """
    ego = world.vehicle(vehicle_id)
    if ego.kind is not VehicleKind.HDV:
        raise ValueError(f"vehicle {vehicle_id} is not an HDV")

    own = replace(idm, v0=ego.v_target)

    if ego.changing_lane():
        ahead = core.leader(world, vehicle_id, ego.target_lane)
        if ahead is None:
            return idm_acceleration(ego.v, None, None, own), LaneDecision.KEEP
        lead = world.vehicle(ahead[0])
        return (
            idm_acceleration(ego.v, ahead[1], lead.v, own),
            LaneDecision.KEEP,
        )

    a_current = _raw_accel_toward(world, ego, ego.lane, idm)

    old_fol = core.follower(world, vehicle_id, ego.lane)
    current_lead = core.leader(world, vehicle_id, ego.lane)

    best: Optional[tuple[float, LaneDecision, int]] = None
    for decision, lane in (
        (LaneDecision.LEFT, ego.lane - 1),
        (LaneDecision.RIGHT, ego.lane + 1),
    ):
        if not 0 <= lane < world.road.lane_count:
            continue

        a_ego_after = _raw_accel_toward(world, ego, lane, idm)

        new_fol = core.follower(world, vehicle_id, lane)
        if new_fol is None:
            a_n_before = a_n_after = 0.0
        else:
            fol = world.vehicle(new_fol[0])
            new_lead = core.leader(world, vehicle_id, lane)
            lead_veh = world.vehicle(new_lead[0]) if new_lead else None
            a_n_before = _follower_raw_accel(world, fol, lead_veh, idm)
            a_n_after = _follower_raw_accel(world, fol, ego, idm)

        if not mobil_safety(a_n_after, mobil):
            continue

        if old_fol is None:
            a_o_before = a_o_after = 0.0
        else:
            fol = world.vehicle(old_fol[0])
            lead_veh = world.vehicle(current_lead[0]) if current_lead else None
            a_o_before = _follower_raw_accel(world, fol, ego, idm)
            a_o_after = _follower_raw_accel(world, fol, lead_veh, idm)

        if not mobil_incentive(
            a_current, a_ego_after, a_n_before, a_n_after, a_o_before, a_o_after, mobil
        ):
            continue

        gain = a_ego_after - a_current
        if best is None or gain > best[0]:
            best = (gain, decision, lane)

    if best is not None:
        _, decision, lane = best
        ahead = core.leader(world, vehicle_id, lane)
        if ahead is None:
            accel = idm_acceleration(ego.v, None, None, own)
        else:
            lead = world.vehicle(ahead[0])
            accel = idm_acceleration(ego.v, ahead[1], lead.v, own)
        return accel, decision

    if current_lead is None:
        accel = idm_acceleration(ego.v, None, None, own)
    else:
        lead = world.vehicle(current_lead[0])
        accel = idm_acceleration(ego.v, current_lead[1], lead.v, own)
    return accel, LaneDecision.KEEP
