import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from highway_ma2c import core
from highway_ma2c.core import (
    LaneDecision,
    RoadConfig,
    SpawnError,
    VehicleKind,
    VehicleState,
    WorldState,
    advance,
    detect_collisions,
    leader,
    neighbors,
    spawn_world,
)


def make_world(vehicles, road=RoadConfig(), dt=0.2, step=0):
    return WorldState(
        step_count=step,
        dt=dt,
        road=road,
        vehicles=vehicles,
        rng=np.random.default_rng(0),
    )


def vehicle(vid, x, lane=0, v=25.0, kind=VehicleKind.HDV, y=None, **kw):
    road = RoadConfig()
    return VehicleState(
        id=vid,
        kind=kind,
        lane=lane,
        target_lane=lane,
        x=x,
        y=road.lane_center(lane) if y is None else y,
        v=v,
        **kw,
    )


def keep_all(world):
    return {veh.id: (0.0, LaneDecision.KEEP) for veh in world.vehicles}


class TestRoadConfig:
    def test_defaults(self):
        road = RoadConfig()
        assert road.length == 520.0
        assert road.lane_count == 2
        assert road.lane_center(1) == 4.0

    @pytest.mark.parametrize(
        "kw",
        [
            {"length": 0.0},
            {"lane_count": 1},
            {"lane_width": -1.0},
            {"speed_min": 30.0, "speed_max": 30.0},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            RoadConfig(**kw)


class TestSpawn:
    @pytest.mark.parametrize(
        "mode,av_range,hdv_range",
        [("D1", (1, 3), (1, 3)), ("D2", (2, 4), (2, 4)), ("D3", (4, 6), (4, 6))],
    )
    def test_counts_within_mode_ranges(self, mode, av_range, hdv_range):
        for seed in range(25):
            world = spawn_world(mode, seed)
            assert av_range[0] <= len(world.av_ids()) <= av_range[1]
            assert hdv_range[0] <= len(world.hdv_ids()) <= hdv_range[1]

    def test_deterministic_for_seed(self):
        a = spawn_world("D1", seed=42)
        b = spawn_world("D1", seed=42)
        assert [dataclasses.asdict(v) for v in a.vehicles] == [
            dataclasses.asdict(v) for v in b.vehicles
        ]

    def test_initial_speeds_in_range(self):
        for seed in range(20):
            world = spawn_world("D3", seed)
            for veh in world.vehicles:
                assert 25.0 <= veh.v <= 30.0

    def test_same_lane_bumper_gaps_at_least_min(self):
        for seed in range(20):
            world = spawn_world("D3", seed)
            for lane in range(world.road.lane_count):
                xs = sorted(v.x for v in world.vehicles if v.lane == lane)
                for a, b in zip(xs, xs[1:]):
                    assert b - a - core.VEHICLE_LENGTH >= 15.0 - 1e-9

    def test_unique_ids_and_positions_on_road(self):
        world = spawn_world("D3", 3)
        ids = world.ids()
        assert len(ids) == len(set(ids))
        for veh in world.vehicles:
            assert 0.0 <= veh.x <= world.road.length

    def test_too_short_road_fails_distinctly(self):
        tiny = RoadConfig(length=30.0)
        with pytest.raises(SpawnError):
            for seed in range(50):
                spawn_world("D3", seed, tiny)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            spawn_world("D9", 0)


class TestAdvance:
    def test_constant_speed_moves_five_meters(self):
        world = make_world([vehicle(0, x=100.0, v=25.0)])
        moved = advance(world, keep_all(world))
        assert moved.vehicle(0).x == 105.0
        assert moved.step_count == 1

    def test_left_from_leftmost_lane_equals_keep(self):
        world = make_world([vehicle(0, x=100.0, lane=0)])
        kept = advance(world, {0: (0.0, LaneDecision.KEEP)}).vehicle(0)
        turned = advance(world, {0: (0.0, LaneDecision.LEFT)}).vehicle(0)
        assert kept == turned

    def test_right_lane_change_integrates_over_five_steps(self):
        # one second of lateral motion at dt=0.2: y moves 0.8 m per step
        world = make_world([vehicle(0, x=0.0, lane=0, v=25.0)])
        world = advance(world, {0: (0.0, LaneDecision.RIGHT)})
        ys = [world.vehicle(0).y]
        lanes = [world.vehicle(0).lane]
        for _ in range(4):
            world = advance(world, {0: (0.0, LaneDecision.KEEP)})
            ys.append(world.vehicle(0).y)
            lanes.append(world.vehicle(0).lane)
        assert ys == pytest.approx([0.8, 1.6, 2.4, 3.2, 4.0])
        assert ys[-1] == 4.0
        assert lanes[:2] == [0, 0]  # index switches at half way
        assert lanes[2:] == [1, 1, 1]
        veh = world.vehicle(0)
        assert veh.lane_change_progress == 1.0
        assert veh.y == world.road.lane_center(1)

    def test_y_monotonic_during_change(self):
        world = make_world([vehicle(0, x=0.0, lane=1)])
        world = advance(world, {0: (0.0, LaneDecision.LEFT)})
        previous = world.vehicle(0).y
        for _ in range(4):
            world = advance(world, {0: (0.0, LaneDecision.KEEP)})
            assert world.vehicle(0).y < previous
            previous = world.vehicle(0).y

    def test_decision_ignored_mid_transition(self):
        world = make_world([vehicle(0, x=0.0, lane=0)])
        world = advance(world, {0: (0.0, LaneDecision.RIGHT)})
        target_before = world.vehicle(0).target_lane
        world = advance(world, {0: (0.0, LaneDecision.LEFT)})
        assert world.vehicle(0).target_lane == target_before

    def test_speed_never_negative(self):
        world = make_world([vehicle(0, x=100.0, v=1.0)])
        world = advance(world, {0: (-9.0, LaneDecision.KEEP)})
        assert world.vehicle(0).v == 0.0

    def test_vehicle_past_road_end_removed(self):
        world = make_world([vehicle(0, x=519.0, v=25.0), vehicle(1, x=10.0)])
        world = advance(world, keep_all(world))
        assert world.ids() == [1]

    def test_missing_command_rejected(self):
        world = make_world([vehicle(0, x=10.0)])
        with pytest.raises(ValueError):
            advance(world, {})

    def test_non_finite_acceleration_rejected(self):
        world = make_world([vehicle(0, x=10.0)])
        with pytest.raises(ValueError):
            advance(world, {0: (float("nan"), LaneDecision.KEEP)})

    def test_trajectory_determinism(self):
        def run():
            world = spawn_world("D2", seed=5)
            xs = []
            for i in range(30):
                decision = (
                    LaneDecision.RIGHT if i % 7 == 0 else LaneDecision.KEEP
                )
                world = advance(
                    world, {vid: (0.5, decision) for vid in world.ids()}
                )
                xs.append(tuple((v.id, v.x, v.y, v.v) for v in world.vehicles))
            return xs

        assert run() == run()


class TestCollisions:
    def test_same_lane_overlap(self):
        world = make_world([vehicle(0, x=100.0), vehicle(1, x=104.0)])
        assert detect_collisions(world) == [(0, 1)]

    def test_same_lane_clear(self):
        world = make_world([vehicle(0, x=100.0), vehicle(1, x=105.1)])
        assert detect_collisions(world) == []

    def test_adjacent_lanes_never_collide_when_settled(self):
        world = make_world(
            [vehicle(0, x=100.0, lane=0), vehicle(1, x=100.0, lane=1)]
        )
        assert detect_collisions(world) == []

    def test_pairs_unique_and_ordered(self):
        world = make_world(
            [vehicle(0, x=100.0), vehicle(1, x=103.0), vehicle(2, x=106.0)]
        )
        pairs = detect_collisions(world)
        assert pairs == sorted(set(pairs))
        for a, b in pairs:
            assert a < b

    @given(
        xs=st.lists(
            st.floats(min_value=0.0, max_value=500.0), min_size=2, max_size=6
        )
    )
    @settings(max_examples=50, deadline=None)
    def test_symmetric_irreflexive(self, xs):
        world = make_world([vehicle(i, x=x) for i, x in enumerate(xs)])
        pairs = detect_collisions(world)
        assert all(a != b for a, b in pairs)
        assert len(pairs) == len(set(pairs))
        # reversing the vehicle list must find the same collisions
        reverse = make_world([vehicle(i, x=x) for i, x in enumerate(xs)][::-1])
        assert sorted(detect_collisions(reverse)) == sorted(pairs)


class TestQueries:
    def test_neighbors_sorted_by_distance(self):
        world = make_world(
            [
                vehicle(0, x=100.0),
                vehicle(1, x=130.0),
                vehicle(2, x=90.0),
                vehicle(3, x=300.0),
            ]
        )
        assert neighbors(world, 0, radius=50.0) == [2, 1]

    def test_neighbors_zero_radius_empty(self):
        world = make_world([vehicle(0, x=100.0), vehicle(1, x=101.0)])
        assert neighbors(world, 0, radius=0.0) == []

    def test_neighbors_tie_breaks_by_id(self):
        world = make_world(
            [vehicle(0, x=100.0), vehicle(2, x=110.0), vehicle(1, x=90.0)]
        )
        assert neighbors(world, 0, radius=50.0) == [1, 2]

    def test_neighbors_unknown_id(self):
        world = make_world([vehicle(0, x=100.0)])
        with pytest.raises(KeyError):
            neighbors(world, 99, radius=10.0)

    def test_leader_gap_and_speed_delta(self):
        world = make_world([vehicle(0, x=100.0, v=25.0), vehicle(1, x=120.0, v=20.0)])
        vid, gap, dv = leader(world, 0, lane=0)
        assert vid == 1
        assert gap == 15.0
        assert dv == 5.0

    def test_leader_none_when_lane_clear_ahead(self):
        world = make_world([vehicle(0, x=100.0), vehicle(1, x=50.0)])
        assert leader(world, 0, lane=0) is None
        assert leader(world, 0, lane=1) is None

    def test_leader_is_nearest_ahead(self):
        world = make_world(
            [vehicle(0, x=100.0), vehicle(1, x=140.0), vehicle(2, x=120.0)]
        )
        assert leader(world, 0, lane=0)[0] == 2

    def test_follower_symmetry(self):
        world = make_world([vehicle(0, x=100.0, v=25.0), vehicle(1, x=80.0, v=28.0)])
        vid, gap, dv = core.follower(world, 0, lane=0)
        assert vid == 1
        assert gap == 15.0
        assert dv == 3.0
