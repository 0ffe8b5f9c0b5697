import math

import hypothesis.strategies as st
import pytest
from hypothesis import given

from arterialsim.dynamics import (
    DILEMMA_DECEL,
    EMERGENCY_DECEL,
    VEHICLE_LENGTH,
    DriverParams,
    LaneInfo,
    Neighborhood,
    Route,
    Vehicle,
    VehicleClass,
    advance,
    automated_params,
    conventional_params,
    idm_acceleration,
    lane_change_decision,
    signal_interaction,
)
from arterialsim.errors import NonPositiveGap
from arterialsim.reservation import LaneObligation, ObligationKind

LIMIT = 24.59


def make_vehicle(params, speed, vclass=VehicleClass.CONVENTIONAL, position=0.0, lane=0):
    return Vehicle(
        id=1,
        vehicle_class=vclass,
        direction="nb",
        position=position,
        lane_index=lane,
        speed=speed,
        accel=0.0,
        params=params,
        route=Route(),
    )


class TestParams:
    def test_automated_profile(self):
        p = automated_params(LIMIT)
        assert p.desired_speed == LIMIT
        assert p.max_accel == 2.0
        assert p.comfortable_decel == 2.5
        assert p.min_gap == 1.0
        assert p.headway == 0.9
        assert p.startup_lost_time == 0.0

    def test_conventional_profile(self):
        p = conventional_params(LIMIT, 1.05)
        assert p.desired_speed == pytest.approx(LIMIT * 1.05)
        assert p.max_accel == 1.5
        assert p.comfortable_decel == 2.0
        assert p.min_gap == 2.0
        assert p.headway == 1.5
        assert p.startup_lost_time == 2.0

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            DriverParams(0.0, 1.5, 2.0, 2.0, 1.5, 2.0)
        with pytest.raises(ValueError):
            DriverParams(20.0, 1.5, 2.0, 2.0, 1.5, -1.0)


class TestIdmAcceleration:
    def test_free_road_value(self):
        # 1.5 * (1 - (10/24.59)^4), frozen
        veh = make_vehicle(conventional_params(LIMIT), 10.0)
        assert idm_acceleration(veh, None, 0.0, veh.params) == pytest.approx(1.4589741919, abs=1e-9)

    def test_conventional_leader_value(self):
        # v=10, equal-speed leader, gap 30: s* = 2 + 15 = 17, frozen
        veh = make_vehicle(conventional_params(LIMIT), 10.0)
        acc = idm_acceleration(veh, 30.0, 10.0, veh.params)
        assert acc == pytest.approx(0.9773075252, abs=1e-9)

    def test_automated_closing_value(self):
        # v=20 closing on a 15 m/s leader at gap 25, frozen
        veh = make_vehicle(automated_params(LIMIT), 20.0, VehicleClass.AUTOMATED)
        acc = idm_acceleration(veh, 25.0, 15.0, veh.params)
        assert acc == pytest.approx(-4.3494759, abs=1e-6)

    def test_at_desired_speed_free_accel_zero(self):
        veh = make_vehicle(conventional_params(LIMIT), LIMIT)
        assert idm_acceleration(veh, None, 0.0, veh.params) == pytest.approx(0.0, abs=1e-12)

    def test_emergency_floor(self):
        veh = make_vehicle(conventional_params(LIMIT), 20.0)
        acc = idm_acceleration(veh, 0.5, 0.0, veh.params)
        assert acc == -EMERGENCY_DECEL

    def test_nonpositive_gap_raises(self):
        veh = make_vehicle(conventional_params(LIMIT), 10.0)
        with pytest.raises(NonPositiveGap):
            idm_acceleration(veh, 0.0, 5.0, veh.params)
        with pytest.raises(NonPositiveGap):
            idm_acceleration(veh, -2.0, 5.0, veh.params)

    def test_standstill_at_min_gap_is_nonpositive(self):
        veh = make_vehicle(conventional_params(LIMIT), 0.0)
        acc = idm_acceleration(veh, veh.params.min_gap, 0.0, veh.params)
        assert acc == pytest.approx(0.0, abs=1e-12)

    @given(
        st.floats(0.0, 30.0),
        st.floats(0.5, 200.0),
        st.floats(0.0, 30.0),
        st.floats(0.9, 1.1),
    )
    def test_bounded_and_monotone_in_gap(self, v, gap, lead_v, factor):
        params = conventional_params(LIMIT, factor)
        veh = make_vehicle(params, v)
        acc = idm_acceleration(veh, gap, lead_v, params)
        assert -EMERGENCY_DECEL <= acc <= params.max_accel
        wider = idm_acceleration(veh, gap + 5.0, lead_v, params)
        assert wider >= acc - 1e-9


class TestAdvance:
    def test_constant_speed(self):
        veh = make_vehicle(conventional_params(LIMIT), 10.0)
        out = advance(veh, 0.0, 0.1)
        assert out.position == pytest.approx(1.0)
        assert out.speed == pytest.approx(10.0)

    def test_ballistic_accel(self):
        veh = make_vehicle(conventional_params(LIMIT), 10.0)
        out = advance(veh, 1.0, 0.1)
        assert out.speed == pytest.approx(10.1)
        assert out.position == pytest.approx(1.005)

    def test_stop_truncation_value(self):
        # v=0.05, a=-2: stops after 0.025 s, dx = v^2 / (2|a|) = 0.000625, frozen
        veh = make_vehicle(conventional_params(LIMIT), 0.05)
        out = advance(veh, -2.0, 0.1)
        assert out.speed == 0.0
        assert out.position == pytest.approx(0.000625, abs=1e-12)

    def test_stopped_stays_put_under_braking(self):
        veh = make_vehicle(conventional_params(LIMIT), 0.0)
        out = advance(veh, -3.0, 0.1)
        assert out.speed == 0.0
        assert out.position == 0.0

    def test_rejects_nonpositive_dt(self):
        veh = make_vehicle(conventional_params(LIMIT), 5.0)
        with pytest.raises(ValueError):
            advance(veh, 0.0, 0.0)

    @given(st.floats(0.0, 30.0), st.floats(-9.0, 3.0))
    def test_never_reverses(self, v, a):
        veh = make_vehicle(conventional_params(LIMIT), v)
        out = advance(veh, a, 0.1)
        assert out.speed >= 0.0
        assert out.position >= veh.position


class TestSignalInteraction:
    def test_red_always_binds(self):
        veh = make_vehicle(conventional_params(LIMIT), 15.0)
        assert signal_interaction(veh, 40.0, "red") == (40.0, 0.0)

    def test_green_clears_cruising_vehicle(self):
        veh = make_vehicle(conventional_params(LIMIT), 15.0)
        assert signal_interaction(veh, 40.0, "green") is None

    def test_yellow_stops_when_comfortable(self):
        # v=10, d=40: required decel 1.25 <= 3 -> stop
        veh = make_vehicle(conventional_params(LIMIT), 10.0)
        assert signal_interaction(veh, 40.0, "yellow") == (40.0, 0.0)

    def test_yellow_proceeds_in_dilemma_zone(self):
        # v=20, d=20: required decel 10 > 3 -> go
        veh = make_vehicle(conventional_params(LIMIT), 20.0)
        assert signal_interaction(veh, 20.0, "yellow") is None

    def test_yellow_boundary_decel(self):
        veh = make_vehicle(conventional_params(LIMIT), 12.0)
        d_exact = 12.0 * 12.0 / (2.0 * DILEMMA_DECEL)
        assert signal_interaction(veh, d_exact, "yellow") == (d_exact, 0.0)
        assert signal_interaction(veh, d_exact - 0.1, "yellow") is None

    def test_startup_lost_time_holds_conventional_leader(self):
        veh = make_vehicle(conventional_params(LIMIT), 0.0)
        held = signal_interaction(veh, 3.0, "green", time_since_green=1.0, first_in_queue=True)
        assert held == (3.0, 0.0)
        released = signal_interaction(veh, 3.0, "green", time_since_green=2.0, first_in_queue=True)
        assert released is None

    def test_no_lost_time_for_automated(self):
        veh = make_vehicle(automated_params(LIMIT), 0.0, VehicleClass.AUTOMATED)
        assert signal_interaction(veh, 3.0, "green", time_since_green=0.0, first_in_queue=True) is None

    def test_no_lost_time_midqueue(self):
        veh = make_vehicle(conventional_params(LIMIT), 0.0)
        assert signal_interaction(veh, 30.0, "green", time_since_green=0.5, first_in_queue=False) is None

    def test_negative_distance_raises(self):
        veh = make_vehicle(conventional_params(LIMIT), 5.0)
        with pytest.raises(ValueError):
            signal_interaction(veh, -1.0, "red")


def open_lane(reserved=False):
    return LaneInfo(lead_gap=None, lead_speed=0.0, follow_gap=None, follow_speed=0.0, reserved=reserved)


def blocked_lane():
    return LaneInfo(lead_gap=3.0, lead_speed=0.0, follow_gap=3.0, follow_speed=20.0)


class TestLaneChangeDecision:
    def test_stays_when_content(self):
        veh = make_vehicle(conventional_params(LIMIT), 15.0)
        hood = Neighborhood(None, 0.0, open_lane(), open_lane())
        assert lane_change_decision(veh, hood, []) == "stay"

    def test_moves_for_clear_gain(self):
        veh = make_vehicle(conventional_params(LIMIT), 15.0)
        hood = Neighborhood(8.0, 0.0, open_lane(), None)
        assert lane_change_decision(veh, hood, []) == "move_left"

    def test_keep_out_blocks_reserved_target(self):
        veh = make_vehicle(conventional_params(LIMIT), 15.0)
        hood = Neighborhood(8.0, 0.0, open_lane(reserved=True), None)
        keep = [LaneObligation(veh.id, ObligationKind.KEEP_OUT_OF_RESERVED)]
        assert lane_change_decision(veh, hood, keep) == "stay"
        assert lane_change_decision(veh, hood, []) == "move_left"

    def test_small_gain_ignored(self):
        veh = make_vehicle(conventional_params(LIMIT), 15.0)
        same = LaneInfo(lead_gap=60.0, lead_speed=15.0, follow_gap=None, follow_speed=0.0)
        hood = Neighborhood(60.0, 15.0, same, None)
        assert lane_change_decision(veh, hood, []) == "stay"

    def test_unsafe_follower_blocks_move(self):
        veh = make_vehicle(conventional_params(LIMIT), 5.0)
        target = LaneInfo(lead_gap=None, lead_speed=0.0, follow_gap=4.0, follow_speed=22.0)
        hood = Neighborhood(6.0, 0.0, target, None)
        assert lane_change_decision(veh, hood, []) == "stay"

    def test_mandatory_pull_right_before_deadline(self):
        veh = make_vehicle(conventional_params(LIMIT), 15.0, position=500.0)
        hood = Neighborhood(None, 0.0, open_lane(), open_lane())
        reach = [LaneObligation(veh.id, ObligationKind.REACH_RIGHTMOST_BEFORE, 900.0)]
        assert lane_change_decision(veh, hood, reach) == "move_right"

    def test_mandatory_pull_ignored_far_upstream(self):
        veh = make_vehicle(conventional_params(LIMIT), 15.0, position=0.0)
        hood = Neighborhood(None, 0.0, open_lane(), open_lane())
        reach = [LaneObligation(veh.id, ObligationKind.REACH_RIGHTMOST_BEFORE, 900.0)]
        assert lane_change_decision(veh, hood, reach) == "stay"

    def test_mandatory_waits_for_safe_gap(self):
        veh = make_vehicle(conventional_params(LIMIT), 15.0, position=500.0)
        hood = Neighborhood(None, 0.0, open_lane(), blocked_lane())
        reach = [LaneObligation(veh.id, ObligationKind.REACH_RIGHTMOST_BEFORE, 900.0)]
        # blocked right lane: hold position rather than dive into a 3 m gap
        assert lane_change_decision(veh, hood, reach) == "stay"

    @given(
        st.floats(0.0, 25.0),
        st.one_of(st.none(), st.floats(0.5, 120.0)),
        st.floats(0.0, 25.0),
    )
    def test_always_returns_valid_action(self, v, gap, lead_v):
        veh = make_vehicle(conventional_params(LIMIT), v)
        hood = Neighborhood(gap, lead_v, open_lane(), blocked_lane())
        assert lane_change_decision(veh, hood, []) in ("stay", "move_left", "move_right")


def test_vehicle_length_constant():
    assert VEHICLE_LENGTH == 4.5
    veh = make_vehicle(conventional_params(LIMIT), 0.0)
    assert veh.length == VEHICLE_LENGTH
