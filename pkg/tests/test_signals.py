import hypothesis.strategies as st
import pytest
from hypothesis import assume, given

from arterialsim.errors import InvalidGeometry
from arterialsim.signals import (
    GREEN,
    RED,
    YELLOW,
    PhaseInterval,
    SignalPlan,
    all_green_plan,
    green_windows,
    next_green_window,
    phase_state,
    signal_timeline,
)


def plan_55_5_60(offset=0.0):
    return SignalPlan(
        cycle=120.0,
        offset=offset,
        intervals=(
            PhaseInterval(GREEN, 55.0),
            PhaseInterval(YELLOW, 5.0),
            PhaseInterval(RED, 60.0),
        ),
    )


class TestPhaseState:
    def test_states_through_one_cycle(self):
        plan = plan_55_5_60()
        assert phase_state(plan, 10.0) == GREEN
        assert phase_state(plan, 54.9) == GREEN
        assert phase_state(plan, 55.0) == YELLOW
        assert phase_state(plan, 59.9) == YELLOW
        assert phase_state(plan, 60.0) == RED
        assert phase_state(plan, 119.9) == RED
        assert phase_state(plan, 120.0) == GREEN

    def test_offset_shifts_local_clock(self):
        # local time (10 - 30) mod 120 = 100 -> red
        assert phase_state(plan_55_5_60(offset=30.0), 10.0) == RED

    def test_negative_time_wraps(self):
        assert phase_state(plan_55_5_60(), -70.0) == GREEN

    def test_wrapping_green_run(self):
        plan = SignalPlan(
            cycle=120.0,
            offset=0.0,
            intervals=(
                PhaseInterval(GREEN, 20.0),
                PhaseInterval(YELLOW, 5.0),
                PhaseInterval(RED, 60.0),
                PhaseInterval(GREEN, 35.0),
            ),
        )
        # the two green pieces form one run wrapping the cycle boundary
        start, end = plan.green_bounds()
        assert start == pytest.approx(85.0)
        assert end == pytest.approx(140.0)
        assert phase_state(plan, 10.0) == GREEN
        assert phase_state(plan, 90.0) == GREEN
        assert phase_state(plan, 30.0) == RED


class TestPlanValidation:
    def test_interval_rejects_unknown_state(self):
        with pytest.raises(InvalidGeometry):
            PhaseInterval("blue", 10.0)

    def test_interval_rejects_nonpositive_duration(self):
        with pytest.raises(InvalidGeometry):
            PhaseInterval(GREEN, 0.0)

    def test_durations_must_sum_to_cycle(self):
        with pytest.raises(InvalidGeometry):
            SignalPlan(cycle=100.0, offset=0.0,
                       intervals=(PhaseInterval(GREEN, 55.0), PhaseInterval(RED, 60.0)))

    def test_needs_a_green(self):
        with pytest.raises(InvalidGeometry):
            SignalPlan(cycle=120.0, offset=0.0,
                       intervals=(PhaseInterval(RED, 60.0), PhaseInterval(YELLOW, 60.0)))

    def test_rejects_split_green(self):
        with pytest.raises(InvalidGeometry):
            SignalPlan(
                cycle=120.0,
                offset=0.0,
                intervals=(
                    PhaseInterval(GREEN, 10.0),
                    PhaseInterval(RED, 50.0),
                    PhaseInterval(GREEN, 10.0),
                    PhaseInterval(RED, 50.0),
                ),
            )


class TestNextGreenWindow:
    def test_inside_current_green(self):
        start, end = next_green_window(plan_55_5_60(), 10.0)
        assert (start, end) == (10.0, 55.0)

    def test_during_red_rolls_to_next_cycle(self):
        start, end = next_green_window(plan_55_5_60(), 70.0)
        assert (start, end) == (120.0, 175.0)

    def test_offset_case(self):
        start, end = next_green_window(plan_55_5_60(offset=30.0), 0.0)
        assert (start, end) == (30.0, 85.0)

    def test_window_matches_phase_state(self):
        plan = plan_55_5_60(offset=47.0)
        for t in (0.0, 33.3, 61.0, 99.9, 150.0):
            start, end = next_green_window(plan, t)
            assert start >= t
            assert phase_state(plan, (start + end) / 2) == GREEN

    def test_green_windows_enumeration(self):
        windows = green_windows(plan_55_5_60(), 0.0, 360.0)
        assert windows == [(0.0, 55.0), (120.0, 175.0), (240.0, 295.0)]


class TestTimeline:
    def test_matches_pointwise_evaluation(self):
        plan = plan_55_5_60(offset=44.4)
        times = [i * 0.5 for i in range(720)]
        is_green, is_yellow = signal_timeline(plan, times)
        for t, g, y in zip(times, is_green, is_yellow):
            state = phase_state(plan, t)
            assert g == (state == GREEN)
            assert y == (state == YELLOW)

    def test_all_green_plan(self):
        plan = all_green_plan()
        assert plan.cycle == 120.0
        for t in (0.0, 59.0, 119.0, 500.0):
            assert phase_state(plan, t) == GREEN
        start, end = next_green_window(plan, 42.0)
        assert start == 42.0


plans = st.builds(
    lambda g, y, r, off: SignalPlan(
        cycle=g + y + r,
        offset=off,
        intervals=(PhaseInterval(GREEN, g), PhaseInterval(YELLOW, y), PhaseInterval(RED, r)),
    ),
    st.floats(5.0, 100.0),
    st.floats(1.0, 10.0),
    st.floats(5.0, 100.0),
    st.floats(-200.0, 200.0),
)


@given(plans, st.floats(-500.0, 500.0))
def test_next_window_is_green_and_ahead(plan, t):
    start, end = next_green_window(plan, t)
    assert end > start
    assert start >= t
    # Window may be left-clipped to t, never longer than the green phase.
    assert end - start <= plan.intervals[0].duration + 1e-6
    assert phase_state(plan, (start + end) / 2) == GREEN


@given(plans, st.floats(-500.0, 500.0))
def test_phase_state_has_cycle_period(plan, t):
    # Modulo rounding can flip the state exactly on a phase boundary; keep
    # the sampled time safely inside an interval.
    local = plan.local_time(t)
    ends, _ = plan.boundaries()
    assume(all(abs(local - e) > 1e-6 for e in [0.0] + ends))
    assert phase_state(plan, t) == phase_state(plan, t + plan.cycle)
