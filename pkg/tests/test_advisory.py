import numpy as np
import pytest

from arterialsim.advisory import (
    END_MARGIN,
    HORIZON_CYCLES,
    advisory_speeds,
    arrival_time,
    compute_advisory,
)
from arterialsim.signals import GREEN, RED, YELLOW, PhaseInterval, SignalPlan


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


class TestArrivalTime:
    def test_cruise_no_transition(self):
        assert arrival_time(500.0, 20.0, 20.0) == pytest.approx(25.0)

    def test_speed_up_then_cruise(self):
        # ramp 10->20 at 2 m/s^2 covers 75 m in 5 s, cruise the rest, frozen
        assert arrival_time(500.0, 10.0, 20.0) == pytest.approx(26.25)

    def test_arrival_mid_acceleration(self):
        # from rest toward an unreachably high target: t = sqrt(2d/a), frozen
        assert arrival_time(20.0, 0.0, 100.0) == pytest.approx(4.47213595, abs=1e-8)

    def test_arrival_mid_deceleration(self):
        # 20 m/s braking at 2.5 toward 5 m/s, bar only 5 m away, frozen
        assert arrival_time(5.0, 20.0, 5.0) == pytest.approx(0.25403331, abs=1e-8)

    def test_monotone_decreasing_in_target(self):
        targets = np.linspace(5.0, 25.0, 100)
        times = arrival_time(600.0, 12.0, targets)
        assert np.all(np.diff(times) < 0)

    def test_broadcasts(self):
        out = arrival_time([100.0, 200.0], 10.0, [10.0, 20.0])
        assert out.shape == (2,)
        assert out[0] == pytest.approx(10.0)


def oracle_advisory(d, v, v_min, v_max, plan, now, queue_delay=0.0, step=0.002):
    """Exhaustive scan of the speed range: highest constant target whose
    stop-bar arrival lands inside a usable green window, earliest window
    first; v_min when none works."""
    gs, ge = plan.green_bounds()
    speeds = np.arange(v_max, v_min - step / 2, -step)
    taus = arrival_time(d, v, speeds)
    k0 = int(np.ceil((now - plan.offset - ge) / plan.cycle))
    for j in range(HORIZON_CYCLES + 1):
        k = k0 + j
        w_start = plan.offset + k * plan.cycle + gs
        if w_start >= now + HORIZON_CYCLES * plan.cycle:
            continue
        w_end = plan.offset + k * plan.cycle + ge
        lo = max(max(w_start, now) + (queue_delay if j == 0 else 0.0) - now, 0.0)
        hi = w_end - END_MARGIN - now
        ok = (taus >= lo) & (taus <= hi)
        if np.any(ok):
            return float(speeds[np.argmax(ok)])
    return v_min


CASES = []
_rng = np.random.default_rng(20240817)
for _ in range(150):
    CASES.append(
        dict(
            d=float(_rng.uniform(20.0, 2000.0)),
            v=float(_rng.uniform(0.0, 25.0)),
            v_min=7.377,
            v_max=24.59,
            offset=float(_rng.uniform(0.0, 120.0)),
            now=float(_rng.uniform(0.0, 600.0)),
            qd=float(_rng.choice([0.0, 0.0, 4.0, 10.0, 22.0])),
        )
    )


class TestComputeAdvisory:
    def test_matches_exhaustive_oracle(self):
        for case in CASES:
            plan = plan_55_5_60(case["offset"])
            got = compute_advisory(
                case["d"], case["v"], case["v_min"], case["v_max"], plan,
                case["now"], queue_delay=case["qd"],
            )
            want = oracle_advisory(
                case["d"], case["v"], case["v_min"], case["v_max"], plan,
                case["now"], queue_delay=case["qd"],
            )
            assert got == pytest.approx(want, abs=0.1), case

    def test_result_always_within_bounds(self):
        for case in CASES:
            plan = plan_55_5_60(case["offset"])
            got = compute_advisory(
                case["d"], case["v"], case["v_min"], case["v_max"], plan,
                case["now"], queue_delay=case["qd"],
            )
            assert case["v_min"] - 1e-9 <= got <= case["v_max"] + 1e-9

    def test_green_now_and_reachable_gives_v_max(self):
        plan = plan_55_5_60()
        # 200 m at up to 24.59 m/s arrives ~8 s into a 54 s usable green
        assert compute_advisory(200.0, 24.59, 7.0, 24.59, plan, 0.0) == pytest.approx(24.59)

    def test_red_ahead_slows_to_hit_next_green(self):
        plan = plan_55_5_60()
        # now=60 (red just started), 600 m to go; green reopens at t=120
        target = compute_advisory(600.0, 24.59, 7.0, 24.59, plan, 60.0)
        assert target < 24.59
        tau = arrival_time(600.0, 24.59, target)
        assert 60.0 + tau == pytest.approx(120.0, abs=0.05)

    def test_infeasible_falls_back_to_floor(self):
        plan = plan_55_5_60()
        # 10 m from the bar during red: even the floor speed arrives long
        # before the next green opens.
        assert compute_advisory(10.0, 20.0, 7.0, 24.59, plan, 61.0) == pytest.approx(7.0)

    def test_queue_delay_pushes_arrival_later(self):
        plan = plan_55_5_60()
        free = compute_advisory(600.0, 24.59, 7.0, 24.59, plan, 60.0)
        queued = compute_advisory(600.0, 24.59, 7.0, 24.59, plan, 60.0, queue_delay=20.0)
        assert queued < free

    def test_rejects_bad_inputs(self):
        plan = plan_55_5_60()
        with pytest.raises(ValueError):
            compute_advisory(0.0, 10.0, 7.0, 24.59, plan, 0.0)
        with pytest.raises(ValueError):
            compute_advisory(100.0, 10.0, 20.0, 10.0, plan, 0.0)


class TestBatchConsistency:
    def test_batch_equals_scalar(self):
        plan = plan_55_5_60(44.4)
        gs, ge = plan.green_bounds()
        d = np.array([c["d"] for c in CASES[:40]])
        v = np.array([c["v"] for c in CASES[:40]])
        qd = np.array([c["qd"] for c in CASES[:40]])
        batch = advisory_speeds(d, v, 7.377, 24.59, plan.cycle, plan.offset, gs, ge, 90.0, qd)
        for i in range(len(d)):
            scalar = compute_advisory(float(d[i]), float(v[i]), 7.377, 24.59, plan, 90.0, float(qd[i]))
            assert batch[i] == pytest.approx(scalar, abs=1e-9)
