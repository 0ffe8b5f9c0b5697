"""Fixed-time signal plans and phase/green-window queries."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidGeometry

GREEN = "green"
YELLOW = "yellow"
RED = "red"

_STATES = (GREEN, YELLOW, RED)
_DUR_TOL = 1e-6


@dataclass(frozen=True)
class PhaseInterval:
    state: str
    duration: float

    def __post_init__(self):
        if self.state not in _STATES:
            raise InvalidGeometry(f"unknown phase state '{self.state}'")
        if self.duration <= 0:
            raise InvalidGeometry("phase interval duration must be > 0")


@dataclass(frozen=True)
class SignalPlan:
    """One coordinated mainline approach: cycle length, coordination offset and
    the ordered phase intervals, which must contain exactly one contiguous
    green per cycle (circularly)."""

    cycle: float
    offset: float
    intervals: tuple[PhaseInterval, ...]

    def __post_init__(self):
        if self.cycle <= 0:
            raise InvalidGeometry("cycle must be > 0")
        total = sum(iv.duration for iv in self.intervals)
        if abs(total - self.cycle) > _DUR_TOL:
            raise InvalidGeometry(f"interval durations sum to {total}, expected cycle {self.cycle}")
        greens = [iv.state == GREEN for iv in self.intervals]
        if not any(greens):
            raise InvalidGeometry("plan has no green interval")
        # Count green runs circularly: exactly one contiguous green block allowed.
        runs = 0
        n = len(greens)
        for i in range(n):
            if greens[i] and not greens[i - 1]:
                runs += 1
        if all(greens):
            runs = 1
        if runs != 1:
            raise InvalidGeometry("plan must have exactly one contiguous green interval per cycle")

    def local_time(self, t: float) -> float:
        return (t - self.offset) % self.cycle

    def boundaries(self):
        """Cumulative interval end times (local) and matching states."""
        ends = []
        acc = 0.0
        for iv in self.intervals:
            acc += iv.duration
            ends.append(acc)
        return ends, [iv.state for iv in self.intervals]

    def green_bounds(self) -> tuple[float, float]:
        """Start/end (local time) of the green block, unwrapped: end may exceed
        cycle when the block wraps past the cycle boundary."""
        ends, states = self.boundaries()
        starts = [0.0] + ends[:-1]
        n = len(states)
        # Find the first interval of the green run (predecessor not green).
        first = None
        for i in range(n):
            if states[i] == GREEN and states[i - 1] != GREEN:
                first = i
                break
        if first is None:  # all green
            return 0.0, self.cycle
        length = 0.0
        i = first
        while states[i] == GREEN:
            length += self.intervals[i].duration
            i = (i + 1) % n
            if i == first:
                break
        return starts[first], starts[first] + length


def phase_state(plan: SignalPlan, t: float) -> str:
    """Signal state at absolute time t (coordination offset applied)."""
    local = plan.local_time(t)
    ends, states = plan.boundaries()
    for end, state in zip(ends, states):
        if local < end:
            return state
    return states[-1]


def next_green_window(plan: SignalPlan, t: float) -> tuple[float, float]:
    """Earliest [start, end) with start >= t during which the plan shows green.
    If green at t, start == t."""
    gs, ge = plan.green_bounds()
    local = plan.local_time(t)
    base = t - local  # absolute time of local 0 for the current cycle
    for k in (-1, 0, 1):
        start = base + k * plan.cycle + gs
        end = base + k * plan.cycle + ge
        if t < end:
            return (max(t, start), end)
    # Unreachable: k=1 window always starts after t.
    raise AssertionError("no green window found")


def green_windows(plan: SignalPlan, t: float, horizon: float):
    """All green windows intersecting [t, t + horizon), clipped at the left to t."""
    windows = []
    cursor = t
    end_limit = t + horizon
    while True:
        start, end = next_green_window(plan, cursor)
        if start >= end_limit:
            break
        windows.append((start, end))
        cursor = end + 1e-9
        if cursor >= end_limit:
            break
    return windows


def signal_timeline(plan: SignalPlan, times):
    """Vectorized phase lookup: returns (is_green, is_yellow) boolean arrays."""
    import numpy as np

    times = np.asarray(times, dtype=float)
    local = (times - plan.offset) % plan.cycle
    ends, states = plan.boundaries()
    idx = np.searchsorted(np.asarray(ends), local, side="right")
    idx = np.minimum(idx, len(states) - 1)
    codes = np.array([0 if s == GREEN else (1 if s == YELLOW else 2) for s in states])
    got = codes[idx]
    return got == 0, got == 1


def all_green_plan(cycle: float = 120.0) -> SignalPlan:
    """Degenerate plan that is green forever; used for free-flow checks."""
    return SignalPlan(cycle=cycle, offset=0.0, intervals=(PhaseInterval(GREEN, cycle),))
