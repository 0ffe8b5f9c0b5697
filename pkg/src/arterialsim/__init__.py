"""Microscopic simulation of signalized arterials carrying mixed conventional
and automated traffic, with reserved-lane policies and green-window speed
advisories."""

from .advisory import Advisory, SystemSnapshot, collect, compute_advisory, issue_advisories
from .corridor import (
    Corridor,
    Intersection,
    JughandleRamp,
    Lane,
    Link,
    build_corridor,
    next_signal,
    serialize_corridor,
    set_reserved_lanes,
)
from .dynamics import (
    DriverParams,
    Vehicle,
    VehicleClass,
    advance,
    idm_acceleration,
    lane_change_decision,
    signal_interaction,
)
from .engine import (
    DemandProfile,
    RunMetrics,
    ScenarioConfig,
    demand_for,
    generate_arrivals,
    load_corridor,
    run,
    step,
)
from .harness import ComparisonRow, SweepConfig, compare, crossover_mp, emit_report, sweep
from .reservation import LaneObligation, LosClass, lane_access, obligations_for, recommended_reserved_lanes
from .signals import PhaseInterval, SignalPlan, next_green_window, phase_state

__version__ = "0.1.0"
