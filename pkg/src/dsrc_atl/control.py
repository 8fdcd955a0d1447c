"""Traffic-light phase decision logic.

Three controllers share one interval engine:

* ``pretimed_step`` -- fixed cycle Green/Yellow/AllRed, round-robin phases.
* ``atl_step`` -- actuated by vehicle detections; regresses to the
  pre-timed cycle whenever there is no detection or when the active green
  approach still has demand, and switches early (after the minimum green)
  when all detections sit on red approaches.
* ``vtl_step`` -- the same decision logic fed perfect information; serves
  as the idealized full-knowledge baseline.

A controller step is a pure function ``(state, timing, ..., dt) ->
(state', command | None)``; a command is emitted at the instant a phase
turns green.
"""

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

_EPS = 1e-9


class Interval(enum.Enum):
    GREEN = "Green"
    YELLOW = "Yellow"
    ALL_RED = "AllRed"


@dataclass(frozen=True)
class Detection:
    """One vehicle seen on an approach, as fed to the controller."""

    approach_id: int
    distance_to_stop_m: float
    speed_ms: float
    temp_id: int
    time_ms: int

    def __post_init__(self) -> None:
        if self.distance_to_stop_m < 0:
            raise ValueError(f"distance_to_stop_m {self.distance_to_stop_m} is negative")


@dataclass(frozen=True)
class SignalTiming:
    """Interval durations; ``pretimed_green_s`` keys define the phase set."""

    min_green_s: float = 5.0
    yellow_s: float = 3.0
    all_red_s: float = 1.0
    pretimed_green_s: Mapping[int, float] = field(
        default_factory=lambda: {1: 40.0, 2: 10.0}
    )

    def __post_init__(self) -> None:
        for name in ("min_green_s", "yellow_s", "all_red_s"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if len(self.pretimed_green_s) < 2:
            raise ValueError("pretimed_green_s needs at least two phases")
        for phase, green in self.pretimed_green_s.items():
            if green <= 0:
                raise ValueError(f"pretimed_green_s[{phase}] must be positive")
            if green < self.min_green_s:
                raise ValueError(
                    f"pretimed_green_s[{phase}]={green} shorter than min_green_s={self.min_green_s}"
                )

    @property
    def phase_order(self) -> list[int]:
        return sorted(self.pretimed_green_s)

    def next_phase(self, phase_id: int) -> int:
        order = self.phase_order
        return order[(order.index(phase_id) + 1) % len(order)]


@dataclass(frozen=True)
class SignalState:
    active_phase_id: int
    interval: Interval
    interval_elapsed_s: float
    pending_phase_id: Optional[int]
    clock_s: float


@dataclass(frozen=True)
class PhaseCommand:
    phase_id: int
    issue_time_ms: int


def initial_state(timing: SignalTiming, clock_s: float = 0.0) -> tuple[SignalState, PhaseCommand]:
    """Start green on the first phase; the activation itself is a command."""
    first = timing.phase_order[0]
    state = SignalState(first, Interval.GREEN, 0.0, None, clock_s)
    return state, PhaseCommand(first, round(clock_s * 1000))


def _advance(state, timing, dt_s, switch_target):
    """Shared interval engine.

    ``switch_target(elapsed_s)`` is consulted only while green and returns
    the phase to switch to, or None to hold.
    """
    if dt_s <= 0:
        raise ValueError("dt_s must be positive")
    elapsed = state.interval_elapsed_s + dt_s
    clock = state.clock_s + dt_s

    if state.interval is Interval.YELLOW:
        if elapsed >= timing.yellow_s - _EPS:
            return replace(state, interval=Interval.ALL_RED, interval_elapsed_s=0.0, clock_s=clock), None
        return replace(state, interval_elapsed_s=elapsed, clock_s=clock), None

    if state.interval is Interval.ALL_RED:
        if elapsed >= timing.all_red_s - _EPS:
            command = PhaseCommand(state.pending_phase_id, round(clock * 1000))
            new = replace(
                state,
                active_phase_id=state.pending_phase_id,
                interval=Interval.GREEN,
                interval_elapsed_s=0.0,
                pending_phase_id=None,
                clock_s=clock,
            )
            return new, command
        return replace(state, interval_elapsed_s=elapsed, clock_s=clock), None

    target = switch_target(elapsed)
    if target is not None:
        return (
            replace(
                state,
                interval=Interval.YELLOW,
                interval_elapsed_s=0.0,
                pending_phase_id=target,
                clock_s=clock,
            ),
            None,
        )
    return replace(state, interval_elapsed_s=elapsed, clock_s=clock), None


def pretimed_step(
    state: SignalState, timing: SignalTiming, dt_s: float
) -> tuple[SignalState, Optional[PhaseCommand]]:
    """Fixed-time cycle: each phase holds green for its configured split."""

    def switch_target(elapsed):
        if elapsed >= timing.pretimed_green_s[state.active_phase_id] - _EPS:
            return timing.next_phase(state.active_phase_id)
        return None

    return _advance(state, timing, dt_s, switch_target)


def atl_step(
    state: SignalState,
    timing: SignalTiming,
    detections: Sequence[Detection],
    dt_s: float,
    approach_phases: Mapping[int, int],
) -> tuple[SignalState, Optional[PhaseCommand]]:
    """Detection-actuated step.

    Decision order while green: running transitions finish first; with no
    detections, or with demand on the green approach, the pre-timed split
    applies; otherwise all demand sits on red approaches, and once the
    minimum green has elapsed the phase of the nearest detection (ties to
    the lower approach id) is scheduled.
    """
    for det in detections:
        phase = approach_phases.get(det.approach_id)
        if phase is None or phase not in timing.pretimed_green_s:
            raise ValueError(
                f"detection on approach {det.approach_id} maps to unknown phase {phase}"
            )

    def switch_target(elapsed):
        pretimed_due = elapsed >= timing.pretimed_green_s[state.active_phase_id] - _EPS
        if not detections:
            return timing.next_phase(state.active_phase_id) if pretimed_due else None
        on_green = any(
            approach_phases[d.approach_id] == state.active_phase_id for d in detections
        )
        if on_green:
            return timing.next_phase(state.active_phase_id) if pretimed_due else None
        if elapsed >= timing.min_green_s - _EPS:
            nearest = min(detections, key=lambda d: (d.distance_to_stop_m, d.approach_id))
            return approach_phases[nearest.approach_id]
        return None

    return _advance(state, timing, dt_s, switch_target)


def vtl_step(
    state: SignalState,
    timing: SignalTiming,
    all_vehicles: Sequence[Detection],
    dt_s: float,
    approach_phases: Mapping[int, int],
) -> tuple[SignalState, Optional[PhaseCommand]]:
    """Perfect-information baseline: the actuated logic over every vehicle.

    Callers supply loss-free detections of all vehicles in the detection
    zone, equipped or not.
    """
    return atl_step(state, timing, all_vehicles, dt_s, approach_phases)


# How long a vehicle keeps counting after its last valid broadcast. Two
# missed broadcast periods: within the actuation zone reception is near
# certain, so a longer window mostly preserves ghosts of vehicles that
# already cleared the stop line and needlessly holds their green.
DETECTION_STALENESS_S = 0.2


class DetectionTracker:
    """Keeps the freshest detection per vehicle, evicting stale entries.

    Shared by the simulator's actuated mode and the roadside service so
    both feed the controller identically for the same message stream.
    """

    def __init__(self, staleness_s: float = DETECTION_STALENESS_S):
        if staleness_s <= 0:
            raise ValueError("staleness_s must be positive")
        self.staleness_s = staleness_s
        self._latest: dict[int, tuple[float, Detection]] = {}

    def update(self, detections: Iterable[Detection], now_s: float) -> None:
        for det in detections:
            self._latest[det.temp_id] = (now_s, det)

    def active(self, now_s: float) -> list[Detection]:
        cutoff = now_s - self.staleness_s
        stale = [tid for tid, (seen, _) in self._latest.items() if seen < cutoff - _EPS]
        for tid in stale:
            del self._latest[tid]
        return [det for _, (_, det) in sorted(self._latest.items())]


def timing_from_dict(data: dict) -> SignalTiming:
    known = {"min_green_s", "yellow_s", "all_red_s", "pretimed_green_s"}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown timing fields: {sorted(unknown)}")
    kwargs = dict(data)
    greens = kwargs.get("pretimed_green_s")
    if greens is not None:
        kwargs["pretimed_green_s"] = {int(k): float(v) for k, v in greens.items()}
    return SignalTiming(**kwargs)


TraceEntry = tuple[float, int, Interval]


def record_transition(
    trace: list[TraceEntry], before: SignalState, after: SignalState
) -> None:
    """Append an entry when the interval (or active phase) changes."""
    if before.interval is not after.interval or before.active_phase_id != after.active_phase_id:
        trace.append((after.clock_s, after.active_phase_id, after.interval))


def format_trace_line(entry: TraceEntry) -> str:
    time_s, phase_id, interval = entry
    return f"{time_s:.1f},{phase_id},{interval.value}"


def verify_trace_invariants(trace: Sequence[TraceEntry], timing: SignalTiming) -> list[str]:
    """Check intergreen and min-green over a transition trace.

    Returns a list of violation descriptions; empty means the trace is
    safe. The trace must start with the initial Green entry.
    """
    violations = []
    for (t0, _, kind0), (t1, phase1, kind1) in zip(trace, trace[1:]):
        if kind0 is Interval.GREEN:
            if kind1 is not Interval.YELLOW:
                violations.append(f"green at {t0} followed by {kind1.value}, not Yellow")
            if t1 - t0 < timing.min_green_s - 1e-6:
                violations.append(f"green at {t0} lasted {t1 - t0:.3f}s < min green")
        elif kind0 is Interval.YELLOW:
            if kind1 is not Interval.ALL_RED:
                violations.append(f"yellow at {t0} followed by {kind1.value}, not AllRed")
            elif t1 - t0 < timing.yellow_s - 1e-6:
                violations.append(f"yellow at {t0} lasted {t1 - t0:.3f}s < yellow_s")
        elif kind0 is Interval.ALL_RED:
            if kind1 is not Interval.GREEN:
                violations.append(f"all-red at {t0} followed by {kind1.value}, not Green")
            elif t1 - t0 < timing.all_red_s - 1e-6:
                violations.append(f"all-red at {t0} lasted {t1 - t0:.3f}s < all_red_s")
    return violations
