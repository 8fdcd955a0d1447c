"""Single-intersection microscopic simulator with the controller in the loop.

Each 0.1 s tick: vehicles move under bounded-acceleration car following,
equipped vehicles broadcast through the reception model, received
messages are classified into detections, the selected controller steps,
and vehicles that cross the stop line on green are retired. Everything
is deterministic for a given seed; random streams are derived per
purpose ("<seed>/arrivals/<approach>", "<seed>/channel") so arrival
patterns are identical across penetration levels and controllers.
"""

import math
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Sequence

import scipy.stats

from .bsm import VehicleSnapshot, bsm_from_snapshot, encode_bsm
from .channel import ChannelModel, reception_probability
from .control import (
    DETECTION_STALENESS_S,
    Detection,
    DetectionTracker,
    Interval,
    SignalTiming,
    TraceEntry,
    atl_step,
    initial_state,
    pretimed_step,
    record_transition,
    vtl_step,
)
from .geodesy import (
    IntersectionGeometry,
    _haversine_m,
    classify_bsm,
    great_circle_distance,
    ray_locator,
)

CONTROLLERS = ("atl", "pretimed", "vtl")

# A constrained vehicle may land exactly on its stop target (the safe-speed
# bound is tight as the gap closes), so crossing requires clearing the line
# by more than accumulated float error.
_CROSS_EPS_M = 1e-6


class Arrival(NamedTuple):
    time_s: float
    equipped: bool


@dataclass(slots=True)
class SimVehicle:
    id: int
    approach_id: int
    position_m: float  # distance upstream of the stop line
    speed_ms: float
    equipped: bool
    arrival_time_s: float
    crossed_time_s: Optional[float] = None
    accumulated_wait_s: float = 0.0
    next_tx_ms: int = 0  # next broadcast epoch, integer ms


@dataclass(frozen=True)
class DemandConfig:
    total_flow_vph: float = 1500.0
    split_ratio: tuple[float, ...] = (4.0, 1.0)
    penetration: float = 0.0
    seed: int = 0
    duration_s: float = 3600.0
    warmup_s: float = 300.0

    def __post_init__(self) -> None:
        if self.total_flow_vph <= 0:
            raise ValueError("total_flow_vph must be positive")
        if len(self.split_ratio) < 2 or any(part <= 0 for part in self.split_ratio):
            raise ValueError(f"split_ratio {self.split_ratio} must have positive parts")
        if not 0.0 <= self.penetration <= 1.0:
            raise ValueError(f"penetration {self.penetration} outside [0, 1]")
        if self.duration_s <= 0 or self.warmup_s < 0 or self.warmup_s >= self.duration_s:
            raise ValueError("need 0 <= warmup_s < duration_s")


@dataclass(frozen=True)
class DynamicsConfig:
    v_free_ms: float = 13.9
    accel_ms2: float = 2.0
    decel_ms2: float = 4.5
    headway_spacing_m: float = 7.5
    dt_s: float = 0.1
    stop_speed_threshold_ms: float = 0.1

    def __post_init__(self) -> None:
        for name in (
            "v_free_ms",
            "accel_ms2",
            "decel_ms2",
            "headway_spacing_m",
            "dt_s",
            "stop_speed_threshold_ms",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.dt_s > 0.5:
            raise ValueError("dt_s must be at most 0.5")


@dataclass(frozen=True)
class VehicleRecord:
    vehicle_id: int
    approach_id: int
    equipped: bool
    arrival_time_s: float
    crossed_time_s: Optional[float]
    wait_s: float


@dataclass(frozen=True)
class RunMetrics:
    mean_wait_all_s: float
    mean_wait_equipped_s: float
    mean_wait_unequipped_s: float
    vehicles_completed: int
    vehicles_generated: int
    vehicles_remaining: int
    per_vehicle: tuple[VehicleRecord, ...]
    command_trace: tuple[TraceEntry, ...]


def parse_split_ratio(text: str) -> tuple[float, ...]:
    """Parse a ratio like "4:1" into its parts, validating positivity."""
    try:
        parts = tuple(float(p) for p in text.split(":"))
    except ValueError:
        raise ValueError(f"split_ratio {text!r} is not a colon-separated number list") from None
    if len(parts) < 2 or any(p <= 0 for p in parts):
        raise ValueError(f"split_ratio {text!r} must have at least two positive parts")
    return parts


def demand_from_dict(data: dict) -> DemandConfig:
    known = {"total_flow_vph", "split_ratio", "penetration", "seed", "duration_s", "warmup_s"}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown demand fields: {sorted(unknown)}")
    kwargs = dict(data)
    ratio = kwargs.get("split_ratio")
    if isinstance(ratio, str):
        kwargs["split_ratio"] = parse_split_ratio(ratio)
    elif ratio is not None:
        kwargs["split_ratio"] = tuple(float(p) for p in ratio)
    return DemandConfig(**kwargs)


def dynamics_from_dict(data: dict) -> DynamicsConfig:
    known = {
        "v_free_ms",
        "accel_ms2",
        "decel_ms2",
        "headway_spacing_m",
        "dt_s",
        "stop_speed_threshold_ms",
    }
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown dynamics fields: {sorted(unknown)}")
    return DynamicsConfig(**{k: float(v) for k, v in data.items()})


def generate_arrivals(
    demand: DemandConfig, approach_ids: Sequence[int]
) -> dict[int, list[Arrival]]:
    """Poisson arrivals per approach, flow split by the configured ratio.

    The equipped draw is taken for every vehicle regardless of the
    penetration value, so arrival patterns coincide across penetration
    levels under the same seed.
    """
    if len(approach_ids) != len(demand.split_ratio):
        raise ValueError(
            f"split_ratio has {len(demand.split_ratio)} parts for {len(approach_ids)} approaches"
        )
    total = sum(demand.split_ratio)
    arrivals: dict[int, list[Arrival]] = {}
    for approach_id, part in zip(sorted(approach_ids), demand.split_ratio):
        rate_per_s = demand.total_flow_vph * (part / total) / 3600.0
        rng = random.Random(f"{demand.seed}/arrivals/{approach_id}")
        times: list[Arrival] = []
        t = 0.0
        while True:
            t += rng.expovariate(rate_per_s)
            equipped = rng.random() < demand.penetration
            if t > demand.duration_s:
                break
            times.append(Arrival(t, equipped))
        arrivals[approach_id] = times
    return arrivals


def vehicle_step(
    v: SimVehicle,
    leader: Optional[SimVehicle],
    signal_is_green: bool,
    dyn: DynamicsConfig,
) -> SimVehicle:
    """Advance one vehicle one tick; mutates and returns ``v``.

    Speed is capped by the free speed, the acceleration bound, and a
    safe speed guaranteeing a stop (at the braking bound) behind the
    nearer of the stop line and the leader's tail.
    """
    stop_target = None
    if not signal_is_green:
        stop_target = 0.0
    if leader is not None:
        behind_leader = leader.position_m + dyn.headway_spacing_m
        if stop_target is None or behind_leader > stop_target:
            stop_target = behind_leader
    new_speed = min(v.speed_ms + dyn.accel_ms2 * dyn.dt_s, dyn.v_free_ms)
    if stop_target is not None:
        gap = v.position_m - stop_target
        if gap < 0.0:
            gap = 0.0
        b_dt = dyn.decel_ms2 * dyn.dt_s
        v_safe = math.sqrt(b_dt * b_dt + 2.0 * dyn.decel_ms2 * gap) - b_dt
        if v_safe < new_speed:
            new_speed = v_safe
    if new_speed < 0.0:
        new_speed = 0.0
    v.position_m -= new_speed * dyn.dt_s
    v.speed_ms = new_speed
    if new_speed < dyn.stop_speed_threshold_ms:
        v.accumulated_wait_s += dyn.dt_s
    return v


class InvariantViolation(RuntimeError):
    """A physics or signal-safety invariant failed during a checked run."""


def _braking_distance(speed_ms: float, decel_ms2: float) -> float:
    return speed_ms * speed_ms / (2.0 * decel_ms2)


def run_simulation(
    geometry: IntersectionGeometry,
    demand: DemandConfig,
    dynamics: DynamicsConfig,
    timing: SignalTiming,
    channel: Optional[ChannelModel],
    controller: str,
    *,
    arrivals: Optional[dict[int, list[Arrival]]] = None,
    detection_staleness_s: float = DETECTION_STALENESS_S,
    check_invariants: bool = False,
    bsm_trace: Optional[list[tuple[int, bytes]]] = None,
) -> RunMetrics:
    """Closed-loop run; returns aggregate and per-vehicle waiting metrics.

    ``bsm_trace``, when given, collects every received frame as
    ``(offset_ms, frame)`` suitable for datagram replay against the live
    roadside service; offsets are scheduled half a tick early so replayed
    frames land in the tick that consumed them here.
    """
    if controller not in CONTROLLERS:
        raise ValueError(f"controller must be one of {CONTROLLERS}, got {controller!r}")
    if controller == "atl" and channel is None:
        raise ValueError("controller 'atl' requires a channel model")
    if sorted(timing.pretimed_green_s) != geometry.phase_ids:
        raise ValueError(
            f"timing phases {sorted(timing.pretimed_green_s)} do not match "
            f"geometry phases {geometry.phase_ids}"
        )

    approach_ids = sorted(a.id for a in geometry.approaches)
    if arrivals is None:
        arrivals = generate_arrivals(demand, approach_ids)
    else:
        missing = set(approach_ids) - set(arrivals)
        if missing:
            raise ValueError(f"arrivals missing approaches {sorted(missing)}")

    # Merge arrivals into one id sequence ordered by time, then approach.
    merged = sorted(
        (arr.time_s, aid, arr.equipped)
        for aid in approach_ids
        for arr in arrivals[aid]
    )
    dt = dynamics.dt_s
    dt_ms = round(dt * 1000)
    tx_ms = round(channel.tx_period_s * 1000) if channel is not None else dt_ms
    pending: dict[int, list[SimVehicle]] = {aid: [] for aid in approach_ids}
    for vid, (time_s, aid, equipped) in enumerate(merged):
        vehicle = SimVehicle(
            id=vid,
            approach_id=aid,
            position_m=0.0,  # placed at spawn time
            speed_ms=0.0,
            equipped=equipped,
            arrival_time_s=time_s,
        )
        offset_ms = (vid * 17) % tx_ms
        arrival_ms = math.ceil(time_s * 1000)
        cycles = max(0, -(-(arrival_ms - offset_ms) // tx_ms))  # ceil division
        vehicle.next_tx_ms = offset_ms + cycles * tx_ms
        pending[aid].append(vehicle)
    for aid in approach_ids:
        pending[aid].reverse()  # pop() yields earliest first

    approaches = {a.id: a for a in geometry.approaches}
    approach_phases = geometry.approach_phases
    channel_rng = random.Random(f"{demand.seed}/channel")
    tracker = DetectionTracker(detection_staleness_s)
    # Per-approach GPS locator along the upstream ray, plus the skip bound:
    # a vehicle farther upstream than area radius + stop-to-center distance
    # cannot be inside the area of interest (triangle inequality).
    locators = {}
    skip_beyond = {}
    for a in geometry.approaches:
        locators[a.id] = ray_locator(a.stop_line, (a.inbound_heading + 180.0) % 360.0)
        skip_beyond[a.id] = geometry.area_of_interest_radius_m + great_circle_distance(
            a.stop_line, geometry.center
        )

    state, first_command = initial_state(timing)
    commands = [first_command]
    trace: list[TraceEntry] = [(0.0, state.active_phase_id, state.interval)]
    lanes: dict[int, list[SimVehicle]] = {aid: [] for aid in approach_ids}
    records: list[VehicleRecord] = []

    n_ticks = round(demand.duration_s / dt)

    for k in range(1, n_ticks + 1):
        now = k * dt
        tick_ms = k * dt_ms

        # Spawn arrivals due this tick.
        for aid in approach_ids:
            queue = pending[aid]
            lane = lanes[aid]
            while queue and queue[-1].arrival_time_s <= now:
                vehicle = queue.pop()
                spawn_pos = approaches[aid].approach_length_m
                if lane:
                    tail = lane[-1]
                    spawn_pos = max(spawn_pos, tail.position_m + dynamics.headway_spacing_m)
                    gap = spawn_pos - (tail.position_m + dynamics.headway_spacing_m)
                    vehicle.speed_ms = min(
                        dynamics.v_free_ms, math.sqrt(2.0 * dynamics.decel_ms2 * gap)
                    )
                else:
                    vehicle.speed_ms = dynamics.v_free_ms
                vehicle.position_m = spawn_pos
                lane.append(vehicle)

        # Move vehicles under the current signal indication.
        active_phase = state.active_phase_id
        interval = state.interval
        for aid in approach_ids:
            lane = lanes[aid]
            if not lane:
                continue
            phase_matches = approach_phases[aid] == active_phase
            green_now = phase_matches and interval is Interval.GREEN
            yellow_now = phase_matches and interval is Interval.YELLOW
            leader: Optional[SimVehicle] = None
            for vehicle in lane:
                if green_now:
                    proceed = True
                elif yellow_now:
                    proceed = (
                        _braking_distance(vehicle.speed_ms, dynamics.decel_ms2)
                        > vehicle.position_m
                    )
                else:
                    proceed = False
                vehicle_step(vehicle, leader, proceed, dynamics)
                if vehicle.position_m < -_CROSS_EPS_M and vehicle.crossed_time_s is None:
                    vehicle.crossed_time_s = now
                    if check_invariants and not proceed:
                        raise InvariantViolation(
                            f"vehicle {vehicle.id} crossed on red at t={now:.1f}"
                        )
                leader = vehicle
            if check_invariants:
                for ahead, behind in zip(lane, lane[1:]):
                    gap = behind.position_m - ahead.position_m
                    if gap <= 0.0:
                        raise InvariantViolation(
                            f"vehicle order broken on approach {aid} at t={now:.1f}"
                        )
                    stopped = (
                        ahead.speed_ms < dynamics.stop_speed_threshold_ms
                        and behind.speed_ms < dynamics.stop_speed_threshold_ms
                    )
                    if stopped and gap < dynamics.headway_spacing_m - 1e-6:
                        raise InvariantViolation(
                            f"stopped spacing {gap:.3f} m on approach {aid} at t={now:.1f}"
                        )

        # Broadcast, channel, classification.
        detections: list[Detection] = []
        if controller == "atl":
            center_lat = geometry.center.latitude
            center_lon = geometry.center.longitude
            area = geometry.area_of_interest_radius_m
            for aid in approach_ids:
                approach = approaches[aid]
                heading = approach.inbound_heading
                locate = locators[aid]
                out_of_reach = skip_beyond[aid]
                for vehicle in lanes[aid]:
                    if not vehicle.equipped or vehicle.crossed_time_s is not None:
                        continue
                    while vehicle.next_tx_ms <= tick_ms:
                        vehicle.next_tx_ms += tx_ms
                        if vehicle.position_m > out_of_reach:
                            continue  # provably outside the area of interest
                        lat, lon = locate(max(0.0, vehicle.position_m))
                        range_m = _haversine_m(lat, lon, center_lat, center_lon)
                        if range_m > area:
                            continue  # classification would drop it regardless
                        p_rx = reception_probability(channel, range_m)
                        if p_rx < 1.0 and channel_rng.random() >= p_rx:
                            continue
                        snapshot = VehicleSnapshot(
                            latitude_deg=lat,
                            longitude_deg=lon,
                            speed_ms=vehicle.speed_ms,
                            heading_deg=heading,
                            vehicle_id=vehicle.id,
                            clock_ms=tick_ms,
                        )
                        message = bsm_from_snapshot(snapshot)
                        if bsm_trace is not None:
                            bsm_trace.append((max(0, tick_ms - dt_ms // 2), encode_bsm(message)))
                        detection = classify_bsm(message, geometry)
                        if detection is not None:
                            detections.append(detection)

        # Controller step.
        previous = state
        if controller == "pretimed":
            state, command = pretimed_step(state, timing, dt)
        elif controller == "atl":
            tracker.update(detections, now)
            visible = [
                d
                for d in tracker.active(now)
                if d.distance_to_stop_m <= geometry.detection_radius_m
            ]
            state, command = atl_step(state, timing, visible, dt, approach_phases)
        else:
            everyone = [
                Detection(aid, max(0.0, vehicle.position_m), vehicle.speed_ms, vehicle.id, tick_ms)
                for aid in approach_ids
                for vehicle in lanes[aid]
                if vehicle.crossed_time_s is None
                and vehicle.position_m <= geometry.detection_radius_m
            ]
            state, command = vtl_step(state, timing, everyone, dt, approach_phases)
        record_transition(trace, previous, state)
        if command is not None:
            commands.append(command)

        # Retire vehicles that crossed this tick.
        for aid in approach_ids:
            lane = lanes[aid]
            while lane and lane[0].crossed_time_s is not None:
                vehicle = lane.pop(0)
                records.append(
                    VehicleRecord(
                        vehicle_id=vehicle.id,
                        approach_id=vehicle.approach_id,
                        equipped=vehicle.equipped,
                        arrival_time_s=vehicle.arrival_time_s,
                        crossed_time_s=vehicle.crossed_time_s,
                        wait_s=vehicle.accumulated_wait_s,
                    )
                )

    generated = len(merged)
    remaining = generated - len(records)
    if check_invariants and remaining != sum(len(lane) for lane in lanes.values()) + sum(
        len(q) for q in pending.values()
    ):
        raise InvariantViolation("vehicle conservation failed")

    qualifying = [r for r in records if r.arrival_time_s > demand.warmup_s]
    equipped = [r.wait_s for r in qualifying if r.equipped]
    unequipped = [r.wait_s for r in qualifying if not r.equipped]
    all_waits = [r.wait_s for r in qualifying]

    def mean(values: list[float]) -> float:
        return sum(values) / len(values) if values else 0.0

    return RunMetrics(
        mean_wait_all_s=mean(all_waits),
        mean_wait_equipped_s=mean(equipped),
        mean_wait_unequipped_s=mean(unequipped),
        vehicles_completed=len(records),
        vehicles_generated=generated,
        vehicles_remaining=remaining,
        per_vehicle=tuple(records),
        command_trace=tuple(trace),
    )


@dataclass(frozen=True)
class RunRow:
    controller: str
    penetration: float
    seed: int
    mean_wait_all_s: float
    mean_wait_equipped_s: float
    mean_wait_unequipped_s: float
    vehicles_completed: int
    vehicles_generated: int
    qualifying_equipped: int
    qualifying_unequipped: int


@dataclass(frozen=True)
class AggregateRow:
    penetration: float
    controller: str
    n_runs: int
    mean_wait_all_s: float
    ci95_halfwidth_s: float
    mean_wait_equipped_s: float
    mean_wait_unequipped_s: float
    mean_vehicles_completed: float


@dataclass(frozen=True)
class SweepResult:
    runs: tuple[RunRow, ...]
    aggregates: tuple[AggregateRow, ...]


def _sweep_worker(job) -> RunRow:
    controller, penetration, seed, geometry, demand, dynamics, timing, channel = job
    run_demand = replace(demand, penetration=penetration, seed=seed)
    metrics = run_simulation(geometry, run_demand, dynamics, timing, channel, controller)
    qualifying = [r for r in metrics.per_vehicle if r.arrival_time_s > run_demand.warmup_s]
    return RunRow(
        controller=controller,
        penetration=penetration,
        seed=seed,
        mean_wait_all_s=metrics.mean_wait_all_s,
        mean_wait_equipped_s=metrics.mean_wait_equipped_s,
        mean_wait_unequipped_s=metrics.mean_wait_unequipped_s,
        vehicles_completed=metrics.vehicles_completed,
        vehicles_generated=metrics.vehicles_generated,
        qualifying_equipped=sum(1 for r in qualifying if r.equipped),
        qualifying_unequipped=sum(1 for r in qualifying if not r.equipped),
    )


def _ci95_halfwidth(values: Sequence[float]) -> float:
    if len(values) < 2:
        return 0.0
    sem = scipy.stats.sem(values)
    if sem == 0.0:
        return 0.0
    return float(scipy.stats.t.ppf(0.975, len(values) - 1) * sem)


def sweep_penetration(
    geometry: IntersectionGeometry,
    demand: DemandConfig,
    dynamics: DynamicsConfig,
    timing: SignalTiming,
    channel: ChannelModel,
    penetrations: Sequence[float],
    replications: int,
    *,
    seeds: Optional[Sequence[int]] = None,
    workers: Optional[int] = None,
) -> SweepResult:
    """Run the actuated controller across penetration levels plus baselines.

    The pre-timed and perfect-information baselines run once per seed and
    are repeated into every penetration cell of the aggregate table.
    """
    if replications < 1:
        raise ValueError("replications must be at least 1")
    for pen in penetrations:
        if not 0.0 <= pen <= 1.0:
            raise ValueError(f"penetration {pen} outside [0, 1]")
    if seeds is None:
        seeds = [demand.seed + i for i in range(replications)]
    elif len(seeds) != replications:
        raise ValueError("seeds length must equal replications")

    jobs = []
    for seed in seeds:
        jobs.append(("pretimed", 0.0, seed, geometry, demand, dynamics, timing, channel))
        jobs.append(("vtl", 0.0, seed, geometry, demand, dynamics, timing, channel))
        for pen in penetrations:
            jobs.append(("atl", pen, seed, geometry, demand, dynamics, timing, channel))

    if workers is not None and workers <= 1:
        rows = [_sweep_worker(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_worker, jobs, chunksize=1))
    rows.sort(key=lambda r: (r.controller, r.penetration, r.seed))

    aggregates = []
    by_cell: dict[tuple[str, float], list[RunRow]] = {}
    for row in rows:
        by_cell.setdefault((row.controller, row.penetration), []).append(row)
    for pen in sorted(set(penetrations)):
        for controller in ("atl", "pretimed", "vtl"):
            cell = by_cell.get((controller, pen if controller == "atl" else 0.0), [])
            if not cell:
                continue
            waits = [r.mean_wait_all_s for r in cell]
            aggregates.append(
                AggregateRow(
                    penetration=pen,
                    controller=controller,
                    n_runs=len(cell),
                    mean_wait_all_s=sum(waits) / len(waits),
                    ci95_halfwidth_s=_ci95_halfwidth(waits),
                    mean_wait_equipped_s=_mean_or_zero(
                        [r.mean_wait_equipped_s for r in cell if r.qualifying_equipped > 0]
                    ),
                    mean_wait_unequipped_s=_mean_or_zero(
                        [r.mean_wait_unequipped_s for r in cell if r.qualifying_unequipped > 0]
                    ),
                    mean_vehicles_completed=sum(r.vehicles_completed for r in cell) / len(cell),
                )
            )
    return SweepResult(runs=tuple(rows), aggregates=tuple(aggregates))


def _mean_or_zero(values: Sequence[float]) -> float:
    return sum(values) / len(values) if values else 0.0


def aggregate_wait(result: SweepResult, controller: str, penetration: float) -> float:
    for row in result.aggregates:
        if row.controller == controller and math.isclose(row.penetration, penetration):
            return row.mean_wait_all_s
    raise KeyError(f"no aggregate for {controller} at penetration {penetration}")


def improvement_fraction(
    result: SweepResult, partial: float = 0.2, full: float = 1.0
) -> float:
    """Share of the pre-timed-to-full-penetration gain realized at ``partial``."""
    w_tl = aggregate_wait(result, "pretimed", min(p.penetration for p in result.aggregates))
    w_partial = aggregate_wait(result, "atl", partial)
    w_full = aggregate_wait(result, "atl", full)
    total_gain = w_tl - w_full
    if total_gain <= 0.0:
        raise ValueError(f"no improvement to apportion (TL {w_tl}, full {w_full})")
    return (w_tl - w_partial) / total_gain
