"""Phase-decision state machine tests: schedules, actuation rules, traces."""

import random
from dataclasses import replace

import pytest

from dsrc_atl.control import (
    Detection,
    DetectionTracker,
    Interval,
    PhaseCommand,
    SignalTiming,
    atl_step,
    initial_state,
    pretimed_step,
    record_transition,
    timing_from_dict,
    verify_trace_invariants,
    vtl_step,
)

TIMING = SignalTiming()
PHASES = {1: 1, 2: 2}  # approach id -> phase id
DT = 0.1


def run_controller(step, timing, seconds, dt=DT):
    state, first = initial_state(timing)
    commands = [first]
    trace = [(0.0, state.active_phase_id, state.interval)]
    for k in range(1, round(seconds / dt) + 1):
        before = state
        state, cmd = step(state, k * dt)
        record_transition(trace, before, state)
        if cmd:
            commands.append(cmd)
    return commands, trace


def test_timing_validation():
    with pytest.raises(ValueError):
        SignalTiming(min_green_s=15.0)  # exceeds the 10 s minor split
    with pytest.raises(ValueError):
        SignalTiming(yellow_s=0.0)
    with pytest.raises(ValueError):
        SignalTiming(pretimed_green_s={1: 40.0})
    with pytest.raises(ValueError):
        timing_from_dict({"bogus": 3})
    t = timing_from_dict({"pretimed_green_s": {"1": 30, "2": 12}})
    assert t.pretimed_green_s == {1: 30.0, 2: 12.0}


def test_pretimed_cycle_length():
    greens = TIMING.pretimed_green_s
    cycle = sum(greens.values()) + len(greens) * (TIMING.yellow_s + TIMING.all_red_s)
    assert cycle == pytest.approx(58.0)


def test_pretimed_two_cycles_command_times():
    commands, _ = run_controller(
        lambda s, now: pretimed_step(s, TIMING, DT), TIMING, 104.0
    )
    assert [(c.phase_id, c.issue_time_ms) for c in commands[:4]] == [
        (1, 0),
        (2, 44_000),
        (1, 58_000),
        (2, 102_000),
    ]


def test_pretimed_threshold_crossing_with_one_second_step():
    state, _ = initial_state(TIMING)
    state = replace(state, interval_elapsed_s=39.5)
    new, cmd = pretimed_step(state, TIMING, 1.0)
    assert new.interval is Interval.YELLOW
    assert new.pending_phase_id == 2
    assert cmd is None


def test_atl_empty_detections_equals_pretimed():
    atl_cmds, atl_trace = run_controller(
        lambda s, now: atl_step(s, TIMING, [], DT, PHASES), TIMING, 300.0
    )
    pre_cmds, pre_trace = run_controller(
        lambda s, now: pretimed_step(s, TIMING, DT), TIMING, 300.0
    )
    assert atl_cmds == pre_cmds
    assert atl_trace == pre_trace


def test_atl_holds_before_min_green():
    state, _ = initial_state(TIMING)
    state = replace(state, interval_elapsed_s=3.0)
    det = [Detection(2, 20.0, 5.0, 9, 0)]
    new, cmd = atl_step(state, TIMING, det, DT, PHASES)
    assert new.interval is Interval.GREEN
    assert new.active_phase_id == 1
    assert cmd is None


def test_atl_switches_after_min_green():
    state, _ = initial_state(TIMING)
    state = replace(state, interval_elapsed_s=10.0, clock_s=10.0)
    det = [Detection(2, 20.0, 5.0, 9, 0)]
    new, cmd = atl_step(state, TIMING, det, DT, PHASES)
    assert new.interval is Interval.YELLOW
    assert new.pending_phase_id == 2
    # Green command arrives yellow_s + all_red_s = 4 s later.
    command = None
    for k in range(1, 60):
        new, command = atl_step(new, TIMING, det, DT, PHASES)
        if command:
            break
    assert command == PhaseCommand(2, round((10.0 + DT + 4.0) * 1000))


def test_atl_green_demand_dominates():
    # Detections on both approaches: the green approach's demand routes to
    # pre-timed behavior, holding until the split point.
    state, _ = initial_state(TIMING)
    det = [Detection(1, 10.0, 5.0, 1, 0), Detection(2, 5.0, 0.0, 2, 0)]
    switched_at = None
    for k in range(1, 500):
        before = state
        state, _ = atl_step(state, TIMING, det, DT, PHASES)
        if state.interval is Interval.YELLOW and before.interval is Interval.GREEN:
            switched_at = k * DT
            break
    assert switched_at == pytest.approx(40.0, abs=DT)


def test_atl_pending_phase_nearest_then_lowest_id():
    timing = SignalTiming(pretimed_green_s={1: 40.0, 2: 10.0, 3: 10.0})
    phases = {1: 1, 2: 2, 3: 3}
    state, _ = initial_state(timing)
    state = replace(state, interval_elapsed_s=20.0)
    det = [Detection(3, 12.0, 5.0, 5, 0), Detection(2, 12.0, 5.0, 6, 0)]
    new, _ = atl_step(state, timing, det, DT, phases)
    assert new.pending_phase_id == 2  # tie on distance, lower approach id
    det = [Detection(3, 8.0, 5.0, 5, 0), Detection(2, 12.0, 5.0, 6, 0)]
    new, _ = atl_step(state, timing, det, DT, phases)
    assert new.pending_phase_id == 3  # nearest wins


def test_atl_rejects_unknown_approach():
    state, _ = initial_state(TIMING)
    with pytest.raises(ValueError):
        atl_step(state, TIMING, [Detection(9, 10.0, 5.0, 1, 0)], DT, PHASES)


def test_vtl_matches_atl_on_identical_inputs():
    det_stream = []
    rng = random.Random(4)
    for k in range(600):
        dets = []
        if rng.random() < 0.3:
            dets.append(Detection(rng.choice([1, 2]), rng.uniform(0, 50), 5.0, 1, 0))
        det_stream.append(dets)
    sa, _ = initial_state(TIMING)
    sv, _ = initial_state(TIMING)
    for dets in det_stream:
        sa, ca = atl_step(sa, TIMING, dets, DT, PHASES)
        sv, cv = vtl_step(sv, TIMING, dets, DT, PHASES)
        assert (sa, ca) == (sv, cv)


def test_single_vehicle_service_bound():
    # Worst case: red-approach detection appearing the instant green began
    # on the empty opposing approach.
    state, _ = initial_state(TIMING)
    det = [Detection(2, 10.0, 0.0, 3, 0)]
    elapsed = 0.0
    command = None
    while command is None:
        elapsed += DT
        state, command = atl_step(state, TIMING, det, DT, PHASES)
        assert elapsed < 20.0
    assert command.phase_id == 2
    assert elapsed <= TIMING.min_green_s + TIMING.yellow_s + TIMING.all_red_s + DT


def test_step_determinism():
    state, _ = initial_state(TIMING)
    det = [Detection(2, 30.0, 3.0, 2, 100)]
    out1 = atl_step(state, TIMING, det, DT, PHASES)
    out2 = atl_step(state, TIMING, det, DT, PHASES)
    assert out1 == out2


def test_step_rejects_nonpositive_dt():
    state, _ = initial_state(TIMING)
    with pytest.raises(ValueError):
        pretimed_step(state, TIMING, 0.0)


def test_tracker_retains_freshest_and_evicts():
    tracker = DetectionTracker(staleness_s=0.2)
    d1 = Detection(1, 40.0, 10.0, 5, 1000)
    d2 = Detection(1, 35.0, 10.0, 5, 1100)
    tracker.update([d1], 1.0)
    tracker.update([d2], 1.1)
    assert tracker.active(1.1) == [d2]
    assert tracker.active(1.3) == [d2]  # exactly at the window edge
    assert tracker.active(1.35) == []


def test_tracker_sorted_by_temp_id():
    tracker = DetectionTracker()
    tracker.update([Detection(1, 10.0, 5.0, 9, 0), Detection(2, 20.0, 5.0, 3, 0)], 0.0)
    assert [d.temp_id for d in tracker.active(0.0)] == [3, 9]


def test_trace_invariants_on_pretimed():
    _, trace = run_controller(lambda s, now: pretimed_step(s, TIMING, DT), TIMING, 600.0)
    assert verify_trace_invariants(trace, TIMING) == []


def test_trace_invariants_flag_bad_traces():
    bad = [
        (0.0, 1, Interval.GREEN),
        (2.0, 1, Interval.YELLOW),  # green shorter than min green
        (5.0, 1, Interval.ALL_RED),
        (6.0, 2, Interval.GREEN),
    ]
    assert any("min green" in v for v in verify_trace_invariants(bad, TIMING))
    skipped = [(0.0, 1, Interval.GREEN), (40.0, 1, Interval.ALL_RED)]
    assert verify_trace_invariants(skipped, TIMING)


def test_random_detection_streams_keep_invariants():
    rng = random.Random(123)
    for scenario in range(50):
        timing = TIMING
        state, _ = initial_state(timing)
        trace = [(0.0, state.active_phase_id, state.interval)]
        for k in range(1, 400):
            dets = []
            for _ in range(rng.randrange(3)):
                dets.append(
                    Detection(rng.choice([1, 2]), rng.uniform(0, 50.0), rng.uniform(0, 14), rng.randrange(50), k * 100)
                )
            before = state
            state, _ = atl_step(state, timing, dets, DT, PHASES)
            record_transition(trace, before, state)
        assert verify_trace_invariants(trace, timing) == []
