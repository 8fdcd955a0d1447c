"""Roadside service: live message intake to phase commands.

One UDP datagram carries one message frame. A 10 Hz tick drains the
socket (bounded per tick), decodes and classifies frames, tracks the
freshest detection per vehicle, steps the actuated controller, and
writes any phase activation to the traffic-control-box sink as a text
line ``PHASE <phase_id> <issue_time_ms>``. Malformed frames are counted
per error class and never fatal.

The pure per-tick pipeline is separated from the socket loop so replay
tests can drive it deterministically.
"""

import logging
import socket
import sys
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, TextIO

from .bsm import BsmError, decode_bsm
from .control import (
    DETECTION_STALENESS_S,
    DetectionTracker,
    PhaseCommand,
    SignalTiming,
    TraceEntry,
    atl_step,
    initial_state,
    record_transition,
)
from .geodesy import IntersectionGeometry, classify_bsm

log = logging.getLogger(__name__)

TICK_PERIOD_S = 0.1
MAX_FRAMES_PER_TICK = 1000
MAX_READS_PER_TICK = 10_000


@dataclass(frozen=True)
class RsuConfig:
    listen_host: str
    listen_port: int
    geometry: IntersectionGeometry
    timing: SignalTiming
    tcb_sink: str = "stdout"  # "stdout" or "host:port" TCP stream
    stats_interval_s: float = 10.0
    detection_staleness_s: float = DETECTION_STALENESS_S

    def __post_init__(self) -> None:
        if not 0 < self.listen_port < 65536:
            raise ValueError(f"listen_port {self.listen_port} invalid")
        if self.stats_interval_s <= 0:
            raise ValueError("stats_interval_s must be positive")


def parse_endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise ValueError(f"endpoint {text!r} is not host:port")
    try:
        port_num = int(port)
    except ValueError:
        raise ValueError(f"endpoint {text!r} has non-numeric port") from None
    if not 0 < port_num < 65536:
        raise ValueError(f"endpoint {text!r} port out of range")
    return host, port_num


@dataclass
class RsuCounters:
    received: int = 0
    malformed: int = 0
    filtered: int = 0
    detections: int = 0
    commands: int = 0
    dropped: int = 0
    malformed_by_class: dict[str, int] = field(default_factory=dict)

    def stats_line(self) -> str:
        return (
            f"STATS received={self.received} malformed={self.malformed} "
            f"filtered={self.filtered} detections={self.detections} "
            f"commands={self.commands}"
        )


class RsuPipeline:
    """Deterministic frames-in, commands-out core of the service."""

    def __init__(
        self,
        geometry: IntersectionGeometry,
        timing: SignalTiming,
        staleness_s: float = DETECTION_STALENESS_S,
    ):
        self.geometry = geometry
        self.timing = timing
        self.counters = RsuCounters()
        self.tracker = DetectionTracker(staleness_s)
        self.state, self.initial_command = initial_state(timing)
        self.commands: list[PhaseCommand] = [self.initial_command]
        self.trace: list[TraceEntry] = [(0.0, self.state.active_phase_id, self.state.interval)]
        self.counters.commands += 1

    def tick(self, frames: list[bytes], now_s: float) -> Optional[PhaseCommand]:
        """Process one controller tick worth of received datagrams."""
        approach_phases = self.geometry.approach_phases
        fresh = []
        for raw in frames:
            self.counters.received += 1
            try:
                message = decode_bsm(raw)
            except BsmError as err:
                self.counters.malformed += 1
                name = type(err).__name__
                self.counters.malformed_by_class[name] = (
                    self.counters.malformed_by_class.get(name, 0) + 1
                )
                continue
            detection = classify_bsm(message, self.geometry)
            if detection is None:
                self.counters.filtered += 1
                continue
            self.counters.detections += 1
            fresh.append(detection)
        self.tracker.update(fresh, now_s)
        visible = [
            d
            for d in self.tracker.active(now_s)
            if d.distance_to_stop_m <= self.geometry.detection_radius_m
        ]
        previous = self.state
        self.state, command = atl_step(
            self.state, self.timing, visible, TICK_PERIOD_S, approach_phases
        )
        record_transition(self.trace, previous, self.state)
        if command is not None:
            self.commands.append(command)
            self.counters.commands += 1
        return command


def emit_phase_command(cmd: PhaseCommand, sink: TextIO) -> bool:
    """Write one activation line; failures are reported, not raised."""
    try:
        sink.write(f"PHASE {cmd.phase_id} {cmd.issue_time_ms}\n")
        sink.flush()
        return True
    except (OSError, ValueError) as err:
        log.error("TCB sink write failed: %s", err)
        return False


class StreamSink:
    """TCP line sink that reconnects lazily after a write failure."""

    def __init__(self, host: str, port: int):
        self.host = host
        self.port = port
        self._file: Optional[TextIO] = None
        self._connect()

    def _connect(self) -> None:
        conn = socket.create_connection((self.host, self.port), timeout=5.0)
        self._file = conn.makefile("w", encoding="ascii", newline="\n")

    def write(self, text: str) -> int:
        if self._file is None:
            self._connect()
        try:
            return self._file.write(text)
        except (OSError, ValueError):
            self._file = None
            raise

    def flush(self) -> None:
        if self._file is None:
            return
        try:
            self._file.flush()
        except (OSError, ValueError):
            self._file = None
            raise


def open_sink(spec: str) -> TextIO:
    if spec == "stdout":
        return sys.stdout
    host, port = parse_endpoint(spec)
    return StreamSink(host, port)


@dataclass
class RsuRunResult:
    counters: RsuCounters
    commands: list[PhaseCommand]
    trace: list[TraceEntry]
    ticks: int


def run_rsu(
    config: RsuConfig,
    *,
    max_ticks: Optional[int] = None,
    ready: Optional[Callable[[float], None]] = None,
    sink: Optional[TextIO] = None,
) -> RsuRunResult:
    """Run the service loop; returns only when max_ticks elapse (tests)
    or on interrupt.

    ``ready`` is called with the monotonic time of tick zero once the
    socket is bound, which replay harnesses use to schedule datagrams
    against tick boundaries.
    """
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    try:
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 1 << 21)
        sock.bind((config.listen_host, config.listen_port))
        sock.setblocking(False)
        if sink is None:
            sink = open_sink(config.tcb_sink)
        pipeline = RsuPipeline(config.geometry, config.timing, config.detection_staleness_s)
        emit_phase_command(pipeline.initial_command, sink)
        log.info(
            "listening on %s:%d, %d approaches, initial phase %d",
            config.listen_host,
            config.listen_port,
            len(config.geometry.approaches),
            pipeline.initial_command.phase_id,
        )

        t0 = time.monotonic()
        if ready is not None:
            ready(t0)
        next_stats = config.stats_interval_s
        tick = 0
        try:
            while max_ticks is None or tick < max_ticks:
                tick += 1
                deadline = t0 + tick * TICK_PERIOD_S
                while True:
                    delay = deadline - time.monotonic()
                    if delay <= 0:
                        break
                    time.sleep(min(delay, 0.02))
                frames = []
                reads = 0
                while reads < MAX_READS_PER_TICK:
                    try:
                        data, _ = sock.recvfrom(65535)
                    except BlockingIOError:
                        break
                    reads += 1
                    if len(frames) < MAX_FRAMES_PER_TICK:
                        frames.append(data)
                    else:
                        pipeline.counters.dropped += 1
                command = pipeline.tick(frames, tick * TICK_PERIOD_S)
                if command is not None:
                    emit_phase_command(command, sink)
                if tick * TICK_PERIOD_S >= next_stats:
                    log.info("%s", pipeline.counters.stats_line())
                    next_stats += config.stats_interval_s
        except KeyboardInterrupt:
            log.info("interrupted, shutting down")
        log.info("%s", pipeline.counters.stats_line())
        return RsuRunResult(
            counters=pipeline.counters,
            commands=pipeline.commands,
            trace=pipeline.trace,
            ticks=tick,
        )
    finally:
        sock.close()


def write_bsm_trace(path: str, entries: list[tuple[int, bytes]]) -> None:
    """Write a datagram trace as ``<offset_ms> <hex>`` lines."""
    with open(path, "w", encoding="ascii") as fh:
        for offset_ms, frame in entries:
            fh.write(f"{offset_ms} {frame.hex()}\n")


def read_bsm_trace(path: str) -> list[tuple[int, bytes]]:
    """Parse a datagram trace, reporting the first bad line by number."""
    entries = []
    with open(path, encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"trace line {lineno}: expected '<offset_ms> <hex>'")
            try:
                offset_ms = int(parts[0])
                frame = bytes.fromhex(parts[1])
            except ValueError:
                raise ValueError(f"trace line {lineno}: unparseable offset or hex frame") from None
            if offset_ms < 0:
                raise ValueError(f"trace line {lineno}: negative offset")
            entries.append((offset_ms, frame))
    return entries


def replay_trace(
    entries: list[tuple[int, bytes]],
    endpoint: tuple[str, int],
    t0: Optional[float] = None,
) -> int:
    """Send each frame as a datagram at its offset; returns frames sent.

    Offsets are absolute deadlines against ``t0`` (default: now), so
    scheduling error does not accumulate across a long trace.
    """
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    try:
        start = time.monotonic() if t0 is None else t0
        sent = 0
        for offset_ms, frame in entries:
            deadline = start + offset_ms / 1000.0
            while True:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break
                time.sleep(min(remaining, 0.02))
            sock.sendto(frame, endpoint)
            sent += 1
        return sent
    finally:
        sock.close()
