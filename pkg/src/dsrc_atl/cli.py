"""Operator command line: simulate, sweep, channel-curve, rsu, replay.

Exit codes: 0 success, 1 runtime failure, 2 configuration or validation
failure. All primary outputs are byte-reproducible for the same inputs
and seeds.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

from . import channel as channel_mod
from . import control, geodesy, rsu, sim

log = logging.getLogger(__name__)


def _load_json(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _geometry_from_args(args) -> geodesy.IntersectionGeometry:
    if args.geometry:
        return geodesy.geometry_from_dict(_load_json(args.geometry))
    return geodesy.default_geometry()


def _timing_from_args(args) -> control.SignalTiming:
    if args.timing:
        return control.timing_from_dict(_load_json(args.timing))
    return control.SignalTiming()


def _channel_from_args(args) -> channel_mod.ChannelModel:
    if args.channel:
        return channel_mod.channel_from_dict(_load_json(args.channel))
    return channel_mod.ChannelModel()


def _demand_from_args(args) -> sim.DemandConfig:
    demand = sim.demand_from_dict(_load_json(args.demand)) if args.demand else sim.DemandConfig()
    if getattr(args, "penetration", None) is not None:
        demand = replace(demand, penetration=args.penetration)
    if getattr(args, "duration", None) is not None:
        demand = replace(demand, duration_s=args.duration)
    if getattr(args, "warmup", None) is not None:
        demand = replace(demand, warmup_s=args.warmup)
    return demand


def _dynamics_from_args(args) -> sim.DynamicsConfig:
    if args.dynamics:
        return sim.dynamics_from_dict(_load_json(args.dynamics))
    return sim.DynamicsConfig()


def _seeds_from_args(args, default: list[int]) -> list[int]:
    if getattr(args, "seeds", None):
        try:
            return [int(s) for s in args.seeds.split(",")]
        except ValueError:
            raise ValueError(f"--seeds {args.seeds!r} is not a comma-separated int list") from None
    if getattr(args, "seed", None) is not None:
        return [args.seed]
    return default


def _parse_float_list(text: str, flag: str) -> list[float]:
    try:
        return [float(p) for p in text.split(",")]
    except ValueError:
        raise ValueError(f"{flag} {text!r} is not a comma-separated number list") from None


_RUN_COLUMNS = (
    "penetration,controller,seed,mean_wait_all_s,mean_wait_equipped_s,"
    "mean_wait_unequipped_s,vehicles_completed"
)


def _run_row_line(penetration: float, controller: str, seed: int, metrics) -> str:
    return (
        f"{penetration:.3f},{controller},{seed},{metrics.mean_wait_all_s:.6f},"
        f"{metrics.mean_wait_equipped_s:.6f},{metrics.mean_wait_unequipped_s:.6f},"
        f"{metrics.vehicles_completed}"
    )


def prepare_simulate(args):
    geometry = _geometry_from_args(args)
    timing = _timing_from_args(args)
    channel = _channel_from_args(args)
    demand = _demand_from_args(args)
    dynamics = _dynamics_from_args(args)
    seeds = _seeds_from_args(args, [demand.seed])
    if args.controller not in sim.CONTROLLERS:
        raise ValueError(f"--controller must be one of {sim.CONTROLLERS}")
    if (args.bsm_trace_out or args.command_trace_out) and len(seeds) != 1:
        raise ValueError("trace outputs require exactly one seed")

    def execute() -> int:
        out = Path(args.out)
        rows = []
        summaries = []
        for seed in seeds:
            run_demand = replace(demand, seed=seed)
            bsm_trace: Optional[list] = [] if args.bsm_trace_out else None
            metrics = sim.run_simulation(
                geometry,
                run_demand,
                dynamics,
                timing,
                channel,
                args.controller,
                check_invariants=args.check_invariants,
                bsm_trace=bsm_trace,
            )
            rows.append(_run_row_line(run_demand.penetration, args.controller, seed, metrics))
            summaries.append(
                {
                    "seed": seed,
                    "penetration": run_demand.penetration,
                    "controller": args.controller,
                    "mean_wait_all_s": metrics.mean_wait_all_s,
                    "mean_wait_equipped_s": metrics.mean_wait_equipped_s,
                    "mean_wait_unequipped_s": metrics.mean_wait_unequipped_s,
                    "vehicles_completed": metrics.vehicles_completed,
                    "vehicles_generated": metrics.vehicles_generated,
                }
            )
            if args.bsm_trace_out:
                rsu.write_bsm_trace(args.bsm_trace_out, bsm_trace)
            if args.command_trace_out:
                with open(args.command_trace_out, "w", encoding="ascii") as fh:
                    for entry in metrics.command_trace:
                        fh.write(control.format_trace_line(entry) + "\n")

        out.write_text(_RUN_COLUMNS + "\n" + "\n".join(rows) + "\n", encoding="ascii")
        out.with_suffix(".json").write_text(
            json.dumps({"runs": summaries}, indent=2, sort_keys=True) + "\n", encoding="ascii"
        )
        log.info("wrote %s and %s", out, out.with_suffix(".json"))
        return 0

    return execute


def prepare_sweep(args):
    geometry = _geometry_from_args(args)
    timing = _timing_from_args(args)
    channel = _channel_from_args(args)
    demand = _demand_from_args(args)
    dynamics = _dynamics_from_args(args)
    penetrations = _parse_float_list(args.penetrations, "--penetrations")
    for pen in penetrations:
        if not 0.0 <= pen <= 1.0:
            raise ValueError(f"--penetrations value {pen} outside [0, 1]")
    if args.replications < 1:
        raise ValueError("--replications must be at least 1")
    seeds = _seeds_from_args(args, [demand.seed + i for i in range(args.replications)])

    def execute() -> int:
        return _run_sweep(args, geometry, timing, channel, demand, dynamics, penetrations, seeds)

    return execute


def _run_sweep(args, geometry, timing, channel, demand, dynamics, penetrations, seeds) -> int:
    result = sim.sweep_penetration(
        geometry,
        demand,
        dynamics,
        timing,
        channel,
        penetrations,
        len(seeds),
        seeds=seeds,
        workers=args.workers,
    )

    prefix = Path(args.out)
    runs_path = prefix.parent / (prefix.name + "_runs.csv")
    agg_path = prefix.parent / (prefix.name + "_aggregate.csv")
    summary_path = prefix.parent / (prefix.name + "_summary.json")

    run_lines = [_RUN_COLUMNS]
    for row in result.runs:
        run_lines.append(
            f"{row.penetration:.3f},{row.controller},{row.seed},{row.mean_wait_all_s:.6f},"
            f"{row.mean_wait_equipped_s:.6f},{row.mean_wait_unequipped_s:.6f},"
            f"{row.vehicles_completed}"
        )
    runs_path.write_text("\n".join(run_lines) + "\n", encoding="ascii")

    agg_lines = [
        "penetration,controller,mean_wait_all_s,mean_wait_equipped_s,"
        "mean_wait_unequipped_s,vehicles_completed,ci95_halfwidth_s"
    ]
    for row in result.aggregates:
        agg_lines.append(
            f"{row.penetration:.3f},{row.controller},{row.mean_wait_all_s:.6f},"
            f"{row.mean_wait_equipped_s:.6f},{row.mean_wait_unequipped_s:.6f},"
            f"{row.mean_vehicles_completed:.2f},{row.ci95_halfwidth_s:.6f}"
        )
    agg_path.write_text("\n".join(agg_lines) + "\n", encoding="ascii")

    summary: dict = {
        "penetrations": sorted(set(penetrations)),
        "seeds": list(seeds),
        "tl_mean_wait_s": sim.aggregate_wait(result, "pretimed", min(penetrations)),
        "vtl_mean_wait_s": sim.aggregate_wait(result, "vtl", min(penetrations)),
    }
    if 0.2 in penetrations and 1.0 in penetrations:
        summary["improvement_fraction_at_0.2"] = sim.improvement_fraction(result)
    if 1.0 in penetrations:
        atl_full = sim.aggregate_wait(result, "atl", 1.0)
        vtl_row = next(
            r for r in result.aggregates if r.controller == "vtl" and r.penetration == 1.0
        )
        summary["atl_full_vs_vtl"] = {
            "atl_mean_wait_s": atl_full,
            "vtl_mean_wait_s": vtl_row.mean_wait_all_s,
            "difference_within_vtl_ci": abs(atl_full - vtl_row.mean_wait_all_s)
            <= vtl_row.ci95_halfwidth_s,
        }
    summary_path.write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="ascii"
    )
    log.info("wrote %s, %s, %s", runs_path, agg_path, summary_path)
    return 0


def prepare_channel_curve(args):
    model = _channel_from_args(args)
    distances = (
        _parse_float_list(args.distances, "--distances")
        if args.distances
        else [25.0 * i for i in range(1, 7)]
    )
    if any(d < 0 for d in distances):
        raise ValueError("--distances must be non-negative")
    if args.samples < 2:
        raise ValueError("--samples must be at least 2")

    def execute() -> int:
        import random

        lines = ["distance_m,p_rx,expected_ipg_s,measured_ipg_s"]
        for d in distances:
            rng = random.Random(f"{args.seed}/curve/{d}")
            times = channel_mod.simulate_reception_times(model, d, args.samples, rng)
            stats = channel_mod.analyze_ipg_trace(times, d)
            lines.append(
                f"{d:.1f},{channel_mod.reception_probability(model, d):.6f},"
                f"{channel_mod.expected_ipg(model, d):.6f},{stats.mean_ipg_s:.6f}"
            )
        text = "\n".join(lines) + "\n"
        if args.out:
            Path(args.out).write_text(text, encoding="ascii")
            log.info("wrote %s", args.out)
        else:
            sys.stdout.write(text)
        return 0

    return execute


def prepare_rsu(args):
    host, port = rsu.parse_endpoint(args.listen)
    config = rsu.RsuConfig(
        listen_host=host,
        listen_port=port,
        geometry=_geometry_from_args(args),
        timing=_timing_from_args(args),
        tcb_sink=args.tcb,
        stats_interval_s=args.stats_interval,
        detection_staleness_s=args.staleness,
    )
    if args.tcb != "stdout":
        rsu.parse_endpoint(args.tcb)  # validate before binding

    def execute() -> int:
        result = rsu.run_rsu(config, max_ticks=args.max_ticks)
        log.info("served %d ticks, %s", result.ticks, result.counters.stats_line())
        return 0

    return execute


def prepare_replay(args):
    entries = rsu.read_bsm_trace(args.trace)
    endpoint = rsu.parse_endpoint(args.endpoint)

    def execute() -> int:
        sent = rsu.replay_trace(entries, endpoint)
        log.info("sent %d datagrams to %s:%d", sent, endpoint[0], endpoint[1])
        return 0

    return execute


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dsrc-atl",
        description="DSRC-actuated traffic lights: simulation, analysis, and roadside service",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(p, with_demand=True):
        p.add_argument("--geometry", help="intersection geometry JSON")
        p.add_argument("--timing", help="signal timing JSON")
        p.add_argument("--channel", help="channel model JSON")
        if with_demand:
            p.add_argument("--demand", help="demand config JSON")
            p.add_argument("--dynamics", help="vehicle dynamics JSON")
            p.add_argument("--duration", type=float, help="override duration_s")
            p.add_argument("--warmup", type=float, help="override warmup_s")

    p_sim = sub.add_parser("simulate", help="run one or more closed-loop simulations")
    add_config_flags(p_sim)
    p_sim.add_argument("--controller", default="atl", choices=sim.CONTROLLERS)
    p_sim.add_argument("--penetration", type=float, help="override equipped fraction")
    p_sim.add_argument("--seed", type=int, help="single seed")
    p_sim.add_argument("--seeds", help="comma-separated seed list")
    p_sim.add_argument("--out", default="simulate.csv", help="per-run CSV path")
    p_sim.add_argument("--bsm-trace-out", help="write received-frame datagram trace")
    p_sim.add_argument("--command-trace-out", help="write signal transition trace")
    p_sim.add_argument("--check-invariants", action="store_true")
    p_sim.set_defaults(prepare=prepare_simulate)

    p_sweep = sub.add_parser("sweep", help="penetration sweep with baselines")
    add_config_flags(p_sweep)
    p_sweep.add_argument("--penetrations", default="0,0.2,0.4,0.6,0.8,1.0")
    p_sweep.add_argument("--replications", type=int, default=20)
    p_sweep.add_argument("--seed", type=int, help="base seed")
    p_sweep.add_argument("--seeds", help="explicit comma-separated seed list")
    p_sweep.add_argument("--penetration", type=float, help=argparse.SUPPRESS)
    p_sweep.add_argument("--workers", type=int, help="parallel worker processes")
    p_sweep.add_argument("--out", default="sweep", help="output path prefix")
    p_sweep.set_defaults(prepare=prepare_sweep)

    p_curve = sub.add_parser("channel-curve", help="reception model curve and measured gaps")
    p_curve.add_argument("--channel", help="channel model JSON")
    p_curve.add_argument("--distances", help="comma-separated distances in meters")
    p_curve.add_argument("--samples", type=int, default=10000, help="transmissions per distance")
    p_curve.add_argument("--seed", type=int, default=0)
    p_curve.add_argument("--out", help="CSV path (default: stdout)")
    p_curve.set_defaults(prepare=prepare_channel_curve)

    p_rsu = sub.add_parser("rsu", help="run the live roadside service")
    p_rsu.add_argument("--listen", default="127.0.0.1:5900", help="UDP host:port for frames")
    p_rsu.add_argument("--geometry", help="intersection geometry JSON")
    p_rsu.add_argument("--timing", help="signal timing JSON")
    p_rsu.add_argument("--tcb", default="stdout", help="'stdout' or TCP host:port sink")
    p_rsu.add_argument("--stats-interval", type=float, default=10.0)
    p_rsu.add_argument("--staleness", type=float, default=control.DETECTION_STALENESS_S)
    p_rsu.add_argument("--max-ticks", type=int, help="stop after N ticks (testing)")
    p_rsu.set_defaults(prepare=prepare_rsu)

    p_replay = sub.add_parser("replay", help="send a recorded datagram trace")
    p_replay.add_argument("--trace", required=True, help="trace file of offset_ms + hex lines")
    p_replay.add_argument("--endpoint", required=True, help="UDP host:port target")
    p_replay.set_defaults(prepare=prepare_replay)

    return parser


_CONFIG_ERRORS = (ValueError, KeyError, OSError, json.JSONDecodeError, TypeError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        execute = args.prepare(args)
    except _CONFIG_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    try:
        return execute()
    except Exception as err:  # runtime failure
        print(f"runtime error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
