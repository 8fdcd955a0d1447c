"""DSRC-actuated traffic lights: codec, localization, reception model,
phase-decision controllers, intersection simulator, and roadside service."""

from .bsm import (
    BadChecksum,
    BasicSafetyMessage,
    BsmError,
    FieldOutOfRange,
    ShortFrame,
    VehicleSnapshot,
    WrongMagic,
    WrongVersion,
    bsm_from_snapshot,
    decode_bsm,
    encode_bsm,
)
from .channel import (
    ChannelModel,
    IpgStats,
    analyze_ipg_trace,
    expected_ipg,
    reception_probability,
    sample_reception,
)
from .control import (
    Detection,
    DetectionTracker,
    Interval,
    PhaseCommand,
    SignalState,
    SignalTiming,
    atl_step,
    initial_state,
    pretimed_step,
    vtl_step,
)
from .geodesy import (
    Approach,
    GeoPoint,
    IntersectionGeometry,
    bearing,
    classify_bsm,
    default_geometry,
    destination_point,
    great_circle_distance,
    load_geometry,
)
from .sim import (
    DemandConfig,
    DynamicsConfig,
    RunMetrics,
    SimVehicle,
    generate_arrivals,
    run_simulation,
    sweep_penetration,
    vehicle_step,
)
from .rsu import RsuConfig, RsuPipeline, emit_phase_command, run_rsu

__version__ = "0.1.0"
