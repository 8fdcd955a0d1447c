"""Basic safety message type and its binary wire codec.

Frame layout (27 bytes, all multi-byte fields big-endian):

  offset  size  field
  ------  ----  -----------------------------------------
  0       1     magic 0xB5
  1       1     version 0x01
  2       4     temp_id            (uint32)
  6       8     time_ms            (uint64, ms since epoch)
  14      4     latitude_e7        (int32, degrees * 1e7)
  18      4     longitude_e7       (int32, degrees * 1e7)
  22      2     speed_002ms        (uint16, m/s * 50)
  24      2     heading_00125deg   (uint16, degrees * 80)
  26      1     XOR checksum of bytes 0..25

One message per datagram; no fragmentation. Trailing bytes beyond the
frame are ignored by the decoder.
"""

import json
import math
import struct
from dataclasses import asdict, dataclass

MAGIC = 0xB5
VERSION = 0x01
FRAME_LEN = 27

_BODY = struct.Struct(">BBIQiiHH")

HEADING_MAX = 28800  # 360 degrees * 80
_LAT_MAX = 900_000_000
_LON_MAX = 1_800_000_000


class BsmError(ValueError):
    """Base class for message validation and codec failures."""


class WrongMagic(BsmError):
    pass


class WrongVersion(BsmError):
    pass


class ShortFrame(BsmError):
    pass


class BadChecksum(BsmError):
    pass


class FieldOutOfRange(BsmError):
    pass


@dataclass(frozen=True)
class BasicSafetyMessage:
    """One situational broadcast: who, when, where, how fast, which way."""

    temp_id: int
    time_ms: int
    latitude_e7: int
    longitude_e7: int
    speed_002ms: int
    heading_00125deg: int

    def validate(self) -> None:
        if not 0 <= self.temp_id < 1 << 32:
            raise FieldOutOfRange(f"temp_id {self.temp_id} outside uint32")
        if not 0 <= self.time_ms < 1 << 64:
            raise FieldOutOfRange(f"time_ms {self.time_ms} outside uint64")
        if abs(self.latitude_e7) > _LAT_MAX:
            raise FieldOutOfRange(f"latitude_e7 {self.latitude_e7} exceeds +/-90 degrees")
        if abs(self.longitude_e7) > _LON_MAX:
            raise FieldOutOfRange(f"longitude_e7 {self.longitude_e7} exceeds +/-180 degrees")
        if not 0 <= self.speed_002ms < 1 << 16:
            raise FieldOutOfRange(f"speed_002ms {self.speed_002ms} outside uint16")
        if not 0 <= self.heading_00125deg < HEADING_MAX:
            raise FieldOutOfRange(f"heading_00125deg {self.heading_00125deg} outside [0, {HEADING_MAX})")

    @property
    def speed_ms(self) -> float:
        return self.speed_002ms / 50.0

    @property
    def heading_deg(self) -> float:
        return self.heading_00125deg / 80.0

    @property
    def latitude_deg(self) -> float:
        return self.latitude_e7 / 1e7

    @property
    def longitude_deg(self) -> float:
        return self.longitude_e7 / 1e7

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "BasicSafetyMessage":
        data = json.loads(text)
        msg = cls(**data)
        msg.validate()
        return msg


@dataclass(frozen=True)
class VehicleSnapshot:
    """Ground-truth vehicle state sampled from the simulator."""

    latitude_deg: float
    longitude_deg: float
    speed_ms: float
    heading_deg: float
    vehicle_id: int
    clock_ms: int

    def validate(self) -> None:
        if abs(self.latitude_deg) > 90.0:
            raise ValueError(f"latitude {self.latitude_deg} outside +/-90")
        if abs(self.longitude_deg) > 180.0:
            raise ValueError(f"longitude {self.longitude_deg} outside +/-180")
        if self.speed_ms < 0.0:
            raise ValueError(f"speed {self.speed_ms} is negative")
        if not 0.0 <= self.heading_deg < 360.0:
            raise ValueError(f"heading {self.heading_deg} outside [0, 360)")
        if not 0 <= self.vehicle_id < 1 << 32:
            raise ValueError(f"vehicle_id {self.vehicle_id} outside uint32")
        if self.clock_ms < 0:
            raise ValueError(f"clock_ms {self.clock_ms} is negative")


def _xor_checksum(data: bytes) -> int:
    total = 0
    for b in data:
        total ^= b
    return total


def encode_bsm(m: BasicSafetyMessage) -> bytes:
    """Encode a valid message into its fixed-length frame."""
    m.validate()
    body = _BODY.pack(
        MAGIC,
        VERSION,
        m.temp_id,
        m.time_ms,
        m.latitude_e7,
        m.longitude_e7,
        m.speed_002ms,
        m.heading_00125deg,
    )
    return body + bytes([_xor_checksum(body)])


def decode_bsm(frame: bytes) -> BasicSafetyMessage:
    """Decode one frame, raising a distinct error class per failure mode."""
    if len(frame) < FRAME_LEN:
        raise ShortFrame(f"frame is {len(frame)} bytes, need {FRAME_LEN}")
    body = frame[: FRAME_LEN - 1]
    if body[0] != MAGIC:
        raise WrongMagic(f"magic byte 0x{body[0]:02X}, expected 0x{MAGIC:02X}")
    if body[1] != VERSION:
        raise WrongVersion(f"version byte 0x{body[1]:02X}, expected 0x{VERSION:02X}")
    if frame[FRAME_LEN - 1] != _xor_checksum(body):
        raise BadChecksum(
            f"checksum 0x{frame[FRAME_LEN - 1]:02X}, computed 0x{_xor_checksum(body):02X}"
        )
    _, _, temp_id, time_ms, lat, lon, speed, heading = _BODY.unpack(body)
    msg = BasicSafetyMessage(temp_id, time_ms, lat, lon, speed, heading)
    msg.validate()
    return msg


def _round_half_away(x: float) -> int:
    if x >= 0:
        return math.floor(x + 0.5)
    return math.ceil(x - 0.5)


def bsm_from_snapshot(v: VehicleSnapshot) -> BasicSafetyMessage:
    """Quantize a simulator snapshot into message resolution."""
    v.validate()
    speed_q = _round_half_away(v.speed_ms * 50.0)
    if speed_q >= 1 << 16:
        raise FieldOutOfRange(f"speed {v.speed_ms} m/s exceeds representable range")
    msg = BasicSafetyMessage(
        temp_id=v.vehicle_id,
        time_ms=v.clock_ms,
        latitude_e7=_round_half_away(v.latitude_deg * 1e7),
        longitude_e7=_round_half_away(v.longitude_deg * 1e7),
        speed_002ms=speed_q,
        heading_00125deg=_round_half_away(v.heading_deg * 80.0) % HEADING_MAX,
    )
    msg.validate()
    return msg
