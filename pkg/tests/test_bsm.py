"""Codec unit tests: frame anchors, round trips, error taxonomy, quantization."""

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsrc_atl.bsm import (
    FRAME_LEN,
    HEADING_MAX,
    BadChecksum,
    BasicSafetyMessage,
    FieldOutOfRange,
    ShortFrame,
    VehicleSnapshot,
    WrongMagic,
    WrongVersion,
    bsm_from_snapshot,
    decode_bsm,
    encode_bsm,
)

valid_messages = st.builds(
    BasicSafetyMessage,
    temp_id=st.integers(0, 2**32 - 1),
    time_ms=st.integers(0, 2**64 - 1),
    latitude_e7=st.integers(-900_000_000, 900_000_000),
    longitude_e7=st.integers(-1_800_000_000, 1_800_000_000),
    speed_002ms=st.integers(0, 2**16 - 1),
    heading_00125deg=st.integers(0, HEADING_MAX - 1),
)


def test_zero_message_frame():
    frame = encode_bsm(BasicSafetyMessage(0, 0, 0, 0, 0, 0))
    assert frame[:2] == b"\xb5\x01"
    assert frame[2:-1] == bytes(FRAME_LEN - 3)
    assert frame[-1] == 0xB5 ^ 0x01  # == 0xB4


def test_temp_id_one_offsets():
    frame = encode_bsm(BasicSafetyMessage(1, 0, 0, 0, 0, 0))
    assert frame[5] == 0x01  # last byte of the big-endian id field
    assert frame[-1] == 0xB5


def test_constant_length():
    rng = random.Random(7)
    for _ in range(200):
        m = BasicSafetyMessage(
            rng.randrange(2**32),
            rng.randrange(2**64),
            rng.randint(-900_000_000, 900_000_000),
            rng.randint(-1_800_000_000, 1_800_000_000),
            rng.randrange(2**16),
            rng.randrange(HEADING_MAX),
        )
        assert len(encode_bsm(m)) == FRAME_LEN


@given(valid_messages)
@settings(max_examples=300)
def test_round_trip(m):
    assert decode_bsm(encode_bsm(m)) == m


def test_round_trip_epoch_times():
    # Times far beyond 32-bit milliseconds must survive.
    m = BasicSafetyMessage(9, 1_754_870_400_123, 404_529_950, -799_352_000, 695, 7200)
    assert decode_bsm(encode_bsm(m)) == m


def test_truncated_frame():
    frame = encode_bsm(BasicSafetyMessage(1, 2, 3, 4, 5, 6))
    with pytest.raises(ShortFrame):
        decode_bsm(frame[:22])


def test_flipped_last_byte():
    frame = bytearray(encode_bsm(BasicSafetyMessage(1, 2, 3, 4, 5, 6)))
    frame[-1] ^= 0xFF
    with pytest.raises(BadChecksum):
        decode_bsm(bytes(frame))


def test_wrong_magic_and_version():
    frame = bytearray(encode_bsm(BasicSafetyMessage(0, 0, 0, 0, 0, 0)))
    bad_magic = bytes([0xB6]) + bytes(frame[1:])
    with pytest.raises(WrongMagic):
        decode_bsm(bad_magic)
    bad_version = bytearray(frame)
    bad_version[1] = 0x02
    bad_version[-1] ^= 0x01 ^ 0x02  # keep the checksum consistent
    with pytest.raises(WrongVersion):
        decode_bsm(bytes(bad_version))


def test_decoded_field_out_of_range():
    import struct

    body = struct.pack(">BBIQiiHH", 0xB5, 0x01, 0, 0, 0, 0, 0, HEADING_MAX)
    checksum = 0
    for b in body:
        checksum ^= b
    with pytest.raises(FieldOutOfRange):
        decode_bsm(body + bytes([checksum]))


def test_trailing_bytes_ignored():
    m = BasicSafetyMessage(1, 2, 3, 4, 5, 6)
    assert decode_bsm(encode_bsm(m) + b"\x00\xff") == m


def test_encode_rejects_invalid():
    for bad in (
        BasicSafetyMessage(-1, 0, 0, 0, 0, 0),
        BasicSafetyMessage(0, 0, 900_000_001, 0, 0, 0),
        BasicSafetyMessage(0, 0, 0, -1_800_000_001, 0, 0),
        BasicSafetyMessage(0, 0, 0, 0, 2**16, 0),
        BasicSafetyMessage(0, 0, 0, 0, 0, HEADING_MAX),
    ):
        with pytest.raises(FieldOutOfRange):
            encode_bsm(bad)


def test_snapshot_quantization_anchors():
    snap = VehicleSnapshot(40.4529950, -79.9352000, 13.9, 90.0, 42, 1234)
    m = bsm_from_snapshot(snap)
    assert m.speed_002ms == 695
    assert m.heading_00125deg == 7200
    assert m.latitude_e7 == 404_529_950
    assert m.temp_id == 42
    assert m.time_ms == 1234


@given(
    lat=st.floats(-90, 90),
    lon=st.floats(-180, 180),
    speed=st.floats(0, 1310),
    heading=st.floats(0, 360, exclude_max=True),
)
@settings(max_examples=300)
def test_snapshot_quantization_error_bounds(lat, lon, speed, heading):
    m = bsm_from_snapshot(VehicleSnapshot(lat, lon, speed, heading, 1, 0))
    assert abs(m.speed_002ms / 50.0 - speed) <= 0.01 + 1e-9
    heading_err = abs((m.heading_00125deg / 80.0 - heading + 180.0) % 360.0 - 180.0)
    assert heading_err <= 0.00625 + 1e-9
    assert abs(m.latitude_e7 / 1e7 - lat) <= 5e-8 + 1e-12
    assert abs(m.longitude_e7 / 1e7 - lon) <= 5e-8 + 1e-12


def test_snapshot_speed_range():
    with pytest.raises(FieldOutOfRange):
        bsm_from_snapshot(VehicleSnapshot(0, 0, 1310.8, 0, 1, 0))
    # top representable value survives
    m = bsm_from_snapshot(VehicleSnapshot(0, 0, 1310.7, 0, 1, 0))
    assert m.speed_002ms == 65535


def test_snapshot_heading_wrap():
    m = bsm_from_snapshot(VehicleSnapshot(0, 0, 0, 359.9999, 1, 0))
    assert m.heading_00125deg == 0


def test_snapshot_validation():
    for bad in (
        VehicleSnapshot(91, 0, 0, 0, 1, 0),
        VehicleSnapshot(0, 181, 0, 0, 1, 0),
        VehicleSnapshot(0, 0, -1, 0, 1, 0),
        VehicleSnapshot(0, 0, 0, 360.0, 1, 0),
        VehicleSnapshot(0, 0, 0, 0, 2**32, 0),
    ):
        with pytest.raises(ValueError):
            bsm_from_snapshot(bad)


def test_json_round_trip():
    m = BasicSafetyMessage(7, 123456789012, -404_529_950, 1_699_352_000, 695, 28799)
    text = m.to_json()
    for name in (
        "temp_id",
        "time_ms",
        "latitude_e7",
        "longitude_e7",
        "speed_002ms",
        "heading_00125deg",
    ):
        assert f'"{name}"' in text
    assert BasicSafetyMessage.from_json(text) == m


def test_rounding_half_away_from_zero():
    assert bsm_from_snapshot(VehicleSnapshot(0, 0, 0.01, 0, 1, 0)).speed_002ms == 1
    m = bsm_from_snapshot(VehicleSnapshot(-1e-8 * 0.5, 0, 0, 0, 1, 0))
    assert m.latitude_e7 == -0 or m.latitude_e7 == 0
    m2 = bsm_from_snapshot(VehicleSnapshot(-7.5e-8, 0, 0, 0, 1, 0))
    assert m2.latitude_e7 == -1
