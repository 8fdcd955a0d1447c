"""Localization: GPS fixes to intersection-relative geometry.

Distances and bearings use a spherical earth (R = 6,371,000 m); at
intersection scale the ellipsoidal correction is far below GPS noise.
A received message is attributed to the approach whose inbound heading
lies within 45 degrees of the vehicle's heading, provided the fix falls
inside the intersection's area of interest.
"""

import json
import math
from dataclasses import dataclass
from typing import Optional

from .bsm import BasicSafetyMessage
from .control import Detection

EARTH_RADIUS_M = 6_371_000.0
HEADING_CONE_DEG = 45.0


@dataclass(frozen=True)
class GeoPoint:
    latitude: float
    longitude: float

    def __post_init__(self) -> None:
        if abs(self.latitude) > 90.0:
            raise ValueError(f"latitude {self.latitude} outside +/-90")
        if abs(self.longitude) > 180.0:
            raise ValueError(f"longitude {self.longitude} outside +/-180")


@dataclass(frozen=True)
class Approach:
    """One inbound road arm, bound to the signal phase that serves it."""

    id: int
    inbound_heading: float
    stop_line: GeoPoint
    approach_length_m: float
    phase_id: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.inbound_heading < 360.0:
            raise ValueError(f"inbound_heading {self.inbound_heading} outside [0, 360)")
        if self.approach_length_m <= 0:
            raise ValueError("approach_length_m must be positive")


@dataclass(frozen=True)
class IntersectionGeometry:
    center: GeoPoint
    approaches: tuple[Approach, ...]
    detection_radius_m: float = 50.0
    area_of_interest_radius_m: float = 100.0

    def __post_init__(self) -> None:
        if len(self.approaches) < 2:
            raise ValueError("need at least two approaches")
        ids = [a.id for a in self.approaches]
        if len(set(ids)) != len(ids):
            raise ValueError(f"approach ids not unique: {ids}")
        if self.detection_radius_m <= 0:
            raise ValueError("detection_radius_m must be positive")
        if self.detection_radius_m > self.area_of_interest_radius_m:
            raise ValueError("detection_radius_m exceeds area_of_interest_radius_m")

    @property
    def phase_ids(self) -> list[int]:
        return sorted({a.phase_id for a in self.approaches})

    @property
    def approach_phases(self) -> dict[int, int]:
        return {a.id: a.phase_id for a in self.approaches}

    def approach_by_id(self, approach_id: int) -> Approach:
        for a in self.approaches:
            if a.id == approach_id:
                return a
        raise KeyError(approach_id)


def great_circle_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Haversine distance in meters."""
    return _haversine_m(a.latitude, a.longitude, b.latitude, b.longitude)


def _haversine_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    radians, sin, cos = math.radians, math.sin, math.cos
    phi1 = radians(lat1)
    phi2 = radians(lat2)
    sdphi = sin((phi2 - phi1) / 2.0)
    sdlam = sin(radians(lon2 - lon1) / 2.0)
    h = sdphi * sdphi + cos(phi1) * cos(phi2) * sdlam * sdlam
    if h > 1.0:
        h = 1.0
    return 2.0 * EARTH_RADIUS_M * math.asin(math.sqrt(h))


def bearing(a: GeoPoint, b: GeoPoint) -> float:
    """Initial great-circle bearing from a to b, degrees clockwise from north."""
    if a.latitude == b.latitude and a.longitude == b.longitude:
        raise ValueError("bearing undefined for coincident points")
    phi1 = math.radians(a.latitude)
    phi2 = math.radians(b.latitude)
    dlam = math.radians(b.longitude - a.longitude)
    y = math.sin(dlam) * math.cos(phi2)
    x = math.cos(phi1) * math.sin(phi2) - math.sin(phi1) * math.cos(phi2) * math.cos(dlam)
    return math.degrees(math.atan2(y, x)) % 360.0


def ray_locator(start: GeoPoint, bearing_deg: float):
    """Precompiled ``distance_m -> (lat, lon)`` along a fixed bearing.

    Hot path for vehicles pinned to an approach ray: the start point and
    bearing trig are folded once.
    """
    theta = math.radians(bearing_deg)
    phi1 = math.radians(start.latitude)
    lam1 = math.radians(start.longitude)
    sin_phi1, cos_phi1 = math.sin(phi1), math.cos(phi1)
    sin_theta, cos_theta = math.sin(theta), math.cos(theta)
    sin, cos, asin, atan2, degrees = math.sin, math.cos, math.asin, math.atan2, math.degrees

    def locate(distance_m: float) -> tuple[float, float]:
        delta = distance_m / EARTH_RADIUS_M
        sin_d, cos_d = sin(delta), cos(delta)
        sin_phi2 = sin_phi1 * cos_d + cos_phi1 * sin_d * cos_theta
        if sin_phi2 > 1.0:
            sin_phi2 = 1.0
        elif sin_phi2 < -1.0:
            sin_phi2 = -1.0
        lam2 = lam1 + atan2(sin_theta * sin_d * cos_phi1, cos_d - sin_phi1 * sin_phi2)
        lon = (degrees(lam2) + 540.0) % 360.0 - 180.0
        return degrees(asin(sin_phi2)), lon

    return locate


def destination_point(start: GeoPoint, bearing_deg: float, distance_m: float) -> GeoPoint:
    """Point reached from start after distance_m along the given bearing."""
    if distance_m < 0:
        raise ValueError("distance_m must be non-negative")
    lat, lon = ray_locator(start, bearing_deg)(distance_m)
    return GeoPoint(lat, lon)


def angular_difference(a_deg: float, b_deg: float) -> float:
    """Unsigned difference between two headings on the circle, in [0, 180]."""
    return abs((a_deg - b_deg + 180.0) % 360.0 - 180.0)


def classify_bsm(m: BasicSafetyMessage, g: IntersectionGeometry) -> Optional[Detection]:
    """Attribute a message to an approach, or drop it.

    Dropped when the fix is outside the area of interest or when no
    approach's inbound heading is within the 45-degree cone of the
    vehicle heading. Heading ties resolve to the lowest approach id.
    """
    lat = m.latitude_e7 / 1e7
    lon = m.longitude_e7 / 1e7
    center = g.center
    if _haversine_m(lat, lon, center.latitude, center.longitude) > g.area_of_interest_radius_m:
        return None
    heading = m.heading_00125deg / 80.0
    best: Optional[Approach] = None
    best_diff = HEADING_CONE_DEG
    for approach in g.approaches:
        diff = abs((heading - approach.inbound_heading + 180.0) % 360.0 - 180.0)
        if diff > best_diff:
            continue
        if best is None or diff < best_diff or approach.id < best.id:
            best, best_diff = approach, diff
    if best is None:
        return None
    stop = best.stop_line
    return Detection(
        approach_id=best.id,
        distance_to_stop_m=_haversine_m(lat, lon, stop.latitude, stop.longitude),
        speed_ms=m.speed_002ms / 50.0,
        temp_id=m.temp_id,
        time_ms=m.time_ms,
    )


def geometry_from_dict(data: dict) -> IntersectionGeometry:
    """Build geometry from its JSON document form."""
    try:
        center = GeoPoint(data["center"]["lat"], data["center"]["lon"])
        approaches = tuple(
            Approach(
                id=int(item["id"]),
                inbound_heading=float(item["inbound_heading"]),
                stop_line=GeoPoint(item["stop_line"]["lat"], item["stop_line"]["lon"]),
                approach_length_m=float(item["approach_length_m"]),
                phase_id=int(item["phase_id"]),
            )
            for item in data["approaches"]
        )
    except KeyError as missing:
        raise ValueError(f"geometry document missing key {missing}") from None
    return IntersectionGeometry(
        center=center,
        approaches=approaches,
        detection_radius_m=float(data.get("detection_radius_m", 50.0)),
        area_of_interest_radius_m=float(data.get("area_of_interest_radius_m", 100.0)),
    )


def load_geometry(path: str) -> IntersectionGeometry:
    with open(path, encoding="utf-8") as fh:
        return geometry_from_dict(json.load(fh))


def default_geometry() -> IntersectionGeometry:
    """Two perpendicular single-lane avenues crossing at a right angle."""
    center = GeoPoint(40.4530000, -79.9352000)
    major_stop = destination_point(center, 270.0, 15.0)  # eastbound traffic stops west of center
    minor_stop = destination_point(center, 180.0, 15.0)  # northbound traffic stops south of center
    return IntersectionGeometry(
        center=center,
        approaches=(
            Approach(1, 90.0, major_stop, 250.0, phase_id=1),
            Approach(2, 0.0, minor_stop, 250.0, phase_id=2),
        ),
    )
