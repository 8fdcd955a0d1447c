"""Distance-dependent packet reception and inter-packet-gap analysis.

Reception probability is piecewise linear: certain out to the reliable
range, then falling on a fixed slope through the cutoff point and
onward, floored at 1%. Packet losses are independent Bernoulli trials,
so the expected gap between received packets is the transmit period
divided by the reception probability.
"""

import math
import random
from dataclasses import dataclass
from typing import Sequence

PROBABILITY_FLOOR = 0.01


@dataclass(frozen=True)
class ChannelModel:
    tx_period_s: float = 0.1
    reliable_range_m: float = 100.0
    cutoff_range_m: float = 150.0
    p_at_cutoff: float = 0.5
    rsu_mount_height_m: float = 2.5  # measurement-condition metadata only

    def __post_init__(self) -> None:
        if self.tx_period_s <= 0:
            raise ValueError("tx_period_s must be positive")
        if not 0 < self.reliable_range_m < self.cutoff_range_m:
            raise ValueError("need 0 < reliable_range_m < cutoff_range_m")
        if not 0 < self.p_at_cutoff <= 1:
            raise ValueError("p_at_cutoff must be in (0, 1]")


@dataclass(frozen=True)
class IpgStats:
    distance_bin_m: float
    sample_count: int
    mean_ipg_s: float
    max_ipg_s: float


def reception_probability(c: ChannelModel, distance_m: float) -> float:
    """Probability that one packet sent from distance_m is received."""
    if distance_m < 0:
        raise ValueError("distance_m must be non-negative")
    slope = (1.0 - c.p_at_cutoff) / (c.cutoff_range_m - c.reliable_range_m)
    p = 1.0 - slope * (distance_m - c.reliable_range_m)
    return max(PROBABILITY_FLOOR, min(1.0, p))


def sample_reception(c: ChannelModel, distance_m: float, rng: random.Random) -> bool:
    """One Bernoulli reception trial, deterministic given the generator."""
    return rng.random() < reception_probability(c, distance_m)


def expected_ipg(c: ChannelModel, distance_m: float) -> float:
    """Mean gap between received packets under independent loss."""
    return c.tx_period_s / reception_probability(c, distance_m)


def simulate_reception_times(
    c: ChannelModel, distance_m: float, transmissions: int, rng: random.Random
) -> list[float]:
    """Receive times for a burst of periodic transmissions at fixed range."""
    return [
        i * c.tx_period_s
        for i in range(transmissions)
        if sample_reception(c, distance_m, rng)
    ]


def analyze_ipg_trace(receive_times: Sequence[float], distance_bin_m: float) -> IpgStats:
    """Mean and max gap between successive receive timestamps."""
    if len(receive_times) < 2:
        raise ValueError(
            f"need at least 2 receptions in bin {distance_bin_m}, got {len(receive_times)}"
        )
    gaps = []
    for earlier, later in zip(receive_times, receive_times[1:]):
        if later < earlier:
            raise ValueError("receive_times must be sorted ascending")
        gaps.append(later - earlier)
    return IpgStats(
        distance_bin_m=distance_bin_m,
        sample_count=len(gaps),
        mean_ipg_s=math.fsum(gaps) / len(gaps),
        max_ipg_s=max(gaps),
    )


def channel_from_dict(data: dict) -> ChannelModel:
    known = {
        "tx_period_s",
        "reliable_range_m",
        "cutoff_range_m",
        "p_at_cutoff",
        "rsu_mount_height_m",
    }
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown channel fields: {sorted(unknown)}")
    return ChannelModel(**{k: float(v) for k, v in data.items()})
