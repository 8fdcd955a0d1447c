"""Reception model and inter-packet-gap analysis tests."""

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsrc_atl.channel import (
    PROBABILITY_FLOOR,
    ChannelModel,
    analyze_ipg_trace,
    channel_from_dict,
    expected_ipg,
    reception_probability,
    sample_reception,
    simulate_reception_times,
)

MODEL = ChannelModel()


def test_probability_anchors():
    assert reception_probability(MODEL, 50.0) == 1.0
    assert reception_probability(MODEL, 100.0) == 1.0
    assert reception_probability(MODEL, 125.0) == pytest.approx(0.75)
    assert reception_probability(MODEL, 150.0) == pytest.approx(0.5)
    # same slope continues past the cutoff
    assert reception_probability(MODEL, 160.0) == pytest.approx(0.4)
    assert reception_probability(MODEL, 1e6) == PROBABILITY_FLOOR


def test_probability_rejects_negative_distance():
    with pytest.raises(ValueError):
        reception_probability(MODEL, -1.0)


@given(st.floats(0, 500), st.floats(0, 500))
@settings(max_examples=200)
def test_probability_non_increasing(d1, d2):
    lo, hi = sorted((d1, d2))
    assert reception_probability(MODEL, lo) >= reception_probability(MODEL, hi)


@given(st.floats(0, 400))
@settings(max_examples=200)
def test_probability_continuous(d):
    eps = 1e-6
    p = reception_probability(MODEL, d)
    p_up = reception_probability(MODEL, d + eps)
    assert abs(p - p_up) < 1e-6


def test_sampling_certain_within_reliable_range():
    rng = random.Random(1)
    assert all(sample_reception(MODEL, 50.0, rng) for _ in range(1000))


def test_sampling_frequency_at_half():
    rng = random.Random(2)
    n = 100_000
    hits = sum(sample_reception(MODEL, 150.0, rng) for _ in range(n))
    assert abs(hits / n - 0.5) <= 0.01


def test_sampling_deterministic_given_seed():
    rng1, rng2 = random.Random(9), random.Random(9)
    s1 = [sample_reception(MODEL, 140.0, rng1) for _ in range(500)]
    s2 = [sample_reception(MODEL, 140.0, rng2) for _ in range(500)]
    assert s1 == s2


def test_expected_ipg_anchors():
    assert expected_ipg(MODEL, 50.0) == pytest.approx(0.100)
    assert expected_ipg(MODEL, 150.0) == pytest.approx(0.200)


def test_expected_ipg_monotone_over_test_points():
    points = [25.0 * i for i in range(1, 7)]  # 25..150
    values = [expected_ipg(MODEL, d) for d in points]
    assert values == sorted(values)
    for d in points:
        if d <= 100.0:
            assert expected_ipg(MODEL, d) == pytest.approx(0.1)


def test_analyze_uniform_gaps():
    stats = analyze_ipg_trace([0.0, 0.1, 0.2, 0.3], 25.0)
    assert stats.mean_ipg_s == pytest.approx(0.1)
    assert stats.max_ipg_s == pytest.approx(0.1)
    assert stats.sample_count == 3
    assert stats.distance_bin_m == 25.0


def test_analyze_with_drop():
    stats = analyze_ipg_trace([0.0, 0.1, 0.3], 50.0)
    assert stats.mean_ipg_s == pytest.approx(0.15)
    assert stats.max_ipg_s == pytest.approx(0.2)


def test_analyze_rejects_insufficient_or_unsorted():
    with pytest.raises(ValueError):
        analyze_ipg_trace([0.0], 25.0)
    with pytest.raises(ValueError):
        analyze_ipg_trace([], 25.0)
    with pytest.raises(ValueError):
        analyze_ipg_trace([0.3, 0.1, 0.4], 25.0)


def test_monte_carlo_three_hundred_receptions():
    rng = random.Random(42)
    times = simulate_reception_times(MODEL, 130.0, 500, rng)
    assert len(times) >= 300
    stats = analyze_ipg_trace(times, 130.0)
    assert abs(stats.mean_ipg_s - expected_ipg(MODEL, 130.0)) / expected_ipg(MODEL, 130.0) <= 0.05


def test_monte_carlo_law_of_large_numbers():
    rng = random.Random(777)
    for d in (110.0, 140.0, 150.0):
        times = simulate_reception_times(MODEL, d, 10_000, rng)
        stats = analyze_ipg_trace(times, d)
        assert abs(stats.mean_ipg_s - expected_ipg(MODEL, d)) / expected_ipg(MODEL, d) <= 0.02


def test_transparent_channel_receives_every_period():
    clear = ChannelModel(reliable_range_m=1000.0, cutoff_range_m=1001.0)
    rng = random.Random(5)
    times = simulate_reception_times(clear, 800.0, 50, rng)
    assert times == [pytest.approx(0.1 * i) for i in range(50)]


def test_model_validation():
    with pytest.raises(ValueError):
        ChannelModel(tx_period_s=0.0)
    with pytest.raises(ValueError):
        ChannelModel(reliable_range_m=150.0, cutoff_range_m=100.0)
    with pytest.raises(ValueError):
        ChannelModel(p_at_cutoff=0.0)
    with pytest.raises(ValueError):
        channel_from_dict({"tx_period_s": 0.1, "bogus": 1})


def test_expected_ipg_is_geometric_mean_of_gaps():
    # Under independent loss, gaps are tx_period * Geometric(p); check the
    # closed form against an explicit expectation over the support.
    p = reception_probability(MODEL, 150.0)
    expect = sum(MODEL.tx_period_s * k * p * (1 - p) ** (k - 1) for k in range(1, 500))
    assert expected_ipg(MODEL, 150.0) == pytest.approx(expect, rel=1e-6)
