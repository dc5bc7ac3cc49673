"""Airtime arithmetic: frozen durations and structural properties."""

import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from wlanlens.profiles import get_profile
from wlanlens.wlansim import (
    ack_phase_us,
    data_phase_us,
    mumimo_timeline,
    siso_exchange_us,
    sounding_us,
    uplink_burst_us,
)

PROF = get_profile("reference-system")

# Hand-computed once from the frozen profile constants:
#   sounding(h) = 50 + 44 + 290h + 40(h-1) + 32h = 54 + 362h
#   ack(h)      = 50h + 40(h-1) + 16(2h-1)       = 122h - 56
#   data(b)     = 24 + b * 8*(1024+59)/54        = 24 + 160.444*b
FROZEN = {
    "sound_1": 416.0,
    "sound_4": 1502.0,
    "ack_1": 66.0,
    "ack_4": 432.0,
    "a_4_200": 34046.888888888889,
    "t_up_100": 1067.7777777777778,
    "t_up_400": 4001.1111111111113,
}


def test_frozen_durations():
    assert sounding_us(1, PROF) == pytest.approx(FROZEN["sound_1"], abs=1e-9)
    assert sounding_us(4, PROF) == pytest.approx(FROZEN["sound_4"], abs=1e-9)
    assert ack_phase_us(1, PROF) == pytest.approx(FROZEN["ack_1"], abs=1e-9)
    assert ack_phase_us(4, PROF) == pytest.approx(FROZEN["ack_4"], abs=1e-9)
    assert mumimo_timeline(4, 200, PROF) == pytest.approx(FROZEN["a_4_200"], rel=1e-12)
    assert uplink_burst_us(100, PROF) == pytest.approx(FROZEN["t_up_100"], rel=1e-12)
    assert uplink_burst_us(400, PROF) == pytest.approx(FROZEN["t_up_400"], rel=1e-12)


def test_sounding_cost_of_four_users_is_about_one_and_a_half_ms():
    # The sounding phase dominates small exchanges; for four users it is
    # ~1.5 ms, which is why serving few segments per opportunity is wasteful.
    assert 1400 <= sounding_us(4, PROF) <= 1600


def test_full_window_exchange_duration_is_about_34_ms():
    assert mumimo_timeline(4, 200, PROF) == pytest.approx(34046.9, abs=0.1)


@given(
    h=st.integers(min_value=1, max_value=8),
    b1=st.integers(min_value=1, max_value=512),
    b2=st.integers(min_value=1, max_value=512),
)
def test_airtime_monotone_in_batch(h, b1, b2):
    lo, hi = sorted((b1, b2))
    assert mumimo_timeline(h, lo, PROF) <= mumimo_timeline(h, hi, PROF)


@given(
    h1=st.integers(min_value=1, max_value=7),
    h2=st.integers(min_value=1, max_value=8),
    b=st.integers(min_value=1, max_value=512),
)
def test_airtime_monotone_in_users(h1, h2, b):
    lo, hi = sorted((h1, h2))
    assert mumimo_timeline(lo, b, PROF) <= mumimo_timeline(hi, b, PROF)


@given(b=st.integers(min_value=1, max_value=512))
def test_batch_slope_is_one_mpdu_airtime(b):
    # A(h, b+1) - A(h, b) is exactly one MPDU serialization.
    step = mumimo_timeline(2, b + 1, PROF) - mumimo_timeline(2, b, PROF)
    assert step == pytest.approx(PROF.data_mpdu_bits / PROF.phy_rate_mbps, rel=1e-9)


def test_uplink_burst_linear_in_frames():
    a, b = uplink_burst_us(1, PROF), uplink_burst_us(2, PROF)
    slope = b - a
    assert slope == pytest.approx(8 * PROF.ack_mpdu_bytes / PROF.phy_rate_mbps, rel=1e-12)
    assert uplink_burst_us(10, PROF) == pytest.approx(a + 9 * slope, rel=1e-12)


def test_invalid_arguments_rejected():
    with pytest.raises(ValueError):
        sounding_us(0, PROF)
    with pytest.raises(ValueError):
        mumimo_timeline(1, 0, PROF)
    with pytest.raises(ValueError):
        uplink_burst_us(0, PROF)
    with pytest.raises(ValueError):
        siso_exchange_us([], 54.0, PROF)


def test_siso_exchange_composition():
    prof = get_profile("siso-11n")
    got = siso_exchange_us([1090, 1090], 54.0, prof)
    want = prof.plcp_us + 2 * 1090 * 8 / 54.0 + prof.sifs_us + prof.mack_us
    assert got == pytest.approx(want, rel=1e-12)


def test_data_phase_bits_override():
    # The simulator sizes real aggregates frame by frame; the override hook
    # must agree with the default when fed the profile's own MPDU size.
    assert data_phase_us(7, PROF) == pytest.approx(
        data_phase_us(7, PROF, mpdu_bits=PROF.data_mpdu_bits), rel=1e-15
    )


def test_backoff_invariant():
    # mu * W0 * slot == 2 exactly: mean backoff equals the mean of the
    # first contention window.
    assert PROF.backoff_rate_per_us * PROF.cw_min * PROF.slot_us == pytest.approx(2.0, rel=1e-15)
    assert PROF.mean_backoff_us == pytest.approx(72.0, rel=1e-15)
    assert math.isclose(PROF.mean_backoff_us, (PROF.cw_min * PROF.slot_us) / 2)
