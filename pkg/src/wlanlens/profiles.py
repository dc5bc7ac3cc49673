"""Radio timing profiles.

A profile bundles every constant needed to turn frame sizes into airtime:
slot and interframe spacings, contention window, per-stream PHY rate, and
the durations of the control frames that wrap a data exchange (sounding
sequence and block-ack sequence for the multi-user profile, plain ACK for
the single-antenna one).

All durations are microseconds, all sizes are bytes unless a name says
otherwise.  Throughputs elsewhere in the package are bits/us, which reads
as Mb/s.

The ``reference-system`` profile was calibrated once against the saturation
throughput targets of a 4x1 MU-MIMO downlink (216 / 192.5 / 172.5 / 187.0
Mb/s for the four closed-form bounds) and is frozen; do not retune it
per-experiment.  The calibration solved for the data-MPDU framing overhead,
the block-ack size and the beamforming-report duration, then everything
else follows from standard 802.11 numbers.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

__all__ = [
    "TimingProfile",
    "PROFILES",
    "get_profile",
    "register_profile",
]

PROFILE_ENV_VAR = "WLAN_LENS_PROFILE"

# MCS ladder used when mapping an observed PHY rate back to a nominal index.
MCS_RATES_MBPS = (6.0, 9.0, 12.0, 18.0, 24.0, 36.0, 48.0, 54.0)


@dataclass(frozen=True)
class TimingProfile:
    """Immutable bag of timing constants for one radio configuration."""

    name: str

    # --- contention ---------------------------------------------------
    slot_us: float = 9.0
    sifs_us: float = 16.0
    difs_us: float = 34.0
    cw_min: int = 16          # W0: first-attempt contention window, slots
    retry_limit: int = 7      # attempts before a frame is dropped

    # --- PHY ----------------------------------------------------------
    phy_rate_mbps: float = 54.0   # per spatial stream, data frames
    plcp_us: float = 24.0         # preamble + PLCP header per PPDU

    # --- MAC framing ---------------------------------------------------
    data_overhead_bytes: int = 59  # MAC hdr + FCS + delimiter per data MPDU
    ack_mpdu_bytes: int = 66       # TCP-ACK MPDU incl. framing
    seg_bytes: int = 1024          # nominal TCP segment payload

    # --- multi-user sounding / acknowledgement (MU profile only) -------
    mu_capable: bool = True
    ndpa_us: float = 50.0
    ndp_us: float = 44.0
    cbr_us: float = 290.0          # one station's compressed beamforming report
    br_poll_us: float = 40.0
    ba_us: float = 50.0            # block ack
    bar_us: float = 40.0           # block ack request

    # --- single-antenna ack (non-MU exchanges) -------------------------
    mack_us: float = 24.67         # 14-byte control ACK at 24 Mb/s + preamble

    @property
    def backoff_rate_per_us(self) -> float:
        """Mean contention rate mu = 2/(W0*slot); 1/mu is the mean backoff."""
        return 2.0 / (self.cw_min * self.slot_us)

    @property
    def mean_backoff_us(self) -> float:
        return 1.0 / self.backoff_rate_per_us

    @property
    def data_mpdu_bits(self) -> int:
        return 8 * (self.seg_bytes + self.data_overhead_bytes)

    def mpdu_airtime_us(self, payload_bytes: int, rate_mbps: float | None = None) -> float:
        """Serialization time of one data MPDU (no preamble)."""
        rate = self.phy_rate_mbps if rate_mbps is None else rate_mbps
        return 8.0 * (payload_bytes + self.data_overhead_bytes) / rate

    def with_(self, **kw) -> "TimingProfile":
        return replace(self, **kw)


REFERENCE_SYSTEM = TimingProfile(name="reference-system")

# Single-antenna 802.11n-ish profile: no sounding, short preamble budget,
# immediate control ACK after SIFS.  Used for the estimator validation
# scenarios where per-station logs matter more than aggregate ceilings.
SISO_11N = TimingProfile(
    name="siso-11n",
    mu_capable=False,
    plcp_us=20.0,
    data_overhead_bytes=66,
)

PROFILES: dict[str, TimingProfile] = {
    REFERENCE_SYSTEM.name: REFERENCE_SYSTEM,
    SISO_11N.name: SISO_11N,
}


def register_profile(profile: TimingProfile) -> None:
    PROFILES[profile.name] = profile


def get_profile(name: str | None = None) -> TimingProfile:
    """Look up a profile by name, falling back to $WLAN_LENS_PROFILE.

    Raises KeyError with the list of known names on a miss.
    """
    if name is None:
        name = os.environ.get(PROFILE_ENV_VAR, REFERENCE_SYSTEM.name)
    try:
        return PROFILES[name]
    except KeyError:
        known = ", ".join(sorted(PROFILES))
        raise KeyError(f"unknown timing profile {name!r} (known: {known})") from None
