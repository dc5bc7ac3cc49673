"""Closed-form airtime of channel exchanges.

Everything here is straight arithmetic on a TimingProfile: how long does a
multi-user downlink transmission opportunity last as a function of how many
stations are served (h) and the largest per-station batch (b), and how long
does one station's uplink ACK burst last as a function of the number of ACK
frames it carries.

The multi-user exchange is modelled as

    sounding phase   NDPA + NDP + h reports, polled after the first
    data phase       one preamble, then b segment MPDUs back to back
                     (streams are parallel; the longest one sets the length)
    ack phase        h block-acks, polled after the first

with a SIFS between consecutive control frames.  The uplink burst is one
preamble plus n ACK MPDUs plus the SIFS-separated block-ack response.

These functions are the single source of truth for exchange durations: the
event simulator schedules with them and the analytical model integrates
over them, so agreement between the two is by construction a statement
about queueing, not airtime bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from ..profiles import TimingProfile, get_profile

__all__ = [
    "sounding_us",
    "ack_phase_us",
    "data_phase_us",
    "mumimo_timeline",
    "uplink_burst_us",
    "siso_exchange_us",
    "TimelineParams",
]


def sounding_us(h: int, prof: TimingProfile) -> float:
    """Channel sounding before an h-user transmission.

    NDPA, SIFS, NDP, then for each of the h stations a beamforming report
    (stations after the first must be polled first), everything SIFS
    separated: NDPA + NDP + h*CBR + (h-1)*POLL + 2h*SIFS.
    """
    if h < 1:
        raise ValueError(f"need at least one user, got h={h}")
    return (
        prof.ndpa_us
        + prof.ndp_us
        + h * prof.cbr_us
        + (h - 1) * prof.br_poll_us
        + 2 * h * prof.sifs_us
    )


def ack_phase_us(h: int, prof: TimingProfile) -> float:
    """Block-ack collection after an h-user transmission.

    First BA comes back after a SIFS; each further station is polled with a
    BAR: h*BA + (h-1)*BAR + (2h-1)*SIFS.
    """
    if h < 1:
        raise ValueError(f"need at least one user, got h={h}")
    return h * prof.ba_us + (h - 1) * prof.bar_us + (2 * h - 1) * prof.sifs_us


def data_phase_us(b: float, prof: TimingProfile, mpdu_bits: float | None = None) -> float:
    """One preamble plus ``b`` data MPDUs on the longest stream."""
    if b <= 0:
        raise ValueError(f"need a positive batch, got b={b}")
    bits = prof.data_mpdu_bits if mpdu_bits is None else mpdu_bits
    return prof.plcp_us + b * bits / prof.phy_rate_mbps


def mumimo_timeline(h: int, b: float, prof: TimingProfile | None = None) -> float:
    """Total airtime A(h, b) of a multi-user downlink exchange, us.

    ``h`` stations served in parallel, the longest stream carrying ``b``
    segment MPDUs.  Includes sounding, data and acknowledgement phases.
    """
    prof = get_profile() if prof is None else prof
    return sounding_us(h, prof) + data_phase_us(b, prof) + ack_phase_us(h, prof)


def uplink_burst_us(n_acks: float, prof: TimingProfile | None = None) -> float:
    """Airtime of one station's TCP-ACK burst carrying ``n_acks`` frames.

    Preamble, n ACK MPDUs back to back, SIFS, block-ack.  ``n_acks`` may be
    fractional when it enters averaged rate expressions.
    """
    prof = get_profile() if prof is None else prof
    if n_acks <= 0:
        raise ValueError(f"need a positive ACK count, got {n_acks}")
    ack_bits = 8.0 * prof.ack_mpdu_bytes
    return prof.plcp_us + n_acks * ack_bits / prof.phy_rate_mbps + prof.sifs_us + prof.ba_us


def siso_exchange_us(
    frame_bytes: list[int] | tuple[int, ...],
    rate_mbps: float,
    prof: TimingProfile,
) -> float:
    """Airtime of a single-antenna aggregate: frames, SIFS, control ACK.

    ``frame_bytes`` are on-air MPDU sizes (framing already included).  A
    failed exchange occupies the channel for the same duration, so callers
    use this for both outcomes.
    """
    if not frame_bytes:
        raise ValueError("empty aggregate")
    airtime = prof.plcp_us + sum(8.0 * fb for fb in frame_bytes) / rate_mbps
    return airtime + prof.sifs_us + prof.mack_us


@dataclass(frozen=True)
class TimelineParams:
    """What the analytical model needs to know about the channel.

    ``a(h, b)`` is the downlink exchange airtime, ``t_up(n)`` the uplink
    burst airtime for n ACK frames, both in us.  ``mu`` is the contention
    rate of the exponential-backoff abstraction: mu = 2/(w0*slot), i.e. the
    mean backoff equals the mean of a uniform draw from the first window.
    """

    slot_us: float
    w0: int
    a: Callable[[int, float], float]
    t_up: Callable[[float], float]
    seg_bits: float = 8192.0
    phy_rate_mbps: float = 54.0

    @property
    def mu(self) -> float:
        return 2.0 / (self.w0 * self.slot_us)

    @classmethod
    def from_profile(cls, prof: TimingProfile | None = None) -> "TimelineParams":
        prof = get_profile() if prof is None else prof
        return cls(
            slot_us=prof.slot_us,
            w0=prof.cw_min,
            a=lambda h, b, _p=prof: mumimo_timeline(h, b, _p),
            t_up=lambda n, _p=prof: uplink_burst_us(n, _p),
            seg_bits=8.0 * prof.seg_bytes,
            phy_rate_mbps=prof.phy_rate_mbps,
        )
