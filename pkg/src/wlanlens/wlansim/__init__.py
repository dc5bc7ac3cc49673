"""Seeded discrete-event 802.11 simulator and shared airtime arithmetic."""

from .timeline import (
    TimelineParams,
    ack_phase_us,
    data_phase_us,
    mumimo_timeline,
    siso_exchange_us,
    sounding_us,
    uplink_burst_us,
)

__all__ = [
    "TimelineParams",
    "ack_phase_us",
    "data_phase_us",
    "mumimo_timeline",
    "siso_exchange_us",
    "sounding_us",
    "uplink_burst_us",
]
