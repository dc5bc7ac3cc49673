"""Flow reconstruction and layer-4 handshake pairing from AP-side records.

All of this works on what a passive AP can see: directions, network
addresses, payload sizes, and timestamps.  No TCP headers are read — a
direction is called an ACK path purely because (almost) all of its frames
carry header-sized payloads.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

from .trace import Direction, PacketRecord

__all__ = [
    "ACK_SIZE_THRESHOLD",
    "AmbiguousFlow",
    "FlowKey",
    "FlowRecords",
    "Handshake",
    "HsClass",
    "PairingResult",
    "PathRole",
    "classify_reverse_path",
    "infer_flows",
    "pair_handshakes",
]

# "A TCP ACK is headers only"; the margin absorbs options and timestamps.
ACK_SIZE_THRESHOLD = 100
ACK_MAJORITY = 0.90


class AmbiguousFlow(ValueError):
    """Neither or both directions look like a pure-ACK path."""


class PathRole(str, Enum):
    SEGMENT = "SegmentPath"
    ACK = "AckPath"


class HsClass(str, Enum):
    IMMEDIATE = "Immediate"
    QUEUED = "Queued"


@dataclass(frozen=True, order=True)
class FlowKey:
    """Direction-normalized flow identity: both directions map to one key."""

    sta_net: str
    remote_net: str
    sta_id: str


@dataclass
class FlowRecords:
    """A flow's AP-side records split by direction, each in time order."""

    downlink: list[PacketRecord] = field(default_factory=list)
    uplink: list[PacketRecord] = field(default_factory=list)

    @property
    def snoopable(self) -> bool:
        """True when the AP saw traffic both ways (sizes can identify roles)."""
        return bool(self.downlink) and bool(self.uplink)


@dataclass(frozen=True)
class Handshake:
    """One segment-burst → TCP-ACK exchange, AP clock."""

    flow: FlowKey
    t_tx_end_seg: int
    t_rx_start_ack: int
    t_rx_end_ack: int
    # (t_rx_start, t_rx_end, flow of the intermediate, retry_flag)
    intermediates: tuple = ()
    ack_retry_flag: bool = False

    @property
    def hs_class(self) -> HsClass:
        return HsClass.IMMEDIATE if not self.intermediates else HsClass.QUEUED


@dataclass
class PairingResult:
    """Paired handshakes plus the pairing casualty counters."""

    handshakes: list[Handshake] = field(default_factory=list)
    n_dropped: int = 0  # overlapped an earlier handshake
    n_orphans: int = 0  # ACK with no preceding segment transmission

    def __iter__(self):
        return iter(self.handshakes)

    def __len__(self):
        return len(self.handshakes)


def infer_flows(records) -> dict[FlowKey, FlowRecords]:
    """Group records into direction-normalized station↔remote flows.

    OBSS records and frames without readable network addresses are skipped.
    A flow with one-way traffic is still returned (``snoopable`` is False);
    downstream role classification needs both directions.
    """
    flows: dict[FlowKey, FlowRecords] = {}
    for rec in records:
        if rec.direction is Direction.OBSS:
            continue
        if not rec.src_net or not rec.dst_net:
            continue
        if rec.direction is Direction.DOWNLINK:
            key = FlowKey(sta_net=rec.dst_net, remote_net=rec.src_net, sta_id=rec.dst_addr)
            flows.setdefault(key, FlowRecords()).downlink.append(rec)
        else:
            key = FlowKey(sta_net=rec.src_net, remote_net=rec.dst_net, sta_id=rec.src_addr)
            flows.setdefault(key, FlowRecords()).uplink.append(rec)
    for fr in flows.values():
        fr.downlink.sort(key=lambda r: r.ts_start)
        fr.uplink.sort(key=lambda r: r.ts_start)
    return flows


def _is_ack_path(records, threshold: int) -> bool:
    small = sum(1 for r in records if r.l4_payload_bytes <= threshold)
    return small >= ACK_MAJORITY * len(records)


def classify_reverse_path(
    flow: FlowRecords, ack_size_threshold: int = ACK_SIZE_THRESHOLD
) -> dict[Direction, PathRole]:
    """Decide which direction carries segments and which carries TCP ACKs.

    A direction is the ACK path when at least 90% of its frames hold no more
    than ``ack_size_threshold`` layer-4 bytes; exactly one direction must
    qualify.
    """
    if not flow.snoopable:
        raise AmbiguousFlow("flow has traffic in only one direction")
    dl_ack = _is_ack_path(flow.downlink, ack_size_threshold)
    ul_ack = _is_ack_path(flow.uplink, ack_size_threshold)
    if dl_ack == ul_ack:
        kind = "both" if dl_ack else "neither"
        raise AmbiguousFlow(f"{kind} directions look like pure-ACK paths")
    if ul_ack:
        return {Direction.DOWNLINK: PathRole.SEGMENT, Direction.UPLINK: PathRole.ACK}
    return {Direction.DOWNLINK: PathRole.ACK, Direction.UPLINK: PathRole.SEGMENT}


def _station_uplink_pool(
    flows: Mapping[FlowKey, FlowRecords], sta_id: str
) -> list[tuple[PacketRecord, FlowKey]]:
    pool = []
    for key, fr in flows.items():
        if key.sta_id != sta_id:
            continue
        for rec in fr.uplink:
            if rec.success:
                pool.append((rec, key))
    pool.sort(key=lambda item: item[0].ts_start)
    return pool


def pair_handshakes(
    flows: Mapping[FlowKey, FlowRecords],
    key: FlowKey,
    ack_size_threshold: int = ACK_SIZE_THRESHOLD,
) -> PairingResult:
    """Pair each received TCP ACK of ``key`` with the segment burst it answers.

    The segment timestamp is the end of the latest downlink transmission of
    the flow before the ACK's reception start (with ACK thinning, one ACK
    answers several segments; the last burst end is the enqueue proxy).  Any
    other successful uplink reception from the same station lying strictly
    inside (t_tx_end_seg, t_rx_start_ack) is recorded as an intermediate
    transmission, tagged with its own flow.  A handshake whose segment end
    precedes the previous handshake's ACK end would overlap it and is dropped.
    """
    flow = flows[key]
    roles = classify_reverse_path(flow, ack_size_threshold)
    if roles[Direction.UPLINK] is not PathRole.ACK:
        raise AmbiguousFlow("handshake pairing expects the uplink to be the ACK path")

    seg_ends = [r.ts_end for r in flow.downlink]
    acks = [r for r in flow.uplink if r.success]
    pool = _station_uplink_pool(flows, key.sta_id)

    result = PairingResult()
    last_ack_end = None
    for ack in acks:
        i = bisect.bisect_left(seg_ends, ack.ts_start)
        if i == 0:
            result.n_orphans += 1
            continue
        t_seg = seg_ends[i - 1]
        if last_ack_end is not None and t_seg < last_ack_end:
            result.n_dropped += 1
            continue
        intermediates = tuple(
            (r.ts_start, r.ts_end, k, r.retry_flag)
            for r, k in pool
            if r.ts_start > t_seg and r.ts_end < ack.ts_start and r is not ack
        )
        result.handshakes.append(
            Handshake(
                flow=key,
                t_tx_end_seg=t_seg,
                t_rx_start_ack=ack.ts_start,
                t_rx_end_ack=ack.ts_end,
                intermediates=intermediates,
                ack_retry_flag=ack.retry_flag,
            )
        )
        last_ack_end = ack.ts_end
    return result
