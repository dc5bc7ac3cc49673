"""Canonical packet-event data model and the CSV log format.

Shared by the simulator (writer), the estimators (readers), and any external
capture converter.  Two log kinds exist:

* **AP log** — what a passive access point can observe on its own radio: its
  transmissions, receptions, sensed-busy intervals it could not decode, and
  overheard frames from neighbouring networks.  One row per on-air
  transmission event (aggregation is carried in ``frames_in_txop``, not as
  per-MPDU rows).
* **Ground truth** — per-frame queueing timeline emitted by the simulator
  only.  Kept in a separate file so estimator code structurally cannot touch
  station-side timestamps.

Timestamps are integer microseconds; writers must round sub-µs event times
half-up before emitting.  All durations are in microseconds and PHY rates in
Mb/s throughout.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence, Union

from .profiles import MCS_RATES_MBPS

__all__ = [
    "AP_LOG_COLUMNS",
    "GROUND_TRUTH_COLUMNS",
    "ApObservables",
    "Direction",
    "GroundTruthRecord",
    "LogKind",
    "MissingColumn",
    "NonMonotonicTimestamp",
    "PacketRecord",
    "ParsedLog",
    "ZeroWindow",
    "accumulate_observables",
    "parse_log",
    "write_log",
]


class Direction(str, Enum):
    """Which way a frame crossed the AP's radio."""

    DOWNLINK = "downlink"  # transmitted by the AP
    UPLINK = "uplink"  # received (or sensed) by the AP from an associated STA
    OBSS = "obss"  # overheard from a neighbouring BSS


class LogKind(str, Enum):
    AP_LOG = "ap_log"
    GROUND_TRUTH = "ground_truth"


class MissingColumn(ValueError):
    """Header row does not match the documented column set."""


class NonMonotonicTimestamp(ValueError):
    """ts_start decreased between consecutive rows (hard error)."""


class ZeroWindow(ValueError):
    """Window length must be a positive number of microseconds."""


AP_LOG_COLUMNS = (
    "ts_start",
    "ts_end",
    "direction",
    "src_addr",
    "dst_addr",
    "src_net",
    "dst_net",
    "l4_payload_bytes",
    "frame_bytes",
    "phy_rate",
    "retry_flag",
    "success",
    "frames_in_txop",
)

GROUND_TRUTH_COLUMNS = (
    "sta",
    "t_enq",
    "t_head",
    "ts_start",
    "ts_end",
    "flow",
    "n_retx",
    "defer_us",
)


@dataclass(frozen=True)
class PacketRecord:
    """One on-air transmission event as seen from the AP."""

    ts_start: int
    ts_end: int
    direction: Direction
    src_addr: str
    dst_addr: str
    src_net: str = ""  # empty for frames with no readable network layer
    dst_net: str = ""
    l4_payload_bytes: int = 0
    frame_bytes: int = 1
    phy_rate: float = 54.0
    retry_flag: bool = False
    success: bool = True
    frames_in_txop: int = 1

    @property
    def duration_us(self) -> int:
        return self.ts_end - self.ts_start

    def validate(self) -> None:
        if self.ts_end <= self.ts_start:
            raise ValueError(f"ts_end {self.ts_end} <= ts_start {self.ts_start}")
        if self.l4_payload_bytes < 0:
            raise ValueError("negative l4_payload_bytes")
        if self.l4_payload_bytes > self.frame_bytes:
            raise ValueError(
                f"l4_payload_bytes {self.l4_payload_bytes} > frame_bytes {self.frame_bytes}"
            )
        if self.frame_bytes <= 0:
            raise ValueError("frame_bytes must be positive")
        if self.phy_rate <= 0:
            raise ValueError("phy_rate must be positive")
        if self.frames_in_txop <= 0:
            raise ValueError("frames_in_txop must be positive")


@dataclass(frozen=True)
class GroundTruthRecord:
    """Queueing timeline of one station uplink frame (simulator only)."""

    sta: str
    t_enq: int
    t_head: int
    ts_start: int
    ts_end: int
    flow: str
    n_retx: int = 0
    defer_us: float = 0.0

    def validate(self) -> None:
        if not (self.t_enq <= self.t_head <= self.ts_start <= self.ts_end):
            raise ValueError(
                "timeline must satisfy t_enq <= t_head <= ts_start <= ts_end, got "
                f"{self.t_enq}, {self.t_head}, {self.ts_start}, {self.ts_end}"
            )
        if self.n_retx < 0:
            raise ValueError("negative n_retx")
        if self.defer_us < 0:
            raise ValueError("negative defer_us")


Record = Union[PacketRecord, GroundTruthRecord]


class ParsedLog(list):
    """Record list plus the rejected rows as ``(line_number, reason)``."""

    def __init__(self, records: Iterable[Record] = (), malformed=()) -> None:
        super().__init__(records)
        self.malformed: list[tuple[int, str]] = list(malformed)


def _parse_bool(text: str, col: str) -> bool:
    if text == "1":
        return True
    if text == "0":
        return False
    raise ValueError(f"{col} must be 0 or 1, got {text!r}")


def _packet_from_row(row: dict[str, str]) -> PacketRecord:
    rec = PacketRecord(
        ts_start=int(row["ts_start"]),
        ts_end=int(row["ts_end"]),
        direction=Direction(row["direction"]),
        src_addr=row["src_addr"],
        dst_addr=row["dst_addr"],
        src_net=row["src_net"],
        dst_net=row["dst_net"],
        l4_payload_bytes=int(row["l4_payload_bytes"]),
        frame_bytes=int(row["frame_bytes"]),
        phy_rate=float(row["phy_rate"]),
        retry_flag=_parse_bool(row["retry_flag"], "retry_flag"),
        success=_parse_bool(row["success"], "success"),
        frames_in_txop=int(row["frames_in_txop"]),
    )
    rec.validate()
    return rec


def _ground_truth_from_row(row: dict[str, str]) -> GroundTruthRecord:
    rec = GroundTruthRecord(
        sta=row["sta"],
        t_enq=int(row["t_enq"]),
        t_head=int(row["t_head"]),
        ts_start=int(row["ts_start"]),
        ts_end=int(row["ts_end"]),
        flow=row["flow"],
        n_retx=int(row["n_retx"]),
        defer_us=float(row["defer_us"]),
    )
    rec.validate()
    return rec


def parse_log(path, kind: Union[LogKind, str] = LogKind.AP_LOG) -> ParsedLog:
    """Read a CSV log; malformed rows are collected, ordering errors are fatal.

    Returns a :class:`ParsedLog` in non-decreasing ``ts_start`` order (the
    order the file must already be in).  Rows that fail field parsing or a
    record invariant land in ``result.malformed`` with their 1-based line
    number; a header mismatch raises :class:`MissingColumn` and an out-of-order
    ``ts_start`` raises :class:`NonMonotonicTimestamp`.
    """
    kind = LogKind(kind)
    expected = AP_LOG_COLUMNS if kind is LogKind.AP_LOG else GROUND_TRUTH_COLUMNS
    builder = _packet_from_row if kind is LogKind.AP_LOG else _ground_truth_from_row

    out = ParsedLog()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumn(f"{path}: empty file, expected header {','.join(expected)}")
        if tuple(header) != expected:
            missing = set(expected) - set(header)
            raise MissingColumn(
                f"{path}: bad header; missing {sorted(missing) or 'none'}, got {header}"
            )
        last_start = None
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                out.malformed.append((line_no, f"expected {len(expected)} fields, got {len(row)}"))
                continue
            try:
                rec = builder(dict(zip(expected, row)))
            except (ValueError, KeyError) as exc:
                out.malformed.append((line_no, str(exc)))
                continue
            if last_start is not None and rec.ts_start < last_start:
                raise NonMonotonicTimestamp(
                    f"{path}:{line_no}: ts_start {rec.ts_start} < previous {last_start}"
                )
            last_start = rec.ts_start
            out.append(rec)
    return out


def _format_rate(rate: float) -> str:
    return format(rate, ".10g")


def _packet_row(r: PacketRecord) -> list[str]:
    return [
        str(r.ts_start),
        str(r.ts_end),
        r.direction.value,
        r.src_addr,
        r.dst_addr,
        r.src_net,
        r.dst_net,
        str(r.l4_payload_bytes),
        str(r.frame_bytes),
        _format_rate(r.phy_rate),
        "1" if r.retry_flag else "0",
        "1" if r.success else "0",
        str(r.frames_in_txop),
    ]


def _ground_truth_row(r: GroundTruthRecord) -> list[str]:
    return [
        r.sta,
        str(r.t_enq),
        str(r.t_head),
        str(r.ts_start),
        str(r.ts_end),
        r.flow,
        str(r.n_retx),
        _format_rate(r.defer_us),
    ]


def write_log(records: Sequence[Record], path) -> None:
    """Write records in the canonical CSV form (round-trips with parse_log)."""
    if records and isinstance(records[0], GroundTruthRecord):
        header, to_row = GROUND_TRUTH_COLUMNS, _ground_truth_row
    else:
        header, to_row = AP_LOG_COLUMNS, _packet_row
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for rec in records:
        writer.writerow(to_row(rec))
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


# ---------------------------------------------------------------------------
# Windowed airtime accounting
# ---------------------------------------------------------------------------


@dataclass
class StaStats:
    """Per-station aggregates inside one observation window."""

    mean_mcs: float = 0.0
    mean_phy_rate: float = 0.0
    dl_retx_rate: float = 0.0
    rssi_proxy: float = 0.0  # rate-derived stand-in: normalized MCS index


@dataclass
class ApObservables:
    """Airtime budget of one observation window, AP point of view."""

    window_start_us: int
    window_us: int
    airtime_tx_us: float = 0.0
    airtime_rx_us: float = 0.0
    defer_us: float = 0.0
    idle_us: float = 0.0
    obss_airtime_us: float = 0.0
    per_sta: dict = field(default_factory=dict)


def _nearest_mcs_index(rate: float) -> int:
    return min(range(len(MCS_RATES_MBPS)), key=lambda i: abs(MCS_RATES_MBPS[i] - rate))


def accumulate_observables(
    records: Sequence[PacketRecord], window_us: int
) -> list[ApObservables]:
    """Split AP-log airtime into fixed windows of ``window_us``.

    Categories: the AP's own transmissions (``tx``), decodable in-BSS
    receptions (``rx``), sensed-busy time it could not use (``defer``:
    unsuccessful uplink intervals), overheard foreign frames (``obss``), and
    the remainder (``idle``).  A record crossing a window boundary contributes
    the clipped overlap to each window it intersects.  Windows are anchored at
    the multiple of ``window_us`` at or below the first record.
    """
    if window_us <= 0:
        raise ZeroWindow(f"window_us must be positive, got {window_us}")
    if not records:
        return []

    anchor = (records[0].ts_start // window_us) * window_us
    end = max(r.ts_end for r in records)
    n_windows = max(1, -(-(end - anchor) // window_us))
    wins = [
        ApObservables(window_start_us=anchor + i * window_us, window_us=window_us)
        for i in range(n_windows)
    ]
    # (rate sum, mcs index sum, record count, dl count, dl retry count) per sta
    sta_acc: list[dict[str, list[float]]] = [dict() for _ in range(n_windows)]

    for rec in records:
        lo = max(0, (rec.ts_start - anchor) // window_us)
        hi = min(n_windows - 1, (rec.ts_end - 1 - anchor) // window_us)
        for i in range(lo, hi + 1):
            w = wins[i]
            clip = min(rec.ts_end, w.window_start_us + window_us) - max(
                rec.ts_start, w.window_start_us
            )
            if clip <= 0:
                continue
            if rec.direction is Direction.DOWNLINK:
                w.airtime_tx_us += clip
            elif rec.direction is Direction.OBSS:
                w.obss_airtime_us += clip
            elif rec.success:
                w.airtime_rx_us += clip
            else:
                w.defer_us += clip

            if rec.direction is Direction.OBSS:
                continue
            sta = rec.dst_addr if rec.direction is Direction.DOWNLINK else rec.src_addr
            acc = sta_acc[i].setdefault(sta, [0.0, 0.0, 0.0, 0.0, 0.0])
            acc[0] += rec.phy_rate
            acc[1] += _nearest_mcs_index(rec.phy_rate)
            acc[2] += 1
            if rec.direction is Direction.DOWNLINK:
                acc[3] += 1
                if rec.retry_flag:
                    acc[4] += 1

    top = len(MCS_RATES_MBPS) - 1
    for w, accs in zip(wins, sta_acc):
        busy = w.airtime_tx_us + w.airtime_rx_us + w.defer_us + w.obss_airtime_us
        w.idle_us = max(0.0, window_us - busy)
        for sta, (rate_sum, mcs_sum, n, n_dl, n_retry) in accs.items():
            mean_mcs = mcs_sum / n
            w.per_sta[sta] = StaStats(
                mean_mcs=mean_mcs,
                mean_phy_rate=rate_sum / n,
                dl_retx_rate=(n_retry / n_dl) if n_dl else 0.0,
                rssi_proxy=mean_mcs / top,
            )
    return wins
