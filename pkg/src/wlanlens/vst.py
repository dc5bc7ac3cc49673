"""Virtual speed test: closed-network TCP throughput prediction from AP logs.

The download path is modeled as a closed queueing network in which at most
W_m TCP segments circulate through four stages: the AP's downlink queue
(forward), the backbone, the station's TCP-ACK queue (reverse), and the
backbone again.  For realistic window sizes the throughput tends to
``1/S_max`` — the reciprocal of the slowest stage's mean service time — so
estimating a speed test reduces to estimating per-stage mean service times
from passively observed packets.

A speed test saturates the link, so per-stage service times must be priced
at the aggregation level a saturated sender would use, not at whatever level
the observed (often window-limited) traffic happened to use.  The pipeline
therefore fits a linear airtime model per link direction from observed
transmissions and extrapolates it to the hypothetical test's frame counts.

Everything here consumes AP-side records and observables only; nothing reads
station-side state.
"""

from __future__ import annotations

import dataclasses
import math
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .flowsense import (
    AmbiguousFlow,
    Direction,
    FlowKey,
    Handshake,
    HsClass,
    PathRole,
    classify_reverse_path,
    infer_flows,
    pair_handshakes,
)
from .trace import PacketRecord

__all__ = [
    "AllZero",
    "GAP_THRESHOLD_US",
    "InvalidParam",
    "MIN_BUSY_SAMPLES",
    "NoHandshakes",
    "ServiceTimes",
    "SpeedEstimate",
    "TxopFit",
    "VstReport",
    "ZeroServiceTime",
    "busy_cycle_samples",
    "compute_service_times",
    "compute_wm_star",
    "estimate_access_from_trace",
    "estimate_d_access",
    "estimate_from_log",
    "estimate_throughput",
    "estimate_u_access",
    "estimate_v_inflation",
    "fit_txops",
    "synthesize_tx_time",
]

# Service gaps longer than this are idle periods, not contention.
GAP_THRESHOLD_US = 50_000

# Parallelism of the speed test whose reading the estimator predicts.  The
# common client opens this many simultaneous connections, which is what
# squeezes closed-loop background down to a per-flow share.
TEST_PARALLEL_FLOWS = 10


class NoHandshakes(ValueError):
    """Estimator needs at least one paired handshake."""


class InvalidParam(ValueError):
    """Negative duration or malformed estimator parameter."""


class ZeroServiceTime(ValueError):
    """Throughput needs positive service times on both queues."""


class AllZero(ValueError):
    """W_m* is undefined when every stage service time is zero."""


@dataclass(frozen=True)
class ServiceTimes:
    """Mean per-stage service times (µs) of the virtual end-point network.

    Naming is download-oriented: the forward queue is the AP downlink
    (``d_access + d_tx + v_inflation``), the reverse queue is the station
    uplink (``u_access + u_tx``).  ``s_vf``/``s_vr`` hold the values after
    the ACK-thinning stretch; the raw components always compose the
    pre-stretch service times.
    """

    d_access: float
    d_tx: float
    u_access: float
    u_tx: float
    v_inflation: float
    s_vf: float
    s_vr: float
    f_ap: float = 1.0
    f_sta: float = 1.0
    mean_segment_bits: float = 8192.0
    thinning_n: int = 1
    case: str = "download"
    inflated: bool = False

    def as_dict(self) -> dict:
        return {
            "d_access_us": self.d_access,
            "d_tx_us": self.d_tx,
            "u_access_us": self.u_access,
            "u_tx_us": self.u_tx,
            "v_inflation_us": self.v_inflation,
            "s_vf_us": self.s_vf,
            "s_vr_us": self.s_vr,
            "f_ap": self.f_ap,
            "f_sta": self.f_sta,
            "mean_segment_bits": self.mean_segment_bits,
            "thinning_n": self.thinning_n,
            "case": self.case,
            "inflated": self.inflated,
        }


@dataclass(frozen=True)
class SpeedEstimate:
    """Predicted speed-test outcome, Mb/s."""

    theta_dl_mbps: float
    theta_ul_mbps: float
    wm_star: float
    sample_count: int = 0

    def as_dict(self) -> dict:
        return {
            "theta_dl_mbps": self.theta_dl_mbps,
            "theta_ul_mbps": self.theta_ul_mbps,
            "wm_star": self.wm_star,
            "sample_count": self.sample_count,
        }


# ---------------------------------------------------------------------------
# Airtime model fitted from observed transmissions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TxopFit:
    """Linear airtime model of one link direction.

    An n-frame transmission costs a fixed per-exchange overhead (preamble,
    interframe spaces, acknowledgement — and for beamformed downlink
    transmissions, sounding and the polled-ack phase) plus the payload
    serialization time at the PHY rate.  Both pieces are learned from
    observed transmissions grouped per channel access.
    """

    overhead_us: float
    phy_rate_mbps: float
    frame_air_bytes: float
    max_frames: int
    n_txops: int

    def duration(self, frames: float, frame_air_bytes: float | None = None) -> float:
        """Predicted airtime of a ``frames``-frame transmission (µs)."""
        per = self.frame_air_bytes if frame_air_bytes is None else frame_air_bytes
        return self.overhead_us + frames * 8.0 * per / self.phy_rate_mbps


def fit_txops(records: Iterable[PacketRecord]) -> TxopFit:
    """Group records by transmission start and fit the airtime model.

    Records that share ``ts_start`` belong to one channel access (multiple
    flows, and under multi-user transmission multiple stations, are served
    inside one access).  The per-access overhead is the observed duration in
    excess of this sender's own payload serialization time.
    """
    groups: dict[int, list[PacketRecord]] = {}
    for rec in records:
        groups.setdefault(rec.ts_start, []).append(rec)
    if not groups:
        raise InvalidParam("cannot fit an airtime model from no records")
    overheads: list[float] = []
    tot_frames = 0
    tot_bytes = 0.0
    rate = 0.0
    max_frames = 0
    for recs in groups.values():
        dur = recs[0].ts_end - recs[0].ts_start
        air_bytes = sum(r.frame_bytes for r in recs)
        frames = sum(r.frames_in_txop for r in recs)
        r = sum(rec.phy_rate for rec in recs) / len(recs)
        overheads.append(dur - 8.0 * air_bytes / r)
        tot_frames += frames
        tot_bytes += air_bytes
        rate += r
        max_frames = max(max_frames, frames)
    n = len(groups)
    return TxopFit(
        overhead_us=max(0.0, sum(overheads) / n),
        phy_rate_mbps=rate / n,
        frame_air_bytes=tot_bytes / max(1, tot_frames),
        max_frames=max_frames,
        n_txops=n,
    )


# ---------------------------------------------------------------------------
# Component estimators
# ---------------------------------------------------------------------------


def _u_access_intervals(handshakes: Sequence[Handshake]) -> list[tuple[float, float]]:
    """(wait_start, tx_start) interval per station channel access."""
    ivs: list[tuple[float, float]] = []
    for hs in handshakes:
        if hs.hs_class is HsClass.IMMEDIATE:
            ivs.append((hs.t_tx_end_seg, hs.t_rx_start_ack))
            continue
        prev_end = hs.t_tx_end_seg
        for t_start, t_end, _flow, _retry in hs.intermediates:
            ivs.append((prev_end, t_start))
            prev_end = t_end
        ivs.append((prev_end, hs.t_rx_start_ack))
    return ivs


def estimate_u_access(handshakes: Sequence[Handshake]) -> tuple[float, list[float]]:
    """Station uplink access delay from segment→ACK handshakes.

    An Immediate handshake is one access: ACK start minus segment end.  A
    Queued handshake yields one sample per backlogged transmission: the gap
    from each predecessor's reception end to the next reception start, with
    the first anchored at the segment end, plus the final gap to the ACK.
    """
    if not handshakes:
        raise NoHandshakes("u_access needs at least one handshake")
    samples = [b - a for a, b in _u_access_intervals(handshakes)]
    return sum(samples) / len(samples), samples


def _overlap_total(intervals: Sequence[tuple[float, float]], lo: float, hi: float) -> float:
    """Total coverage of sorted, non-overlapping ``intervals`` within [lo, hi]."""
    busy = 0.0
    i = bisect_left(intervals, (lo, -math.inf)) - 1
    i = max(0, i)
    while i < len(intervals):
        a, b = intervals[i]
        if a >= hi:
            break
        if b > lo:
            busy += min(b, hi) - max(a, lo)
        i += 1
    return busy


def _merge_intervals(spans: list[tuple[float, float]]) -> list[tuple[float, float]]:
    spans.sort()
    merged: list[tuple[float, float]] = []
    for a, b in spans:
        if merged and a <= merged[-1][1]:
            if b > merged[-1][1]:
                merged[-1] = (merged[-1][0], b)
        else:
            merged.append((a, b))
    return merged


def _other_dl_overlap(others: Sequence[PacketRecord], lo: int, hi: int) -> float:
    """Total airtime of ``others`` records clipped to [lo, hi]."""
    busy = 0.0
    for rec in others:
        if rec.ts_end <= lo:
            continue
        if rec.ts_start >= hi:
            break
        busy += min(rec.ts_end, hi) - max(rec.ts_start, lo)
    return busy


def estimate_d_access(
    records: Iterable[PacketRecord],
    target_sta: str,
    gap_threshold_us: int = GAP_THRESHOLD_US,
) -> tuple[float, list[float]]:
    """AP downlink access delay toward ``target_sta``, from the log alone.

    The access delay runs until a *successful* transmission, and any
    preceding target-bound attempt — successful or not — closes the wait
    before it: the retry backoff after a collision is access, while the
    collision's own airtime is priced by the failure odds, not here.  Time
    the AP spent serving other stations inside the gap is AP service (V),
    not access, and the target's own uplink airtime is reverse-path service;
    both are subtracted.  Gaps beyond ``gap_threshold_us`` are idle periods
    and are skipped.  This inter-frame approximation cannot tell a
    queue-idle wait from contention; when the sender's own contention-start
    events are available, `estimate_access_from_trace` is the better
    estimator.
    """
    own = []
    others = []
    for rec in records:
        if rec.direction is Direction.DOWNLINK:
            if rec.dst_addr == target_sta:
                own.append(rec)
            else:
                others.append(rec)
        elif rec.direction is Direction.UPLINK and rec.src_addr == target_sta:
            others.append(rec)
    own.sort(key=lambda r: r.ts_start)
    others.sort(key=lambda r: r.ts_start)

    samples: list[float] = []
    seen = set()
    for prev, cur in zip(own, own[1:]):
        if not cur.success:
            continue
        if cur.ts_start in seen:  # several flows served in one access
            continue
        seen.add(cur.ts_start)
        gap = cur.ts_start - prev.ts_end
        if gap < 0 or gap > gap_threshold_us:
            continue
        busy = _other_dl_overlap(others, prev.ts_end, cur.ts_start)
        samples.append(max(0.0, gap - busy))
    mean = sum(samples) / len(samples) if samples else 0.0
    return mean, samples


def estimate_access_from_trace(
    contend_trace: Sequence[tuple[float, float, float, tuple[tuple[str, bool], ...]]],
    target_sta: str,
    busy_spans: Sequence[tuple[float, float]] = (),
) -> tuple[float, list[float], float]:
    """Access delay and foreign-service share from AP contention events.

    Every trace row carries when the AP began pursuing an access and when it
    transmitted; the pursuit of a successful target transmission spans the
    contention, the deferrals and any failed attempts of its retries.  Time
    covered by ``busy_spans`` (transmissions whose airtime the caller prices
    separately, e.g. foreign downlink service or the target's own uplink
    bursts) is removed from each sample.  Also returns ``r_other``: the
    fraction of wall time the AP's own transmitter spent serving other
    stations — airtime only, since foreign contention does not occupy the
    channel — which prices the forward-queue inflation V under load.
    """
    samples: list[float] = []
    other_air = 0.0
    for t_contend, ts_start, ts_end, served in contend_trace:
        ok_target = any(name == target_sta and ok for name, ok in served)
        has_target = any(name == target_sta for name, _ok in served)
        if ok_target:
            pursuit = ts_start - t_contend
            pursuit -= _overlap_total(busy_spans, t_contend, ts_start)
            samples.append(max(0.0, pursuit))
        elif not has_target:
            other_air += ts_end - ts_start
    if not contend_trace:
        return 0.0, [], 0.0
    span = contend_trace[-1][2] - contend_trace[0][0]
    r_other = min(0.9, other_air / span) if span > 0 else 0.0
    mean = sum(samples) / len(samples) if samples else 0.0
    return mean, samples, r_other


def estimate_v_inflation(records: Iterable[PacketRecord], target_sta: str) -> float:
    """Mean AP airtime spent on other stations per target service interval."""
    own = []
    others = []
    for rec in records:
        if rec.direction is not Direction.DOWNLINK:
            continue
        (own if rec.dst_addr == target_sta else others).append(rec)
    own.sort(key=lambda r: r.ts_start)
    others.sort(key=lambda r: r.ts_start)

    samples = []
    for prev, cur in zip(own, own[1:]):
        if cur.ts_start - prev.ts_end > GAP_THRESHOLD_US:
            continue
        samples.append(_other_dl_overlap(others, prev.ts_end, cur.ts_start))
    return sum(samples) / len(samples) if samples else 0.0


def synthesize_tx_time(
    records: Sequence[PacketRecord], frames: float, frame_bytes: float
) -> float:
    """Predict the airtime of a ``frames``-frame transmission of ``frame_bytes``
    frames from observed transmissions of the same link direction.

    The fixed per-exchange overhead (preamble, IFS, MAC ACK) is the mean
    observed duration in excess of the payload serialization time; the
    prediction adds the serialization time of the hypothetical burst on the
    same mean PHY rate.
    """
    if not records:
        raise InvalidParam("cannot synthesize a transmission time from no records")
    overhead = 0.0
    rate = 0.0
    for rec in records:
        overhead += (rec.ts_end - rec.ts_start) - 8.0 * rec.frame_bytes / rec.phy_rate
        rate += rec.phy_rate
    overhead /= len(records)
    rate /= len(records)
    return max(0.0, overhead) + frames * 8.0 * frame_bytes / rate


# ---------------------------------------------------------------------------
# Model composition
# ---------------------------------------------------------------------------


def compute_service_times(
    d_access: float,
    d_tx: float,
    u_access: float,
    u_tx: float,
    v_inflation: float = 0.0,
    f_ap: float = 1.0,
    f_sta: float = 1.0,
    thinning_n: int = 1,
    mean_segment_bits: float = 8192.0,
    case: str = "download",
) -> ServiceTimes:
    """Compose per-queue service times, applying the ACK-thinning stretch.

    With a thinning ratio n > 1 and single-frame transmissions on the segment
    path, the ACK is only generated after n separate transmissions, so both
    queues stretch by (n-1) times the segment path's base service time
    (download: the AP queue; upload: the station queue).  Multi-frame
    transmissions deliver the n segments in one access and need no stretch.
    """
    comps = dict(
        d_access=d_access, d_tx=d_tx, u_access=u_access, u_tx=u_tx, v_inflation=v_inflation
    )
    for name, value in comps.items():
        if value < 0 or not math.isfinite(value):
            raise InvalidParam(f"{name} must be a non-negative finite duration, got {value}")
    if thinning_n < 1:
        raise InvalidParam(f"thinning_n must be >= 1, got {thinning_n}")
    if f_ap < 1 or f_sta < 1:
        raise InvalidParam("frame counts must be >= 1")
    if case not in ("download", "upload"):
        raise InvalidParam(f"case must be download or upload, got {case!r}")

    s_vf = d_access + d_tx + v_inflation
    s_vr = u_access + u_tx
    seg_frames = f_ap if case == "download" else f_sta
    inflated = thinning_n > 1 and seg_frames <= 1.0 + 1e-9
    if inflated:
        stretch = (thinning_n - 1) * (s_vf if case == "download" else s_vr)
        s_vf += stretch
        s_vr += stretch
    return ServiceTimes(
        d_access=d_access,
        d_tx=d_tx,
        u_access=u_access,
        u_tx=u_tx,
        v_inflation=v_inflation,
        s_vf=s_vf,
        s_vr=s_vr,
        f_ap=f_ap,
        f_sta=f_sta,
        mean_segment_bits=mean_segment_bits,
        thinning_n=thinning_n,
        case=case,
        inflated=inflated,
    )


def compute_wm_star(s_bf: float, s_br: float, s_vf: float, s_vr: float) -> float:
    """Window size where the closed network's two throughput asymptotes cross.

    Equals (sum of stage service times) / (slowest stage), hence never above
    the number of stages (four), with equality only when all four are equal.
    """
    stages = (s_bf, s_br, s_vf, s_vr)
    if any(s < 0 for s in stages):
        raise InvalidParam("stage service times must be non-negative")
    s_max = max(stages)
    if s_max == 0:
        raise AllZero("all stage service times are zero")
    return sum(stages) / s_max


def estimate_throughput(service: ServiceTimes) -> SpeedEstimate:
    """Speed-test throughput from composed service times, Mb/s.

    The closed network runs at 1/max(s_vf, s_vr) cycles per µs; each cycle
    moves one forward transmission of F segments (times n under the thinning
    stretch, which shrank the circulating-job count by n).
    """
    if service.s_vf <= 0 or service.s_vr <= 0:
        raise ZeroServiceTime(
            f"both queue service times must be positive, got {service.s_vf}, {service.s_vr}"
        )
    mult = service.thinning_n if service.inflated else 1
    s_max = max(service.s_vf, service.s_vr)
    theta_dl = service.mean_segment_bits * service.f_ap * mult / s_max
    theta_ul = service.mean_segment_bits * service.f_sta * mult / s_max
    return SpeedEstimate(
        theta_dl_mbps=theta_dl,
        theta_ul_mbps=theta_ul,
        wm_star=compute_wm_star(0.0, 0.0, service.s_vf, service.s_vr),
    )


# ---------------------------------------------------------------------------
# End-to-end pipeline
# ---------------------------------------------------------------------------


@dataclass
class VstReport:
    """Everything the estimator learned about one station."""

    sta: str
    download: ServiceTimes
    upload: ServiceTimes
    estimate: SpeedEstimate
    n_handshakes: int
    n_flows: int
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "sta": self.sta,
            "download": self.download.as_dict(),
            "upload": self.upload.as_dict(),
            "estimate": self.estimate.as_dict(),
            "n_handshakes": self.n_handshakes,
            "n_flows": self.n_flows,
            "diagnostics": self.diagnostics,
        }


#: Minimum number of backlogged-cycle samples before the direct busy-period
#: measurement replaces the component composition.
MIN_BUSY_SAMPLES = 30


def busy_cycle_samples(
    contend_trace: Sequence[tuple[float, float, float, tuple[tuple[str, bool], ...]]],
    records: Iterable[PacketRecord],
    target_sta: str,
) -> list[tuple[float, float, float]]:
    """(cycle_us, frames, pursuit_us) per backlogged target service cycle.

    A cycle runs between consecutive successful target transmissions along an
    unbroken backlog chain: every pursuit in between began the instant the
    previous transmission ended, so the AP never sat on an empty queue and
    the elapsed time is pure saturated service — contention, deferrals to the
    returning ACK bursts, collision retries, foreign interleavings and the
    transmission itself.  These cycles sample the speed-test regime directly;
    everything that makes saturated service slower than idle-network service
    is inside the measurement.

    Continuity is judged on the access pursuit, not on which queue fed it:
    gating cycles on per-station refill evidence instead would throw away
    every fast multi-transmission drain of one ACK burst and keep only the
    slow refill-bounded cycles, biasing the mean upward.
    """
    frames_by_ts: dict[int, int] = {}
    for r in records:
        if r.direction is Direction.DOWNLINK and r.dst_addr == target_sta and r.success:
            frames_by_ts[r.ts_start] = frames_by_ts.get(r.ts_start, 0) + r.frames_in_txop
    samples: list[tuple[float, float, float]] = []
    prev_end: float | None = None
    anchor: float | None = None
    for t_c, ts, te, served in contend_trace:
        if prev_end is None or t_c > prev_end + 1.0:
            anchor = None  # queue sat idle: the chain is broken
        if any(name == target_sta and ok for name, ok in served):
            if anchor is not None:
                frames = frames_by_ts.get(int(round(ts)), 0)
                if frames > 0:
                    samples.append((te - anchor, float(frames), ts - t_c))
            anchor = te
        prev_end = te
    if len(samples) >= 4:
        cycles = sorted(s[0] for s in samples)
        cap = 20.0 * cycles[len(cycles) // 2]
        samples = [s for s in samples if s[0] <= cap]
    return samples


def _txop_retry_fraction(recs: Sequence[PacketRecord]) -> float:
    """Fraction of distinct transmissions that carried a retry flag."""
    by_txop: dict[int, bool] = {}
    for r in recs:
        by_txop[r.ts_start] = by_txop.get(r.ts_start, False) or r.retry_flag
    if not by_txop:
        return 0.0
    return sum(by_txop.values()) / len(by_txop)


def _snooped_download_flows(flows, sta: str):
    """Flow keys of ``sta`` whose uplink is a pure TCP-ACK path."""
    out = []
    for key, fr in flows.items():
        if key.sta_id != sta or not fr.snoopable:
            continue
        try:
            roles = classify_reverse_path(fr)
        except AmbiguousFlow:
            continue
        if roles[Direction.UPLINK] is PathRole.ACK:
            out.append(key)
    return out


def estimate_from_log(
    records: Sequence[PacketRecord],
    target_sta: str,
    thinning_n: int = 2,
    seg_bytes: int | None = None,
    gap_threshold_us: int = GAP_THRESHOLD_US,
    ap_batch_limit: int | None = None,
    sta_batch_limit: int | None = None,
    contend_trace: Sequence[tuple[float, float, float, tuple[tuple[str, bool], ...]]]
    | None = None,
    collision_floor: float = 1.0 / 16.0,
) -> VstReport:
    """Full passive pipeline: records → flows → handshakes → speed estimate.

    A speed test saturates both directions in turn, so transmissions are
    priced at saturation aggregation: ``ap_batch_limit`` frames per downlink
    access (the AP knows its own aggregation policy; when absent, the largest
    observed access stands in) and ``sta_batch_limit`` frames per station
    burst (negotiated per station at association time; same fallback).  The
    observed airtime model prices those hypothetical transmissions, and the
    access delays come from contention events when ``contend_trace`` is
    given, else from the inter-frame gap approximation.

    ``collision_floor`` is the per-transmission failure probability assumed
    for a saturated sender pair — two backoffs drawn from the minimum
    contention window land in the same slot with probability 1/W₀ — and the
    observed retry fraction overrides it when the log shows worse (hidden
    stations).  Pass 0 for deployments known to be collision-free.
    """
    flows = infer_flows(records)
    keys = _snooped_download_flows(flows, target_sta)
    if not keys:
        raise NoHandshakes(f"no snoopable download flow for {target_sta}")

    handshakes: list[Handshake] = []
    seg_records: list[PacketRecord] = []
    ack_records: list[PacketRecord] = []
    for key in keys:
        handshakes.extend(pair_handshakes(flows, key).handshakes)
        seg_records.extend(flows[key].downlink)
        ack_records.extend(r for r in flows[key].uplink if r.success)
    if not handshakes:
        raise NoHandshakes(f"no pairable handshakes for {target_sta}")
    handshakes.sort(key=lambda h: h.t_rx_start_ack)

    # airtime models per direction, from every transmission that involved the
    # target (window-limited traffic still reveals overhead and PHY rate)
    dl_to_target = [
        r
        for r in records
        if r.direction is Direction.DOWNLINK and r.dst_addr == target_sta and r.success
    ]
    ul_from_target = [
        r
        for r in records
        if r.direction is Direction.UPLINK and r.src_addr == target_sta and r.success
    ]
    dl_fit = fit_txops(dl_to_target)
    ul_fit = fit_txops(ul_from_target) if ul_from_target else None

    # The fitted downlink overhead prices whatever rode along in this log's
    # accesses — under multi-user grouping that includes other stations'
    # payloads, so it reflects group service, not one station's.  The upload
    # test's ACK return is a short transmission the AP sends for this station
    # alone, so it is priced from single-destination accesses when the log
    # contains any.
    dl_ts_dests: dict[int, set[str]] = {}
    for r in records:
        if r.direction is Direction.DOWNLINK:
            dl_ts_dests.setdefault(r.ts_start, set()).add(r.dst_addr)
    dl_solo = [r for r in dl_to_target if dl_ts_dests[r.ts_start] == {target_sta}]
    if len({r.ts_start for r in dl_solo}) >= 3:
        dl_return_fit = fit_txops(dl_solo)
    elif ul_fit is not None:
        # no single-destination access ever observed: a station burst is the
        # same preamble/response sequence mirrored, so borrow its overhead
        dl_return_fit = dataclasses.replace(dl_fit, overhead_us=ul_fit.overhead_us)
    else:
        dl_return_fit = dl_fit

    # --- raw components ----------------------------------------------------
    # Access samples must hold only time the estimator does not price
    # elsewhere: contention and the sender's own failed attempts.  All
    # foreign airtime — downlink service and other stations' uplink alike —
    # is priced once through the cycle's foreign share, so it is stripped
    # from the station-side samples; foreign downlink and the target's own
    # uplink bursts are stripped from the AP-side pursuits.
    all_dl_spans = _merge_intervals(
        [
            (float(r.ts_start), float(r.ts_end))
            for r in records
            if r.direction is Direction.DOWNLINK
        ]
    )
    target_ul_spans = [(float(r.ts_start), float(r.ts_end)) for r in ul_from_target]
    foreign_dl_spans = [
        (float(r.ts_start), float(r.ts_end))
        for r in records
        if r.direction is Direction.DOWNLINK and r.dst_addr != target_sta
    ]

    foreign_ul_spans = [
        (float(r.ts_start), float(r.ts_end))
        for r in records
        if r.direction is Direction.UPLINK and r.src_addr != target_sta
    ]
    strip_spans = _merge_intervals(all_dl_spans + foreign_ul_spans)
    wait_ivs = _u_access_intervals(handshakes)
    u_samples = [
        max(0.0, (b - a) - _overlap_total(strip_spans, a, b)) for a, b in wait_ivs
    ]
    if not u_samples:
        raise NoHandshakes("u_access needs at least one handshake")
    u_access = sum(u_samples) / len(u_samples)
    # Same waits with only downlink airtime removed: what remains is every
    # uplink-side cost the channel imposes — own contention plus deferral to
    # other stations' bursts and the blind-collision noise they bring.  The
    # upload test fights that same uplink field, so this wider wait is what
    # its access term transfers.
    u_up_samples = [
        max(0.0, (b - a) - _overlap_total(all_dl_spans, a, b)) for a, b in wait_ivs
    ]
    u_access_up = sum(u_up_samples) / len(u_up_samples)

    # Foreign load does not survive a speed test unchanged.  Open-loop
    # traffic (one-way flows: no returning ACK stream) keeps its airtime no
    # matter what else the channel carries; closed-loop traffic throttles
    # itself once the test's parallel flows occupy the queue, retaining
    # roughly a per-flow share against the test's parallelism.  Split the
    # observed foreign downlink airtime by flow class and squeeze the
    # closed-loop part accordingly.
    open_air = 0.0
    closed_air = 0.0
    n_closed_foreign = 0
    for key, fr in flows.items():
        if key.sta_id == target_sta:
            continue
        closed = bool(fr.downlink) and bool(fr.uplink)
        if closed:
            n_closed_foreign += 1
        for r in fr.downlink:
            if r.success:
                air = 8.0 * r.frame_bytes / r.phy_rate
                if closed:
                    closed_air += air
                else:
                    open_air += air
    if open_air + closed_air > 0:
        open_frac = open_air / (open_air + closed_air)
    else:
        open_frac = 1.0
    phi = n_closed_foreign / (n_closed_foreign + TEST_PARALLEL_FLOWS)
    squeeze = open_frac + phi * (1.0 - open_frac)

    if contend_trace:
        d_busy = _merge_intervals(foreign_dl_spans + target_ul_spans)
        d_access, d_samples, r_other = estimate_access_from_trace(
            contend_trace, target_sta, d_busy
        )
    else:
        d_access, d_samples = estimate_d_access(records, target_sta, gap_threshold_us)
        r_other = None

    # Saturated senders collide; the observed retry fraction per access gives
    # the per-transmission failure odds, floored at the same-slot probability
    # of a saturated pair drawing from the minimum contention window.
    q_dl = min(0.5, max(collision_floor, _txop_retry_fraction(dl_to_target)))
    q_ul = min(0.5, max(collision_floor, _txop_retry_fraction(ul_from_target)))

    seg_frames = sum(r.frames_in_txop for r in seg_records)
    mean_segment_bits = 8.0 * sum(r.l4_payload_bytes for r in seg_records) / max(1, seg_frames)
    seg_air_bytes = sum(r.frame_bytes for r in seg_records) / max(1, seg_frames)
    ack_air_bytes = (
        sum(r.frame_bytes for r in ack_records)
        / max(1, sum(r.frames_in_txop for r in ack_records))
        if ack_records
        else 66.0
    )

    # --- saturation aggregation levels --------------------------------------
    f_ap = float(ap_batch_limit) if ap_batch_limit else float(dl_fit.max_frames)
    sta_cap = (
        float(sta_batch_limit)
        if sta_batch_limit
        else float(ul_fit.max_frames if ul_fit else 1)
    )
    f_ap = max(1.0, f_ap)
    sta_cap = max(1.0, sta_cap)

    # --- download case -------------------------------------------------------
    # Preferred: measure saturated service directly.  When the log shows
    # enough backlogged cycles, their mean is the forward service time under
    # test conditions — deferrals, retries, MU sharing and foreign
    # interleavings included — and their residual beyond contention and the
    # fitted airtime gives the foreign-service share of a saturated cycle.
    busy = (
        busy_cycle_samples(contend_trace, records, target_sta) if contend_trace else []
    )
    v_share: float | None = None

    if len(busy) >= MIN_BUSY_SAMPLES:
        c_mean = sum(s[0] for s in busy) / len(busy)
        f_ap = sum(s[1] for s in busy) / len(busy)
        pursuit = sum(s[2] for s in busy) / len(busy)
        d_tx = dl_fit.duration(f_ap, seg_air_bytes)
        v_inflation = max(0.0, c_mean - pursuit - d_tx) * squeeze
        d_access_dl = max(0.0, min(pursuit, c_mean - d_tx))
        t_cycle_dl = d_access_dl + d_tx + v_inflation
        v_share = v_inflation / t_cycle_dl if t_cycle_dl > 0 else 0.0

        n_ack = max(1.0, math.ceil(f_ap / thinning_n))
        ack_burst = min(n_ack, sta_cap)
        n_bursts = math.ceil(n_ack / ack_burst)
        u_tx_one = (
            ul_fit.duration(ack_burst, ack_air_bytes)
            if ul_fit
            else synthesize_tx_time(ack_records, ack_burst, ack_air_bytes)
        )
        # sustained chains prove the ACK return kept pace, so the reverse
        # stage shares the measured cycle rather than exceeding it
        u_tx_eff = min(t_cycle_dl, n_bursts * u_tx_one + (n_bursts - 1) * u_access)
        u_access_dl = t_cycle_dl - u_tx_eff
    else:
        d_tx = dl_fit.duration(f_ap, seg_air_bytes)
        n_ack = max(1.0, math.ceil(f_ap / thinning_n))
        ack_burst = min(n_ack, sta_cap)
        n_bursts = math.ceil(n_ack / ack_burst)
        u_tx_one = (
            ul_fit.duration(ack_burst, ack_air_bytes)
            if ul_fit
            else synthesize_tx_time(ack_records, ack_burst, ack_air_bytes)
        )
        u_tx_eff = n_bursts * u_tx_one + (n_bursts - 1) * u_access

        if contend_trace:
            # Sparse-chain fallback with contention events: the pursuit-only
            # access composes serially — AP access and data transmission,
            # then the station's ACK return, each direction inflated by its
            # failure odds, the whole cycle by the foreign airtime share.
            fwd_dl = (d_access + d_tx) / (1.0 - q_dl)
            rev_dl = n_bursts * (u_access + u_tx_one) / (1.0 - q_ul)
            r_eff = (r_other or 0.0) * squeeze
            t_cycle_dl = (fwd_dl + rev_dl) / (1.0 - r_eff)
            v_inflation = t_cycle_dl * r_eff
            v_share = r_eff
            d_access_dl = t_cycle_dl - v_inflation - d_tx
            u_access_dl = t_cycle_dl - u_tx_eff
        else:
            # Log-only composition: an inter-transmission gap already holds
            # the reverse path, retry backoffs and foreign service, so the
            # stages stand side by side and the slower one bounds the cycle.
            v_inflation = estimate_v_inflation(records, target_sta)
            d_access_dl = d_access
            u_access_dl = n_bursts * u_access
            t_cycle_dl = d_access_dl + d_tx + v_inflation

    download = compute_service_times(
        d_access=d_access_dl,
        d_tx=d_tx,
        u_access=u_access_dl,
        u_tx=u_tx_eff,
        v_inflation=v_inflation,
        f_ap=f_ap,
        f_sta=ack_burst,
        thinning_n=thinning_n,
        mean_segment_bits=mean_segment_bits,
        case="download",
    )
    est_dl = estimate_throughput(download)

    # --- upload case ----------------------------------------------------------
    # Mirror image: the station sends full segments at its saturation burst
    # size, its failure odds inflating the burst, and the AP returns the
    # thinned ACKs in one single-destination access.  The access term is the
    # downlink-stripped handshake wait: it already carries every deferral the
    # uplink field imposes at witnessed intensity, so no foreign share is
    # applied on top — only the residual foreign *downlink* trickle of a
    # mixed deployment goes unpriced, and that is small next to the uplink
    # costs the wait embodies.
    f_sta_up = sta_cap
    u_tx_up = (
        ul_fit.duration(f_sta_up, seg_air_bytes)
        if ul_fit
        else synthesize_tx_time(ack_records, f_sta_up, seg_air_bytes)
    )
    n_ack_up = max(1.0, math.ceil(f_sta_up / thinning_n))
    d_tx_up = dl_return_fit.duration(n_ack_up, ack_air_bytes)

    v_up = 0.0
    t_cycle_ul = u_access_up + u_tx_up / (1.0 - q_ul) + d_tx_up

    upload = compute_service_times(
        d_access=t_cycle_ul - v_up - d_tx_up,
        d_tx=d_tx_up,
        u_access=t_cycle_ul - u_tx_up,
        u_tx=u_tx_up,
        v_inflation=v_up,
        f_ap=n_ack_up,
        f_sta=f_sta_up,
        thinning_n=thinning_n,
        mean_segment_bits=mean_segment_bits,
        case="upload",
    )
    est_ul = estimate_throughput(upload)

    estimate = SpeedEstimate(
        theta_dl_mbps=est_dl.theta_dl_mbps,
        theta_ul_mbps=est_ul.theta_ul_mbps,
        wm_star=est_dl.wm_star,
        sample_count=len(handshakes),
    )
    segs_per_ack = seg_frames / max(1, len(ack_records))
    return VstReport(
        sta=target_sta,
        download=download,
        upload=upload,
        estimate=estimate,
        n_handshakes=len(handshakes),
        n_flows=len(keys),
        diagnostics={
            "n_u_access_samples": len(u_samples),
            "n_d_access_samples": len(d_samples),
            "observed_segments_per_ack": segs_per_ack,
            "observed_f_ap_max": dl_fit.max_frames,
            "observed_f_sta_max": ul_fit.max_frames if ul_fit else 0,
            "r_other": r_other,
            "d_access_pure_us": d_access,
            "u_access_pure_us": u_access,
            "u_access_up_us": u_access_up,
            "n_busy_cycles": len(busy),
            "v_share": v_share,
            "q_dl": q_dl,
            "q_ul": q_ul,
            "t_cycle_dl_us": t_cycle_dl,
            "t_cycle_ul_us": t_cycle_ul,
            "dl_overhead_us": dl_fit.overhead_us,
            "ul_overhead_us": ul_fit.overhead_us if ul_fit else None,
            "dl_return_overhead_us": dl_return_fit.overhead_us,
            "n_dl_solo_txops": len({r.ts_start for r in dl_solo}),
            "open_frac": open_frac,
            "squeeze": squeeze,
            "n_closed_foreign": n_closed_foreign,
        },
    )
