"""Seeded discrete-event WLAN simulator: DCF access, MU-MIMO txops, TCP loops.

One global event loop drives an AP, its stations, and optional neighbouring
(OBSS) transmitters over a shared half-duplex channel.  Who senses whom is an
explicit audibility matrix, so hidden-terminal topologies are first-class: a
node only freezes its backoff for transmissions it can hear, and a reception
fails whenever any transmission audible *at the receiver* overlaps it.

Two channel-access flavours share the machinery:

* ``realistic`` — slotted CSMA/CA: DIFS, uniform backoff over the contention
  window, counter frozen in whole slots while the medium is sensed busy,
  window doubling after a failed exchange, reset after a block-ack, a retry
  limit, and genuine same-slot collisions (two counters expiring in the same
  slot both transmit).
* ``idealized`` — continuous, collision-free access with the same DIFS
  structure: every backlogged node draws a continuous backoff and the
  earliest draw wins; a node finding the medium busy re-arms at busy-end +
  DIFS with a fresh draw.  This is the contention process assumed by the
  closed-form throughput analysis, useful for validating it without
  collision noise.

The backoff distribution is orthogonal to the access mode: ``uniform``
(slotted in realistic mode) or ``exponential`` with rate 2/(W0*slot), whose
mean equals the mean first-window uniform draw.

Traffic is closed-loop TCP (cumulative delivered-count ACKs, ACK thinning
with a 40 ms delayed-ACK flush, optional transport-level loss on the
downlink) or open-loop UDP (constant bit rate, or saturated when no rate is
given).  The backbone between the AP and the far endpoint adds half the
configured two-way delay per crossing.

Exchange durations come from the timeline module, so the simulator and the
analytical model price airtime identically by construction.

Outputs: the AP-side packet log consumed by the estimators (own downlink
txops, decoded uplink receptions, one merged record per contiguous
undecodable interval, overheard OBSS frames) and per-frame ground truth for
station uplink transmissions (enqueue, head-of-line, on-air and completion
times, retry count, and sensed-busy time while waiting at head).
"""

from __future__ import annotations

import dataclasses
import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from random import Random
from typing import Iterable, Optional

from ..profiles import TimingProfile, get_profile
from ..trace import Direction, GroundTruthRecord, PacketRecord
from .timeline import ack_phase_us, sounding_us

__all__ = [
    "FlowConfig",
    "ObssConfig",
    "SimConfig",
    "SimResult",
    "StaConfig",
    "run",
    "run_speed_test",
]

DELACK_FLUSH_US = 40_000.0
SATURATED_DEPTH = 256
FLOW_KINDS = ("tcp_down", "tcp_up", "udp_down", "udp_up")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StaConfig:
    """One associated station; ``hidden_from`` lists stations it cannot hear."""

    name: str
    hidden_from: tuple[str, ...] = ()
    b_sta: Optional[int] = None  # overrides SimConfig.b_sta


@dataclass(frozen=True)
class FlowConfig:
    """One traffic flow.

    ``d_us`` is the two-way backbone delay; half is charged per crossing.
    ``rate_mbps`` applies to UDP: a CBR pace, or saturated when ``None``.
    ``cwnd_init`` defaults to the full window ``w_max``.
    """

    kind: str  # tcp_down | tcp_up | udp_down | udp_up
    sta: str
    w_max: int = 64
    t_f: int = 2
    d_us: float = 10_000.0
    seg_bytes: int = 1024
    rate_mbps: Optional[float] = None
    cwnd_init: Optional[int] = None
    start_us: float = 0.0
    label: str = ""


@dataclass(frozen=True)
class ObssConfig:
    """A saturated co-channel transmitter from a neighbouring network."""

    name: str
    frame_bytes: int = 1083
    heard_by_ap: bool = True
    hidden_from: tuple[str, ...] = ()


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    profile: str | TimingProfile | None = None
    duration_us: float = 10_000_000.0
    warmup_us: float = 0.0
    access_mode: str = "realistic"  # or "idealized"
    backoff_kind: str = "uniform"  # or "exponential"
    n_ap: int = 1  # AP antennas (parallel MU-MIMO streams)
    b_ap: Optional[int] = None  # AP per-station aggregation cap; None = unlimited
    b_sta: Optional[int] = 64  # station aggregation cap; None = unlimited
    dl_loss_p: float = 0.0
    stas: tuple[StaConfig, ...] = ()
    flows: tuple[FlowConfig, ...] = ()
    obss: tuple[ObssConfig, ...] = ()

    def __post_init__(self):
        if self.access_mode not in ("realistic", "idealized"):
            raise ValueError(f"unknown access_mode {self.access_mode!r}")
        if self.backoff_kind not in ("uniform", "exponential"):
            raise ValueError(f"unknown backoff_kind {self.backoff_kind!r}")
        if not self.stas:
            raise ValueError("need at least one station")
        if self.duration_us <= 0:
            raise ValueError("duration must be positive")
        if self.n_ap < 1:
            raise ValueError("need at least one AP antenna")
        if not 0.0 <= self.dl_loss_p < 1.0:
            raise ValueError("dl_loss_p must be a probability below 1")
        names = [s.name for s in self.stas]
        if len(set(names)) != len(names):
            raise ValueError("duplicate station names")
        for f in self.flows:
            if f.kind not in FLOW_KINDS:
                raise ValueError(f"unknown flow kind {f.kind!r}")
            if f.sta not in names:
                raise ValueError(f"flow references unknown station {f.sta!r}")
        labels = [f.label for f in self.flows if f.label]
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate flow labels")


# ---------------------------------------------------------------------------
# Result
# ---------------------------------------------------------------------------


@dataclass
class SimResult:
    config: SimConfig
    ap_records: list[PacketRecord]
    ground_truth: list[GroundTruthRecord]
    flow_bits: dict[str, float]  # transport-delivered payload bits, post warm-up
    measured_us: float
    stats: dict
    #: one (start_us, frames_sent, destinations_served) row per AP channel
    #: access, in time order — the raw material for pump-and-drain analysis.
    ap_access_trace: list[tuple[float, int, int]] = field(default_factory=list)
    #: one (contend_start_us, ts_start_us, ts_end_us, ((dest, ok), ...)) row per
    #: AP transmission: when the AP began pursuing the access (queue became
    #: backlogged, or the previous transmission ended) versus when it actually
    #: transmitted.  The AP's own MAC knows these instants; passive estimators
    #: use them to separate contention time from queue-idle time.
    ap_contend_trace: list[tuple[float, float, float, tuple[tuple[str, bool], ...]]] = field(
        default_factory=list
    )

    def throughput_mbps(self, labels: Optional[Iterable[str]] = None) -> float:
        """Delivered payload bits per µs (reads as Mb/s) over the measured window."""
        if labels is None:
            total = sum(self.flow_bits.values())
        else:
            wanted = set(labels)
            total = sum(v for k, v in self.flow_bits.items() if k in wanted)
        return total / self.measured_us


# ---------------------------------------------------------------------------
# Internals
# ---------------------------------------------------------------------------


class _Frame:
    __slots__ = ("flow", "kind", "l4", "bytes_air", "t_enq", "t_head", "attempts", "ack_value")

    def __init__(self, flow, kind, l4, bytes_air, t_enq, ack_value=0):
        self.flow = flow  # _Flow or None (OBSS filler)
        self.kind = kind  # "seg" | "ack" | "udp"
        self.l4 = l4
        self.bytes_air = bytes_air
        self.t_enq = t_enq
        self.t_head: Optional[float] = None
        self.attempts = 0
        self.ack_value = ack_value


def flow_remote_net(idx: int) -> str:
    """Server-side network address of the ``idx``-th configured flow."""
    return f"198.51.100.{idx + 1}"


class _Flow:
    """Runtime state of one configured flow."""

    def __init__(self, cfg: FlowConfig, idx: int):
        self.cfg = cfg
        self.idx = idx
        self.label = cfg.label or f"flow-{idx}"
        self.sta = cfg.sta
        self.down = cfg.kind.endswith("down")
        self.tcp = cfg.kind.startswith("tcp")
        self.sta_net = ""
        self.remote_net = flow_remote_net(idx)
        w = cfg.cwnd_init if cfg.cwnd_init is not None else cfg.w_max
        self.cwnd = float(w)
        self.sent = 0
        self.acked = 0
        self.delivered = 0
        self.pending_thin = 0
        self.flush_stamp = 0


class _Tx:
    """One on-air exchange."""

    __slots__ = (
        "src",
        "start",
        "end",
        "batches",
        "rx_targets",
        "corrupted",
        "attempt_no",
        "contend_t",
    )

    def __init__(self, src, start, end, batches, rx_targets, attempt_no):
        self.src = src  # node index
        self.start = start
        self.end = end
        self.batches = batches  # list of (dest node index or -1, [frames])
        self.rx_targets = rx_targets  # node indices whose decode success matters
        self.corrupted: set[int] = set()
        self.attempt_no = attempt_no
        self.contend_t = start  # when the sender began pursuing this access


IDLE, WAITING, FROZEN = 0, 1, 2


class _Node:
    def __init__(self, idx: int, name: str, kind: str):
        self.idx = idx
        self.name = name
        self.kind = kind  # "ap" | "sta" | "obss"
        self.queue: deque[_Frame] = deque()  # stations and obss
        self.queues: dict[int, deque[_Frame]] = {}  # AP: dest node idx -> deque
        self.state = IDLE
        self.stamp = 0
        self.cw_exp = 0  # contention window = w0 * 2**cw_exp
        self.attempt_no = 0
        self.busy_until = 0.0
        self.countdown_start = 0.0
        self.delay_left = 0.0  # µs of backoff still to count down
        self.transmitting = False
        # ground-truth bookkeeping (stations only)
        self.head_since: Optional[float] = None
        self.defer_acc = 0.0
        self.defer_covered = 0.0
        self.last_exchange_end = 0.0
        self.b_sta: Optional[int] = None
        self.net = ""
        # when the node last went from "nothing to send / just finished" to
        # "backlogged and pursuing an access"; survives failed attempts so the
        # whole retry saga counts as one pursuit
        self.contend_since: Optional[float] = None


class Simulator:
    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.prof = (
            cfg.profile
            if isinstance(cfg.profile, TimingProfile)
            else get_profile(cfg.profile)
        )
        self.rng = Random(cfg.seed)
        self.now = 0.0
        self._seq = 0
        self.events: list = []

        # --- nodes ---------------------------------------------------------
        self.nodes: list[_Node] = [_Node(0, "ap:00", "ap")]
        self.sta_idx: dict[str, int] = {}
        for i, sc in enumerate(cfg.stas, start=1):
            node = _Node(i, sc.name, "sta")
            node.b_sta = sc.b_sta if sc.b_sta is not None else cfg.b_sta
            node.net = f"10.0.0.{i + 1}"
            self.nodes.append(node)
            self.sta_idx[sc.name] = i
        self.obss_start = len(self.nodes)
        for j, oc in enumerate(cfg.obss):
            self.nodes.append(_Node(self.obss_start + j, oc.name, "obss"))

        n = len(self.nodes)
        self.hears = [[True] * n for _ in range(n)]
        for sc in cfg.stas:
            for other in sc.hidden_from:
                a, b = self.sta_idx[sc.name], self.sta_idx[other]
                self.hears[a][b] = self.hears[b][a] = False
        for j, oc in enumerate(cfg.obss):
            oi = self.obss_start + j
            if not oc.heard_by_ap:
                self.hears[0][oi] = self.hears[oi][0] = False
            for other in oc.hidden_from:
                si = self.sta_idx[other]
                self.hears[si][oi] = self.hears[oi][si] = False

        # --- flows ---------------------------------------------------------
        self.flows = [_Flow(fc, i) for i, fc in enumerate(cfg.flows)]
        for fl in self.flows:
            fl.sta_net = self.nodes[self.sta_idx[fl.sta]].net

        self.active_txs: list[_Tx] = []
        self.ap_records: list[PacketRecord] = []
        self.ground_truth: list[GroundTruthRecord] = []
        self.fail_intervals: list[tuple[float, float, int, int]] = []
        self.flow_bits: dict[str, float] = {fl.label: 0.0 for fl in self.flows}
        self.stats = {"backoff_draws": [], "collisions": 0, "mac_drops": 0, "txops": 0}
        self.ap_access_trace: list[tuple[float, int, int]] = []
        self.ap_contend_trace: list[tuple[float, float, float, tuple[tuple[str, bool], ...]]] = []
        self._gt_cap = 2_000_000

    # -- event plumbing ----------------------------------------------------

    def _push(self, when: float, kind: str, a=None, b=None):
        self._seq += 1
        heapq.heappush(self.events, (when, self._seq, kind, a, b))

    # -- backoff -----------------------------------------------------------

    def _draw_backoff(self, node: _Node) -> float:
        w0 = self.prof.cw_min
        if self.cfg.backoff_kind == "exponential":
            d = self.rng.expovariate(self.prof.backoff_rate_per_us)
        else:
            cw = w0 * (2 ** node.cw_exp)
            if self.cfg.access_mode == "idealized":
                d = self.rng.uniform(0.0, (cw - 1) * self.prof.slot_us)
            else:
                d = self.rng.randrange(cw) * self.prof.slot_us
        if node.kind == "sta" and len(self.stats["backoff_draws"]) < 200_000:
            self.stats["backoff_draws"].append(d)
        return d

    def _backlogged(self, node: _Node) -> bool:
        if node.kind == "ap":
            return any(q for q in node.queues.values())
        if node.kind == "obss":
            return True
        return bool(node.queue)

    def _arm(self, node: _Node, fresh_draw: bool = True):
        """Schedule this node's next fire; node must be backlogged."""
        base = max(self.now, node.busy_until)
        if fresh_draw:
            node.delay_left = self._draw_backoff(node)
        node.countdown_start = base + self.prof.difs_us
        node.state = WAITING
        node.stamp += 1
        self._push(node.countdown_start + node.delay_left, "fire", node.idx, node.stamp)

    def _kick(self, node: _Node):
        """Start contending if idle and backlogged."""
        if not node.transmitting and self._backlogged(node):
            if node.contend_since is None:
                node.contend_since = self.now
            if node.state == IDLE:
                self._arm(node)

    def _freeze_listeners(self, tx: _Tx):
        """A transmission started: busy-mark and freeze everyone who hears it."""
        for node in self.nodes:
            if node.idx == tx.src or not self.hears[node.idx][tx.src]:
                continue
            if tx.end > node.busy_until:
                node.busy_until = tx.end
            # ground-truth defer accounting for a waiting head-of-line frame
            if node.kind == "sta" and node.head_since is not None and not node.transmitting:
                lo = max(tx.start, node.defer_covered, node.head_since)
                if tx.end > lo:
                    node.defer_acc += tx.end - lo
                    node.defer_covered = tx.end
            if node.state == WAITING:
                # Strictly-later fires freeze; an equal-time fire is a genuine
                # same-slot collision and is left to pop and transmit.
                fire_at = node.countdown_start + node.delay_left
                if fire_at > tx.start:
                    elapsed = max(0.0, tx.start - node.countdown_start)
                    if self.cfg.backoff_kind == "uniform" and self.cfg.access_mode == "realistic":
                        slots = math.floor(elapsed / self.prof.slot_us)
                        consumed = min(node.delay_left, slots * self.prof.slot_us)
                    else:
                        consumed = min(node.delay_left, elapsed)
                    node.delay_left -= consumed
                    node.state = FROZEN
                    node.stamp += 1
                    self._push(node.busy_until, "resume", node.idx, node.stamp)

    # -- transmission construction ------------------------------------------

    def _ap_select_batches(self, ap: _Node):
        """Pick destinations (longest head-of-line wait first) and their batches."""
        backlogged = [(dest, q) for dest, q in ap.queues.items() if q]
        backlogged.sort(key=lambda item: (item[1][0].t_enq, item[0]))
        h_cap = self.cfg.n_ap if self.prof.mu_capable else 1
        chosen = backlogged[: min(h_cap, len(backlogged))]
        batches = []
        for dest, q in chosen:
            take = len(q) if self.cfg.b_ap is None else min(self.cfg.b_ap, len(q))
            batches.append((dest, [q.popleft() for _ in range(take)]))
        return batches

    def _ap_txop_duration(self, batches) -> float:
        # Beamformed multi-user transmission (sounding + parallel streams +
        # polled block acks) only when frames are queued for two or more
        # stations; a single-destination access is an ordinary SU exchange.
        p = self.prof
        if p.mu_capable and len(batches) > 1:
            h = len(batches)
            per_stream_bits = max(sum(f.bytes_air * 8 for f in fr) for _, fr in batches)
            data = p.plcp_us + per_stream_bits / p.phy_rate_mbps
            return sounding_us(h, p) + data + ack_phase_us(h, p)
        frames = [f for _, fr in batches for f in fr]
        bits = sum(f.bytes_air * 8 for f in frames)
        tail = p.ba_us if len(frames) > 1 else p.mack_us
        return p.plcp_us + bits / p.phy_rate_mbps + p.sifs_us + tail

    def _ul_burst_duration(self, frames) -> float:
        # A-MPDU bursts are answered with a block ack; a bare MPDU gets the
        # plain control ACK.
        p = self.prof
        bits = sum(f.bytes_air * 8 for f in frames)
        tail = p.ba_us if len(frames) > 1 else p.mack_us
        return p.plcp_us + bits / p.phy_rate_mbps + p.sifs_us + tail

    def _start_tx(self, node: _Node):
        if node.kind == "ap":
            batches = self._ap_select_batches(node)
            dur = self._ap_txop_duration(batches)
            if len(self.ap_access_trace) < self._gt_cap:
                n_frames = sum(len(fr) for _, fr in batches)
                self.ap_access_trace.append((self.now, n_frames, len(batches)))
        elif node.kind == "obss":
            oc = self.cfg.obss[node.idx - self.obss_start]
            frame = _Frame(None, "udp", 0, oc.frame_bytes, self.now)
            p = self.prof
            dur = p.plcp_us + frame.bytes_air * 8 / p.phy_rate_mbps + p.sifs_us + p.mack_us
            batches = [(-1, [frame])]
        else:
            cap = node.b_sta
            take = len(node.queue) if cap is None else min(cap, len(node.queue))
            frames = [node.queue.popleft() for _ in range(take)]
            dur = self._ul_burst_duration(frames)
            batches = [(0, frames)]

        for _dest, frames in batches:
            for f in frames:
                f.attempts += 1

        # every real destination plus — for anything travelling toward the
        # AP — the AP itself, whose decode success decides uplink/OBSS fate
        rx_targets = {dest for dest, _fr in batches if dest >= 0}
        if node.idx != 0:
            rx_targets.add(0)

        tx = _Tx(node.idx, self.now, self.now + dur, batches, rx_targets, node.attempt_no)
        if node.contend_since is not None:
            tx.contend_t = node.contend_since
        node.transmitting = True
        node.state = IDLE
        node.stamp += 1
        node.busy_until = tx.end
        self.stats["txops"] += 1

        # collisions with already-active transmissions, judged per receiver
        for other in self.active_txs:
            for t in tx.rx_targets:
                if t == other.src or self.hears[t][other.src] or self.nodes[t].transmitting:
                    tx.corrupted.add(t)
            for t in other.rx_targets:
                if t == node.idx or self.hears[t][node.idx]:
                    other.corrupted.add(t)
        self.active_txs.append(tx)
        self._freeze_listeners(tx)
        self._push(tx.end, "tx_end", tx, None)

    # -- TCP/UDP machinery ---------------------------------------------------

    def _make_data_frame(self, fl: _Flow) -> _Frame:
        return _Frame(
            fl,
            "seg" if fl.tcp else "udp",
            fl.cfg.seg_bytes,
            fl.cfg.seg_bytes + self.prof.data_overhead_bytes,
            self.now,
        )

    def _release_segments(self, fl: _Flow, count: int):
        if count <= 0:
            return
        half = fl.cfg.d_us / 2.0
        for _ in range(count):
            fl.sent += 1
            if fl.down:
                self._push(self.now + half, "seg_ap", fl.idx, None)
            else:
                self._push(self.now, "seg_sta", fl.idx, None)

    def _enqueue_ap(self, fl: _Flow, frame: _Frame):
        ap = self.nodes[0]
        dest = self.sta_idx[fl.sta]
        ap.queues.setdefault(dest, deque()).append(frame)
        self._kick(ap)

    def _enqueue_sta(self, fl: _Flow, frame: _Frame):
        node = self.nodes[self.sta_idx[fl.sta]]
        node.queue.append(frame)
        if node.head_since is None and len(node.queue) == 1 and not node.transmitting:
            frame.t_head = max(node.last_exchange_end, frame.t_enq)
            node.head_since = frame.t_head
            node.defer_acc = 0.0
            node.defer_covered = frame.t_head
            if node.busy_until > frame.t_head:  # medium already sensed busy
                node.defer_acc = node.busy_until - frame.t_head
                node.defer_covered = node.busy_until
        self._kick(node)

    def _emit_ack(self, fl: _Flow):
        """Receiver-side cumulative ACK, thinned; rides the opposite path."""
        fl.pending_thin = 0
        fl.flush_stamp += 1
        frame = _Frame(fl, "ack", 0, self.prof.ack_mpdu_bytes, self.now, ack_value=fl.delivered)
        if fl.down:
            self._enqueue_sta(fl, frame)  # the station returns the TCP ACK
        else:
            # the server's ACK crosses the backbone before joining the AP queue
            self._push(self.now + fl.cfg.d_us / 2.0, "ack_ap", fl.idx, frame)

    def _on_transport_delivery(self, fl: _Flow, frame: _Frame):
        """Post-MAC processing at whichever side just decoded the frame."""
        if frame.kind == "ack":
            if fl.down:
                # AP decoded the station's ACK; forward it to the sending server
                self._push(self.now + fl.cfg.d_us / 2.0, "sender_ack", fl.idx, frame.ack_value)
            else:
                self._sender_ack(fl, frame.ack_value)  # the sender is the station
            return
        if frame.kind == "udp":
            if self.now >= self.cfg.warmup_us:
                self.flow_bits[fl.label] += 8.0 * frame.l4
            return
        # TCP data segment
        if fl.down:
            if self.cfg.dl_loss_p > 0.0 and self.rng.random() < self.cfg.dl_loss_p:
                self._push(self.now + fl.cfg.d_us / 2.0, "sender_loss", fl.idx, None)
                return
            self._deliver_seg(fl)
        else:
            self._push(self.now + fl.cfg.d_us / 2.0, "server_seg", fl.idx, None)

    def _deliver_seg(self, fl: _Flow):
        fl.delivered += 1
        if self.now >= self.cfg.warmup_us:
            self.flow_bits[fl.label] += 8.0 * fl.cfg.seg_bytes
        fl.pending_thin += 1
        if fl.pending_thin >= fl.cfg.t_f:
            self._emit_ack(fl)
        else:
            fl.flush_stamp += 1
            self._push(self.now + DELACK_FLUSH_US, "flush", fl.idx, fl.flush_stamp)

    def _sender_ack(self, fl: _Flow, value: int):
        if value <= fl.acked:
            return
        newly = value - fl.acked
        fl.acked = value
        fl.cwnd = min(float(fl.cfg.w_max), fl.cwnd + newly / fl.cwnd)
        self._release_segments(fl, int(fl.cwnd) - (fl.sent - fl.acked))

    def _mac_drop(self, frame: _Frame):
        """Retry limit exceeded.  TCP data is retransmitted by the transport
        (without window halving — the sender saw a stall, not a congestion
        signal); a dropped cumulative ACK is regenerated at the current
        delivered count; UDP datagrams vanish."""
        fl = frame.flow
        if fl is None or not fl.tcp:
            return
        if frame.kind == "seg":
            if fl.down:
                self._push(self.now + fl.cfg.d_us, "seg_ap", fl.idx, None)
            else:
                self._push(self.now, "seg_sta", fl.idx, None)
        elif frame.kind == "ack":
            fresh = _Frame(
                fl, "ack", 0, self.prof.ack_mpdu_bytes, self.now, ack_value=fl.delivered
            )
            if fl.down:
                self._enqueue_sta(fl, fresh)
            else:
                self._push(self.now + fl.cfg.d_us / 2.0, "ack_ap", fl.idx, fresh)

    def _refill_saturated(self):
        for fl in self.flows:
            if fl.tcp or fl.cfg.rate_mbps is not None:
                continue
            if fl.down:
                q = self.nodes[0].queues.setdefault(self.sta_idx[fl.sta], deque())
                while len(q) < SATURATED_DEPTH:
                    q.append(self._make_data_frame(fl))
                self._kick(self.nodes[0])
            else:
                node = self.nodes[self.sta_idx[fl.sta]]
                while len(node.queue) < SATURATED_DEPTH:
                    self._enqueue_sta(fl, self._make_data_frame(fl))

    # -- exchange completion -------------------------------------------------

    def _finish_ap_batch(self, tx: _Tx, dest: int, frames: list[_Frame], ok: bool):
        groups: dict[int, list[_Frame]] = {}
        for f in frames:
            groups.setdefault(f.flow.idx, []).append(f)
        sta = self.nodes[dest]
        for fidx, group in groups.items():
            fl = self.flows[fidx]
            self.ap_records.append(
                PacketRecord(
                    ts_start=_us(tx.start),
                    ts_end=_us(tx.end),
                    direction=Direction.DOWNLINK,
                    src_addr=self.nodes[0].name,
                    dst_addr=sta.name,
                    src_net=fl.remote_net,
                    dst_net=fl.sta_net,
                    l4_payload_bytes=sum(f.l4 for f in group),
                    frame_bytes=sum(f.bytes_air for f in group),
                    phy_rate=self.prof.phy_rate_mbps,
                    retry_flag=tx.attempt_no > 0,
                    success=ok,
                    frames_in_txop=len(group),
                )
            )
        if ok:
            for f in frames:
                self._on_transport_delivery(f.flow, f)

    def _finish_sta_burst(self, tx: _Tx, node: _Node, frames: list[_Frame], ok: bool):
        if not ok:
            self.fail_intervals.append(
                (tx.start, tx.end, sum(f.bytes_air for f in frames), len(frames))
            )
            return
        groups: dict[int, list[_Frame]] = {}
        for f in frames:
            groups.setdefault(f.flow.idx, []).append(f)
        for fidx, group in groups.items():
            fl = self.flows[fidx]
            self.ap_records.append(
                PacketRecord(
                    ts_start=_us(tx.start),
                    ts_end=_us(tx.end),
                    direction=Direction.UPLINK,
                    src_addr=node.name,
                    dst_addr=self.nodes[0].name,
                    src_net=fl.sta_net,
                    dst_net=fl.remote_net,
                    l4_payload_bytes=sum(f.l4 for f in group),
                    frame_bytes=sum(f.bytes_air for f in group),
                    phy_rate=self.prof.phy_rate_mbps,
                    retry_flag=tx.attempt_no > 0,
                    success=True,
                    frames_in_txop=len(group),
                )
            )
        if len(self.ground_truth) < self._gt_cap:
            for f in frames:
                self.ground_truth.append(
                    GroundTruthRecord(
                        sta=node.name,
                        t_enq=_us(f.t_enq),
                        t_head=_us(f.t_head if f.t_head is not None else f.t_enq),
                        ts_start=_us(tx.start),
                        ts_end=_us(tx.end),
                        flow=f.flow.label,
                        n_retx=f.attempts - 1,
                        defer_us=node.defer_acc,
                    )
                )
        for f in frames:
            self._on_transport_delivery(f.flow, f)

    def _finish_obss(self, tx: _Tx, node: _Node):
        if not self.hears[0][node.idx]:
            return  # inaudible at the AP: leaves no trace either way
        frame = tx.batches[0][1][0]
        if 0 in tx.corrupted:
            self.fail_intervals.append((tx.start, tx.end, frame.bytes_air, 1))
            return
        self.ap_records.append(
            PacketRecord(
                ts_start=_us(tx.start),
                ts_end=_us(tx.end),
                direction=Direction.OBSS,
                src_addr=node.name,
                dst_addr="",
                src_net="",
                dst_net="",
                l4_payload_bytes=0,
                frame_bytes=frame.bytes_air,
                phy_rate=self.prof.phy_rate_mbps,
                retry_flag=False,
                success=True,
                frames_in_txop=1,
            )
        )

    def _sta_next_head(self, node: _Node, t: float):
        """Install ground-truth head bookkeeping for the new queue head."""
        node.head_since = None
        node.defer_acc = 0.0
        if node.queue:
            head = node.queue[0]
            head.t_head = max(t, head.t_enq)
            node.head_since = head.t_head
            node.defer_covered = head.t_head
            if node.busy_until > head.t_head:  # e.g. an overlapping audible tx
                node.defer_acc = node.busy_until - head.t_head
                node.defer_covered = node.busy_until

    def _tx_end(self, tx: _Tx):
        node = self.nodes[tx.src]
        node.transmitting = False
        self.active_txs.remove(tx)

        if node.kind == "ap":
            if len(self.ap_contend_trace) < self._gt_cap:
                served = tuple(
                    (self.nodes[dest].name, dest not in tx.corrupted) for dest, _ in tx.batches
                )
                self.ap_contend_trace.append((tx.contend_t, tx.start, tx.end, served))
            any_fail = False
            for dest, frames in tx.batches:
                ok = dest not in tx.corrupted
                self._finish_ap_batch(tx, dest, frames, ok)
                if not ok:
                    any_fail = True
                    node.queues[dest].extendleft(reversed(frames))
            if any_fail:
                self.stats["collisions"] += 1
                node.attempt_no += 1
                node.cw_exp = min(node.cw_exp + 1, 6)
                if node.attempt_no > self.prof.retry_limit:
                    self.stats["mac_drops"] += 1
                    for dest, frames in tx.batches:
                        if dest in tx.corrupted:
                            q = node.queues[dest]
                            for f in frames:
                                q.remove(f)
                                self._mac_drop(f)
                    node.attempt_no = 0
                    node.cw_exp = 0
                    node.contend_since = None  # that pursuit is over
            else:
                node.attempt_no = 0
                node.cw_exp = 0
                node.contend_since = None
        elif node.kind == "obss":
            self._finish_obss(tx, node)
            node.contend_since = None
        else:
            frames = tx.batches[0][1]
            ok = 0 not in tx.corrupted
            self._finish_sta_burst(tx, node, frames, ok)
            if ok:
                node.last_exchange_end = tx.end
                node.attempt_no = 0
                node.cw_exp = 0
                node.contend_since = None
                self._sta_next_head(node, tx.end)
            else:
                self.stats["collisions"] += 1
                node.attempt_no += 1
                node.cw_exp = min(node.cw_exp + 1, 6)
                node.queue.extendleft(reversed(frames))
                if node.attempt_no > self.prof.retry_limit:
                    self.stats["mac_drops"] += 1
                    for f in frames:
                        node.queue.remove(f)
                        self._mac_drop(f)
                    node.attempt_no = 0
                    node.cw_exp = 0
                    node.contend_since = None
                    self._sta_next_head(node, tx.end)
                # on a plain failure the original head stays at head and its
                # wait — including defer accumulation — simply continues

        self._refill_saturated()
        self._kick(node)

    # -- event handlers ------------------------------------------------------

    def _handle(self, kind: str, a, b):
        if kind == "fire":
            node = self.nodes[a]
            if node.stamp != b or node.state != WAITING:
                return
            if not self._backlogged(node):
                node.state = IDLE
                return
            if self.cfg.access_mode == "idealized" and node.busy_until > self.now:
                self._arm(node)  # collision-free: re-arm beyond the busy period
                return
            self._start_tx(node)
        elif kind == "resume":
            node = self.nodes[a]
            if node.stamp != b or node.state != FROZEN:
                return
            if node.busy_until > self.now + 1e-9:  # busy got extended meanwhile
                node.stamp += 1
                self._push(node.busy_until, "resume", node.idx, node.stamp)
                return
            if not self._backlogged(node):
                node.state = IDLE
                return
            # idealized access is memoryless: redraw; realistic resumes its counter
            self._arm(node, fresh_draw=self.cfg.access_mode == "idealized")
        elif kind == "tx_end":
            self._tx_end(a)
        elif kind == "seg_ap":
            fl = self.flows[a]
            self._enqueue_ap(fl, self._make_data_frame(fl))
        elif kind == "seg_sta":
            fl = self.flows[a]
            self._enqueue_sta(fl, self._make_data_frame(fl))
        elif kind == "ack_ap":
            b.t_enq = self.now  # joins the AP queue only after the backbone hop
            self._enqueue_ap(self.flows[a], b)
        elif kind == "server_seg":
            self._deliver_seg(self.flows[a])
        elif kind == "sender_ack":
            self._sender_ack(self.flows[a], b)
        elif kind == "sender_loss":
            fl = self.flows[a]
            fl.cwnd = max(fl.cwnd / 2.0, 2.0)
            self._push(self.now + fl.cfg.d_us / 2.0, "seg_ap", fl.idx, None)
        elif kind == "flush":
            fl = self.flows[a]
            if fl.flush_stamp == b and fl.pending_thin > 0:
                self._emit_ack(fl)
        elif kind == "tcp_start":
            fl = self.flows[a]
            self._release_segments(fl, int(fl.cwnd))
        elif kind == "cbr":
            fl, k = self.flows[a], b
            frame = self._make_data_frame(fl)
            if fl.down:
                self._enqueue_ap(fl, frame)
            else:
                self._enqueue_sta(fl, frame)
            period = 8.0 * fl.cfg.seg_bytes / fl.cfg.rate_mbps
            self._push(fl.cfg.start_us + (k + 1) * period, "cbr", a, k + 1)

    # -- main loop -----------------------------------------------------------

    def run(self) -> SimResult:
        for fl in self.flows:
            if fl.tcp:
                self._push(fl.cfg.start_us, "tcp_start", fl.idx, None)
            elif fl.cfg.rate_mbps is not None:
                self._push(fl.cfg.start_us, "cbr", fl.idx, 0)
        self._refill_saturated()
        for node in self.nodes:
            if node.kind == "obss":
                self._kick(node)

        horizon = self.cfg.duration_us
        while self.events:
            when, _seq, kind, a, b = heapq.heappop(self.events)
            if when > horizon:
                break
            self.now = when
            self._handle(kind, a, b)

        self._emit_failures()
        self.ap_records.sort(key=lambda r: (r.ts_start, r.ts_end, r.direction.value, r.src_addr))
        self.ground_truth.sort(key=lambda g: (g.ts_start, g.sta, g.t_enq))
        measured = max(1.0, horizon - self.cfg.warmup_us)
        return SimResult(
            config=self.cfg,
            ap_records=self.ap_records,
            ground_truth=self.ground_truth,
            flow_bits=self.flow_bits,
            measured_us=measured,
            stats=self.stats,
            ap_access_trace=self.ap_access_trace,
            ap_contend_trace=self.ap_contend_trace,
        )

    def _emit_failures(self):
        """Merge overlapping or touching undecodable intervals, one record each."""
        if not self.fail_intervals:
            return
        ivs = sorted(self.fail_intervals)
        merged = [list(ivs[0])]
        for s, e, by, cnt in ivs[1:]:
            last = merged[-1]
            if s <= last[1] + 1e-9:
                last[1] = max(last[1], e)
                last[2] += by
                last[3] += cnt
            else:
                merged.append([s, e, by, cnt])
        for s, e, by, cnt in merged:
            self.ap_records.append(
                PacketRecord(
                    ts_start=_us(s),
                    ts_end=_us(e),
                    direction=Direction.UPLINK,
                    src_addr="",
                    dst_addr=self.nodes[0].name,
                    src_net="",
                    dst_net="",
                    l4_payload_bytes=0,
                    frame_bytes=max(1, by),
                    phy_rate=self.prof.phy_rate_mbps,
                    retry_flag=False,
                    success=False,
                    frames_in_txop=max(1, cnt),
                )
            )


def _us(t: float) -> int:
    """Round an internal float time to the integer microsecond of the log."""
    return int(t + 0.5)


def run(cfg: SimConfig) -> SimResult:
    """Run one simulation to completion."""
    return Simulator(cfg).run()


def run_speed_test(
    cfg: SimConfig,
    sta: str,
    direction: str = "down",
    n_flows: int = 10,
    window: int = 100,
    rtt_us: float = 1000.0,
    t_f: int = 2,
) -> tuple[SimResult, float]:
    """Run ``cfg`` with a parallel-flow speed test added at ``sta``.

    The test mimics a typical speed-test client: ``n_flows`` simultaneous
    TCP flows jump-started at a large congestion window over a short
    backbone path, while whatever background flows ``cfg`` defines keep
    running.  Returns the full result plus the test flows' combined
    throughput in Mb/s.
    """
    kind = "tcp_down" if direction == "down" else "tcp_up"
    labels = [f"speedtest-{i}" for i in range(n_flows)]
    test_flows = tuple(
        FlowConfig(
            kind=kind,
            sta=sta,
            w_max=window,
            t_f=t_f,
            d_us=rtt_us,
            cwnd_init=window,
            label=lab,
        )
        for lab in labels
    )
    cfg2 = dataclasses.replace(cfg, flows=tuple(cfg.flows) + test_flows)
    result = run(cfg2)
    return result, result.throughput_mbps(labels)
