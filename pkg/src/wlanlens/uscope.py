"""Uplink latency decomposition from passively observed TCP handshakes.

For a target station, the mean uplink latency of its TCP ACKs decomposes as

    L_uplink = Phi_queuing + Phi_access + Phi_tx

where queuing is time spent behind the station's own earlier frames, access
is the per-transmission channel-access delay, and tx is the on-air time.
Each component is estimated from segment→ACK handshakes: an ACK that was
received immediately after its segment bounds the access delay directly,
while the receptions sandwiched inside a queued handshake expose both the
queue drain and the per-transmission access gaps.

On top of the decomposition, the access budget is explained as a sequence of
escalating retransmission attempts: attempt k costs a known mean contention
time (binary exponential backoff doubles the window each retry), an unknown
but estimable defer time, and the transmission time.  Greedily fitting those
attempt durations into the measured access budget yields the mean
retransmission count R and the total defer time Psi_defer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .flowsense import FlowKey, Handshake, HsClass, infer_flows, pair_handshakes
from .trace import Direction, PacketRecord
from .vst import NoHandshakes, _snooped_download_flows

__all__ = [
    "AttemptModel",
    "InvalidBudget",
    "LatencyBreakdown",
    "NoCleanHandshakes",
    "NoHandshakes",
    "RETRY_LIMIT",
    "decompose_from_log",
    "estimate_access_delay",
    "estimate_first_attempt_defer",
    "estimate_queuing_delay",
    "estimate_retx_and_defer",
    "estimate_total_latency",
    "trim_handshakes",
]

RETRY_LIMIT = 7  # 802.11 short retry limit; attempt table capped here
TRIM_QUANTILE = 0.999


class NoCleanHandshakes(ValueError):
    """Every observed ACK carried the retry bit."""


class InvalidBudget(ValueError):
    """Access/tx budget for the attempt fit must be non-negative."""


def theta_contn(k: int, sigma: float) -> float:
    """Mean contention time of attempt k: (2^(3+k) - 1)·σ/2.

    Attempt k draws its backoff uniformly from a window of 16·2^(k-1) =
    2^(3+k) slots (16-slot initial window, doubled each retry), whose mean
    count is (window - 1)/2 slots.
    """
    if k < 1:
        raise ValueError("attempt index starts at 1")
    return (2.0 ** (3 + k) - 1.0) * sigma / 2.0


@dataclass(frozen=True)
class AttemptModel:
    """Known per-attempt cost structure for the greedy access-budget fit.

    ``z_k[j]`` is the mean duration of attempt j+1: its contention time, a
    DIFS (sensed idle before the backoff may count down), the estimated
    per-attempt defer time, and the transmission time.
    """

    sigma: float = 9.0
    difs_us: float = 34.0
    phi_tx: float = 0.0
    theta_defer_1: float = 0.0
    k_max: int = RETRY_LIMIT

    @property
    def theta_contn_k(self) -> tuple[float, ...]:
        """Per-attempt mean contention times for attempts 1..k_max."""
        return tuple(theta_contn(k, self.sigma) for k in range(1, self.k_max + 1))

    @property
    def z_k(self) -> tuple[float, ...]:
        """Mean attempt durations Z_1..Z_{k_max}, strictly increasing."""
        return tuple(
            c + self.difs_us + self.theta_defer_1 + self.phi_tx
            for c in self.theta_contn_k
        )


@dataclass
class LatencyBreakdown:
    """Per-station uplink latency decomposition (all durations µs)."""

    l_uplink: float
    phi_queuing: float
    phi_access: float
    phi_tx: float
    psi_defer: float
    r_bar: float
    per_flow_queuing: dict = field(default_factory=dict)
    sample_counts: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "l_uplink_us": self.l_uplink,
            "phi_queuing_us": self.phi_queuing,
            "phi_access_us": self.phi_access,
            "phi_tx_us": self.phi_tx,
            "psi_defer_us": self.psi_defer,
            "r_bar": self.r_bar,
            "per_flow_queuing_us": {str(k): v for k, v in self.per_flow_queuing.items()},
            "sample_counts": self.sample_counts,
        }


# ---------------------------------------------------------------------------
# Handshake-driven estimators
# ---------------------------------------------------------------------------


def trim_handshakes(
    handshakes: Sequence[Handshake], quantile: float | None = TRIM_QUANTILE
) -> list[Handshake]:
    """Drop handshakes whose total latency exceeds the given quantile.

    Guards every estimator against pairs accidentally spanning an idle period;
    pass ``None`` to keep everything.
    """
    if quantile is None or len(handshakes) < 2:
        return list(handshakes)
    lats = sorted(h.t_rx_end_ack - h.t_tx_end_seg for h in handshakes)
    cut = lats[min(len(lats) - 1, math.ceil(quantile * len(lats)) - 1)]
    return [h for h in handshakes if h.t_rx_end_ack - h.t_tx_end_seg <= cut]


def estimate_total_latency(handshakes: Sequence[Handshake]) -> float:
    """Mean uplink latency: ACK reception end minus segment transmission end."""
    if not handshakes:
        raise NoHandshakes("total latency needs at least one handshake")
    return sum(h.t_rx_end_ack - h.t_tx_end_seg for h in handshakes) / len(handshakes)


def estimate_access_delay(handshakes: Sequence[Handshake]) -> tuple[float, list[float]]:
    """Mean channel-access delay from per-transmission gaps.

    An Immediate handshake contributes ACK start minus segment end.  In a
    Queued handshake the station was backlogged, so every reception start
    after the first follows its predecessor's end by exactly one access; the
    first reception's gap is excluded because it may hide queue drain.
    """
    if not handshakes:
        raise NoHandshakes("access delay needs at least one handshake")
    samples: list[float] = []
    for hs in handshakes:
        if hs.hs_class is HsClass.IMMEDIATE:
            samples.append(hs.t_rx_start_ack - hs.t_tx_end_seg)
            continue
        ints = hs.intermediates
        for prev, cur in zip(ints, ints[1:]):
            samples.append(cur[0] - prev[1])
        samples.append(hs.t_rx_start_ack - ints[-1][1])
    return (sum(samples) / len(samples) if samples else 0.0), samples


def estimate_queuing_delay(
    handshakes: Sequence[Handshake],
) -> tuple[float, dict[FlowKey, float]]:
    """Mean queue-drain delay and each competing flow's share of it.

    The ACK's queuing delay is the time until the station finished flushing
    what was already queued: zero for Immediate handshakes, last-intermediate
    end minus segment end for Queued ones.  Each intermediate's contribution
    is its own reception end minus its predecessor's (the segment end for the
    first), attributed to the intermediate's flow; summed per flow and
    averaged over *all* handshakes, the contributions add up to the total.
    """
    if not handshakes:
        raise NoHandshakes("queuing delay needs at least one handshake")
    total = 0.0
    per_flow: dict[FlowKey, float] = {}
    for hs in handshakes:
        if hs.hs_class is HsClass.IMMEDIATE:
            continue
        ints = hs.intermediates
        total += ints[-1][1] - hs.t_tx_end_seg
        prev_end = hs.t_tx_end_seg
        for _start, end, flow, _retry in ints:
            per_flow[flow] = per_flow.get(flow, 0.0) + (end - prev_end)
            prev_end = end
    n = len(handshakes)
    return total / n, {flow: v / n for flow, v in per_flow.items()}


def estimate_first_attempt_defer(
    handshakes: Sequence[Handshake], attempt: AttemptModel
) -> float:
    """Mean defer time within a single (non-retried) channel access.

    Uses only handshakes whose ACK carried no retry bit, so the whole
    head-to-reception-end span is one attempt; subtracting the known mean
    contention, the DIFS, and the transmission time leaves deference to other
    traffic.  The head time is the segment end (Immediate) or the last
    intermediate's reception end (Queued).  Clamped at zero.
    """
    clean = [h for h in handshakes if not h.ack_retry_flag]
    if not clean:
        raise NoCleanHandshakes("all ACKs carried the retry bit")
    acc = 0.0
    for hs in clean:
        t_head = (
            hs.t_tx_end_seg
            if hs.hs_class is HsClass.IMMEDIATE
            else hs.intermediates[-1][1]
        )
        acc += hs.t_rx_end_ack - t_head
    mean_span = acc / len(clean)
    return max(
        0.0,
        mean_span - theta_contn(1, attempt.sigma) - attempt.difs_us - attempt.phi_tx,
    )


def estimate_retx_and_defer(
    phi_access: float, phi_tx: float, attempt: AttemptModel
) -> tuple[float, float]:
    """Explain the access budget as escalating attempts: (R, Psi_defer).

    Greedily fits the attempt durations Z_1, Z_2, ... into the budget
    ``phi_access + phi_tx``; the last partial attempt is prorated linearly.
    R is the fitted attempt count minus one.  Psi_defer charges the
    per-attempt defer estimate once per fitted attempt; any budget beyond the
    retry-limit table is deference by definition and lands in the residual.
    """
    if phi_access < 0 or phi_tx < 0:
        raise InvalidBudget(f"negative budget components: {phi_access}, {phi_tx}")
    budget = phi_access + phi_tx
    z = attempt.z_k
    cum = 0.0
    attempts = 0.0
    for k, z_next in enumerate(z, start=1):
        if cum + z_next > budget:
            attempts = (k - 1) + (budget - cum) / z_next
            break
        cum += z_next
        attempts = float(k)
    else:
        # ran past the retry-limit table: everything beyond is defer
        residual = budget - cum
        return float(len(z) - 1), len(z) * attempt.theta_defer_1 + residual
    r_bar = max(0.0, attempts - 1.0)
    psi_defer = attempts * attempt.theta_defer_1
    return r_bar, psi_defer


# ---------------------------------------------------------------------------
# End-to-end pipeline
# ---------------------------------------------------------------------------


def _phi_tx(records: Iterable[PacketRecord], sta: str) -> tuple[float, int]:
    durs = [
        r.ts_end - r.ts_start
        for r in records
        if r.direction is Direction.UPLINK and r.success and r.src_addr == sta
    ]
    return (sum(durs) / len(durs) if durs else 0.0), len(durs)


def decompose_from_log(
    records: Sequence[PacketRecord],
    target_sta: str,
    sigma: float = 9.0,
    difs_us: float = 34.0,
    trim_quantile: float | None = TRIM_QUANTILE,
) -> LatencyBreakdown:
    """Full pipeline: records → handshakes → latency breakdown for one STA."""
    flows = infer_flows(records)
    keys = _snooped_download_flows(flows, target_sta)
    if not keys:
        raise NoHandshakes(f"no snoopable download flow for {target_sta}")
    handshakes: list[Handshake] = []
    for key in keys:
        handshakes.extend(pair_handshakes(flows, key).handshakes)
    if not handshakes:
        raise NoHandshakes(f"no pairable handshakes for {target_sta}")
    handshakes.sort(key=lambda h: h.t_rx_start_ack)
    handshakes = trim_handshakes(handshakes, trim_quantile)

    phi_tx, n_tx = _phi_tx(records, target_sta)
    l_uplink = estimate_total_latency(handshakes)
    phi_access, access_samples = estimate_access_delay(handshakes)
    phi_queuing, per_flow = estimate_queuing_delay(handshakes)

    attempt = AttemptModel(sigma=sigma, difs_us=difs_us, phi_tx=phi_tx)
    try:
        theta_d1 = estimate_first_attempt_defer(handshakes, attempt)
        n_clean = sum(1 for h in handshakes if not h.ack_retry_flag)
    except NoCleanHandshakes:
        theta_d1, n_clean = 0.0, 0
    attempt = AttemptModel(
        sigma=sigma, difs_us=difs_us, phi_tx=phi_tx, theta_defer_1=theta_d1
    )
    r_bar, psi_defer = estimate_retx_and_defer(phi_access, phi_tx, attempt)

    return LatencyBreakdown(
        l_uplink=l_uplink,
        phi_queuing=phi_queuing,
        phi_access=phi_access,
        phi_tx=phi_tx,
        psi_defer=psi_defer,
        r_bar=r_bar,
        per_flow_queuing=per_flow,
        sample_counts={
            "handshakes": len(handshakes),
            "access_samples": len(access_samples),
            "clean_handshakes": n_clean,
            "uplink_receptions": n_tx,
            "queued_handshakes": sum(
                1 for h in handshakes if h.hs_class is HsClass.QUEUED
            ),
        },
    )
