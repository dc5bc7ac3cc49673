"""Analytical throughput model for a MU-MIMO downlink carrying TCP.

The model answers one question: given the radio timing (a
:class:`~wlanlens.wlansim.timeline.TimelineParams`) and the system shape
(antennas, stations, flows, window caps, aggregation caps, backbone delay),
what download throughput does TCP settle at?

The answer depends on which resource saturates first, so the module is
organized around three operating regimes:

* **downlink bottleneck** -- the AP can push fewer segments per channel
  access than the stations can acknowledge; renewal analysis over one
  AP + ACK-burst cycle, with a window-limit correction term.
* **uplink bottleneck** -- ACKs are the scarce resource; the AP drains its
  queues every access, so its aggregation level is a random variable whose
  joint law (user diversity h, max backlog b) is computed exactly.
* **full aggregation** -- both caps exceed the TCP window budget; cycle
  analysis driven by how many stations accumulated a full window, with
  zero-delay, small-delay and general (Markov chain over batch positions)
  variants.

Throughputs are bits/us, i.e. Mb/s.  All internal durations are us.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from math import comb, factorial, lgamma

import numpy as np

from .wlansim.timeline import TimelineParams

__all__ = [
    "Regime",
    "SystemParams",
    "RegimeReport",
    "Bounds",
    "BatchDiversityTable",
    "WrongRegime",
    "NonzeroDelay",
    "SingularChain",
    "REGIME_MARGIN",
    "saturation_rates",
    "classify_regime",
    "throughput_bounds",
    "throughput_downlink",
    "joint_distribution_phb",
    "marginal_user_diversity",
    "tx_count_distribution",
    "throughput_uplink",
    "throughput_full_aggregation",
    "DelayChain",
    "general_delay_chain",
    "analyze",
]


class WrongRegime(ValueError):
    """A regime-specific formula was applied outside its regime."""


class NonzeroDelay(ValueError):
    """A zero-backbone-delay formula was given d_us != 0."""


class SingularChain(ArithmeticError):
    """The batch-position Markov chain has no unique stationary law."""


class Regime(str, Enum):
    DOWNLINK_BOTTLENECK = "DownlinkBottleneck"
    UPLINK_BOTTLENECK = "UplinkBottleneck"
    FULL_AGGREGATION = "FullAggregation"
    INDETERMINATE = "Indeterminate"


# A regime condition must hold with this much slack before we trust the
# regime-specific closed forms; anything closer is Indeterminate.
REGIME_MARGIN = 5.0


@dataclass(frozen=True)
class SystemParams:
    """System shape: who can send how much, and how far the servers are.

    ``b_ap`` / ``b_sta`` are aggregation caps (segments per station per AP
    access, ACK frames per station access); ``b_ap=None`` means unbounded.
    ``t_f`` is the delayed-ACK factor (segments covered per ACK frame),
    ``f_s`` the number of TCP flows per station, ``w_max`` the per-flow
    window cap in segments, ``d_us`` the two-way backbone delay.
    """

    n_ap: int = 4
    n_sta: int = 1
    k: int = 4
    f_s: int = 1
    w_max: int = 200
    t_f: int = 2
    b_ap: int | None = None
    b_sta: int = 100
    d_us: float = 0.0

    def __post_init__(self):
        if self.n_ap < 1 or self.n_sta < 1 or self.k < 1:
            raise ValueError("antenna and station counts must be >= 1")
        if self.f_s < 1 or self.w_max < 1 or self.t_f < 1:
            raise ValueError("f_s, w_max, t_f must be >= 1")
        if self.b_ap is not None and self.b_ap < 1:
            raise ValueError("b_ap must be >= 1 or None")
        if self.b_sta < 1:
            raise ValueError("b_sta must be >= 1")
        if self.d_us < 0:
            raise ValueError("d_us must be >= 0")

    @property
    def window_budget(self) -> int:
        """Total in-flight cap across all flows, segments."""
        return self.k * self.f_s * self.w_max


def saturation_rates(p: SystemParams) -> tuple[float, float, float]:
    """Segments movable per channel access under saturation.

    Returns ``(s_down, s_up, s_sta)``:

    * ``s_down`` -- segments the AP can push in one access (its per-station
      cap times the number of parallel streams it can fill),
    * ``s_sta`` -- segments one station can acknowledge in one access
      (ACK frames times streams times the delayed-ACK factor),
    * ``s_up = k * s_sta`` -- same, across all stations.
    """
    streams_down = min(p.n_ap, p.k * p.n_sta)
    s_down = math.inf if p.b_ap is None else p.b_ap * streams_down
    s_sta = p.b_sta * min(p.n_ap, p.n_sta) * p.t_f
    return s_down, p.k * s_sta, s_sta


def classify_regime(p: SystemParams, margin: float = REGIME_MARGIN) -> Regime:
    """Decide which closed form applies, requiring ``margin`` x slack."""
    s_down, s_up, s_sta = saturation_rates(p)
    budget = p.window_budget
    if s_down <= s_up and budget >= margin * s_down:
        return Regime.DOWNLINK_BOTTLENECK
    if s_down > s_up and p.f_s * p.w_max >= margin * s_sta:
        return Regime.UPLINK_BOTTLENECK
    if s_down >= budget and s_sta >= p.f_s * p.w_max:
        return Regime.FULL_AGGREGATION
    return Regime.INDETERMINATE


@dataclass(frozen=True)
class Bounds:
    """Saturation throughput ceilings, Mb/s, loosest to tightest model."""

    lambda_1: float  # PHY: streams x per-stream rate
    lambda_2: float  # + MAC exchange overhead at full aggregation
    lambda_3: float  # + serial uplink ACK airtime, saturated stations
    lambda_4: float  # + serial uplink ACK airtime, window-limited stations

    def as_dict(self) -> dict[str, float]:
        return {
            "lambda_1": self.lambda_1,
            "lambda_2": self.lambda_2,
            "lambda_3": self.lambda_3,
            "lambda_4": self.lambda_4,
        }


def throughput_bounds(p: SystemParams, t: TimelineParams) -> Bounds:
    """The four successively tighter downlink ceilings for the system."""
    fw = p.f_s * p.w_max
    # One ideal cycle: the AP serves as many stations as it has streams for,
    # flushing each served station's whole flight window.
    served = min(p.k, p.n_ap)
    streams = min(p.n_ap, served * p.n_sta)
    cycle_segs = served * fw
    bits = cycle_segs * t.seg_bits
    a_full = t.a(streams, cycle_segs / streams)
    l1 = min(p.n_ap, p.k * p.n_sta) * t.phy_rate_mbps
    l2 = bits / a_full
    l3 = bits / (a_full + t.t_up(cycle_segs / p.t_f))
    l4 = bits / (a_full + t.t_up(fw / p.t_f))
    return Bounds(l1, l2, l3, l4)


def throughput_downlink(p: SystemParams, t: TimelineParams) -> float:
    """Downlink-bottleneck throughput (renewal cycle + window correction).

    One cycle is a backoff, the AP flushing its aggregation cap, and the
    k* ACK bursts needed to cover it.  The min(1, .) factor caps the rate
    when the flight budget K*F_s*W_max cannot keep the pipe full over a
    cycle stretched by the backbone delay.
    """
    regime = classify_regime(p)
    if regime is not Regime.DOWNLINK_BOTTLENECK:
        raise WrongRegime(f"downlink formula needs DownlinkBottleneck, got {regime.value}")
    s_down, _s_up, s_sta = saturation_rates(p)
    burst = min(p.b_ap, s_sta)  # effective ACKs per station burst
    k_star = s_down / burst
    t_down = t.a(min(p.k, p.n_ap), p.b_ap)
    t_up = t.t_up(burst / p.t_f)
    cbar = 1.0 / t.mu + t_down + k_star * t_up
    window_factor = min(1.0, p.window_budget / ((1.0 + p.d_us / cbar) * s_down))
    return s_down / cbar * window_factor * t.seg_bits


# ---------------------------------------------------------------------------
# Joint law of (user diversity, max backlog) at AP channel access
# ---------------------------------------------------------------------------


@dataclass
class BatchDiversityTable:
    """Joint law of (h, b): stations with data at the AP and max backlog.

    ``p[(h, b)]`` is the probability the AP, on winning contention, has
    ``h`` non-empty queues whose longest holds ``b`` station bursts.
    ``p_hat[(h1, h2, b)]`` is the pre-first-ACK refinement (h1 queues at
    exactly b, h2 queues strictly shorter).  ``atom`` is the all-empty
    probability mass 1/(k+1) that the first ACK turns into (1, 1).
    Values are ``fractions.Fraction`` in exact mode, floats otherwise.
    """

    k: int
    b_max: int
    exact: bool
    p: dict
    p_hat: dict
    atom: object
    tail: object  # probability mass scattered beyond b_max

    def total(self):
        return sum(self.p.values()) + self.tail

    def marginal_h(self) -> dict:
        out = defaultdict(lambda: 0)
        for (h, _b), v in self.p.items():
            out[h] += v
        return dict(out)

    def marginal_b(self) -> dict:
        out = defaultdict(lambda: 0)
        for (_h, b), v in self.p.items():
            out[b] += v
        return dict(out)

    def mean_airtime(self, airtime, batch_scale: int = 1, batch_cap: float | None = None):
        """E[airtime(h, b')] with b' = b * batch_scale, optionally capped."""
        acc = 0.0
        for (h, b), v in self.p.items():
            batch = b * batch_scale
            if batch_cap is not None:
                batch = min(batch, batch_cap)
            acc += float(v) * airtime(h, batch)
        return acc


def _conv_int(a: list[int], b: list[int]) -> list[int]:
    out = [0] * (len(a) + len(b) - 1)
    for i, ai in enumerate(a):
        if ai:
            for j, bj in enumerate(b):
                if bj:
                    out[i + j] += ai * bj
    return out


def _phat_exact(k: int, b_max: int) -> dict:
    """All P-hat(h1, h2, b) for b <= b_max as exact rationals.

    The defining integral expands into a factorial series.  Writing the
    'shorter queues' factor as a polynomial with integer coefficients
    scaled by M = (b-1)!,

        T_b(u) = sum_{j=1}^{b-1} u^j M/j!,   (T_b)^h2 = sum_m c_m u^m,

    gives

        P-hat = C(k,h1) C(k-h1,h2) / (b!^h1 M^h2)
                * sum_m c_m (b h1 + m)! / (k+1)^(b h1 + m + 1)

    which is a single exact Fraction per entry.  Everything stays in
    integers until the final division.
    """
    n_fact = k * b_max + (b_max - 1) * (k - 1) + 2
    fact = [1] * (n_fact + 1)
    for i in range(1, n_fact + 1):
        fact[i] = fact[i - 1] * i
    kp1 = k + 1
    out = {}
    for b in range(1, b_max + 1):
        m_scale = fact[b - 1]
        if b >= 2:
            base = [0] + [m_scale // fact[j] for j in range(1, b)]
        else:
            base = None  # no queue can be strictly shorter than 1
        powers: list[list[int] | None] = [[1]]
        for _h2 in range(1, k):
            prev = powers[-1]
            powers.append(_conv_int(prev, base) if (prev is not None and base) else None)
        for h1 in range(1, k + 1):
            n0 = b * h1
            for h2 in range(0, k - h1 + 1):
                poly = powers[h2]
                if poly is None:
                    continue
                top = len(poly) - 1
                kp1_pow = [1] * (top + 1)
                for e in range(1, top + 1):
                    kp1_pow[e] = kp1_pow[e - 1] * kp1
                num = 0
                for m, c in enumerate(poly):
                    if c:
                        num += c * fact[n0 + m] * kp1_pow[top - m]
                num *= comb(k, h1) * comb(k - h1, h2)
                den = fact[b] ** h1 * m_scale ** h2 * kp1 ** (n0 + top + 1)
                val = Fraction(num, den)
                if val:
                    out[(h1, h2, b)] = val
    return out


def _logconv(la: np.ndarray, lb: np.ndarray) -> np.ndarray:
    out = np.full(len(la) + len(lb) - 1, -np.inf)
    for i, ai in enumerate(la):
        if np.isfinite(ai):
            seg = out[i : i + len(lb)]
            np.logaddexp(seg, ai + lb, out=seg)
    return out


def _phat_float(k: int, b_max: int) -> dict:
    """Same table in float64, convolving in log space to dodge underflow."""
    kp1 = k + 1
    log_kp1 = math.log(kp1)
    out = {}
    for b in range(1, b_max + 1):
        if b >= 2:
            base = np.array([-np.inf] + [-lgamma(j + 1) for j in range(1, b)])
        else:
            base = None
        powers: list[np.ndarray | None] = [np.zeros(1)]
        for _h2 in range(1, k):
            prev = powers[-1]
            powers.append(_logconv(prev, base) if (prev is not None and base is not None) else None)
        for h1 in range(1, k + 1):
            n0 = b * h1
            for h2 in range(0, k - h1 + 1):
                poly = powers[h2]
                if poly is None:
                    continue
                m = np.arange(len(poly))
                terms = poly + np.array([lgamma(n0 + mm + 1) for mm in m]) - (n0 + m + 1) * log_kp1
                hi = terms.max()
                if not np.isfinite(hi):
                    continue
                log_sum = hi + math.log(np.exp(terms - hi).sum())
                log_val = (
                    math.log(comb(k, h1))
                    + math.log(comb(k - h1, h2))
                    - h1 * lgamma(b + 1)
                    + log_sum
                )
                val = math.exp(log_val)
                if val > 0.0:
                    out[(h1, h2, b)] = val
    return out


def joint_distribution_phb(
    k: int, b_max: int = 40, exact: bool | None = None
) -> BatchDiversityTable:
    """Joint law of (user diversity, max backlog) seen by the AP.

    Exact rationals are the default up to k = 8; larger systems switch to a
    float64 path that evaluates the same factorial series in log space.
    ``b_max`` truncates the backlog support; the lost mass (about
    k * 2**-b_max) is reported in ``tail``, not renormalized away.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if b_max < 1:
        raise ValueError("b_max must be >= 1")
    if exact is None:
        exact = k <= 8
    p_hat = _phat_exact(k, b_max) if exact else _phat_float(k, b_max)
    zero = Fraction(0) if exact else 0.0
    atom = Fraction(1, k + 1) if exact else 1.0 / (k + 1)

    p: dict = defaultdict(lambda: zero)
    tail = zero
    # First deterministic ACK lands on: an empty queue (diversity grows),
    # a maximal queue (backlog grows), or a shorter queue (nothing grows).
    p[(1, 1)] += atom
    for (h1, h2, b), v in p_hat.items():
        s = h1 + h2
        if s < k:
            p[(s + 1, b)] += v * (k - s) / k
        if b + 1 <= b_max:
            p[(s, b + 1)] += v * h1 / k
        else:
            tail += v * h1 / k
        if h2:
            p[(s, b)] += v * h2 / k
    return BatchDiversityTable(
        k=k, b_max=b_max, exact=exact, p=dict(p), p_hat=p_hat, atom=atom, tail=tail
    )


def marginal_user_diversity(k: int) -> dict[str, dict[int, Fraction]]:
    """Closed-form marginals, no joint table needed.

    The pre-first-ACK diversity is uniform on 0..k, and folding the first
    ACK in keeps it uniform: P(h) = 1/k on 1..k.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    p_hat = {h: Fraction(1, k + 1) for h in range(0, k + 1)}
    p = {h: Fraction(1, k) for h in range(1, k + 1)}
    return {"p_hat_h": p_hat, "p_h": p}


def tx_count_distribution(m_max: int) -> dict[int, Fraction]:
    """P(M = m) = 2**-(m+1): station transmissions before the AP wins."""
    if m_max < 0:
        raise ValueError("m_max must be >= 0")
    return {m: Fraction(1, 2 ** (m + 1)) for m in range(0, m_max + 1)}


def _capped_mean_tx(m_bar: float) -> float:
    """E[min(M, m_bar)] under P(m) = 2**-(m+1), i.e. 1 - 2**-m_bar."""
    return 1.0 - 0.5 ** m_bar


def throughput_uplink(
    p: SystemParams,
    t: TimelineParams,
    table: BatchDiversityTable | None = None,
    margin: float = REGIME_MARGIN,
) -> float:
    """Uplink-bottleneck throughput via cycle analysis over AP drains.

    A cycle holds one deterministic station burst, on average one more
    burst per station before the AP wins contention, and the AP's own
    exchange whose airtime is averaged over the joint (h, b) law.  When
    the per-flow budget f_s*w_max is not much larger than a station burst,
    each station's expected extra bursts shrink from 1 to 1 - 2**-m_bar
    (m_bar = budget / burst) and the AP batch is capped at the budget;
    as m_bar grows this reduces smoothly to the uncapped cycle count K+1.
    """
    regime = classify_regime(p, margin)
    if regime is not Regime.UPLINK_BOTTLENECK:
        raise WrongRegime(f"uplink formula needs UplinkBottleneck, got {regime.value}")
    if p.d_us != 0:
        raise NonzeroDelay("uplink-bottleneck analysis assumes a zero-delay backbone")
    _s_down, _s_up, s_sta = saturation_rates(p)
    if table is None:
        table = joint_distribution_phb(p.k)
    if table.k != p.k:
        raise ValueError(f"table built for k={table.k}, system has k={p.k}")
    fw = p.f_s * p.w_max
    t_up = t.t_up(p.b_sta)
    mu = t.mu
    k = p.k
    overhead = 1.0 / (k * mu) + (k + 1) * (1.0 / ((k + 1) * mu) + t_up)
    s_sta_int = int(round(s_sta))
    m_bar = fw / s_sta
    if m_bar >= 50:
        # The cap cannot bind within the table's backlog support and
        # 2**-m_bar has vanished: this is the plain saturated-station form.
        mean_a = table.mean_airtime(t.a, batch_scale=s_sta_int)
        bursts = k + 1.0
    else:
        mean_a = table.mean_airtime(t.a, batch_scale=s_sta_int, batch_cap=fw)
        bursts = 1.0 + k * _capped_mean_tx(m_bar)
    return bursts * s_sta * t.seg_bits / (overhead + mean_a)


# ---------------------------------------------------------------------------
# Full aggregation regime
# ---------------------------------------------------------------------------


def _full_agg_zero_delay(p: SystemParams, t: TimelineParams) -> float:
    """Zero backbone delay: the h stations that went first have windows back."""
    k, mu = p.k, t.mu
    fw = p.f_s * p.w_max
    t_up = t.t_up(fw / p.t_f)
    num = 0.0
    den = 1.0 / (mu * k)
    for h in range(1, k + 1):
        contention = sum(1.0 / (mu * (k - j)) for j in range(0, h))
        num += (1.0 / k) * h * fw
        den += (1.0 / k) * (t.a(h, fw) + h * t_up + contention)
    return num * t.seg_bits / den


def _full_agg_small_delay(p: SystemParams, t: TimelineParams) -> float:
    """Small positive delay: batches in flight miss the AP's next access."""
    k, mu = p.k, t.mu
    fw = p.f_s * p.w_max
    t_up = t.t_up(fw / p.t_f)
    num = 0.0
    den = 0.0
    for h in range(0, k):
        contention = sum(1.0 / (mu * (k - j)) for j in range(0, h + 1))
        num += (1.0 / k) * max(1, h) * fw
        den += (1.0 / k) * (t.a(max(1, h), fw) + h * t_up + contention)
    return num * t.seg_bits / den


@dataclass
class DelayChain:
    """The batch-position Markov chain, exposed for inspection.

    ``states[i] = (m1, m2)``: batches the AP just transmitted / batches
    parked at stations (the rest are crossing the backbone).  ``trans`` is
    the row-stochastic transition matrix, ``reward[i]`` the expected cycle
    duration out of state i, ``pi`` the stationary distribution.
    """

    states: list[tuple[int, int]]
    trans: np.ndarray
    reward: np.ndarray
    pi: np.ndarray

    @property
    def mean_batches(self) -> float:
        return float(sum(self.pi[i] * m1 for i, (m1, _m2) in enumerate(self.states)))

    @property
    def mean_cycle_us(self) -> float:
        return float(self.pi @ self.reward)


def _stationary(trans: np.ndarray) -> np.ndarray:
    n = len(trans)
    m_mat = trans.T - np.eye(n)
    m_mat[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    try:
        pi = np.linalg.solve(m_mat, rhs)
        if np.all(np.isfinite(pi)) and pi.min() > -1e-9:
            return np.clip(pi, 0.0, None) / np.clip(pi, 0.0, None).sum()
    except np.linalg.LinAlgError:
        pass
    # fall back to power iteration before declaring the chain singular
    pi = np.full(n, 1.0 / n)
    for _ in range(200_000):
        nxt = pi @ trans
        if np.abs(nxt - pi).max() < 1e-14:
            return nxt / nxt.sum()
        pi = nxt
    residual = np.abs(pi @ trans - pi).max()
    if residual < 1e-12:
        return pi / pi.sum()
    raise SingularChain(f"no unique stationary distribution (residual {residual:.2e})")


def general_delay_chain(p: SystemParams, t: TimelineParams) -> DelayChain:
    """Build and solve the exponential-delay chain of the full-agg regime.

    State (m1, m2): m1 batches the AP just transmitted, m2 still parked at
    stations; the remaining m3 = k - m1 - m2 are crossing the backbone.
    Transitions count how many crossings complete during the station-drain
    window V; rewards are the matching cycle durations.
    """
    if p.d_us <= 0:
        raise ValueError("general delay mode needs d_us > 0; use delay_mode='zero'")
    if p.k < 2:
        raise ValueError("the chain needs k >= 2; k = 1 has a closed form")
    k, mu = p.k, t.mu
    fw = p.f_s * p.w_max
    t_up = t.t_up(fw / p.t_f)
    lam = 1.0 / p.d_us

    states = [(m1, m2) for m1 in range(1, k) for m2 in range(0, k - m1 + 1)]
    idx = {s: i for i, s in enumerate(states)}
    n = len(states)
    trans = np.zeros((n, n))
    reward = np.zeros(n)
    for (m1, m2) in states:
        i = idx[(m1, m2)]
        m3 = k - m1 - m2
        mm = m1 + m2
        v = t.a(m1, fw) + sum(1.0 / (mu * j) + t_up for j in range(1, mm + 1))
        p0 = math.exp(-lam * m3 * v)
        trans[i, idx[(1, 0)]] += p0
        reward[i] += p0 * (v + p.d_us / k + 1.0 / mu)
        for ka in range(1, m3 + 1):
            rho = comb(m3, ka) * (1.0 - math.exp(-lam * v)) ** ka * math.exp(-lam * (m3 - ka) * v)
            if rho == 0.0:
                continue
            share = rho / (mm + 1)
            for j in range(0, mm + 1):
                contention = sum(1.0 / (mu * (mm + 1 - ii)) for ii in range(0, j + 1))
                r = t.a(m1, fw) + contention + j * t_up
                trans[i, idx[(ka, mm - j)]] += share
                reward[i] += share * r
    rowsum = trans.sum(axis=1)
    if not np.allclose(rowsum, 1.0, atol=1e-12):
        raise SingularChain(f"transition rows do not sum to 1 (max err {abs(rowsum-1).max():.2e})")
    return DelayChain(states=states, trans=trans, reward=reward, pi=_stationary(trans))


def _full_agg_general(p: SystemParams, t: TimelineParams) -> float:
    fw = p.f_s * p.w_max
    if p.k == 1:  # one batch shuttles back and forth
        cycle = t.a(1, fw) + t.t_up(fw / p.t_f) + 2.0 / t.mu + p.d_us
        return fw * t.seg_bits / cycle
    chain = general_delay_chain(p, t)
    return chain.mean_batches * fw * t.seg_bits / chain.mean_cycle_us


def throughput_full_aggregation(
    p: SystemParams, t: TimelineParams, delay_mode: str = "zero"
) -> float:
    """Full-aggregation throughput for one of three backbone-delay models.

    ``zero`` requires d_us == 0; ``small`` is the D -> 0+ limit where
    in-flight batches always miss the current AP access; ``general``
    treats crossings as exponential with mean d_us.
    """
    regime = classify_regime(p)
    if regime is not Regime.FULL_AGGREGATION:
        raise WrongRegime(f"full-aggregation formula needs FullAggregation, got {regime.value}")
    if delay_mode == "zero":
        if p.d_us != 0:
            raise NonzeroDelay("delay_mode='zero' requires d_us == 0")
        return _full_agg_zero_delay(p, t)
    if delay_mode == "small":
        return _full_agg_small_delay(p, t)
    if delay_mode == "general":
        return _full_agg_general(p, t)
    raise ValueError(f"unknown delay_mode {delay_mode!r}")


@dataclass
class RegimeReport:
    """One-stop summary: rates, regime, predicted rate, ceilings.

    ``ratio_budget_down`` = k*f_s*w_max / s_down and ``ratio_budget_sta`` =
    f_s*w_max / s_sta are the two ">>" ratios behind the classification,
    carried so callers can apply their own margin.
    """

    regime: Regime
    s_down: float
    s_up: float
    s_sta: float
    lambda_mbps: float | None
    bounds: Bounds
    ratio_budget_down: float
    ratio_budget_sta: float
    note: str = ""

    def as_dict(self) -> dict:
        return {
            "regime": self.regime.value,
            "s_down": self.s_down,
            "s_up": self.s_up,
            "s_sta": self.s_sta,
            "lambda_mbps": self.lambda_mbps,
            "bounds": self.bounds.as_dict(),
            "ratio_budget_down": self.ratio_budget_down,
            "ratio_budget_sta": self.ratio_budget_sta,
            "note": self.note,
        }


def analyze(p: SystemParams, t: TimelineParams, margin: float = REGIME_MARGIN) -> RegimeReport:
    """Classify the system and evaluate the matching throughput formula."""
    s_down, s_up, s_sta = saturation_rates(p)
    regime = classify_regime(p, margin)
    bounds = throughput_bounds(p, t)
    lam: float | None = None
    note = ""
    if regime is Regime.DOWNLINK_BOTTLENECK:
        lam = throughput_downlink(p, t)
    elif regime is Regime.UPLINK_BOTTLENECK:
        if p.d_us == 0:
            lam = throughput_uplink(p, t, margin=margin)
        else:
            note = "uplink-bottleneck analysis needs d_us == 0; no prediction"
    elif regime is Regime.FULL_AGGREGATION:
        mode = "zero" if p.d_us == 0 else "general"
        lam = throughput_full_aggregation(p, t, delay_mode=mode)
        note = f"delay_mode={mode}"
    else:
        note = "no closed form applies at this margin"
    return RegimeReport(
        regime=regime,
        s_down=s_down,
        s_up=s_up,
        s_sta=s_sta,
        lambda_mbps=lam,
        bounds=bounds,
        ratio_budget_down=p.window_budget / s_down,
        ratio_budget_sta=p.f_s * p.w_max / s_sta,
        note=note,
    )
