"""Closed-loop validation of the passive estimators against the simulator.

The simulator provides two things no testbed can: a per-frame ground-truth
queueing timeline, and the ability to *actually run* the speed test whose
outcome the passive estimator predicts.  This module builds randomized
scenario families (station count, hidden-terminal fraction, ACK thinning,
UDP background load), runs both estimators over the simulated AP log, and
scores them against those oracles.

Suites
------
``run_vst_suite``     predicted download/upload speed vs. a measured test
``run_uscope_suite``  latency decomposition vs. the ground-truth timeline
``sample_size_curve`` estimator error as a function of handshake count
"""

from __future__ import annotations

import dataclasses
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .flowsense import FlowKey
from .trace import GroundTruthRecord, PacketRecord
from .uscope import LatencyBreakdown, decompose_from_log
from .vst import estimate_from_log
from .wlansim.core import (
    FlowConfig,
    SimConfig,
    StaConfig,
    flow_remote_net,
    run,
    run_speed_test,
)

__all__ = [
    "Scenario",
    "scenario_family",
    "build_config",
    "VstOutcome",
    "VstSuiteResult",
    "validate_vst_scenario",
    "run_vst_suite",
    "UscopeOutcome",
    "UscopeSuiteResult",
    "validate_uscope_scenario",
    "run_uscope_suite",
    "sample_size_curve",
]

# Relative errors of near-zero quantities are meaningless, so each metric
# carries a denominator floor at the scale below which we only require the
# estimate to be small in absolute terms (three slot times for defer, a 5%
# retransmission rate, 100 us for the latency terms).
DEFER_FLOOR_US = 27.0
RETX_FLOOR = 0.05
LATENCY_FLOOR_US = 100.0


def _rel_err(est: float, gt: float, floor: float) -> float:
    return abs(est - gt) / max(abs(gt), floor)


# ---------------------------------------------------------------------------
# Scenario family
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    """One randomized validation topology + traffic mix."""

    name: str
    seed: int
    n_stas: int
    hidden_fraction: float
    thinning_n: int
    n_udp_bg: int
    target_flows: int = 1
    duration_us: float = 12e6
    warmup_us: float = 1e6
    b_sta: int = 64

    @property
    def target(self) -> str:
        return "sta:01"


def scenario_family(count: int = 32, base_seed: int = 100) -> list[Scenario]:
    """A deterministic grid over station count, hiddenness, thinning, load.

    Cycles station counts 1-8 against hidden fractions {0, .25, .5, 1},
    alternating ACK thinning and sprinkling extra UDP background flows, so
    any prefix of the family already mixes all the axes.  The cycle lengths
    are chosen pairwise non-locking — in particular the station burst cap
    advances at half the rate of the target flow count — so no two axes move
    in lockstep across the family.
    """
    hidden_levels = (0.0, 0.25, 0.5, 1.0)
    scenarios = []
    for i in range(count):
        n_stas = (i % 8) + 1
        hidden = hidden_levels[(i // 8) % len(hidden_levels)] if n_stas > 1 else 0.0
        thin = 2 if i % 2 == 0 else 1
        n_udp = (i % 4) if n_stas > 1 else 0
        scenarios.append(
            Scenario(
                name=f"s{i:02d}-k{n_stas}-h{int(hidden * 100):03d}-n{thin}-u{n_udp}",
                seed=base_seed + i,
                n_stas=n_stas,
                hidden_fraction=hidden,
                thinning_n=thin,
                n_udp_bg=n_udp,
                target_flows=(i % 3) + 1,
                b_sta=(16, 32, 64)[(i // 2) % 3],
            )
        )
    return scenarios


def build_config(sc: Scenario) -> SimConfig:
    """Materialize a scenario: target download flows plus background mix.

    The hidden fraction selects adjacent *background* pairs that cannot hear
    each other: their blind collisions, retries and defer noise land in the
    channel and the log for the estimator to cope with.  The measured station
    itself is never inside a hidden pair — a station blind-sided by a
    saturating neighbor starves outright under pure carrier sensing, which
    would zero the upload ground truth rather than stress the estimate.
    """
    names = [f"sta:{i:02d}" for i in range(1, sc.n_stas + 1)]
    n_bg = sc.n_stas - 1
    n_hidden_pairs = round(sc.hidden_fraction * max(0, n_bg - 1))
    hidden_map: dict[str, tuple[str, ...]] = {}
    for j in range(n_hidden_pairs):
        a, b = names[1 + j], names[2 + j]
        hidden_map[a] = hidden_map.get(a, ()) + (b,)
    stas = [
        StaConfig(name, hidden_from=hidden_map.get(name, ()), b_sta=sc.b_sta)
        for name in names
    ]

    flows: list[FlowConfig] = [
        FlowConfig(
            kind="tcp_down",
            sta=sc.target,
            w_max=64,
            t_f=sc.thinning_n,
            d_us=10_000.0,
            label=f"target-dl-{i}",
        )
        for i in range(sc.target_flows)
    ]
    # The background is an open-loop UDP mix: every other station carries one
    # flow — directions cycling up/up/down so adjacent (potentially hidden)
    # pairs often contend uplink against each other, rates spread across
    # stations — and ``n_udp_bg`` thickens the mix with extra flows on the
    # first few background stations.
    directions = ("udp_up", "udp_up", "udp_down")
    for j, name in enumerate(names[1:]):
        kind = directions[j % len(directions)]
        flows.append(
            FlowConfig(
                kind=kind,
                sta=name,
                rate_mbps=1.0 + 0.75 * (j % 4),
                label=f"bg-{kind}-{name[-2:]}",
            )
        )
    others = names[1:] or [sc.target]
    for u in range(sc.n_udp_bg):
        sta = others[u % len(others)]
        kind = "udp_down" if u % 2 == 0 else "udp_up"
        flows.append(
            FlowConfig(
                kind=kind,
                sta=sta,
                rate_mbps=2.0 + u,
                label=f"bg-extra-{kind}-{u}",
            )
        )

    return SimConfig(
        seed=sc.seed,
        duration_us=sc.duration_us,
        warmup_us=sc.warmup_us,
        access_mode="realistic",
        backoff_kind="uniform",
        n_ap=4,
        b_ap=64,
        b_sta=sc.b_sta,
        stas=tuple(stas),
        flows=tuple(flows),
    )


def _target_flow_nets(cfg: SimConfig, sc: Scenario) -> dict[str, str]:
    """Map each target download flow's label to its server-side network."""
    out = {}
    for idx, fl in enumerate(cfg.flows):
        if fl.sta == sc.target and fl.kind == "tcp_down":
            out[fl.label or f"flow-{idx}"] = flow_remote_net(idx)
    return out


# ---------------------------------------------------------------------------
# VST: predicted speed test vs. measured speed test
# ---------------------------------------------------------------------------


@dataclass
class VstOutcome:
    scenario: str
    theta_dl_est: float
    theta_dl_gt: float
    theta_ul_est: float
    theta_ul_gt: float
    n_handshakes: int

    @property
    def dl_err(self) -> float:
        return abs(self.theta_dl_est - self.theta_dl_gt) / self.theta_dl_gt

    @property
    def ul_err(self) -> float:
        return abs(self.theta_ul_est - self.theta_ul_gt) / self.theta_ul_gt


@dataclass
class VstSuiteResult:
    outcomes: list[VstOutcome]

    @property
    def mean_dl_err(self) -> float:
        return statistics.fmean(o.dl_err for o in self.outcomes)

    @property
    def mean_ul_err(self) -> float:
        return statistics.fmean(o.ul_err for o in self.outcomes)

    def summary(self) -> dict:
        return {
            "scenarios": len(self.outcomes),
            "mean_download_err": self.mean_dl_err,
            "mean_upload_err": self.mean_ul_err,
            "worst_download_err": max(o.dl_err for o in self.outcomes),
            "worst_upload_err": max(o.ul_err for o in self.outcomes),
        }


def validate_vst_scenario(sc: Scenario) -> VstOutcome:
    """Estimate the target's speeds passively, then actually run the tests.

    The measured test mirrors how a user runs one: the speed-test flows
    replace the target's own traffic (nobody streams while testing), while
    every other station's traffic keeps running.
    """
    cfg = build_config(sc)
    base = run(cfg)
    report = estimate_from_log(
        base.ap_records,
        sc.target,
        thinning_n=sc.thinning_n,
        ap_batch_limit=cfg.b_ap,
        sta_batch_limit=sc.b_sta,
        contend_trace=base.ap_contend_trace,
    )

    test_cfg = dataclasses.replace(
        cfg, flows=tuple(fl for fl in cfg.flows if fl.sta != sc.target)
    )
    _, gt_dl = run_speed_test(test_cfg, sc.target, "down")
    _, gt_ul = run_speed_test(test_cfg, sc.target, "up")
    return VstOutcome(
        scenario=sc.name,
        theta_dl_est=report.estimate.theta_dl_mbps,
        theta_dl_gt=gt_dl,
        theta_ul_est=report.estimate.theta_ul_mbps,
        theta_ul_gt=gt_ul,
        n_handshakes=report.n_handshakes,
    )


def run_vst_suite(
    scenarios: Optional[Sequence[Scenario]] = None, jobs: int = 1
) -> VstSuiteResult:
    scenarios = scenario_family() if scenarios is None else list(scenarios)
    return VstSuiteResult(outcomes=_map(validate_vst_scenario, scenarios, jobs))


# ---------------------------------------------------------------------------
# uScope: latency decomposition vs. ground-truth timelines
# ---------------------------------------------------------------------------


@dataclass
class UscopeOutcome:
    scenario: str
    est: LatencyBreakdown
    gt: dict
    per_flow_errs: list[float] = field(default_factory=list)

    @property
    def errs(self) -> dict:
        e, g = self.est, self.gt
        out = {
            "l_uplink": _rel_err(e.l_uplink, g["l_uplink"], LATENCY_FLOOR_US),
            "phi_access": _rel_err(e.phi_access, g["phi_access"], LATENCY_FLOOR_US),
            "phi_queuing": _rel_err(e.phi_queuing, g["phi_queuing"], LATENCY_FLOOR_US),
            "r_bar": _rel_err(e.r_bar, g["r_bar"], RETX_FLOOR),
            "psi_defer": _rel_err(e.psi_defer, g["psi_defer"], DEFER_FLOOR_US),
        }
        if self.per_flow_errs:
            out["per_flow_queuing"] = statistics.fmean(self.per_flow_errs)
        return out


@dataclass
class UscopeSuiteResult:
    outcomes: list[UscopeOutcome]

    def mean_errs(self) -> dict:
        keys = ("l_uplink", "phi_access", "phi_queuing", "r_bar", "psi_defer",
                "per_flow_queuing")
        means = {}
        for k in keys:
            vals = [o.errs[k] for o in self.outcomes if k in o.errs]
            if vals:
                means[k] = statistics.fmean(vals)
        return means

    def summary(self) -> dict:
        return {"scenarios": len(self.outcomes), "mean_errors": self.mean_errs()}


def ground_truth_breakdown(
    gt_records: Sequence[GroundTruthRecord],
    sta: str,
    flow_labels: Optional[set] = None,
) -> dict:
    """Fold the per-frame ground-truth timelines into uScope's quantities."""
    rows = [g for g in gt_records if g.sta == sta]
    if flow_labels is not None:
        rows = [g for g in rows if g.flow in flow_labels]
    if not rows:
        raise ValueError(f"no ground-truth rows for {sta}")
    per_flow: dict[str, list[float]] = {}
    for g in rows:
        per_flow.setdefault(g.flow, []).append(float(g.t_head - g.t_enq))
    return {
        "l_uplink": statistics.fmean(g.ts_end - g.t_enq for g in rows),
        "phi_access": statistics.fmean(g.ts_start - g.t_head for g in rows),
        "phi_queuing": statistics.fmean(g.t_head - g.t_enq for g in rows),
        "phi_tx": statistics.fmean(g.ts_end - g.ts_start for g in rows),
        "r_bar": statistics.fmean(g.n_retx for g in rows),
        "psi_defer": statistics.fmean(g.defer_us for g in rows),
        "per_flow_queuing": {k: statistics.fmean(v) for k, v in per_flow.items()},
        "n_frames": len(rows),
    }


def _per_flow_errors(
    est_per_flow: dict[FlowKey, float],
    gt_per_flow: dict[str, float],
    label_to_net: dict[str, str],
) -> list[float]:
    """Align estimator flow keys with ground-truth labels via the server net."""
    net_to_label = {net: lab for lab, net in label_to_net.items()}
    errs = []
    for key, est in est_per_flow.items():
        lab = net_to_label.get(key.remote_net)
        if lab is None or lab not in gt_per_flow:
            continue
        errs.append(_rel_err(est, gt_per_flow[lab], LATENCY_FLOOR_US))
    return errs


def validate_uscope_scenario(sc: Scenario) -> UscopeOutcome:
    cfg = build_config(sc)
    res = run(cfg)
    est = decompose_from_log(res.ap_records, sc.target)

    label_to_net = _target_flow_nets(cfg, sc)
    gt = ground_truth_breakdown(
        res.ground_truth, sc.target, flow_labels=set(label_to_net)
    )
    per_flow_errs = _per_flow_errors(
        est.per_flow_queuing, gt["per_flow_queuing"], label_to_net
    )
    return UscopeOutcome(
        scenario=sc.name, est=est, gt=gt, per_flow_errs=per_flow_errs
    )


def run_uscope_suite(
    scenarios: Optional[Sequence[Scenario]] = None, jobs: int = 1
) -> UscopeSuiteResult:
    scenarios = scenario_family() if scenarios is None else list(scenarios)
    return UscopeSuiteResult(outcomes=_map(validate_uscope_scenario, scenarios, jobs))


# ---------------------------------------------------------------------------
# Sample-size sensitivity
# ---------------------------------------------------------------------------


def _truncate_to_handshakes(
    records: Sequence[PacketRecord], sta: str, n: int
) -> list[PacketRecord]:
    """Record prefix covering the station's first ``n`` paired handshakes.

    Pairing is causal, so cutting the log right after the n-th ACK burst
    reproduces what an AP that stopped listening at that moment would have
    seen.
    """
    from .flowsense import infer_flows, pair_handshakes

    flows = infer_flows(records)
    ack_ends = []
    for key, fr in flows.items():
        if key.sta_id == sta and fr.snoopable:
            ack_ends.extend(
                h.t_rx_end_ack for h in pair_handshakes(flows, key).handshakes
            )
    ack_ends.sort()
    if len(ack_ends) <= n:
        return list(records)
    cutoff = ack_ends[n - 1]
    return [r for r in records if r.ts_end <= cutoff]


def sample_size_curve(
    sc: Scenario,
    counts: Sequence[int] = (100, 300, 1000, 3000, 10000),
    quantity: str = "l_uplink",
) -> list[tuple[int, float]]:
    """Estimator error vs. handshake budget, one long run truncated in place."""
    cfg = build_config(sc)
    res = run(cfg)
    label_to_net = _target_flow_nets(cfg, sc)
    gt = ground_truth_breakdown(res.ground_truth, sc.target, set(label_to_net))

    curve = []
    for n in counts:
        sub = _truncate_to_handshakes(res.ap_records, sc.target, n)
        est = decompose_from_log(sub, sc.target)
        err = _rel_err(getattr(est, quantity), gt[quantity], LATENCY_FLOOR_US)
        curve.append((n, err))
    return curve


# ---------------------------------------------------------------------------


def _map(fn, items, jobs: int):
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]
