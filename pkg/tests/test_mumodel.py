"""Analytical model: exact distribution oracles, frozen throughputs, regimes."""

import dataclasses
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wlanlens.kernels import sample_joint_hb, sample_tx_count
from wlanlens.mumodel import (
    Bounds,
    NonzeroDelay,
    Regime,
    SingularChain,
    SystemParams,
    WrongRegime,
    analyze,
    classify_regime,
    general_delay_chain,
    joint_distribution_phb,
    marginal_user_diversity,
    saturation_rates,
    throughput_bounds,
    throughput_downlink,
    throughput_full_aggregation,
    throughput_uplink,
    tx_count_distribution,
)
from wlanlens.profiles import get_profile
from wlanlens.wlansim.timeline import TimelineParams, mumimo_timeline, uplink_burst_us

PROF = get_profile("reference-system")
T = TimelineParams.from_profile(PROF)

# Reference system: 4x1 MU-MIMO, 4 stations, one 200-segment flow each,
# delayed ACKs covering 2 segments.
REF_FULL_AGG = SystemParams(
    n_ap=4, n_sta=1, k=4, f_s=1, w_max=200, t_f=2, b_ap=None, b_sta=100, d_us=0.0
)


# ---------------------------------------------------------------------------
# joint distribution of (user diversity, max backlog)
# ---------------------------------------------------------------------------


class TestJointDistribution:
    def test_phat_2_1_3_exact(self):
        tab = joint_distribution_phb(4)
        assert tab.p_hat[(2, 1, 3)] == Fraction(3024, 390625)

    def test_atom_is_all_idle_probability(self):
        for k in (1, 2, 4, 6):
            assert joint_distribution_phb(k, b_max=8).atom == Fraction(1, k + 1)

    @pytest.mark.parametrize("k", [1, 2, 3, 4, 6, 8])
    def test_sums_to_one(self, k):
        tab = joint_distribution_phb(k)
        assert abs(1 - float(tab.total())) < 1e-9
        # everything kept, nothing negative
        assert all(v >= 0 for v in tab.p.values())
        assert float(tab.tail) < 1e-9

    @pytest.mark.parametrize("k", [2, 3, 4, 5, 8])
    def test_marginal_h_uniform(self, k):
        tab = joint_distribution_phb(k)
        marg = tab.marginal_h()
        assert set(marg) == set(range(1, k + 1))
        for h in range(1, k + 1):
            assert abs(float(marg[h]) - 1 / k) < 1e-9

    def test_matches_closed_form_marginals(self):
        closed = marginal_user_diversity(4)
        assert closed["p_h"] == {h: Fraction(1, 4) for h in range(1, 5)}
        assert closed["p_hat_h"] == {h: Fraction(1, 5) for h in range(0, 5)}
        tab = joint_distribution_phb(4)
        from collections import defaultdict

        hat_marg = defaultdict(Fraction)
        hat_marg[0] = tab.atom
        for (h1, h2, _b), v in tab.p_hat.items():
            hat_marg[h1 + h2] += v
        for h in range(0, 5):
            assert abs(float(hat_marg[h] - Fraction(1, 5))) < 1e-9

    def test_float_mode_matches_exact(self):
        ex = joint_distribution_phb(4, exact=True)
        fl = joint_distribution_phb(4, exact=False)
        assert not fl.exact and ex.exact
        worst = max(abs(float(ex.p[key]) - fl.p.get(key, 0.0)) for key in ex.p)
        assert worst < 1e-13

    def test_large_k_uses_float_and_stays_uniform(self):
        tab = joint_distribution_phb(12)
        assert not tab.exact
        for h, v in tab.marginal_h().items():
            assert abs(v - 1 / 12) < 1e-9

    @pytest.mark.parametrize("k", [2, 3, 4])
    def test_monte_carlo_agreement(self, k):
        # The defining process: per-station Poisson counts under an
        # exponential AP backoff, plus one deterministic first ACK.
        n = 10**6
        hist = sample_joint_hb(k, n, seed=k)
        tab = joint_distribution_phb(k)
        for (h, b), v in tab.p.items():
            pv = float(v)
            if pv < 1e-5:
                continue
            sigma = math.sqrt(pv * (1 - pv) / n)
            got = hist[h, b] / n if b <= hist.shape[1] - 1 else 0.0
            assert abs(got - pv) < max(3 * sigma, 1e-5), (h, b, got, pv)

    def test_tx_count_distribution(self):
        dist = tx_count_distribution(10)
        assert dist[0] == Fraction(1, 2)
        assert dist[3] == Fraction(1, 16)
        assert abs(float(sum(dist.values())) - 1) < 2**-10
        n = 10**6
        hist = sample_tx_count(n, seed=11, m_cap=30)
        for m in range(6):
            pv = 2.0 ** -(m + 1)
            sigma = math.sqrt(pv * (1 - pv) / n)
            assert abs(hist[m] / n - pv) < 3 * sigma

    def test_bad_args(self):
        with pytest.raises(ValueError):
            joint_distribution_phb(0)
        with pytest.raises(ValueError):
            joint_distribution_phb(4, b_max=0)
        with pytest.raises(ValueError):
            marginal_user_diversity(0)


# ---------------------------------------------------------------------------
# saturation rates and regimes
# ---------------------------------------------------------------------------


class TestRegimes:
    def test_saturation_rate_examples(self):
        s_down, _, _ = saturation_rates(SystemParams(b_ap=10, n_ap=4, k=4, n_sta=1))
        assert s_down == 40
        _, s_up, s_sta = saturation_rates(SystemParams(k=4, b_sta=1, n_ap=4, n_sta=1, t_f=2))
        assert (s_sta, s_up) == (2, 8)

    @given(
        b=st.integers(min_value=1, max_value=64),
        k=st.integers(min_value=1, max_value=16),
        t_f=st.integers(min_value=1, max_value=2),
    )
    def test_legacy_single_antenna_ap_is_bottleneck(self, b, k, t_f):
        # With one antenna on both sides and equal caps, the AP can never
        # outrun the stations.
        p = SystemParams(n_ap=1, n_sta=1, k=k, b_ap=b, b_sta=b, t_f=t_f)
        s_down, s_up, _ = saturation_rates(p)
        assert s_down <= s_up

    def test_classify_examples(self):
        assert (
            classify_regime(dataclasses.replace(REF_FULL_AGG, b_ap=32, b_sta=32))
            is Regime.DOWNLINK_BOTTLENECK
        )
        assert (
            classify_regime(dataclasses.replace(REF_FULL_AGG, b_ap=None, b_sta=1))
            is Regime.UPLINK_BOTTLENECK
        )
        assert classify_regime(REF_FULL_AGG) is Regime.FULL_AGGREGATION
        # b_ap large enough to exceed the budget outright
        assert (
            classify_regime(dataclasses.replace(REF_FULL_AGG, b_ap=800, b_sta=100))
            is Regime.FULL_AGGREGATION
        )

    def test_classify_margin(self):
        # s_down = 128, budget = 800: 6.25x margin passes, 7x margin fails.
        p = dataclasses.replace(REF_FULL_AGG, b_ap=32, b_sta=32)
        assert classify_regime(p, margin=6.0) is Regime.DOWNLINK_BOTTLENECK
        assert classify_regime(p, margin=7.0) is Regime.INDETERMINATE

    def test_classification_ignores_byte_sizes(self):
        # Regime is a statement about packet counts; frame/ACK byte sizes
        # (and the timeline entirely) must not affect it.
        assert classify_regime(REF_FULL_AGG) is Regime.FULL_AGGREGATION

    def test_report_fields(self):
        rep = analyze(REF_FULL_AGG, T)
        assert rep.regime is Regime.FULL_AGGREGATION
        assert rep.s_up == rep.s_sta * REF_FULL_AGG.k
        assert rep.ratio_budget_sta == pytest.approx(1.0)
        assert rep.lambda_mbps == pytest.approx(113.52, abs=0.05)
        d = rep.as_dict()
        assert d["regime"] == "FullAggregation"
        assert d["bounds"]["lambda_1"] == pytest.approx(216.0)

    def test_param_validation(self):
        with pytest.raises(ValueError):
            SystemParams(k=0)
        with pytest.raises(ValueError):
            SystemParams(b_ap=0)
        with pytest.raises(ValueError):
            SystemParams(d_us=-1.0)


# ---------------------------------------------------------------------------
# bounds
# ---------------------------------------------------------------------------


class TestBounds:
    def test_reference_values(self):
        b = throughput_bounds(REF_FULL_AGG, T)
        # Targets: 216 / 192.5 / 172.5 / 187.0 Mb/s, profile calibrated to 2%.
        assert b.lambda_1 == pytest.approx(216.0, rel=1e-12)
        assert b.lambda_2 == pytest.approx(192.5, rel=0.02)
        assert b.lambda_3 == pytest.approx(172.5, rel=0.02)
        assert b.lambda_4 == pytest.approx(187.0, rel=0.02)
        # Frozen exact values of this profile (guards against drift).
        assert b.lambda_2 == pytest.approx(192.48748458, rel=1e-9)
        assert b.lambda_3 == pytest.approx(172.24558452, rel=1e-9)
        assert b.lambda_4 == pytest.approx(186.63426488, rel=1e-9)

    @given(
        k=st.integers(min_value=1, max_value=12),
        w_max=st.integers(min_value=4, max_value=512),
        t_f=st.integers(min_value=1, max_value=4),
        f_s=st.integers(min_value=1, max_value=4),
        n_ap=st.integers(min_value=1, max_value=8),
    )
    @settings(max_examples=200, deadline=None)
    def test_bound_ordering(self, k, w_max, t_f, f_s, n_ap):
        p = SystemParams(n_ap=n_ap, k=k, w_max=w_max, t_f=t_f, f_s=f_s)
        b = throughput_bounds(p, T)
        assert b.lambda_3 <= b.lambda_4 + 1e-9
        assert b.lambda_4 <= b.lambda_2 + 1e-9
        assert b.lambda_2 <= b.lambda_1 + 1e-9


# ---------------------------------------------------------------------------
# regime throughput formulas
# ---------------------------------------------------------------------------


def _independent_zero_delay_value() -> float:
    # Straight transcription of the zero-delay cycle average, kept separate
    # from the implementation on purpose.
    mu = 1.0 / 72.0
    t_up = uplink_burst_us(100, PROF)
    num = sum(0.25 * h * 200 for h in range(1, 5)) * 8192
    den = 1.0 / (4 * mu)
    for h in range(1, 5):
        cont = sum(72.0 / (4 - j) for j in range(0, h))
        den += 0.25 * (mumimo_timeline(h, 200, PROF) + h * t_up + cont)
    return num / den


def _independent_small_delay_value() -> float:
    mu = 1.0 / 72.0
    t_up = uplink_burst_us(100, PROF)
    num = sum(0.25 * max(1, h) * 200 for h in range(0, 4)) * 8192
    den = 0.0
    for h in range(0, 4):
        cont = sum(72.0 / (4 - j) for j in range(0, h + 1))
        den += 0.25 * (mumimo_timeline(max(1, h), 200, PROF) + h * t_up + cont)
    return num / den


class TestFullAggregation:
    def test_zero_delay_frozen(self):
        lam = throughput_full_aggregation(REF_FULL_AGG, T, "zero")
        assert lam == pytest.approx(_independent_zero_delay_value(), rel=1e-12)
        assert lam == pytest.approx(113.52, abs=0.05)  # "about 113 Mb/s"

    def test_zero_delay_vs_lambda3_ratio(self):
        lam = throughput_full_aggregation(REF_FULL_AGG, T, "zero")
        b = throughput_bounds(REF_FULL_AGG, T)
        assert 0.55 <= lam / b.lambda_3 <= 0.70  # ~0.65, prediction 0.625

    def test_small_delay_frozen(self):
        lam = throughput_full_aggregation(REF_FULL_AGG, T, "small")
        assert lam == pytest.approx(_independent_small_delay_value(), rel=1e-12)
        assert lam == pytest.approx(82.79, abs=0.05)
        # "no more than 86 Mb/s ... 50% of bound lambda3, roughly 44%"
        b = throughput_bounds(REF_FULL_AGG, T)
        assert lam <= 86.0
        assert lam / b.lambda_3 == pytest.approx(14 / 32, abs=0.05)

    def test_small_delay_user_diversity_mean(self):
        # P(1)=2/K, P(h)=1/K for 2<=h<=K-1: mean (K^2-K+2)/(2K) = 1.75 at K=4.
        k = 4
        mean = (2 / k) * 1 + sum(h / k for h in range(2, k))
        assert mean == pytest.approx((k * k - k + 2) / (2 * k)) == pytest.approx(1.75)

    def test_general_limits_toward_small_delay(self):
        # The exponential-delay chain and the small-delay form are distinct
        # approximations; their D->0+ gap is +0.76% (W_max=50) and +1.36%
        # (W_max=200) for this profile.  Pin both measured gaps.
        for w_max, tol in ((50, 0.01), (200, 0.015)):
            p = dataclasses.replace(REF_FULL_AGG, w_max=w_max, b_sta=100)
            small = throughput_full_aggregation(p, T, "small")
            tiny = dataclasses.replace(p, d_us=0.01)
            gen = throughput_full_aggregation(tiny, T, "general")
            assert abs(gen - small) / small < tol, (w_max, gen, small)

    def test_general_decreases_with_large_delay(self):
        lams = []
        for d_ms in (1, 5, 20, 100, 200):
            p = dataclasses.replace(REF_FULL_AGG, d_us=d_ms * 1000.0)
            lams.append(throughput_full_aggregation(p, T, "general"))
        assert all(a > b for a, b in zip(lams, lams[1:]))
        # At very large delay throughput collapses toward the pipe limit.
        assert lams[-1] < 30.0

    def test_chain_shape_and_stationarity(self):
        for k in (2, 3, 4, 6):
            p = dataclasses.replace(REF_FULL_AGG, k=k, n_ap=max(4, k), d_us=20000.0)
            chain = general_delay_chain(p, T)
            assert len(chain.states) == (k * k + k - 2) // 2
            assert np.all(chain.pi >= 0)
            assert chain.pi.sum() == pytest.approx(1.0, abs=1e-12)
            # pi is stationary: pi P = pi
            assert np.abs(chain.pi @ chain.trans - chain.pi).max() < 1e-10

    def test_mode_and_regime_errors(self):
        with pytest.raises(NonzeroDelay):
            throughput_full_aggregation(
                dataclasses.replace(REF_FULL_AGG, d_us=5.0), T, "zero"
            )
        with pytest.raises(ValueError):
            throughput_full_aggregation(REF_FULL_AGG, T, "general")
        with pytest.raises(ValueError):
            throughput_full_aggregation(REF_FULL_AGG, T, "bogus")
        with pytest.raises(WrongRegime):
            throughput_full_aggregation(
                dataclasses.replace(REF_FULL_AGG, b_ap=8), T, "zero"
            )


class TestUplink:
    def test_station_aggregation_sweep_monotone(self):
        tab = joint_distribution_phb(4)
        lams = []
        for b_sta in (1, 2, 5, 10, 20):
            p = dataclasses.replace(REF_FULL_AGG, b_sta=b_sta)
            lams.append(throughput_uplink(p, T, table=tab))
        assert all(a < b for a, b in zip(lams, lams[1:]))
        # Small station bursts are crippling; full aggregation lands ~113.
        assert lams[0] < 40.0
        assert lams[-1] < 113.52

    def test_capped_refinement_continuous_with_uncapped(self):
        # Around the dispatch point the capped form must have already
        # converged to the plain one.
        tab = joint_distribution_phb(4)
        p = dataclasses.replace(REF_FULL_AGG, w_max=10_000, b_sta=100, t_f=2)
        full = throughput_uplink(p, T, table=tab)
        p49 = dataclasses.replace(p, w_max=9_800)  # m_bar = 49
        p51 = dataclasses.replace(p, w_max=10_200)  # m_bar = 51
        a = throughput_uplink(p49, T, table=tab)
        b = throughput_uplink(p51, T, table=tab)
        assert a == pytest.approx(full, rel=1e-6)
        assert b == pytest.approx(full, rel=1e-6)

    def test_errors(self):
        with pytest.raises(WrongRegime):
            throughput_uplink(REF_FULL_AGG, T)
        with pytest.raises(NonzeroDelay):
            throughput_uplink(
                dataclasses.replace(REF_FULL_AGG, b_sta=1, d_us=10.0), T
            )
        tab8 = joint_distribution_phb(2, b_max=4)
        with pytest.raises(ValueError):
            throughput_uplink(dataclasses.replace(REF_FULL_AGG, b_sta=1), T, table=tab8)


class TestDownlink:
    def test_reduces_to_cycle_rate_when_budget_large(self):
        p = dataclasses.replace(REF_FULL_AGG, b_ap=8, b_sta=100, w_max=10_000)
        s_down, _, s_sta = saturation_rates(p)
        burst = min(p.b_ap, s_sta)
        cbar = 72.0 + mumimo_timeline(4, 8, PROF) + (s_down / burst) * uplink_burst_us(
            burst / p.t_f, PROF
        )
        assert throughput_downlink(p, T) == pytest.approx(s_down / cbar * 8192, rel=1e-12)

    def test_pipe_limited_asymptote(self):
        # With huge delay the window budget caps throughput at budget/D.
        d_us = 1e9
        p = dataclasses.replace(REF_FULL_AGG, b_ap=32, b_sta=32, d_us=d_us)
        lam = throughput_downlink(p, T)
        assert lam == pytest.approx(p.window_budget * 8192 / d_us, rel=0.01)

    def test_monotone_in_delay(self):
        lams = [
            throughput_downlink(
                dataclasses.replace(REF_FULL_AGG, b_ap=32, b_sta=32, d_us=d), T
            )
            for d in (0.0, 1e4, 1e5, 1e6)
        ]
        assert all(a >= b - 1e-12 for a, b in zip(lams, lams[1:]))

    def test_wrong_regime(self):
        with pytest.raises(WrongRegime):
            throughput_downlink(REF_FULL_AGG, T)


class TestCrossRegime:
    @given(
        b_ap=st.one_of(st.none(), st.integers(min_value=1, max_value=512)),
        b_sta=st.integers(min_value=1, max_value=128),
        k=st.integers(min_value=1, max_value=8),
        t_f=st.integers(min_value=1, max_value=2),
        d_ms=st.sampled_from([0.0, 1.0, 20.0]),
    )
    @settings(max_examples=60, deadline=None)
    def test_any_prediction_is_below_phy_bound(self, b_ap, b_sta, k, t_f, d_ms):
        p = SystemParams(k=k, b_ap=b_ap, b_sta=b_sta, t_f=t_f, d_us=d_ms * 1000.0)
        rep = analyze(p, T)
        if rep.lambda_mbps is not None:
            assert rep.lambda_mbps <= rep.bounds.lambda_1 + 1e-9

    def test_timeline_invariant(self):
        assert T.mu * T.w0 * T.slot_us == pytest.approx(2.0, rel=1e-15)
