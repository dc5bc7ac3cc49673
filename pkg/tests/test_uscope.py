"""Latency decomposition estimators and the attempt-fit logic."""

import pytest

from wlanlens.flowsense import FlowKey, Handshake
from wlanlens.trace import Direction, PacketRecord
from wlanlens.uscope import (
    AttemptModel,
    InvalidBudget,
    NoCleanHandshakes,
    NoHandshakes,
    decompose_from_log,
    estimate_access_delay,
    estimate_first_attempt_defer,
    estimate_queuing_delay,
    estimate_retx_and_defer,
    estimate_total_latency,
    theta_contn,
    trim_handshakes,
)

KEY = FlowKey(sta_net="10.0.0.2", remote_net="198.51.100.1", sta_id="sta:01")
KEY2 = FlowKey(sta_net="10.0.0.2", remote_net="203.0.113.7", sta_id="sta:01")


def _hs(seg_end, ack_start, ack_end, intermediates=(), ack_retry=False):
    return Handshake(
        flow=KEY,
        t_tx_end_seg=seg_end,
        t_rx_start_ack=ack_start,
        t_rx_end_ack=ack_end,
        intermediates=intermediates,
        ack_retry_flag=ack_retry,
    )


class TestTotalLatency:
    def test_single(self):
        assert estimate_total_latency([_hs(100, 550, 600)]) == 500

    def test_mean(self):
        hss = [_hs(0, 350, 400), _hs(1000, 1550, 1600)]
        assert estimate_total_latency(hss) == 500

    def test_empty(self):
        with pytest.raises(NoHandshakes):
            estimate_total_latency([])


class TestAccessDelay:
    def test_immediate(self):
        mean, samples = estimate_access_delay([_hs(100, 350, 400)])
        assert samples == [250]
        assert mean == 250

    def test_queued_skips_first_gap(self):
        hs = _hs(
            0,
            700,
            720,
            intermediates=((200, 300, KEY2, False), (450, 550, KEY2, False)),
        )
        mean, samples = estimate_access_delay([hs])
        assert samples == [150, 150]
        assert mean == 150

    def test_samples_non_negative_for_ordered_receptions(self):
        hs = _hs(0, 480, 500, intermediates=((100, 200, KEY2, False), (200, 400, KEY2, False)))
        _, samples = estimate_access_delay([hs])
        assert all(s >= 0 for s in samples)


class TestQueuingDelay:
    def test_immediate_is_zero(self):
        mean, per_flow = estimate_queuing_delay([_hs(100, 350, 400)])
        assert mean == 0.0
        assert per_flow == {}

    def test_queued_sample_and_attribution(self):
        hs = _hs(100, 500, 520, intermediates=((250, 350, KEY2, False),))
        mean, per_flow = estimate_queuing_delay([hs])
        assert mean == 250.0
        assert per_flow == {KEY2: 250.0}

    def test_per_flow_shares_sum_to_total(self):
        hss = [
            _hs(0, 480, 500, intermediates=((100, 200, KEY2, False), (250, 400, KEY, False))),
            _hs(1000, 1400, 1420),
            _hs(2000, 2600, 2620, intermediates=((2100, 2250, KEY, False),)),
        ]
        mean, per_flow = estimate_queuing_delay(hss)
        assert sum(per_flow.values()) == pytest.approx(mean)
        # first handshake: KEY2 gets 200-0, KEY gets 400-200; third: KEY 250
        assert per_flow[KEY2] == pytest.approx(200 / 3)
        assert per_flow[KEY] == pytest.approx((200 + 250) / 3)


class TestFirstAttemptDefer:
    def test_contention_table_value(self):
        assert theta_contn(1, 9.0) == 67.5

    def test_clean_subtraction(self):
        # span = 300 from segment end; theta_c1 + difs + phi_tx = 67.5+34+60
        am = AttemptModel(sigma=9.0, difs_us=34.0, phi_tx=60.0)
        hss = [_hs(100, 340, 400)]
        got = estimate_first_attempt_defer(hss, am)
        assert got == pytest.approx(300 - 67.5 - 34 - 60)

    def test_queued_head_is_last_intermediate_end(self):
        am = AttemptModel(sigma=9.0, difs_us=0.0, phi_tx=0.0)
        hs = _hs(0, 400, 420, intermediates=((100, 200, KEY2, False),))
        got = estimate_first_attempt_defer([hs], am)
        assert got == pytest.approx(220 - 67.5)

    def test_clamped_at_zero(self):
        am = AttemptModel(sigma=9.0, difs_us=34.0, phi_tx=500.0)
        assert estimate_first_attempt_defer([_hs(0, 50, 60)], am) == 0.0

    def test_retried_acks_rejected(self):
        with pytest.raises(NoCleanHandshakes):
            estimate_first_attempt_defer([_hs(0, 50, 60, ack_retry=True)], AttemptModel())


class TestAttemptFit:
    AM = AttemptModel(sigma=9.0, difs_us=0.0, phi_tx=50.0, theta_defer_1=20.0)

    def test_z_strictly_increasing(self):
        z = self.AM.z_k
        assert len(z) == 7
        assert all(a < b for a, b in zip(z, z[1:]))
        assert z[0] == pytest.approx(67.5 + 20.0 + 50.0)

    def test_budget_exactly_one_attempt(self):
        z = self.AM.z_k
        r, psi = estimate_retx_and_defer(z[0] - 50.0, 50.0, self.AM)
        assert r == 0.0
        assert psi == pytest.approx(self.AM.theta_defer_1)

    def test_budget_two_attempts(self):
        z = self.AM.z_k
        r, psi = estimate_retx_and_defer(z[0] + z[1] - 50.0, 50.0, self.AM)
        assert r == pytest.approx(1.0)
        assert psi == pytest.approx(2 * self.AM.theta_defer_1)

    def test_fractional_attempt_prorated(self):
        z = self.AM.z_k
        r, psi = estimate_retx_and_defer(z[0] + 0.5 * z[1] - 50.0, 50.0, self.AM)
        assert r == pytest.approx(0.5)
        assert psi == pytest.approx(1.5 * self.AM.theta_defer_1)

    def test_beyond_retry_limit_goes_to_residual(self):
        z = self.AM.z_k
        extra = 1234.5
        r, psi = estimate_retx_and_defer(sum(z) + extra, 0.0, self.AM)
        assert r == 6.0
        assert psi == pytest.approx(7 * self.AM.theta_defer_1 + extra)

    def test_small_budget(self):
        z = self.AM.z_k
        r, psi = estimate_retx_and_defer(0.25 * z[0], 0.0, self.AM)
        assert r == 0.0
        assert psi == pytest.approx(0.25 * self.AM.theta_defer_1)

    def test_negative_budget(self):
        with pytest.raises(InvalidBudget):
            estimate_retx_and_defer(-1.0, 0.0, self.AM)


class TestTrimming:
    def test_outlier_dropped(self):
        hss = [_hs(i * 1000, i * 1000 + 300, i * 1000 + 320) for i in range(2000)]
        hss.append(_hs(5_000_000, 9_000_000, 9_000_050))
        kept = trim_handshakes(hss)
        assert len(kept) == 2000
        assert max(h.t_rx_end_ack - h.t_tx_end_seg for h in kept) == 320

    def test_disabled(self):
        hss = [_hs(0, 300, 320), _hs(1000, 900_000, 900_020)]
        assert len(trim_handshakes(hss, None)) == 2


def _dl(ts, dur, l4=1024, **kw):
    return PacketRecord(
        ts_start=ts,
        ts_end=ts + dur,
        direction=Direction.DOWNLINK,
        src_addr="ap:01",
        dst_addr="sta:01",
        src_net="198.51.100.1",
        dst_net="10.0.0.2",
        l4_payload_bytes=l4,
        frame_bytes=l4 + 59,
        **kw,
    )


def _ul(ts, dur, **kw):
    return PacketRecord(
        ts_start=ts,
        ts_end=ts + dur,
        direction=Direction.UPLINK,
        src_addr="sta:01",
        dst_addr="ap:01",
        src_net="10.0.0.2",
        dst_net="198.51.100.1",
        l4_payload_bytes=0,
        frame_bytes=66,
        **kw,
    )


class TestPipeline:
    def test_immediate_only_decomposition_is_exact(self):
        recs = []
        for i in range(50):
            t = i * 1000
            recs.append(_dl(t, 160))
            recs.append(_ul(t + 262, 10))  # access 102, tx 10
        recs.sort(key=lambda r: r.ts_start)
        br = decompose_from_log(recs, "sta:01")
        assert br.phi_queuing == 0.0
        assert br.phi_access == pytest.approx(102.0)
        assert br.phi_tx == pytest.approx(10.0)
        assert br.l_uplink == pytest.approx(112.0)
        assert br.l_uplink == pytest.approx(br.phi_queuing + br.phi_access + br.phi_tx)
        assert br.sample_counts["queued_handshakes"] == 0
        assert br.r_bar < 0.05  # one backoff's budget fits in one attempt
        assert br.per_flow_queuing == {}

    def test_no_flow_raises(self):
        with pytest.raises(NoHandshakes):
            decompose_from_log([_dl(0, 160)], "sta:01")
