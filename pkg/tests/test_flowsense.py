"""Flow grouping, path-role classification, handshake pairing."""

import pytest

from wlanlens.flowsense import (
    AmbiguousFlow,
    FlowKey,
    HsClass,
    PathRole,
    classify_reverse_path,
    infer_flows,
    pair_handshakes,
)
from wlanlens.trace import Direction, PacketRecord


def _dl(ts, dur, sta="sta:01", sta_net="10.0.0.2", remote="93.184.216.34", l4=1024, **kw):
    return PacketRecord(
        ts_start=ts,
        ts_end=ts + dur,
        direction=Direction.DOWNLINK,
        src_addr="ap:01",
        dst_addr=sta,
        src_net=remote,
        dst_net=sta_net,
        l4_payload_bytes=l4,
        frame_bytes=l4 + 59,
        **kw,
    )


def _ul(ts, dur, sta="sta:01", sta_net="10.0.0.2", remote="93.184.216.34", l4=0, **kw):
    return PacketRecord(
        ts_start=ts,
        ts_end=ts + dur,
        direction=Direction.UPLINK,
        src_addr=sta,
        dst_addr="ap:01",
        src_net=sta_net,
        dst_net=remote,
        l4_payload_bytes=l4,
        frame_bytes=l4 + 66,
        **kw,
    )


KEY = FlowKey(sta_net="10.0.0.2", remote_net="93.184.216.34", sta_id="sta:01")


class TestInferFlows:
    def test_swap_symmetry(self):
        flows = infer_flows([_dl(0, 100), _ul(200, 10)])
        assert set(flows) == {KEY}
        assert flows[KEY].snoopable

    def test_unidirectional_flagged(self):
        flows = infer_flows([_dl(0, 100), _dl(200, 100)])
        assert not flows[KEY].snoopable

    def test_obss_and_netless_records_skipped(self):
        obss = PacketRecord(
            ts_start=0,
            ts_end=50,
            direction=Direction.OBSS,
            src_addr="x",
            dst_addr="y",
            frame_bytes=100,
        )
        bare = PacketRecord(
            ts_start=60,
            ts_end=80,
            direction=Direction.UPLINK,
            src_addr="sta:01",
            dst_addr="ap:01",
            frame_bytes=66,
        )
        assert infer_flows([obss, bare]) == {}

    def test_exact_partition_of_interleaved_flows(self):
        recs, want = [], set()
        for i in range(5):
            sta, net, rem = f"sta:0{i}", f"10.0.0.{i + 2}", f"198.51.100.{i}"
            want.add(FlowKey(sta_net=net, remote_net=rem, sta_id=sta))
            for j in range(4):
                recs.append(_dl(1000 * j + i * 37, 20, sta=sta, sta_net=net, remote=rem))
                recs.append(_ul(1000 * j + i * 37 + 400, 5, sta=sta, sta_net=net, remote=rem))
        recs.sort(key=lambda r: r.ts_start)
        flows = infer_flows(recs)
        assert set(flows) == want
        assert all(len(fr.downlink) == 4 and len(fr.uplink) == 4 for fr in flows.values())


class TestClassify:
    def test_download(self):
        flows = infer_flows([_dl(0, 100), _ul(200, 10)])
        roles = classify_reverse_path(flows[KEY])
        assert roles[Direction.UPLINK] is PathRole.ACK
        assert roles[Direction.DOWNLINK] is PathRole.SEGMENT

    def test_bidirectional_bulk_ambiguous(self):
        flows = infer_flows([_dl(0, 100), _ul(200, 100, l4=1024)])
        with pytest.raises(AmbiguousFlow):
            classify_reverse_path(flows[KEY])

    def test_both_small_ambiguous(self):
        flows = infer_flows([_dl(0, 10, l4=0), _ul(100, 10)])
        with pytest.raises(AmbiguousFlow):
            classify_reverse_path(flows[KEY])

    def test_majority_rule_tolerates_stray_acks(self):
        # 19 big DL segments + 1 small DL ACK (the sta also uploads somewhere):
        # DL stays the segment path.
        recs = [_dl(100 * i, 20) for i in range(19)]
        recs.append(_dl(2000, 5, l4=20))
        recs += [_ul(100 * i + 50, 5) for i in range(20)]
        flows = infer_flows(recs)
        roles = classify_reverse_path(flows[KEY])
        assert roles[Direction.DOWNLINK] is PathRole.SEGMENT

    def test_unidirectional_raises(self):
        flows = infer_flows([_dl(0, 100)])
        with pytest.raises(AmbiguousFlow):
            classify_reverse_path(flows[KEY])


class TestPairing:
    def test_immediate(self):
        flows = infer_flows([_dl(0, 100), _ul(400, 50)])
        res = pair_handshakes(flows, KEY)
        (hs,) = res.handshakes
        assert hs.t_tx_end_seg == 100
        assert (hs.t_rx_start_ack, hs.t_rx_end_ack) == (400, 450)
        assert hs.hs_class is HsClass.IMMEDIATE
        assert res.n_orphans == 0 and res.n_dropped == 0

    def test_queued_with_intermediate_of_other_flow(self):
        other_net, other_rem = "10.0.0.2", "203.0.113.7"
        other_key = FlowKey(sta_net=other_net, remote_net=other_rem, sta_id="sta:01")
        recs = [
            _dl(0, 100),
            _ul(200, 100, remote=other_rem, l4=1024),  # upload data of another flow
            _dl(150, 30, remote=other_rem, l4=20),  # its ACK path (keeps it classifiable)
            _ul(500, 20),
        ]
        flows = infer_flows(recs)
        res = pair_handshakes(flows, KEY)
        (hs,) = res.handshakes
        assert hs.hs_class is HsClass.QUEUED
        assert len(hs.intermediates) == 1
        t0, t1, k, retry = hs.intermediates[0]
        assert (t0, t1) == (200, 300)
        assert k == other_key
        assert retry is False

    def test_latest_segment_burst_wins(self):
        # ACK thinning: two bursts before the ACK; pairing anchors at the last.
        flows = infer_flows([_dl(0, 100), _dl(300, 100), _ul(900, 20)])
        res = pair_handshakes(flows, KEY)
        assert res.handshakes[0].t_tx_end_seg == 400

    def test_overlapping_pair_dropped(self):
        # Second ACK's latest segment came before the first ACK finished.
        flows = infer_flows([_dl(0, 100), _ul(400, 50), _ul(500, 20)])
        res = pair_handshakes(flows, KEY)
        assert len(res.handshakes) == 1
        assert res.n_dropped == 1

    def test_consecutive_handshakes_never_nest(self):
        recs = []
        t = 0
        for _ in range(50):
            recs.append(_dl(t, 100))
            recs.append(_ul(t + 300, 20))
            t += 500
        # extra ACKs sprinkled in to stress the drop rule
        recs.append(_ul(260, 10))
        recs.sort(key=lambda r: r.ts_start)
        flows = infer_flows(recs)
        res = pair_handshakes(flows, KEY)
        hss = res.handshakes
        assert all(
            h1.t_rx_end_ack <= h2.t_tx_end_seg for h1, h2 in zip(hss, hss[1:])
        )

    def test_orphan_ack(self):
        flows = infer_flows([_ul(100, 20), _dl(200, 100), _ul(600, 20)])
        res = pair_handshakes(flows, KEY)
        assert res.n_orphans == 1
        assert len(res.handshakes) == 1

    def test_ack_retry_marked_and_failed_acks_ignored(self):
        flows = infer_flows(
            [_dl(0, 100), _ul(400, 50, retry_flag=True), _dl(600, 100), _ul(900, 20, success=False)]
        )
        res = pair_handshakes(flows, KEY)
        (hs,) = res.handshakes
        assert hs.ack_retry_flag is True

    def test_intermediates_strictly_inside(self):
        other_rem = "203.0.113.7"
        recs = [
            _dl(0, 100),
            _dl(150, 30, remote=other_rem, l4=20),
            _ul(50, 60, remote=other_rem, l4=1024),  # overlaps the segment end
            _ul(380, 20, remote=other_rem, l4=1024),  # ends exactly at ack start
            _ul(400, 50),
        ]
        flows = infer_flows(recs)
        res = pair_handshakes(flows, KEY)
        (hs,) = res.handshakes
        assert hs.intermediates == ()  # neither record is strictly inside
        assert hs.hs_class is HsClass.IMMEDIATE
