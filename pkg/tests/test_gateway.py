import math

import pytest
from hypothesis import given, strategies as st

from orvicon.gateway import (Accepted, DedupState, Dropped, EmptyBatch, FLUSH_MAX_FRAMES, Gateway,
                             accept_frame, flush_batch, path_loss_rssi)
from orvicon.wire import UplinkFrame, encode_frame


def frame(dev, ctr, ts=1000, temp=0):
    return UplinkFrame(dev, ctr, ts, temp)


def test_replay_and_stale():
    s = DedupState()
    assert isinstance(accept_frame(s, frame(7, 5)), Accepted)
    r = accept_frame(s, frame(7, 5))
    assert isinstance(r, Dropped) and r.reason == "replay"
    r = accept_frame(s, frame(7, 4))
    assert r.reason == "stale"
    assert isinstance(accept_frame(s, frame(7, 9)), Accepted)
    assert isinstance(accept_frame(s, frame(8, 1)), Accepted)  # devices are independent


@pytest.mark.parametrize("d,expected", [(10, -60), (100, -80), (1000, -100), (0, -40), (1, -40),
                                        (31.6, -70), (1e9, -130), (1e-3, -40)])
def test_rssi_values(d, expected):
    assert path_loss_rssi(d) == expected


@given(st.floats(0, 1e12, allow_nan=False))
def test_rssi_clamped_and_monotone(d):
    r = path_loss_rssi(d)
    assert -130 <= r <= -30
    assert path_loss_rssi(d * 2 + 1) <= r
    assert r == max(-130, min(-30, -60 - round(20 * math.log10(max(1.0, d) / 10))))


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 30)), max_size=200))
def test_exactly_once_per_identity(arrivals):
    """An accepted frame is the first arrival with a counter above everything seen before."""
    s = DedupState()
    seen_max: dict[int, int] = {}
    accepted = []
    for dev, ctr in arrivals:
        res = accept_frame(s, frame(dev, ctr))
        expect_ok = dev not in seen_max or ctr > seen_max[dev]
        assert isinstance(res, Accepted) == expect_ok
        if expect_ok:
            seen_max[dev] = ctr
            accepted.append((dev, ctr))
    assert len(accepted) == len(set(accepted))


def test_empty_batch_raises():
    with pytest.raises(EmptyBatch):
        flush_batch(DedupState(), [], "gw", 0)
    gw = Gateway("gw", lambda d: 10.0)
    with pytest.raises(EmptyBatch):
        gw.flush(5)
    assert gw.poll(5, force=True) == []


def test_batching_policy():
    gw = Gateway("gw", lambda d: 100.0)
    gw.receive(encode_frame(frame(1, 1)), 100)
    assert not gw.due(104)
    assert gw.due(105)
    [b] = gw.poll(105)
    assert b.received_at_s == 105 and b.frames[0].rssi_dbm == -80
    for i in range(FLUSH_MAX_FRAMES):
        gw.receive(encode_frame(frame(2, i + 1)), 200)
    assert gw.due(200)
    [b] = gw.poll(200)
    assert len(b.frames) == FLUSH_MAX_FRAMES
    assert not gw.pending


def test_oversized_backlog_splits():
    gw = Gateway("gw", lambda d: 10.0)
    for i in range(70):
        gw.receive(encode_frame(frame(1, i + 1)), 0)
    assert [len(b.frames) for b in gw.poll(1)] == [32, 32]
    assert len(gw.pending) == 6 and not gw.due(4)
    assert [len(b.frames) for b in gw.poll(5)] == [6]


def test_corrupt_and_malformed_are_dropped():
    gw = Gateway("gw", lambda d: 10.0)
    raw = bytearray(encode_frame(frame(1, 1)))
    raw[3] ^= 1
    assert gw.receive(bytes(raw), 0).reason == "corrupt"
    assert gw.receive(b"\x01" * 10, 0).reason == "malformed"
    assert gw.stats["corrupt"] == 1 and gw.stats["malformed"] == 1 and not gw.pending


def test_fifo_order_preserved():
    gw = Gateway("gw", lambda d: 10.0)
    order = [(3, 1), (1, 1), (2, 1), (1, 2), (3, 2)]
    for dev, ctr in order:
        gw.receive(encode_frame(frame(dev, ctr)), 0)
    [b] = gw.poll(0, force=True)
    assert [(a.frame.device_id, a.frame.frame_counter) for a in b.frames] == order
