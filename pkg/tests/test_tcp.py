import pytest

from wlanslice.simnet.engine import Sim, Timer, ms
from wlanslice.simnet.tcp import (ACK_BYTES, RTO_INIT_US, RTO_MIN_US, Kind, Packet, State,
                                  TcpReceiver, TcpSender)


class Wire:
    """Collects what a sender emits; ACKs are fed back by hand."""

    def __init__(self):
        self.sim = Sim()
        self.out = []

    def sender(self, **kw):
        return TcpSender(self.sim, lambda p: self.out.append(p), **kw)

    def take(self):
        out, self.out = self.out, []
        return out


def ack(n, echo=None, mark=1, sack=None):
    a = Packet(Kind.ACK, mark, ACK_BYTES, 0)
    a.ack = n
    a.echo = echo
    a.sack = sack
    return a


def test_slow_start_doubles_per_window():
    w = Wire()
    s = w.sender(iw=4)
    s.start()
    sent = w.take()
    assert [p.seq for p in sent] == [0, 1, 2, 3]
    for p in sent:
        s.on_ack(ack(p.seq + 1, p.ts))
    assert s.cwnd == 8
    assert s.state is State.SLOW_START


def test_congestion_avoidance_adds_one_per_window():
    w = Wire()
    s = w.sender(iw=10)
    s.ssthresh = 5.0
    s.start()
    for p in w.take():
        s.on_ack(ack(p.seq + 1, p.ts))
    assert s.cwnd == pytest.approx(11.0, abs=0.05)
    assert s.state is State.CONG_AVOID


def test_timeout_backoff_quadruples_after_two():
    w = Wire()
    s = w.sender(iw=2)
    s.start()
    assert s.rto == RTO_INIT_US
    w.sim.run(RTO_INIT_US)
    assert s.timeouts == 1 and s.rto == 2 * RTO_INIT_US
    w.sim.run(RTO_INIT_US + 2 * RTO_INIT_US)
    assert s.timeouts == 2 and s.rto == 4 * RTO_INIT_US
    assert s.cwnd == 1.0 and s.state is State.RTO_WAIT


def test_rto_floor():
    w = Wire()
    s = w.sender(iw=1)
    s.start()
    p = w.take()[0]
    w.sim.run(ms(1))
    s.on_ack(ack(1, p.ts))
    assert s.srtt == pytest.approx(ms(1))
    assert s.rto == s.srtt + RTO_MIN_US


def test_three_dupacks_enter_fast_recovery():
    w = Wire()
    s = w.sender(iw=10)
    s.start()
    w.take()
    # segment 0 lost; 1..3 arrive and are SACKed
    for k in (1, 2, 3):
        s.on_ack(ack(0, mark=0, sack=frozenset(range(1, k + 1))))
    assert s.state is State.FAST_RECOVERY
    assert s.ssthresh == 5.0 and s.cwnd == 5.0
    assert w.take()[0].seq == 0
    s.on_ack(ack(11, echo=0))
    # leaving recovery deflates to min(ssthresh, flight + 1)
    assert s.state is not State.FAST_RECOVERY
    assert s.cwnd <= s.ssthresh == 5.0


def test_duplicate_marked_acks_do_not_count():
    w = Wire()
    s = w.sender(iw=10)
    s.start()
    for _ in range(5):
        s.on_ack(ack(0, mark=2))
    assert s.state is State.SLOW_START


def spurious_timeout(**kw):
    w = Wire()
    s = w.sender(iw=10, **kw)
    s.start()
    first = w.take()
    before = s.cwnd
    w.sim.run(RTO_INIT_US)
    assert s.state is State.RTO_WAIT
    return w, s, first, before


def test_timestamp_undo_restores_window():
    w, s, first, before = spurious_timeout()
    # the original segment 0 was only delayed: its ACK echoes the old stamp
    s.on_ack(ack(1, first[0].ts))
    assert s.spurious == 1
    assert s.cwnd == before
    assert s.state is not State.RTO_WAIT


def test_frto_undo_without_timestamps():
    w, s, first, before = spurious_timeout(undo_on_timestamps=False, frto_enabled=True)
    w.take()
    s.on_ack(ack(2, None))
    probes = w.take()
    assert [p.seq for p in probes] == [10, 11]     # new data, not retransmissions
    s.on_ack(ack(4, None))
    assert s.spurious == 1 and s.cwnd == before


def test_frto_genuine_timeout_goes_back_n():
    w, s, first, before = spurious_timeout(undo_on_timestamps=False, frto_enabled=True)
    w.take()
    s.on_ack(ack(2, None))
    w.take()
    s.on_ack(ack(2, None, mark=0))                 # duplicate: the probe failed
    assert s.spurious == 0
    assert [p.seq for p in w.take()][0] == 2


def test_without_undo_timeout_sticks():
    w, s, first, before = spurious_timeout(undo_on_timestamps=False)
    s.on_ack(ack(1, first[0].ts))
    assert s.spurious == 0 and s.cwnd < before


def test_finite_transfer_completes():
    w = Wire()
    done = []
    s = w.sender(total=3, on_complete=done.append)
    s.start()
    for p in w.take():
        s.on_ack(ack(p.seq + 1, p.ts))
    assert s.done and done == [s]
    assert not s.timer.armed


def test_handshake_waits_for_reply():
    w = Wire()
    s = w.sender(handshake=True)
    s.start()
    syn = w.take()
    assert [p.kind for p in syn] == [Kind.CTRL]
    reply = ack(0, syn[0].ts, mark=-1)
    reply.seq = -1
    s.on_ack(reply)
    assert len(w.take()) == 10


def test_receiver_delays_every_other_ack():
    sim = Sim()
    acks = []
    delivered = []
    r = TcpReceiver(sim, acks.append, on_deliver=delivered.append)
    r.on_data(Packet(Kind.DATA, 0, 1500, 0))
    assert acks == []
    r.on_data(Packet(Kind.DATA, 1, 1500, 0))
    assert [a.ack for a in acks] == [2]
    r.on_data(Packet(Kind.DATA, 2, 1500, 0))
    sim.run(ms(40))
    assert [a.ack for a in acks] == [2, 3]
    assert delivered == [1, 2, 3]


def test_receiver_gap_sacks_and_fills():
    sim = Sim()
    acks = []
    r = TcpReceiver(sim, acks.append)
    r.on_data(Packet(Kind.DATA, 1, 1500, 0))
    r.on_data(Packet(Kind.DATA, 2, 1500, 0))
    assert [(a.ack, a.seq, a.sack) for a in acks] == [
        (0, 0, frozenset({1})), (0, 0, frozenset({1, 2}))]
    r.on_data(Packet(Kind.DATA, 0, 1500, 0))
    assert acks[-1].ack == 3 and acks[-1].sack is None
    r.on_data(Packet(Kind.DATA, 0, 1500, 0))
    assert acks[-1].seq == 2 and r.duplicates == 1


def test_engine_orders_ties_and_rejects_past():
    sim = Sim()
    seen = []
    sim.at(5, seen.append, "a")
    sim.at(5, seen.append, "b")
    sim.at(1, seen.append, "c")
    sim.run(10)
    assert seen == ["c", "a", "b"] and sim.now == 10
    with pytest.raises(ValueError):
        sim.at(3, seen.append, "x")


def test_timer_moves_deadline():
    sim = Sim()
    fired = []
    t = Timer(sim, lambda: fired.append(sim.now))
    t.arm(10)
    t.arm(30)
    sim.run(20)
    assert fired == []
    sim.run(40)
    assert fired == [30]
    t.arm(50)
    t.cancel()
    sim.run(100)
    assert fired == [30]
