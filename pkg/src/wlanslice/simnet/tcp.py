"""Packet-granular Reno/NewReno TCP with timestamps-based undo and F-RTO.

Sequence numbers count whole segments.  A sender emits ``Packet`` objects
through an ``emit`` callable and consumes ACKs via ``on_ack``; a receiver
does the reverse.  Where packets travel in between is the network's
business.
"""
from __future__ import annotations

import enum

from .engine import Sim, Timer, ms

MSS = 1500
ACK_BYTES = 52
CTRL_BYTES = 60
RTO_MIN_US = ms(200)
RTO_INIT_US = ms(1000)
RTO_MAX_US = ms(60_000)
DELACK_US = ms(40)
INITIAL_WINDOW = 10
DEFAULT_RWND = 4096  # segments


class Kind(enum.IntEnum):
    DATA = 0
    ACK = 1
    CTRL = 2   # connection set-up probe; answered by an ACK
    PING = 3
    PONG = 4


class Packet:
    __slots__ = ("kind", "seq", "size", "ts", "ack", "echo", "rwnd",
                 "client", "qclass", "conn", "charge", "born", "path", "hop", "sack")

    def __init__(self, kind, seq, size, ts, client=None, qclass=None, conn=None):
        self.kind = kind
        self.seq = seq
        self.size = size
        self.ts = ts
        self.client = client
        self.qclass = qclass
        self.conn = conn
        self.ack = 0
        self.echo = None
        self.rwnd = DEFAULT_RWND
        self.charge = size
        self.born = ts
        self.path = None
        self.hop = 0
        self.sack = None


class State(enum.Enum):
    SLOW_START = "SLOW_START"
    CONG_AVOID = "CONG_AVOID"
    FAST_RECOVERY = "FAST_RECOVERY"
    RTO_WAIT = "RTO_WAIT"
    SYN_WAIT = "SYN_WAIT"


class TcpSender:
    """Reno congestion control with SACK-based loss recovery.

    ACKs carry the receiver's out-of-order set as selective acknowledgements.
    In fast recovery the window is set to the halved threshold and the
    sender keeps ``pipe`` (segments believed in flight) below it, filling
    holes below the highest SACKed segment before sending new data.

    After a retransmission timeout the sender goes back N.  The timeout is
    undone (window and send point restored) when ahead of the retransmission
    an ACK arrives that echoes a timestamp older than it (``undo_on_timestamps``)
    or, if ``frto_enabled``, when the two-step forward-RTO probe shows the
    original segments were still in flight.
    """

    def __init__(self, sim: Sim, emit, total=None, mss=MSS, iw=INITIAL_WINDOW,
                 frto_enabled=False, undo_on_timestamps=True, handshake=False,
                 supplied=False, rto_min=RTO_MIN_US, on_acked=None, on_complete=None,
                 on_established=None, client=None, qclass=None, conn=None):
        self.sim = sim
        self.emit = emit
        self.total = total            # segments in the transfer; None is an endless stream
        self.supplied = supplied      # data arrives through ``supply`` rather than up front
        self.available = 0 if supplied or total is None else total
        self.unbounded = total is None and not supplied
        self.on_established = on_established
        self.mss = mss
        self.frto_enabled = frto_enabled
        self.undo_on_timestamps = undo_on_timestamps
        self.rto_min = rto_min
        self.on_acked = on_acked
        self.on_complete = on_complete
        self.client, self.qclass, self.conn = client, qclass, conn
        self.una = 0
        self.nxt = 0
        self.high = 0
        self.cwnd = float(iw)
        self.ssthresh = 1e9
        self.state = State.SLOW_START
        self.dup_acks = 0
        self.recover = 0
        self.srtt = None
        self.rttvar = None
        self.rto = RTO_INIT_US
        self.rwnd = DEFAULT_RWND
        self.timer = Timer(sim, self.on_timeout)
        self.prior_cwnd = self.prior_ssthresh = None
        self.retrans_stamp = None
        self.frto_step = 0
        self.sacked = frozenset()
        self.retx = set()
        self.hole_cursor = 0
        self.timeouts = 0
        self.spurious = 0
        self.retransmits = 0
        self.done = False
        self.start_time = None
        self._syn_sent = None
        if handshake:
            self.state = State.SYN_WAIT

    # -- application side -------------------------------------------------

    def start(self) -> None:
        self.start_time = self.sim.now
        if self.state is State.SYN_WAIT:
            self._send_ctrl()
        else:
            self._push()

    def supply(self, n: int) -> None:
        """The application has ``n`` more segments ready."""
        if not self.supplied:
            return
        self.available += n
        if self.total is not None:
            self.available = min(self.available, self.total)
        self._push()

    # -- transmission -----------------------------------------------------

    def _send_ctrl(self) -> None:
        self._syn_sent = self.sim.now
        p = Packet(Kind.CTRL, -1, CTRL_BYTES, self.sim.now, self.client, self.qclass, self.conn)
        self.timer.arm(self.sim.now + self.rto)
        self.emit(p)

    def _limit(self) -> int:
        return (1 << 60) if self.unbounded else self.available

    def _push(self) -> None:
        if self.state is State.SYN_WAIT:
            return
        if self.state is State.FAST_RECOVERY:
            self._recovery_send()
            return
        window = min(int(self.cwnd), self.rwnd)
        end = min(self.una + window, self._limit())
        sent = False
        sacked = self.sacked
        while self.nxt < end:
            if self.nxt not in sacked:
                self._transmit(self.nxt)
                sent = True
            self.nxt += 1
        if self.nxt > self.high:
            self.high = self.nxt
        if sent and not self.timer.armed:
            self.timer.arm(self.sim.now + self.rto)

    def _transmit(self, seq: int) -> None:
        if seq < self.high:
            self.retransmits += 1
        p = Packet(Kind.DATA, seq, self.mss, self.sim.now, self.client, self.qclass, self.conn)
        self.emit(p)

    # -- ACK processing ---------------------------------------------------

    def _rtt_sample(self, echo) -> None:
        if echo is None:
            return
        r = self.sim.now - echo
        if r < 0:
            return
        if self.srtt is None:
            self.srtt = float(r)
            self.rttvar = r / 2.0
        else:
            self.rttvar = 0.75 * self.rttvar + 0.25 * abs(self.srtt - r)
            self.srtt = 0.875 * self.srtt + 0.125 * r
        self.rto = int(min(self.srtt + max(4.0 * self.rttvar, self.rto_min), RTO_MAX_US))

    def on_ack(self, pkt: Packet) -> None:
        if self.done:
            return
        if self.state is State.SYN_WAIT:
            if pkt.seq == -1 or pkt.ack == 0:
                self._rtt_sample(self._syn_sent)
                self.state = State.SLOW_START
                self.timer.cancel()
                self.rwnd = pkt.rwnd
                if self.on_established is not None:
                    self.on_established(self)
                self._push()
            return
        ack = pkt.ack
        self.rwnd = pkt.rwnd
        self.sacked = pkt.sack or frozenset()
        if ack > self.una:
            self._new_ack(ack, pkt.echo)
        elif ack == self.una and self.nxt > self.una and pkt.kind is Kind.ACK and pkt.seq == 0:
            self._dup_ack()
        else:
            self._push()

    def _new_ack(self, ack: int, echo) -> None:
        acked = ack - self.una
        flight_before = self.nxt - self.una
        self._rtt_sample(echo)
        st = self.state
        if st is State.RTO_WAIT:
            if (self.undo_on_timestamps and echo is not None
                    and self.retrans_stamp is not None and echo < self.retrans_stamp):
                self._undo(ack)
            elif self.frto_enabled and self.frto_step == 1:
                self._advance(ack)
                if ack < self.high and self._limit() > self.high:
                    # probe with new data instead of retransmitting
                    self.frto_step = 2
                    self.nxt = self.high
                    for _ in range(2):
                        if self.nxt < self._limit():
                            self._transmit(self.nxt)
                            self.nxt += 1
                    self.high = max(self.high, self.nxt)
                    self.timer.arm(self.sim.now + self.rto)
                    return
                self.frto_step = 0
                self._slow_start_grow(acked)
            elif self.frto_enabled and self.frto_step == 2:
                self._undo(ack)
            else:
                self._advance(ack)
                self._slow_start_grow(acked)
                if self.una >= self.recover:
                    self.state = self._open_state()
        elif st is State.FAST_RECOVERY:
            if ack >= self.recover:
                self._advance(ack)
                self.cwnd = max(min(self.ssthresh, self.nxt - self.una + 1.0), 1.0)
                self.state = self._open_state()
            else:
                self._advance(ack)
        else:
            self._advance(ack)
            if flight_before + 1 >= int(self.cwnd):
                if self.cwnd < self.ssthresh:
                    self.cwnd += min(acked, 2)
                else:
                    self.cwnd += acked / self.cwnd
            self.state = self._open_state()
        self.dup_acks = 0
        self._after_ack()

    def _advance(self, ack: int) -> None:
        self.una = ack
        if self.nxt < ack:
            self.nxt = ack
        if self.high < ack:
            self.high = ack

    def _slow_start_grow(self, acked: int) -> None:
        self.cwnd += min(acked, 2)

    def _open_state(self) -> State:
        return State.SLOW_START if self.cwnd < self.ssthresh else State.CONG_AVOID

    def _undo(self, ack: int) -> None:
        self.spurious += 1
        self._advance(ack)
        self.cwnd = max(self.prior_cwnd, 1.0)
        self.ssthresh = self.prior_ssthresh
        self.nxt = max(self.nxt, self.high)
        self.frto_step = 0
        self.retrans_stamp = None
        self.state = self._open_state()

    def _after_ack(self) -> None:
        if self.on_acked is not None:
            self.on_acked(self.una)
        if self.total is not None and self.una >= self.total:
            self.done = True
            self.timer.cancel()
            if self.on_complete is not None:
                self.on_complete(self)
            return
        self._push()
        if self.una < self.nxt:
            self.timer.arm(self.sim.now + self.rto)
        else:
            self.timer.cancel()

    def _dup_ack(self) -> None:
        st = self.state
        if st is State.RTO_WAIT:
            if self.frto_step:
                # the probe failed: the timeout was genuine
                self.frto_step = 0
                self.nxt = self.una
                self.cwnd = max(self.cwnd, 2.0)
                self._push()
            return
        if st is State.FAST_RECOVERY:
            self._recovery_send()
            return
        self.dup_acks += 1
        if self.dup_acks == 3:
            flight = self.nxt - self.una
            self.ssthresh = max(flight / 2.0, 2.0)
            self.recover = self.high
            self.cwnd = self.ssthresh
            self.state = State.FAST_RECOVERY
            self.retx = {self.una}
            self.hole_cursor = self.una + 1
            self._transmit(self.una)
            self.timer.arm(self.sim.now + self.rto)
        self._push()

    def _recovery_send(self) -> None:
        """Send while ``pipe`` is below the window: holes first, then new data."""
        una, sacked = self.una, self.sacked
        top = max(sacked) if sacked else una
        holes = max(0, top - una) - sum(1 for q in sacked if q < top)
        self.retx = {q for q in self.retx if q >= una and q not in sacked}
        pipe = (self.high - una) - len(sacked) - holes + sum(1 for q in self.retx if q < top)
        cursor = max(self.hole_cursor, una)
        window = min(self.cwnd, self.rwnd)
        limit = min(self._limit(), una + self.rwnd)
        while pipe < window:
            while cursor < top and (cursor in sacked or cursor in self.retx):
                cursor += 1
            if cursor < top:
                self.retx.add(cursor)
                self._transmit(cursor)
                cursor += 1
            elif self.high < limit:
                self._transmit(self.high)
                self.high += 1
                self.nxt = self.high
            else:
                break
            pipe += 1
        self.hole_cursor = cursor

    # -- timeout ----------------------------------------------------------

    def on_timeout(self) -> None:
        if self.done:
            return
        if self.state is State.SYN_WAIT:
            self.timeouts += 1
            self.rto = min(self.rto * 2, RTO_MAX_US)
            self._send_ctrl()
            return
        if self.una >= self.nxt and self.una >= self.high:
            return
        self.timeouts += 1
        if self.state is not State.RTO_WAIT:
            self.prior_cwnd = self.cwnd
            self.prior_ssthresh = self.ssthresh
            self.retrans_stamp = self.sim.now
            self.ssthresh = max((self.high - self.una) / 2.0, 2.0)
        self.state = State.RTO_WAIT
        self.recover = self.high
        self.cwnd = 1.0
        self.nxt = self.una
        self.dup_acks = 0
        self.retx = set()
        self.frto_step = 1 if self.frto_enabled else 0
        self.rto = min(self.rto * 2, RTO_MAX_US)
        self._transmit(self.nxt)
        self.nxt += 1
        self.timer.arm(self.sim.now + self.rto)


class TcpReceiver:
    """Cumulative ACKs, delayed every second in-order segment, immediate otherwise."""

    def __init__(self, sim: Sim, emit, on_deliver=None, window_fn=None,
                 delack=DELACK_US, client=None, qclass=None, conn=None):
        self.sim = sim
        self.emit = emit
        self.on_deliver = on_deliver
        self.window_fn = window_fn
        self.delack = delack
        self.client, self.qclass, self.conn = client, qclass, conn
        self.rcv_nxt = 0
        self.ooo = set()
        self.unacked = 0
        self.pending_echo = None
        self.ts_recent = None
        self.timer = Timer(sim, self._delack_fire)
        self.adv_window = DEFAULT_RWND
        self.duplicates = 0

    def window(self) -> int:
        return DEFAULT_RWND if self.window_fn is None else max(0, int(self.window_fn()))

    def on_ctrl(self, pkt: Packet) -> None:
        a = Packet(Kind.ACK, -1, ACK_BYTES, self.sim.now, self.client, self.qclass, self.conn)
        a.ack = 0
        a.echo = pkt.ts
        a.rwnd = self.window()
        self.adv_window = a.rwnd
        self.emit(a)

    def on_data(self, pkt: Packet) -> None:
        seq = pkt.seq
        if seq == self.rcv_nxt:
            if self.pending_echo is None:
                self.pending_echo = pkt.ts
            self.ts_recent = pkt.ts
            had_gap = bool(self.ooo)
            self.rcv_nxt += 1
            while self.rcv_nxt in self.ooo:
                self.ooo.discard(self.rcv_nxt)
                self.rcv_nxt += 1
            if self.on_deliver is not None:
                self.on_deliver(self.rcv_nxt)
            self.unacked += 1
            if had_gap or self.unacked >= 2 or self.ooo:
                self._send_ack(self.pending_echo)
            elif not self.timer.armed:
                self.timer.arm(self.sim.now + self.delack)
        elif seq > self.rcv_nxt:
            self.ooo.add(seq)
            self._send_ack(self.ts_recent, mark=0)
        else:
            # a duplicate segment; the ACK is marked so the sender does not
            # count it towards fast retransmit (as a D-SACK would)
            self.duplicates += 1
            self._send_ack(self.ts_recent if self.ts_recent is not None else pkt.ts, mark=2)

    def _delack_fire(self) -> None:
        if self.unacked:
            self._send_ack(self.pending_echo)

    def _send_ack(self, echo, mark=1) -> None:
        # ``seq`` of an ACK carries a marker: 1 in order, 0 gap, 2 duplicate
        a = Packet(Kind.ACK, mark, ACK_BYTES, self.sim.now,
                   self.client, self.qclass, self.conn)
        a.ack = self.rcv_nxt
        a.echo = echo
        if self.ooo:
            a.sack = frozenset(self.ooo)
        a.rwnd = self.window()
        self.adv_window = a.rwnd
        self.unacked = 0
        self.pending_echo = None
        self.timer.cancel()
        self.emit(a)

    def window_update(self) -> None:
        """Advertise a reopened window after the application drained data."""
        w = self.window()
        if self.adv_window < 4 <= w:
            self._send_ack(self.ts_recent)
