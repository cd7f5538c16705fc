"""Network elements: wireless medium, transmitters, access link and controller.

Packets carry their route as a tuple of callables (``path``) and a cursor
(``hop``).  An element that finishes with a packet hands it on with
``forward``.
"""
from __future__ import annotations

import math
from collections import deque

import numpy as np

from ..vqueue import MTU_BYTES, VirtualQueueSet
from .config import MANAGED, UNMANAGED
from .engine import Sim
from .tcp import Kind

TCP_CEILING_MBPS = 23.0
REFERENCE_PHY = 54.0


def forward(pkt) -> None:
    fn = pkt.path[pkt.hop]
    pkt.hop += 1
    fn(pkt)


def emitter(path: tuple):
    """Entry point that stamps ``path`` on a packet and sends it on its way."""
    first = path[0]

    def emit(pkt):
        pkt.path = path
        pkt.hop = 1
        first(pkt)
    return emit


def delay(sim: Sim, d_us: int):
    def hop(pkt):
        sim.after(d_us, forward, pkt)
    return hop


class _Draws:
    """Blocks of pre-generated random numbers drawn in a fixed order."""

    __slots__ = ("gen", "fn", "buf", "i")

    def __init__(self, gen, fn, block=4096):
        self.gen = gen
        self.fn = fn
        self.buf = fn(gen, block)
        self.i = 0

    def next(self) -> float:
        if self.i >= len(self.buf):
            self.buf = self.fn(self.gen, len(self.buf))
            self.i = 0
        x = self.buf[self.i]
        self.i += 1
        return x


class ApLink:
    """Wireless link of one client.  ``mu`` is the mean TCP service rate in Mbps.

    A packet of ``s`` bytes occupies the medium for a fixed per-frame overhead
    plus ``8 s / phy``, with the overhead chosen so that full-size packets
    are served at ``mu``.
    """

    __slots__ = ("client", "phy", "mu", "jitter_cov", "hidden_penalty", "overhead_us", "index")

    def __init__(self, client, phy, mu=None, jitter_cov=0.1, hidden_penalty=0.0, index=0):
        self.client = client
        self.jitter_cov = jitter_cov
        self.hidden_penalty = hidden_penalty
        self.index = index
        self.set_rate(phy, mu)

    def set_rate(self, phy, mu=None) -> None:
        self.phy = float(phy)
        self.mu = float(mu) if mu is not None else TCP_CEILING_MBPS * phy / REFERENCE_PHY
        bits = MTU_BYTES * 8
        self.overhead_us = max(0.0, bits / self.mu - bits / self.phy)
        if self.mu > self.phy:
            self.phy = self.mu

    def airtime_us(self, size: int) -> float:
        return self.overhead_us + size * 8.0 / self.phy


def unmanaged_contention(backlogged, conflicts, hidden, penalties, noise=None) -> dict:
    """Expected success share of each backlogged link under the contention model.

    ``backlogged`` lists the links currently holding the medium's attention,
    one per transmitter; ``conflicts`` and ``hidden`` are sets of unordered
    pairs, ``penalties`` maps link to hidden-node penalty and ``noise`` to a
    multiplicative factor.  A link shares the medium equally with its
    backlogged conflict neighbours and loses ``penalty`` of its share while
    any of them is a hidden node.
    """
    out = {}
    for a in backlogged:
        nbrs = [b for b in backlogged if b != a and frozenset((a, b)) in conflicts]
        share = 1.0 / (1 + len(nbrs))
        if nbrs and noise is not None:
            share = min(1.0, share * noise.get(a, 1.0))
        if any(frozenset((a, b)) in hidden for b in nbrs):
            share *= 1.0 - penalties.get(a, 0.0)
        out[a] = share
    return out


class Medium:
    """Shared channel: decides how fast and how reliably a transmission goes."""

    def __init__(self, sim: Sim, links: dict, rng, noise_sigma: float,
                 epoch_us: int, duration_us: int, max_attempts: int = 7):
        self.sim = sim
        self.links = links
        self.transmitters = []
        self.conflicts = {c: {} for c in links}
        self.max_attempts = max_attempts
        self.epoch_us = epoch_us
        n_epochs = duration_us // epoch_us + 2
        if noise_sigma > 0:
            z = rng.standard_normal((len(links), n_epochs))
            self.noise = np.exp(noise_sigma * z - 0.5 * noise_sigma ** 2)
        else:
            self.noise = np.ones((len(links), n_epochs))
        self.n_epochs = n_epochs

    def set_conflicts(self, conflicts, hidden) -> None:
        """Ground-truth conflict pairs between links of different transmitters."""
        self.conflicts = {c: {} for c in self.links}
        hidden = {frozenset(e) for e in hidden}
        for e in conflicts:
            a, b = tuple(e)
            h = frozenset(e) in hidden
            self.conflicts[a][b] = h
            self.conflicts[b][a] = h

    def contention(self, tx, client) -> tuple:
        conf = self.conflicts[client]
        n = 0
        hidden = False
        for other in self.transmitters:
            if other is tx:
                continue
            p = other.current
            if p is None:
                continue
            # the two ends of one link also take turns on the air
            h = False if p.client == client else conf.get(p.client)
            if h is None:
                continue
            n += 1
            hidden = hidden or h
        if n == 0:
            return 1.0, False
        link = self.links[client]
        epoch = min(self.sim.now // self.epoch_us, self.n_epochs - 1)
        share = min(1.0, self.noise[link.index, epoch] / (1 + n))
        return share, hidden


class Transmitter:
    """A radio with one drop-tail FIFO (an AP downlink or a client uplink)."""

    def __init__(self, sim: Sim, medium: Medium, name: str, capacity_pkts: int, rng):
        self.sim = sim
        self.medium = medium
        self.name = name
        self.capacity = capacity_pkts
        self.fifo = deque()
        self.current = None
        self.attempt = 0
        self.normal = _Draws(rng, lambda g, n: g.standard_normal(n))
        self.uniform = _Draws(rng, lambda g, n: g.random(n))
        self.dropped_full = 0
        self.dropped_retry = 0
        self.sent = 0
        self.airtime_us = 0.0
        medium.transmitters.append(self)

    def __len__(self):
        return len(self.fifo) + (self.current is not None)

    def enqueue(self, pkt) -> None:
        if len(self.fifo) >= self.capacity:
            self.dropped_full += 1
            return
        self.fifo.append(pkt)
        if self.current is None:
            self._next()

    def _next(self) -> None:
        if not self.fifo:
            self.current = None
            return
        self.current = self.fifo.popleft()
        self.attempt = 0
        self._try()

    def _try(self) -> None:
        pkt = self.current
        link = self.medium.links[pkt.client]
        share, hidden = self.medium.contention(self, pkt.client)
        t = link.airtime_us(pkt.size)
        if link.jitter_cov > 0:
            t *= max(0.05, 1.0 + link.jitter_cov * self.normal.next())
        t /= share
        ok = not hidden or self.uniform.next() >= link.hidden_penalty
        self.attempt += 1
        self.airtime_us += t
        self.sim.after(max(1, int(t)), self._done, ok)

    def _done(self, ok: bool) -> None:
        pkt = self.current
        if ok:
            self.sent += 1
            self._next()
            forward(pkt)
            return
        if self.attempt >= self.medium.max_attempts:
            self.dropped_retry += 1
            self._next()
            return
        self._try()


class AccessLink:
    """Serialising FIFO at a fixed rate with a byte-limited drop-tail buffer."""

    def __init__(self, sim: Sim, rate_mbps: float, buffer_bytes: float):
        self.sim = sim
        self.rate = rate_mbps
        self.buffer = buffer_bytes
        self.fifo = deque()
        self.bytes = 0
        self.busy = False
        self.dropped = 0

    def enqueue(self, pkt) -> None:
        if self.bytes + pkt.size > self.buffer:
            self.dropped += 1
            return
        self.fifo.append(pkt)
        self.bytes += pkt.size
        if not self.busy:
            self._serve()

    def _serve(self) -> None:
        pkt = self.fifo[0]
        self.busy = True
        self.sim.after(max(1, int(round(pkt.size * 8.0 / self.rate))), self._done)

    def _done(self) -> None:
        pkt = self.fifo.popleft()
        self.bytes -= pkt.size
        self.busy = False
        if self.fifo:
            self._serve()
        forward(pkt)


def gate_intervals(sched, client, frame_us: int) -> list:
    return [(int(round(s * 1000)), int(round(e * 1000))) for s, e in sched.on_intervals(client)
            if e > s]


def advance_on_time(intervals, frame_us: int, t: int, need: float):
    """Earliest wall time at which ``need`` us of ON time have elapsed after ``t``.

    Returns None when the client has no ON time at all.
    """
    if not intervals:
        return None
    per_frame = sum(e - s for s, e in intervals)
    f0 = (t // frame_us) * frame_us
    pos = t - f0
    while True:
        for s, e in intervals:
            if e <= pos:
                continue
            start = s if s > pos else pos
            avail = e - start
            if need <= avail:
                return f0 + start + int(math.ceil(need))
            need -= avail
        f0 += frame_us
        pos = 0
        whole = int(need // per_frame)
        if whole > 1:
            f0 += (whole - 1) * frame_us
            need -= (whole - 1) * per_frame


def on_time_between(intervals, frame_us: int, t0: int, t1: int) -> int:
    if t1 <= t0 or not intervals:
        return 0
    per_frame = sum(e - s for s, e in intervals)
    total = 0
    f = (t0 // frame_us) * frame_us
    while f < t1:
        if f + frame_us <= t1 and f >= t0:
            total += per_frame
        else:
            for s, e in intervals:
                lo, hi = max(f + s, t0), min(f + e, t1)
                if hi > lo:
                    total += hi - lo
        f += frame_us
    return total


class Controller:
    """Virtual queues and servers in front of the APs.

    In managed mode every packet of a gated client waits in its class queue
    and is released by the client's virtual server at ``v`` Mbps while the
    schedule gates the client ON.  Unmanaged mode, ungated clients and
    bypassed interactive packets go straight through.
    """

    def __init__(self, sim: Sim, clients, frame_us: int, capacity_kb: float,
                 weights: dict, v: dict, record_releases: bool = False):
        self.sim = sim
        self.frame_us = frame_us
        self.queues = VirtualQueueSet(clients, capacity_kb)
        self.weights = dict(weights)
        self.v = dict(v)
        self.mode = MANAGED
        self.schedule = None
        self.intervals = {c: [] for c in clients}
        self.ungated = frozenset()
        self.bypass = frozenset()
        self.busy = {c: None for c in clients}
        self._token = 0
        self.last_done = {c: 0 for c in clients}
        self.dropped = {c: 0 for c in clients}
        self.releases = [] if record_releases else None

    # -- configuration -----------------------------------------------------

    def set_schedule(self, sched) -> None:
        self.schedule = sched
        self.bypass = frozenset(sched.bypass_clients)
        for c in self.intervals:
            self.intervals[c] = gate_intervals(sched, c, self.frame_us)
        self._restart_all()

    def set_rates(self, v: dict) -> None:
        self.v.update(v)

    def set_mode(self, mode: str, ungated=frozenset()) -> None:
        self.mode = mode
        self.ungated = frozenset(ungated)
        if mode == UNMANAGED:
            for c in self.intervals:
                self._flush(c)
        else:
            for c in self.ungated:
                self._flush(c)
        self._restart_all()

    def _flush(self, c) -> None:
        self.busy[c] = None
        for _, _, pkt in self.queues.drain(c):
            forward(pkt)

    def _restart_all(self) -> None:
        for c in self.busy:
            self.busy[c] = None
            if self.queues.backlogged(c):
                self._begin(c, credit=False)

    def passes_through(self, pkt) -> bool:
        c = pkt.client
        return (self.mode == UNMANAGED or c in self.ungated
                or (pkt.kind == Kind.PING and c in self.bypass))

    # -- data path ---------------------------------------------------------

    def ingress(self, pkt) -> None:
        if self.passes_through(pkt):
            forward(pkt)
            return
        c = pkt.client
        if not self.queues.enqueue(c, pkt.qclass, pkt.charge, pkt):
            self.dropped[c] += 1
            return
        if self.busy[c] is None:
            self._begin(c, credit=True)

    def _begin(self, c, credit: bool) -> None:
        cls = self.queues.next_class(c, self.weights[c])
        if cls is None:
            self.busy[c] = None
            return
        size = self.queues.head(c, cls)[0]
        v = self.v[c]
        need = size * 8.0 / v
        ivs = self.intervals[c]
        now = self.sim.now
        if credit:
            # an idle server keeps at most one MTU of service credit
            banked = on_time_between(ivs, self.frame_us, self.last_done[c], now)
            need -= min(banked, MTU_BYTES * 8.0 / v)
        t = advance_on_time(ivs, self.frame_us, now, max(0.0, need))
        self._token += 1
        tok = self._token
        self.busy[c] = tok
        if t is not None:
            self.sim.at(max(t, now), self._release, c, tok, cls)

    def _release(self, c, tok, cls) -> None:
        if self.busy[c] != tok:
            return
        _, pkt = self.queues.take(c, cls)
        self.last_done[c] = self.sim.now
        self.busy[c] = None
        if self.releases is not None:
            self.releases.append((self.sim.now, c))
        if self.queues.backlogged(c):
            self._begin(c, credit=False)
        forward(pkt)

    def backlog_kb(self, c) -> float:
        return self.queues.occupancy_kb(c)
