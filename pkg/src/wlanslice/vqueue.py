"""Per-client virtual queues, the virtual server and queue-driven rate adaptation.

The controller keeps four drop-tail byte queues per client and drains them
at the client's virtual rate ``v`` while the client is gated ON.  The rate
adapter nudges ``v`` up while backlog persists after service and backs it
off multiplicatively once the queue runs dry.
"""
from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, replace

DEFAULT_CAPACITY_KB = 200.0
MTU_BYTES = 1500
KB = 1000.0


class QueueClass(enum.IntEnum):
    WAN_DOWN = 0
    WAN_UP = 1
    LAN_DOWN = 2
    LAN_UP = 3


class _ByteQueue:
    __slots__ = ("items", "bytes", "capacity", "enqueued", "dequeued", "dropped")

    def __init__(self, capacity_bytes: float):
        self.items = deque()
        self.bytes = 0
        self.capacity = capacity_bytes
        self.enqueued = 0
        self.dequeued = 0
        self.dropped = 0


class VirtualQueueSet:
    """Four FIFO queues per client.  Packets are ``(size_bytes, payload)`` pairs."""

    def __init__(self, clients, capacity_kb: float = DEFAULT_CAPACITY_KB):
        if not capacity_kb > 0:
            raise ValueError("queue capacity must be positive")
        self.capacity_kb = capacity_kb
        self._q = {c: [_ByteQueue(capacity_kb * KB) for _ in QueueClass] for c in clients}
        # round-robin position and deficit per client
        self._rr = {c: (0, False) for c in clients}
        self._deficit = {c: [0.0] * len(QueueClass) for c in clients}
        self._credit = {c: 0.0 for c in clients}

    def add_client(self, client) -> None:
        if client not in self._q:
            self._q[client] = [_ByteQueue(self.capacity_kb * KB) for _ in QueueClass]
            self._rr[client] = (0, False)
            self._deficit[client] = [0.0] * len(QueueClass)
            self._credit[client] = 0.0

    def enqueue(self, client, cls: QueueClass, size: int, payload=None) -> bool:
        """Append a packet; returns False (and counts a drop) when the queue is full."""
        q = self._q[client][cls]
        if q.bytes + size > q.capacity:
            q.dropped += size
            return False
        q.items.append((size, payload))
        q.bytes += size
        q.enqueued += size
        return True

    def occupancy_kb(self, client, cls: QueueClass | None = None) -> float:
        qs = self._q[client]
        if cls is None:
            return sum(q.bytes for q in qs) / KB
        return qs[cls].bytes / KB

    def head(self, client, cls: QueueClass):
        q = self._q[client][cls]
        return q.items[0] if q.items else None

    def pop(self, client, cls: QueueClass):
        q = self._q[client][cls]
        size, payload = q.items.popleft()
        q.bytes -= size
        q.dequeued += size
        return size, payload

    def backlogged(self, client) -> bool:
        return any(q.items for q in self._q[client])

    def drain(self, client) -> list:
        """Remove and return everything queued for ``client`` in class order."""
        out = []
        for cls in QueueClass:
            while self._q[client][cls].items:
                out.append((cls, ) + self.pop(client, cls))
        self._deficit[client] = [0.0] * len(QueueClass)
        return out

    def counters(self, client, cls: QueueClass) -> dict:
        q = self._q[client][cls]
        return dict(enqueued=q.enqueued, dequeued=q.dequeued,
                    dropped=q.dropped, resident=q.bytes)

    def next_class(self, client, weights) -> QueueClass | None:
        """Deficit round-robin choice of the next class to serve, without serving it.

        ``weights`` is ``(wan_down, wan_up, lan_down, lan_up)``; each visit to a
        backlogged class grants it ``weight * MTU`` bytes of deficit.  Classes
        with zero weight are served only when nothing else is queued.
        """
        qs = self._q[client]
        if not any(q.items for q in qs):
            return None
        if not any(q.items and w > 0 for q, w in zip(qs, weights)):
            weights = (1.0,) * len(qs)
        deficit = self._deficit[client]
        n = len(qs)
        i, granted = self._rr[client]
        while True:
            q = qs[i]
            if q.items and weights[i] > 0:
                if deficit[i] >= q.items[0][0]:
                    self._rr[client] = (i, granted)
                    return QueueClass(i)
                if not granted:
                    deficit[i] += weights[i] * MTU_BYTES
                    granted = True
                    continue
            else:
                deficit[i] = 0.0
            i, granted = (i + 1) % n, False

    def take(self, client, cls: QueueClass):
        """Pop the head of ``cls`` charging it against the round-robin deficit."""
        size, payload = self.pop(client, cls)
        d = self._deficit[client]
        d[cls] -= size
        if not self._q[client][cls].items:
            d[cls] = 0.0
        return size, payload


def class_weights(eta: float, xi: float, delta: float) -> tuple:
    """Round-robin weights for (WAN_DOWN, WAN_UP, LAN_DOWN, LAN_UP)."""
    return (eta, xi, delta, delta)


def serve(queues: VirtualQueueSet, client, weights, v: float, dt: float) -> list:
    """Release up to ``v * dt`` bits (``v`` in Mbps, ``dt`` in ms) by weighted round-robin.

    Credit left over when the queues empty is capped at one MTU, so an idle
    client cannot bank service across gated-OFF periods.  Returns a list of
    ``(class, size, payload)``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    credit = queues._credit[client] + v * 1e3 * dt / 8.0  # bytes
    out = []
    while True:
        cls = queues.next_class(client, weights)
        if cls is None:
            credit = min(credit, MTU_BYTES)
            break
        size = queues.head(client, cls)[0]
        if size > credit:
            break
        credit -= size
        out.append((cls,) + queues.take(client, cls))
    queues._credit[client] = min(credit, MTU_BYTES)
    return out


def sample_post_service_queue(queues: VirtualQueueSet, client) -> float:
    """Total backlog of ``client`` in KB; meant to be read just as its slice ends."""
    return queues.occupancy_kb(client)


@dataclass(frozen=True)
class RateAdapterState:
    v: float = 1.0
    q_bar: float = 0.0
    q_lb: float = 7.5
    epsilon: float = 0.05
    lam: float = 0.9
    beta: float = 0.8
    t_interval: float = 3.0
    t_prev: float = 0.0
    v_min: float = 1.0
    v_max: float = 1.2 * 23.0

    def __post_init__(self):
        if not 0 < self.lam < 1:
            raise ValueError("lambda must lie in (0, 1)")
        if not 0 <= self.beta <= 1:
            raise ValueError("beta must lie in [0, 1]")
        if not 0 < self.v_min <= self.v_max:
            raise ValueError("need 0 < v_min <= v_max")
        if not self.t_interval > 0:
            raise ValueError("t_interval must be positive")
        if self.q_bar < 0:
            raise ValueError("q_bar must be non-negative")


def v_max_for_phy(phy_rate: float, margin: float = 1.2) -> float:
    """Rate clamp scaled from a 23 Mbps TCP ceiling at 54 Mbps PHY."""
    return margin * 23.0 * phy_rate / 54.0


def rate_adapt_step(st: RateAdapterState, q_sample: float, now: float,
                    was_scheduled: bool) -> RateAdapterState:
    """One adapter update; a no-op before the interval elapses or if not scheduled."""
    if not was_scheduled or now < st.t_prev + st.t_interval:
        return st
    if st.q_bar > st.q_lb:
        v = st.v + st.epsilon * st.q_bar
    else:
        v = st.lam * st.v
    v = min(max(v, st.v_min), st.v_max)
    q_bar = st.beta * q_sample + (1.0 - st.beta) * st.q_bar
    return replace(st, v=v, q_bar=q_bar, t_prev=st.t_prev + st.t_interval)


def format_adapt(client, t_s: float, st: RateAdapterState) -> str:
    return f"ADAPT {client} {t_s:.3f} {st.v:.4f} {st.q_bar:.4f}"
