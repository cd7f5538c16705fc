"""Minimal event loop with integer-microsecond time."""
from __future__ import annotations

import heapq

US_PER_MS = 1000
US_PER_S = 1_000_000


def ms(x: float) -> int:
    return int(round(x * US_PER_MS))


def seconds(x: float) -> int:
    return int(round(x * US_PER_S))


class Sim:
    """Events are ``(time, seq, fn, args)``; ties run in scheduling order."""

    __slots__ = ("now", "_heap", "_seq", "events")

    def __init__(self):
        self.now = 0
        self._heap = []
        self._seq = 0
        self.events = 0

    def at(self, t: int, fn, *args) -> None:
        if t < self.now:
            raise ValueError(f"event at {t} us scheduled in the past (now {self.now})")
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, fn, args))

    def after(self, delay: int, fn, *args) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (self.now + delay, self._seq, fn, args))

    def run(self, until: int) -> None:
        heap = self._heap
        pop = heapq.heappop
        n = 0
        while heap and heap[0][0] <= until:
            t, _, fn, args = pop(heap)
            self.now = t
            fn(*args)
            n += 1
        self.events += n
        self.now = until


class Timer:
    """One-shot timer whose deadline can move without piling up heap entries.

    Pushing a later deadline leaves the pending event in place; when it fires
    early it simply re-schedules itself at the current deadline.
    """

    __slots__ = ("sim", "callback", "deadline", "_pending")

    def __init__(self, sim: Sim, callback):
        self.sim = sim
        self.callback = callback
        self.deadline = None
        self._pending = None

    def arm(self, t: int) -> None:
        self.deadline = t
        if self._pending is None or self._pending > t:
            self._pending = t
            self.sim.at(t, self._fire, t)

    def cancel(self) -> None:
        self.deadline = None

    @property
    def armed(self) -> bool:
        return self.deadline is not None

    def _fire(self, t: int) -> None:
        if t != self._pending:
            return
        self._pending = None
        if self.deadline is None:
            return
        if self.sim.now < self.deadline:
            self._pending = self.deadline
            self.sim.at(self.deadline, self._fire, self.deadline)
            return
        self.deadline = None
        self.callback()
