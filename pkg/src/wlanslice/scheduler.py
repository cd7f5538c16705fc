"""Frame schedules derived from independent-set activations.

A frame of ``T`` ms is partitioned into slots; each slot names the clients
whose controller queues may be served during it.  Times are in ms.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import ScheduleError
from .topology import DependenceGraph, IndependentSetMatrix

DEFAULT_FRAME_MS = 1000.0
DEFAULT_QUANTUM_MS = 10.0


class FlowClass(enum.Enum):
    LONG_LIVED = "LONG_LIVED"
    SHORT_LIVED = "SHORT_LIVED"
    INTERACTIVE = "INTERACTIVE"


@dataclass(frozen=True)
class Slot:
    start: float
    end: float
    active: frozenset

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class TimeFrameSchedule:
    T: float
    slots: tuple
    bypass_clients: frozenset = frozenset()
    quantum: float = DEFAULT_QUANTUM_MS

    def on_time(self, client) -> float:
        return sum(s.duration for s in self.slots if client in s.active)

    def on_intervals(self, client) -> list[tuple[float, float]]:
        """Merged ON intervals of ``client`` within one frame."""
        out = []
        for s in self.slots:
            if client in s.active:
                if out and abs(out[-1][1] - s.start) < 1e-9:
                    out[-1] = (out[-1][0], s.end)
                else:
                    out.append((s.start, s.end))
        return out

    def slot_at(self, t: float) -> Slot:
        pos = t % self.T
        for s in self.slots:
            if s.start <= pos < s.end:
                return s
        return self.slots[-1]

    def clients(self) -> set:
        out = set()
        for s in self.slots:
            out |= s.active
        return out

    def with_bypass(self, clients: Iterable) -> "TimeFrameSchedule":
        return TimeFrameSchedule(self.T, self.slots, frozenset(clients), self.quantum)

    def dump(self) -> str:
        lines = [f"FRAME {_ms(self.T)}",
                 "BYPASS " + (",".join(str(c) for c in sorted(self.bypass_clients)) or "-")]
        for s in self.slots:
            ids = ",".join(str(c) for c in sorted(s.active)) if s.active else "IDLE"
            lines.append(f"SLOT {_ms(s.start)} {_ms(s.end)} {ids}")
        return "\n".join(lines) + "\n"


def _ms(x: float) -> str:
    return str(int(round(x))) if abs(x - round(x)) < 1e-9 else f"{x:.3f}"


def _ids(field: str, empty: str) -> frozenset:
    return frozenset() if field == empty else frozenset(int(c) for c in field.split(","))


def parse_schedule(text: str) -> TimeFrameSchedule:
    T, bypass, slots = None, frozenset(), []
    for line in text.strip().splitlines():
        parts = line.split()
        if parts[0] == "FRAME":
            T = float(parts[1])
        elif parts[0] == "BYPASS":
            bypass = _ids(parts[1], "-")
        elif parts[0] == "SLOT":
            ids = _ids(parts[3], "IDLE")
            slots.append(Slot(float(parts[1]), float(parts[2]), ids))
    if T is None:
        raise ScheduleError("schedule dump lacks a FRAME line")
    return TimeFrameSchedule(T, tuple(slots), bypass)


def derive_schedule(a, M: IndependentSetMatrix, T: float = DEFAULT_FRAME_MS,
                    quantum: float = DEFAULT_QUANTUM_MS,
                    bypass: Iterable = ()) -> TimeFrameSchedule:
    """One slot per activated independent set, rounded to ``quantum``.

    Each column is rounded down or up to a whole number of quanta (so
    sub-quantum activations may vanish), choosing jointly so that no client's
    ON time drifts further than necessary from its target.  Leftover frame
    time becomes a trailing idle slot.
    """
    a = np.asarray(a, dtype=float)
    if len(a) != len(M):
        raise ScheduleError("activation vector does not match the independent-set matrix")
    if np.any(a < -1e-9):
        raise ScheduleError("negative activation")
    if a.sum() > 1 + 1e-6:
        raise ScheduleError(f"activations sum to {a.sum():.6f} > 1")
    a = np.clip(a, 0.0, None)
    durations = _round_columns(a * T, M, T, quantum)
    slots = []
    t = 0.0
    for k in sorted(durations):
        d = durations[k]
        slots.append(Slot(t, t + d, frozenset(M.sets[k])))
        t += d
    if T - t > 1e-9:
        slots.append(Slot(t, T, frozenset()))
    return TimeFrameSchedule(T, tuple(slots), frozenset(bypass), quantum)


EXHAUSTIVE_ROUNDING_COLUMNS = 16


def _round_columns(target, M: IndependentSetMatrix, T: float, quantum: float) -> dict:
    """Per-column durations in whole quanta, ``{column: ms}`` for non-empty columns.

    Every column goes to the floor or the ceiling of its target.  Among the
    choices that fit in the frame, take the one with the smallest worst
    per-client error, then the smallest total error, then the most floors.
    Up to ``EXHAUSTIVE_ROUNDING_COLUMNS`` active columns are searched
    exhaustively; beyond that a local search starts from nearest rounding.
    """
    active = [k for k in range(len(target)) if target[k] > 1e-9]
    if not active:
        return {}
    lo = np.floor(target[active] / quantum + 1e-9) * quantum
    hi = np.where(target[active] - lo > 1e-9, lo + quantum, lo)
    memb = M.membership[:, active].astype(float)
    goal = memb @ target[active]
    n = len(active)

    def score(d):
        err = np.abs(memb @ d - goal)
        return (round(float(err.max()), 9), round(float(err.sum()), 9))

    if n <= EXHAUSTIVE_ROUNDING_COLUMNS:
        bits = (np.arange(2 ** n)[:, None] >> np.arange(n)) & 1
        cand = lo + bits * (hi - lo)
        fits = cand.sum(axis=1) <= T + 1e-9
        cand, bits = cand[fits], bits[fits]
        err = np.abs(cand @ memb.T - goal)
        key = np.lexsort((bits.sum(axis=1), np.round(err.sum(axis=1), 9),
                          np.round(err.max(axis=1), 9)))
        best = cand[key[0]]
    else:
        # nearest rounding, trimmed to fit, then single and paired flips while they help
        best = np.where(target[active] - lo >= quantum / 2, hi, lo)
        while best.sum() > T + 1e-9:
            k = max((k for k in range(n) if best[k] > lo[k]),
                    key=lambda k: lo[k] + quantum / 2 - target[active][k])
            best[k] = lo[k]
        current = score(best)
        while True:
            moves = []
            up = best > lo
            flips = [(k,) for k in range(n)] + [(k, l) for k in range(n)
                                                for l in range(k + 1, n) if up[k] != up[l]]
            for ks in flips:
                if any(hi[k] == lo[k] for k in ks):
                    continue
                d = best.copy()
                for k in ks:
                    d[k] = lo[k] if best[k] == hi[k] else hi[k]
                if d.sum() <= T + 1e-9:
                    moves.append((score(d), ks, d))
            if not moves:
                break
            sc, _, d = min(moves, key=lambda m: (m[0], m[1]))
            if sc >= current:
                break
            best, current = d, sc
    return {k: float(d) for k, d in zip(active, best) if d > 0}


def fixed_schedule(T: float, intervals, bypass: Iterable = (),
                   quantum: float = DEFAULT_QUANTUM_MS) -> TimeFrameSchedule:
    """Build a schedule from explicit ``(start, end, clients)`` triples; gaps are idle."""
    items = sorted((float(s), float(e), frozenset(c)) for s, e, c in intervals)
    cuts = sorted({0.0, float(T)} | {s for s, _, _ in items} | {e for _, e, _ in items})
    slots = []
    for lo, hi in zip(cuts, cuts[1:]):
        if hi <= lo or lo >= T:
            continue
        active = frozenset().union(*[c for s, e, c in items if s <= lo and hi <= e]) \
            if items else frozenset()
        if slots and slots[-1].active == active:
            slots[-1] = Slot(slots[-1].start, hi, active)
        else:
            slots.append(Slot(lo, min(hi, T), active))
    return TimeFrameSchedule(float(T), tuple(slots), frozenset(bypass), quantum)


def spread_subslices(sched: TimeFrameSchedule, client, share: float, parts: int,
                     graph: Optional[DependenceGraph] = None) -> TimeFrameSchedule:
    """Give ``client`` ``share`` of the frame as ``parts`` equal, evenly spaced gates.

    Gates start every ``T / parts`` ms.  Without a graph every gate is an
    exclusive micro-slot and the rest of the schedule, with ``client``
    removed, is compressed linearly into the remaining time.  With a graph, a
    gate that only overlaps slots independent of ``client`` is overlaid on
    them instead, costing the other clients nothing.
    """
    return spread_group(sched, [client], share, parts, graph)


def spread_group(sched: TimeFrameSchedule, clients: Iterable, share: float, parts: int,
                 graph: Optional[DependenceGraph] = None) -> TimeFrameSchedule:
    """Like ``spread_subslices`` for several mutually independent clients sharing gates."""
    clients = frozenset(clients)
    T = sched.T
    if not clients:
        raise ScheduleError("no client to spread")
    if not 0 < share <= 1 or parts < 1:
        raise ScheduleError("share must be in (0, 1] and parts >= 1")
    if share * T < parts * sched.quantum - 1e-9:
        raise ScheduleError(
            f"{parts} gates of {share * T / parts:.1f} ms are shorter than the "
            f"{sched.quantum} ms quantum")
    if graph is not None and not graph.is_independent(clients):
        raise ScheduleError(f"clients {sorted(clients)} are not mutually independent")
    period = T / parts
    g = share * T / parts
    gates = [(p * period, p * period + g) for p in range(parts)]
    base = [Slot(s.start, s.end, s.active - clients) for s in sched.slots]
    carved = set(range(parts)) if graph is None else set()
    # overlays only ever turn into carves, so this settles within `parts` rounds
    while True:
        slots = _compress(base, [gates[i] for i in sorted(carved)], T)
        bad = {i for i in range(parts) if i not in carved
               and not all(graph.is_independent(s.active | clients)
                           for s in slots if s.start < gates[i][1] and s.end > gates[i][0])}
        if not bad:
            break
        carved |= bad
    out = list(slots) + [Slot(gates[i][0], gates[i][1], clients) for i in sorted(carved)]
    for i in range(parts):
        if i not in carved:
            out = _overlay(out, gates[i], clients)
    out.sort(key=lambda s: s.start)
    return TimeFrameSchedule(T, tuple(_merge(out)), sched.bypass_clients, sched.quantum)


def _compress(slots, holes, T):
    """Map ``slots`` linearly onto [0, T) minus the sorted ``holes``."""
    free, t = [], 0.0
    for lo, hi in holes + [(T, T)]:
        if lo > t:
            free.append((t, lo))
        t = hi
    scale = sum(hi - lo for lo, hi in free) / T
    out = []
    for s in slots:
        lo, hi = s.start * scale, s.end * scale
        offset = 0.0
        for f0, f1 in free:
            seg0, seg1 = max(lo, offset), min(hi, offset + f1 - f0)
            if seg1 > seg0:
                out.append(Slot(f0 + seg0 - offset, f0 + seg1 - offset, s.active))
            offset += f1 - f0
    return out


def _overlay(slots, window, clients):
    lo, hi = window
    out = []
    for s in slots:
        if s.end <= lo or s.start >= hi:
            out.append(s)
            continue
        if s.start < lo:
            out.append(Slot(s.start, lo, s.active))
        out.append(Slot(max(s.start, lo), min(s.end, hi), s.active | clients))
        if s.end > hi:
            out.append(Slot(hi, s.end, s.active))
    return out


def _merge(slots):
    out = []
    for s in slots:
        if s.duration <= 1e-9:
            continue
        if out and out[-1].active == s.active and abs(out[-1].end - s.start) < 1e-9:
            out[-1] = Slot(out[-1].start, s.end, s.active)
        else:
            out.append(s)
    return out


def gate(sched: TimeFrameSchedule, t: float, client, cls: FlowClass) -> bool:
    """Whether ``client``'s traffic of class ``cls`` may be released at time ``t``."""
    if cls is FlowClass.INTERACTIVE and client in sched.bypass_clients:
        return True
    return client in sched.slot_at(t).active


def check_independent(sched: TimeFrameSchedule, graph: DependenceGraph) -> bool:
    return all(graph.is_independent(s.active) for s in sched.slots)
