"""Run metrics and their CSV form."""
from __future__ import annotations

import io
import math
from pathlib import Path

import numpy as np

from ..optimizer import RATE_FLOOR
from ..vqueue import QueueClass

CSV_FILES = ("throughput.csv", "responses.csv", "rtt.csv", "utility.csv")


def _f(x: float, digits: int = 4) -> str:
    """Fixed-point text so that identical runs give identical bytes."""
    if x != x:
        return "nan"
    s = f"{x:.{digits}f}"
    return "0." + "0" * digits if s == "-0." + "0" * digits else s


class RunMetrics:
    """Everything a run reports.

    ``bytes`` maps ``(client, QueueClass)`` to goodput bytes per one-second
    bin.  ``responses`` holds ``(client, request_id, ms)``, ``rtts`` holds
    ``(t_s, client, ms)`` and ``utility`` one aggregate value per bin.
    """

    def __init__(self, clients, duration_s: float):
        self.clients = list(clients)
        self.duration_s = duration_s
        self.n_bins = max(1, int(math.ceil(duration_s - 1e-9)))
        self.bytes = {}
        self.responses = []
        self.rtts = []
        self.adapt = []
        self.schedules = []      # (t_s, schedule dump)
        self.solutions = []      # (t_s, dict)
        self.graphs = []         # (t_s, sorted edge list)
        self.utility = np.zeros(self.n_bins)
        self.modes = []          # (t_s, mode)
        self.counters = {}
        self.releases = None

    # -- recording ---------------------------------------------------------

    def add_bytes(self, client, cls: QueueClass, t_us: int, n: int) -> None:
        key = (client, QueueClass(cls))
        arr = self.bytes.get(key)
        if arr is None:
            arr = self.bytes[key] = np.zeros(self.n_bins)
        b = min(int(t_us // 1_000_000), self.n_bins - 1)
        arr[b] += n

    # -- queries -----------------------------------------------------------

    def series(self, client, cls: QueueClass) -> np.ndarray:
        """Goodput in Mbps per one-second bin."""
        arr = self.bytes.get((client, QueueClass(cls)))
        if arr is None:
            return np.zeros(self.n_bins)
        return arr * 8.0 / 1e6

    def client_series(self, client) -> np.ndarray:
        return sum((self.series(client, c) for c in QueueClass), np.zeros(self.n_bins))

    def mean_mbps(self, client, cls=None, t0: float = 0.0, t1: float | None = None) -> float:
        s = self.client_series(client) if cls is None else self.series(client, cls)
        lo = int(round(t0))
        hi = self.n_bins if t1 is None else int(round(t1))
        seg = s[lo:hi]
        return float(seg.mean()) if len(seg) else 0.0

    def response_times(self, client=None, t0: float = 0.0, t1: float = math.inf) -> np.ndarray:
        return np.array([r[3] for r in self.responses
                         if (client is None or r[0] == client) and t0 <= r[2] < t1])

    def rtt_samples(self, client=None, t0: float = 0.0, t1: float = math.inf) -> np.ndarray:
        return np.array([r[2] for r in self.rtts
                         if (client is None or r[1] == client) and t0 <= r[0] < t1])

    def compute_utility(self, demand: dict, weights: dict, floor: float = RATE_FLOOR) -> None:
        """Aggregate weighted log utility of the measured rates in every bin.

        ``demand`` maps a client to its (wan_down, wan_up, lan) flags.
        """
        total = np.zeros(self.n_bins)
        for c in self.clients:
            flags = demand.get(c)
            if flags is None:
                continue
            eta, xi, delta = weights[c]
            parts = (
                (flags[0], eta, self.series(c, QueueClass.WAN_DOWN)),
                (flags[1], xi, self.series(c, QueueClass.WAN_UP)),
                (flags[2], delta, self.series(c, QueueClass.LAN_DOWN)
                 + self.series(c, QueueClass.LAN_UP)),
            )
            for on, w, r in parts:
                if on and w > 0:
                    total += w * np.log(np.maximum(r, floor))
        self.utility = total

    # -- serialisation -----------------------------------------------------

    def csv_tables(self) -> dict:
        out = {}
        buf = io.StringIO()
        buf.write("t_s,client,class,Mbps\n")
        keys = sorted(self.bytes, key=lambda k: (k[0], int(k[1])))
        for b in range(self.n_bins):
            for c, cls in keys:
                buf.write(f"{b},{c},{cls.name},{_f(self.bytes[(c, cls)][b] * 8e-6)}\n")
        out["throughput.csv"] = buf.getvalue()

        buf = io.StringIO()
        buf.write("client,request_id,ms\n")
        for c, rid, _, v in self.responses:
            buf.write(f"{c},{rid},{_f(v, 3)}\n")
        out["responses.csv"] = buf.getvalue()

        buf = io.StringIO()
        buf.write("t_s,client,ms\n")
        for t, c, v in self.rtts:
            buf.write(f"{_f(t, 3)},{c},{_f(v, 3)}\n")
        out["rtt.csv"] = buf.getvalue()

        buf = io.StringIO()
        buf.write("t_s,aggregate\n")
        for b, u in enumerate(self.utility):
            buf.write(f"{b},{_f(float(u))}\n")
        out["utility.csv"] = buf.getvalue()
        return out

    def adapt_trace(self) -> str:
        return "".join(line + "\n" for line in self.adapt)

    def schedule_trace(self) -> str:
        return "".join(f"AT {_f(t, 3)}\n{dump}" for t, dump in self.schedules)

    def write(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for name, text in self.csv_tables().items():
            (d / name).write_text(text)
        (d / "adapt.txt").write_text(self.adapt_trace())
        (d / "schedules.txt").write_text(self.schedule_trace())
