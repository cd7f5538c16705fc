"""Client-assisted inference of AP-range dependencies from beacon scans.

Clients periodically report the beacon RSSI of every co-channel AP they can
hear.  A client whose own AP is not sufficiently stronger than a foreign AP
is declared dependent on every client of that foreign AP.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

from .errors import CalibrationError, ReportRejected
from .topology import NetworkDescription

log = logging.getLogger(__name__)

DEFAULT_PTH = 0.3
DEFAULT_REPORT_TTL_MS = 10_000.0


@dataclass(frozen=True)
class ScanReport:
    client: int
    timestamp: float
    measurements: tuple  # of (ap_id, rssi_dbm)

    def rssi(self, ap: str) -> Optional[float]:
        for a, r in self.measurements:
            if a == ap:
                return r
        return None


@dataclass(frozen=True)
class InferenceConfig:
    p_th: float = DEFAULT_PTH
    report_ttl: float = DEFAULT_REPORT_TTL_MS

    def __post_init__(self):
        if not 0 < self.p_th <= 1:
            raise ValueError("p_th must lie in (0, 1]")
        if not self.report_ttl > 0:
            raise ValueError("report_ttl must be positive")


def linear_ratio(a_dbm: float, b_dbm: float) -> float:
    """Power ratio a/b for two levels expressed in dBm."""
    return 10.0 ** ((a_dbm - b_dbm) / 10.0)


@dataclass
class ScanState:
    """Latest report per client.  Single writer."""

    net: NetworkDescription
    reports: dict = field(default_factory=dict)
    rejected: int = 0

    def fresh_reports(self, ttl: float) -> list[ScanReport]:
        if not self.reports:
            return []
        newest = max(r.timestamp for r in self.reports.values())
        return [r for _, r in sorted(self.reports.items())
                if newest - r.timestamp <= ttl]


def validate_report(report: ScanReport, net: NetworkDescription) -> None:
    known = {c.id: c for c in net.clients}
    if report.client not in known:
        raise ReportRejected(f"report from unknown client {report.client!r}")
    if not report.measurements:
        raise ReportRejected(f"client {report.client}: empty measurement list")
    for ap, rssi in report.measurements:
        if not isinstance(rssi, (int, float)) or not math.isfinite(rssi):
            raise ReportRejected(f"client {report.client}: non-finite RSSI for {ap}")
    own = known[report.client].associated_ap
    if report.rssi(own) is None:
        raise ReportRejected(
            f"client {report.client}: report lacks its own AP {own!r}")


def ingest_scan_report(state: ScanState, report: ScanReport) -> ScanState:
    """Keep the newest report per client; malformed reports leave state untouched."""
    try:
        validate_report(report, state.net)
    except ReportRejected:
        state.rejected += 1
        raise
    prev = state.reports.get(report.client)
    if prev is None or report.timestamp >= prev.timestamp:
        state.reports[report.client] = report
    return state


def infer_type3_edges(state: ScanState, net: NetworkDescription,
                      cfg: InferenceConfig) -> set:
    """Edges implied by the beacon-strength ratio test over fresh reports."""
    ap_by_id = {a.id: a for a in net.aps}
    clients = {c.id: c for c in net.clients}
    edges = set()
    for rep in state.fresh_reports(cfg.report_ttl):
        me = clients.get(rep.client)
        if me is None:
            continue
        own_ap = me.associated_ap
        own = rep.rssi(own_ap)
        if own is None:
            continue
        channel = ap_by_id[own_ap].channel
        for ap_id, rssi in rep.measurements:
            if ap_id == own_ap or ap_id not in ap_by_id:
                continue
            if ap_by_id[ap_id].channel != channel:
                continue
            if linear_ratio(own, rssi) < cfg.p_th:
                for other in net.clients_of(ap_id):
                    if other != rep.client:
                        edges.add(frozenset((rep.client, other)))
    return edges


@dataclass(frozen=True)
class CalibrationScenario:
    """Two clients on two non-interfering APs at one placement.

    ``rssi_11`` is client 1's reading of its own AP, ``rssi_21`` its reading
    of AP 2; likewise for client 2.
    """

    rssi_11: float
    rssi_21: float
    rssi_22: float
    rssi_12: float
    interfered: bool


def calibrate_pth(scenarios: Iterable[CalibrationScenario]) -> float:
    """Mean over non-interfering placements of the smaller own/foreign ratio."""
    values = [min(linear_ratio(s.rssi_11, s.rssi_21), linear_ratio(s.rssi_22, s.rssi_12))
              for s in scenarios if not s.interfered]
    if not values:
        raise CalibrationError("no non-interfering scenario to calibrate from")
    return sum(values) / len(values)


# -- datagram text format -------------------------------------------------

def format_scan_report(report: ScanReport) -> str:
    lines = [f"SCAN {report.client} {_num(report.timestamp)}"]
    lines += [f"{ap} {_num(r)}" for ap, r in report.measurements]
    return "\n".join(lines) + "\n\n"


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


@dataclass
class ParseResult:
    reports: list
    skipped: int = 0
    warnings: list = field(default_factory=list)


def parse_scan_stream(text: str) -> ParseResult:
    """Parse concatenated datagrams; malformed lines are skipped and counted."""
    out = ParseResult([])
    current = None
    meas = []

    def flush():
        nonlocal current, meas
        if current is not None:
            out.reports.append(ScanReport(current[0], current[1], tuple(meas)))
        current, meas = None, []

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            flush()
            continue
        parts = line.split()
        if parts[0] == "SCAN":
            flush()
            try:
                if len(parts) != 3:
                    raise ValueError
                current = (int(parts[1]), float(parts[2]))
            except ValueError:
                out.skipped += 1
                out.warnings.append(f"line {lineno}: bad header {line!r}")
                current = None
            continue
        if current is None:
            out.skipped += 1
            out.warnings.append(f"line {lineno}: measurement outside a datagram")
            continue
        try:
            if len(parts) != 2:
                raise ValueError
            rssi = float(parts[1])
            if not math.isfinite(rssi):
                raise ValueError
            meas.append((parts[0], rssi))
        except ValueError:
            out.skipped += 1
            out.warnings.append(f"line {lineno}: bad measurement {line!r}")
    flush()
    for w in out.warnings:
        log.warning(w)
    return out


def iter_reports(path) -> Iterator[ScanReport]:
    with open(path) as fh:
        yield from parse_scan_stream(fh.read()).reports
