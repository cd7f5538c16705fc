"""Running scenarios and writing report directories."""
from __future__ import annotations

import json
import logging
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError, ReportRejected, WlanSliceError
from ..inference import (InferenceConfig, ScanReport, ScanState, infer_type3_edges,
                         ingest_scan_report, parse_scan_stream)
from ..simnet.config import MANAGED, UNMANAGED, ScenarioConfig
from ..simnet.metrics import RunMetrics, _f
from ..simnet.run import demand_flags, plan_schedule, run
from ..topology import build_dependence_graph
from ..vqueue import QueueClass
from .library import read_scenario_text
from .scenario_file import (apply_override, from_document, load_document, parse_override,
                            serialize_scenario)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_RUNTIME = 3


def load_scenario(ref, overrides=()) -> ScenarioConfig:
    """Parse a scenario file or built-in name and apply ``key=value`` overrides."""
    doc = load_document(read_scenario_text(ref))
    for item in overrides:
        k, v = parse_override(item) if isinstance(item, str) else item
        doc = apply_override(doc, k, v)
    return from_document(doc)


def mode_segments(m: RunMetrics) -> list:
    """``(mode, t0, t1)`` spans of the run, merging repeated modes."""
    out = []
    for t, mode in m.modes:
        if out and out[-1][0] == mode:
            continue
        if out:
            out[-1][2] = t
        out.append([mode, t, m.duration_s])
    return [tuple(s) for s in out if s[2] > s[1]]


def summary_text(sc: ScenarioConfig, m: RunMetrics) -> str:
    lines = [f"scenario {sc.name} seed {sc.seed} duration {_f(sc.duration_s, 1)} s", ""]
    for mode, t0, t1 in mode_segments(m):
        lines.append(f"[{mode}] {_f(t0, 1)}-{_f(t1, 1)} s")
        lo, hi = int(round(t0)), int(round(t1))
        for c in m.clients:
            s = m.client_series(c)[lo:hi]
            rt = m.response_times(c, t0, t1)
            rtt = m.rtt_samples(c, t0, t1)
            if not s.any() and not len(rt) and not len(rtt):
                continue
            lines.append(f"  client {c}: mean {_f(float(s.mean()), 3)} Mbps "
                         f"std {_f(float(s.std()), 3)}")
            for cls in QueueClass:
                cs = m.series(c, cls)[lo:hi]
                if cs.any() and (c, cls) in m.bytes:
                    lines.append(f"    {cls.name}: mean {_f(float(cs.mean()), 3)} Mbps")
            if len(rt):
                lines.append(f"    responses: {len(rt)} median {_f(float(np.median(rt)), 1)} ms")
            if len(rtt):
                lines.append(f"    ping: {len(rtt)} median {_f(float(np.median(rtt)), 2)} ms")
        agg = sum(m.client_series(c)[lo:hi] for c in m.clients)
        lines.append(f"  aggregate: {_f(float(np.mean(agg)), 3)} Mbps, "
                     f"utility {_f(float(m.utility[lo:hi].mean()), 4)}")
        lines.append("")
    lines.append("counters: " + " ".join(f"{k}={v}" for k, v in sorted(m.counters.items())))
    return "\n".join(lines) + "\n"


def write_report(directory, sc: ScenarioConfig, m: RunMetrics) -> Path:
    """Write every report file to a scratch directory, then move it into place."""
    target = Path(directory)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        m.write(tmp)
        (tmp / "scenario.toml").write_text(serialize_scenario(sc))
        sols = [{"t_s": t, **rec} for t, rec in m.solutions]
        (tmp / "solutions.json").write_text(json.dumps(sols, indent=1, sort_keys=True) + "\n")
        (tmp / "graphs.txt").write_text("".join(
            f"{_f(t, 3)} " + " ".join(f"{a}-{b}" for a, b in edges) + "\n"
            for t, edges in m.graphs))
        (tmp / "summary.txt").write_text(summary_text(sc, m))
        if target.exists():
            shutil.rmtree(target)
        os.replace(tmp, target)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return target


@dataclass
class ScenarioResult:
    status: int
    directory: Path | None = None
    metrics: RunMetrics | None = None
    config: ScenarioConfig | None = None
    error: str = ""


def run_scenario(ref, overrides=(), out=None, mode: str | None = None) -> ScenarioResult:
    """Validate, simulate and report.  Nothing is written unless the run succeeds."""
    try:
        sc = load_scenario(ref, overrides)
        forced = _mode(mode)
    except (ConfigurationError, ValueError) as exc:
        return ScenarioResult(EXIT_INVALID, error=str(exc))
    try:
        m = run(sc, forced)
        directory = None
        if out is not None:
            directory = write_report(out, sc, m)
    except ConfigurationError as exc:
        return ScenarioResult(EXIT_INVALID, error=str(exc))
    except (WlanSliceError, ArithmeticError, RuntimeError, OSError) as exc:
        return ScenarioResult(EXIT_RUNTIME, error=f"{type(exc).__name__}: {exc}")
    return ScenarioResult(EXIT_OK, directory, m, sc)


def _mode(mode):
    if mode is None or mode == "timeline":
        return None
    m = mode.upper()
    if m not in (MANAGED, UNMANAGED):
        raise ConfigurationError(f"--mode must be managed, unmanaged or timeline, not {mode!r}")
    return m


# -- optimizer only -----------------------------------------------------------

def _initial_v(sc: ScenarioConfig) -> dict:
    cc = sc.controller
    fixed = dict(cc.fixed_v_per_client)
    return {c: float(fixed.get(c, cc.fixed_v)) for c in sc.net.client_ids}


def _initial_graph(sc: ScenarioConfig):
    """Graph from the declared edges plus any scans reported at time zero."""
    state = ScanState(sc.net)
    for ev in sc.scans:
        if ev.t_s <= 0:
            try:
                ingest_scan_report(state, ScanReport(ev.client, 0.0, tuple(ev.measurements)))
            except ReportRejected:
                pass
    cfg = InferenceConfig(sc.controller.p_th, sc.controller.report_ttl_ms)
    edges = set(sc.type3_edges) | infer_type3_edges(state, sc.net, cfg)
    return build_dependence_graph(sc.net, edges)


@dataclass
class SolveResult:
    schedule: object
    record: dict | None
    sliced: list = field(default_factory=list)


def solve_scenario(sc: ScenarioConfig) -> SolveResult:
    demand = demand_flags(sc.flows)
    sliced = [c for c in sc.net.client_ids if c in demand]
    weights = {c: sc.weights_of(c) for c in sc.net.client_ids}
    sched, rec = plan_schedule(sliced, _initial_graph(sc), weights, _initial_v(sc), demand,
                               sc.net.wan, sc.controller)
    return SolveResult(sched, rec, sliced)


def format_solve(res: SolveResult) -> str:
    lines = []
    rec = res.record
    if rec is not None:
        lines.append("SETS " + " ".join("{" + ",".join(str(c) for c in s) + "}"
                                        for s in rec["sets"]))
        lines.append("a " + " ".join(f"{x:.6f}" for x in rec["a"]))
        for c in rec["clients"]:
            wd, wu, lan = rec["rates"][c]
            lines.append(f"RATE {c} wan_down={wd:.4f} wan_up={wu:.4f} lan={lan:.4f} "
                         f"total={wd + wu + lan:.4f}")
        lines.append(f"OBJECTIVE {rec['objective_value']:.6f} KKT {rec['kkt_residual']:.2e}")
    else:
        lines.append("fixed slots; optimizer not used")
    return "\n".join(lines) + "\n" + res.schedule.dump()


# -- scan replay --------------------------------------------------------------

@dataclass
class ReplayRecord:
    t_ms: float
    edges: list
    schedule: str


@dataclass
class ReplayTrace:
    records: list
    skipped: int = 0
    rejected: int = 0


def replay_scans(text: str, sc: ScenarioConfig) -> ReplayTrace:
    """Feed datagram text through inference; record every graph change and its schedule."""
    parsed = parse_scan_stream(text)
    state = ScanState(sc.net)
    cfg = InferenceConfig(sc.controller.p_th, sc.controller.report_ttl_ms)
    demand = demand_flags(sc.flows) or {c: (False, False, True) for c in sc.net.client_ids}
    sliced = [c for c in sc.net.client_ids if c in demand]
    weights = {c: sc.weights_of(c) for c in sc.net.client_ids}
    v = _initial_v(sc)
    trace = ReplayTrace([], parsed.skipped)
    last = None
    for rep in sorted(parsed.reports, key=lambda r: r.timestamp):
        try:
            ingest_scan_report(state, rep)
        except ReportRejected as exc:
            log.warning("scan rejected: %s", exc)
            trace.rejected += 1
            continue
        edges = set(sc.type3_edges) | infer_type3_edges(state, sc.net, cfg)
        g = build_dependence_graph(sc.net, edges)
        if g.edges == last:
            continue
        last = g.edges
        sched, _ = plan_schedule(sliced, g, weights, v, demand, sc.net.wan, sc.controller)
        trace.records.append(ReplayRecord(
            rep.timestamp, sorted(tuple(sorted(e)) for e in g.edges), sched.dump()))
    return trace


def format_trace(trace: ReplayTrace) -> str:
    out = []
    for r in trace.records:
        out.append(f"AT {_f(r.t_ms, 1)} ms GRAPH " + " ".join(f"{a}-{b}" for a, b in r.edges))
        out.append(r.schedule.rstrip("\n"))
    out.append(f"skipped {trace.skipped} rejected {trace.rejected}")
    return "\n".join(out) + "\n"
