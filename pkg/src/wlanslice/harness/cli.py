"""Command line: ``wlanslice run|solve|infer|sweep``."""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

from ..errors import ConfigurationError, WlanSliceError
from .report import (EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, format_solve, format_trace,
                     load_scenario, replay_scans, run_scenario, solve_scenario, summary_text)
from .library import BUILTIN, read_scenario_text, scan_file_text
from .scenario_file import load_document, parse_override, sweep_points, _value


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="set a dotted scenario key, e.g. controller.T_ms=500 (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wlanslice",
                                 description="Coarse time-slicing controller and WLAN simulator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="simulate a scenario and write a report directory")
    p.add_argument("scenario", help="scenario file or built-in name")
    p.add_argument("--out", help="report directory (default reports/<name>)")
    p.add_argument("--mode", default="timeline", choices=("managed", "unmanaged", "timeline"))
    _common(p)

    p = sub.add_parser("solve", help="run the optimizer only and print the slices")
    p.add_argument("scenario")
    _common(p)

    p = sub.add_parser("infer", help="replay a scan datagram file through inference")
    p.add_argument("scanfile")
    p.add_argument("--scenario", default="sec74_mobility",
                   help="scenario providing the network (default sec74_mobility)")

    p = sub.add_parser("sweep", help="run a scenario over a grid of parameter values")
    p.add_argument("scenario")
    p.add_argument("--param", action="append", default=[], metavar="KEY=V1,V2,...")
    p.add_argument("--out", help="directory for per-point reports and sweep.csv")
    p.add_argument("--mode", default="timeline", choices=("managed", "unmanaged", "timeline"))
    _common(p)

    sub.add_parser("list", help="list the built-in scenarios")
    return ap


def _overrides(args) -> list:
    items = [parse_override(o) for o in args.override]
    if args.seed is not None:
        items.append(("seed", str(args.seed)))
    return items


def _cmd_run(args) -> int:
    overrides = _overrides(args)
    out = args.out
    if out is None:
        try:
            out = str(Path("reports") / load_scenario(args.scenario, overrides).name)
        except (ConfigurationError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INVALID
    res = run_scenario(args.scenario, overrides, out, args.mode)
    if res.status != EXIT_OK:
        print(f"error: {res.error}", file=sys.stderr)
        return res.status
    sys.stdout.write(summary_text(res.config, res.metrics))
    print(f"report written to {res.directory}")
    return EXIT_OK


def _cmd_solve(args) -> int:
    sc = load_scenario(args.scenario, _overrides(args))
    sys.stdout.write(format_solve(solve_scenario(sc)))
    return EXIT_OK


def _cmd_infer(args) -> int:
    sc = load_scenario(args.scenario)
    sys.stdout.write(format_trace(replay_scans(scan_file_text(args.scanfile), sc)))
    return EXIT_OK


def _cmd_sweep(args) -> int:
    base = _overrides(args)
    doc = load_document(read_scenario_text(args.scenario))
    params = None
    if args.param:
        params = {}
        for item in args.param:
            k, vals = parse_override(item)
            params[k] = [_value(v) for v in vals.split(",")]
    points = sweep_points(doc, params)
    out = Path(args.out) if args.out else None
    rows = []
    keys = list(points[0])
    for i, pt in enumerate(points):
        res = run_scenario(args.scenario, base + list(pt.items()),
                           None if out is None else out / f"point{i:03d}", args.mode)
        if res.status != EXIT_OK:
            print(f"error at {pt}: {res.error}", file=sys.stderr)
            return res.status
        m = res.metrics
        rows.append([pt[k] for k in keys] + [f"{m.mean_mbps(c):.4f}" for c in m.clients])
        print(" ".join(f"{k}={pt[k]}" for k in keys) + "  "
              + " ".join(f"client{c}={m.mean_mbps(c):.3f}" for c in m.clients))
    if out is not None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(keys + [f"client{c}_Mbps" for c in res.metrics.clients])
        w.writerows(rows)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.csv").write_text(buf.getvalue())
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.cmd == "list":
            print("\n".join(BUILTIN))
            return EXIT_OK
        return {"run": _cmd_run, "solve": _cmd_solve, "infer": _cmd_infer,
                "sweep": _cmd_sweep}[args.cmd](args)
    except (ConfigurationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except WlanSliceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
