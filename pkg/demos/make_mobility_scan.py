"""Write the scripted RSSI scans of the mobility scenario as a datagram file.

Keeps one report per client every ``--every`` seconds.  The output ships with
the package so that ``wlanslice infer sec74_mobility`` has something to replay.
"""
import argparse
from pathlib import Path

from wlanslice.harness.report import load_scenario
from wlanslice.inference import ScanReport, format_scan_report

DEFAULT_OUT = (Path(__file__).resolve().parents[1] / "src" / "wlanslice" / "harness"
               / "scenarios" / "sec74_mobility.scan")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--every", type=float, default=5.0)
    ap.add_argument("--out", default=str(DEFAULT_OUT))
    args = ap.parse_args()
    sc = load_scenario("sec74_mobility")
    chunks = []
    for ev in sc.scans:
        if abs(ev.t_s / args.every - round(ev.t_s / args.every)) < 1e-9:
            chunks.append(format_scan_report(
                ScanReport(ev.client, ev.t_s * 1000.0, tuple(ev.measurements))))
    Path(args.out).write_text("".join(chunks))
    print(f"{len(chunks)} reports written to {args.out}")


if __name__ == "__main__":
    main()
