"""Run a built-in scenario's timeline and compare its mode segments.

Prints mean and standard deviation of every client's throughput per
segment, and optionally writes the full report directory.
"""
import argparse

from wlanslice.harness.report import load_scenario, mode_segments, write_report
from wlanslice.simnet.run import run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("scenario", nargs="?", default="fig3_2ap4sta_lan")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out")
    args = ap.parse_args()
    overrides = [] if args.seed is None else [("seed", str(args.seed))]
    sc = load_scenario(args.scenario, overrides)
    m = run(sc)
    for mode, t0, t1 in mode_segments(m):
        print(f"{mode}  {t0:.0f}-{t1:.0f} s")
        # skip the first seconds of each segment while TCP settles
        lo = min(int(t0) + 5, int(t1) - 1)
        for c in m.clients:
            s = m.client_series(c)[lo:int(t1)]
            print(f"  STA {c}: {s.mean():6.2f} Mbps  std {s.std():5.2f}")
        u = m.utility[lo:int(t1)]
        print(f"  aggregate utility {u.mean():.3f}")
    if args.out:
        print("report written to", write_report(args.out, sc, m))


if __name__ == "__main__":
    main()
