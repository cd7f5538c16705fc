"""Throughput of one TCP download gated ON for Ton ms of every 1000 ms frame.

Compares a LAN server, a WAN server behind the split proxy, and the same WAN
server without the proxy against the closed-form expectation.
"""
import argparse

from wlanslice.harness.report import load_scenario
from wlanslice.simnet.config import MANAGED
from wlanslice.simnet.oracle import expected_throughput
from wlanslice.simnet.run import run


def measure(ref, ton, duration, extra=()):
    sc = load_scenario(ref, [("Ton", str(ton)), ("duration_s", str(duration)), *extra])
    return run(sc, MANAGED).mean_mbps(1, t0=2)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--duration", type=float, default=30.0)
    ap.add_argument("--ton", type=int, nargs="*", default=[200, 400, 600, 1000])
    args = ap.parse_args()
    wan32 = [("network.wan.r_in", "32.0"), ("network.wan.r_out", "32.0")]
    print(f"{'Ton':>5} {'expected':>9} {'LAN':>7} {'proxy':>7} {'no proxy':>9}")
    for ton in args.ton:
        lan = measure("table2_sweep", ton, args.duration)
        prox = measure("table3_table4_sweep", ton, args.duration, wan32)
        bare = measure("table3_table4_sweep", ton, args.duration,
                       wan32 + [("network.proxy", "false")])
        want = expected_throughput(22.0, ton, 1000.0)
        print(f"{ton:5d} {want:9.2f} {lan:7.2f} {prox:7.2f} {bare:9.2f}")


if __name__ == "__main__":
    main()
