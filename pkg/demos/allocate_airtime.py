"""Allocate airtime for two APs and four clients, then lay out the frame.

Builds the conflict graph by hand, enumerates its maximal independent sets,
solves the proportional-fair allocation and prints the resulting schedule.
"""
from wlanslice.optimizer import AllocationProblem, solve_allocation
from wlanslice.scheduler import derive_schedule
from wlanslice.topology import DependenceGraph, enumerate_maximal_independent_sets

# STA 1, 2 on AP1 and STA 3, 4 on AP2; only 1 and 4 can transmit together
g = DependenceGraph.from_edges([1, 2, 3, 4], [(1, 2), (1, 3), (2, 3), (2, 4), (3, 4)])
M = enumerate_maximal_independent_sets(g)
print("independent sets:", [sorted(s) for s in M.sets])

clients = [1, 2, 3, 4]
lan_only = (False, False, True)
p = AllocationProblem(clients, {c: (1.0, 1.0, 1.0) for c in clients},
                      {c: 22.0 for c in clients}, {c: lan_only for c in clients},
                      M, r_in=8.0, r_out=8.0)
s = solve_allocation(p)
print("activations:", s.a.round(4), f"KKT residual {s.kkt_residual:.1e}")
for c, (wd, wu, lan) in s.rates(p).items():
    print(f"  STA {c}: {wd + wu + lan:6.2f} Mbps")

print(derive_schedule(s.a, M).dump(), end="")
