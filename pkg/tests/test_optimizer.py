import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wlanslice.errors import SolverError
from wlanslice.optimizer import (ALPHA_DEFAULT, AllocationProblem, AllocationSolution,
                                 GenericUtility, check_feasibility, evaluate_utility,
                                 solve_allocation)
from wlanslice.topology import (DependenceGraph, IndependentSetMatrix,
                                enumerate_maximal_independent_sets)

LAN = (False, False, True)
WAN_DOWN = (True, False, False)
WAN_UP = (False, True, False)
ONES = (1.0, 1.0, 1.0)


def matrix(clients, sets):
    return IndependentSetMatrix(tuple(clients), tuple(frozenset(s) for s in sets))


def fig3_problem(**kw):
    cl = [1, 2, 3, 4]
    return AllocationProblem(cl, {c: ONES for c in cl}, {c: 22.0 for c in cl},
                             {c: LAN for c in cl}, matrix(cl, [{1, 4}, {2}, {3}]),
                             32.0, 32.0, **kw)


def mixed_problem():
    cl = [1, 2, 3, 4]
    flags = {1: LAN, 2: WAN_DOWN, 3: WAN_DOWN, 4: LAN}
    return AllocationProblem(cl, {c: ONES for c in cl}, {c: 22.0 for c in cl}, flags,
                             matrix(cl, [{1, 4}, {2}, {3}]), 8.0, 8.0)


# -- worked examples -----------------------------------------------------------

def test_fig3_split():
    p = fig3_problem()
    s = solve_allocation(p)
    assert s.a == pytest.approx([0.5, 0.25, 0.25], abs=1e-6)
    assert s.z == pytest.approx([0.5, 0.25, 0.25, 0.5], abs=1e-6)
    rates = s.rates(p)
    assert [rates[c][2] for c in p.clients] == pytest.approx([11, 5.5, 5.5, 11], abs=1e-5)
    assert s.x == pytest.approx(np.zeros(4)) and s.y == pytest.approx(np.zeros(4))
    assert s.kkt_residual <= 1e-6


def test_single_client_takes_everything():
    p = AllocationProblem([7], {7: ONES}, {7: 20.0}, {7: LAN}, matrix([7], [{7}]), 8.0, 8.0)
    s = solve_allocation(p)
    assert s.z[0] == pytest.approx(1.0, abs=1e-6)
    assert s.a[0] == pytest.approx(1.0, abs=1e-6)


def test_wan_inbound_binds_first():
    p = mixed_problem()
    s = solve_allocation(p)
    r = s.rates(p)
    assert r[2][0] == pytest.approx(4.0, abs=1e-4)
    assert r[3][0] == pytest.approx(4.0, abs=1e-4)
    assert r[1][2] == pytest.approx(14.0, abs=1e-3)
    assert r[4][2] == pytest.approx(14.0, abs=1e-3)


def test_absent_classes_get_nothing():
    s = solve_allocation(mixed_problem())
    assert s.z[1] == 0.0 and s.z[2] == 0.0
    assert s.x[0] == 0.0 and s.x[3] == 0.0
    assert s.y.tolist() == [0.0] * 4


def test_empty_objective_rejected():
    p = AllocationProblem([1], {1: ONES}, {1: 10.0}, {1: (False, False, False)},
                          matrix([1], [{1}]), 8.0, 8.0)
    with pytest.raises(SolverError, match="empty objective"):
        solve_allocation(p)


def test_bad_problem_fields_rejected():
    M = matrix([1], [{1}])
    with pytest.raises(SolverError):
        AllocationProblem([1], {1: (-1.0, 1.0, 1.0)}, {1: 10.0}, {1: LAN}, M, 8.0, 8.0)
    with pytest.raises(SolverError):
        AllocationProblem([1], {1: ONES}, {1: 0.0}, {1: LAN}, M, 8.0, 8.0)
    with pytest.raises(SolverError):
        AllocationProblem([1], {1: ONES}, {1: 10.0}, {1: LAN}, M, 8.0, 8.0, alpha=1.0)
    with pytest.raises(SolverError):
        AllocationProblem([1], {1: ONES}, {1: 10.0}, {1: LAN}, M, 0.0, 8.0)


def test_convex_utility_rejected():
    with pytest.raises(SolverError):
        GenericUtility(lambda r: r ** 2, lambda r: 2 * r)
    with pytest.raises(SolverError):
        GenericUtility(lambda r: -r, lambda r: -np.ones_like(r))


def test_generic_sqrt_utility():
    # sqrt utility: on {1,4},{2},{3} with equal v the optimum weights a by
    # per-column marginal value; the KKT certificate is what matters here
    p = fig3_problem(utility=GenericUtility(np.sqrt, lambda r: 0.5 / np.sqrt(r)))
    s = solve_allocation(p)
    assert s.kkt_residual <= 1e-6
    assert check_feasibility(p, s).feasible
    # two clients share column 0, so it must get more than the singletons
    assert s.a[0] > s.a[1] == pytest.approx(s.a[2], abs=1e-6)


# -- utility evaluation ------------------------------------------------------

def test_evaluate_utility_examples():
    assert evaluate_utility([11, 5.5, 5.5, 11], [1] * 4) == pytest.approx(
        2 * math.log(11) + 2 * math.log(5.5))
    assert evaluate_utility([11, 5.5, 5.5, 11], [1] * 4) == pytest.approx(8.2053, abs=1e-4)
    assert evaluate_utility([1.0], [1.0]) == 0.0
    assert evaluate_utility([0.0], [1.0]) == pytest.approx(math.log(1e-3))
    assert evaluate_utility([0.0], [1.0]) == pytest.approx(-6.9078, abs=1e-4)


# -- feasibility checks ------------------------------------------------------

def fig3_solution():
    return AllocationSolution([1, 2, 3, 4], np.zeros(4), np.zeros(4),
                              np.array([0.5, 0.25, 0.25, 0.5]), np.array([0.5, 0.25, 0.25]),
                              0.0, 0.0)


def test_fig3_solution_is_feasible():
    rep = check_feasibility(fig3_problem(), fig3_solution())
    assert rep.feasible
    assert rep.worst() >= 0


def test_aggregate_time_constraint_violated_by_half():
    rep = check_feasibility(fig3_problem(include_aggregate_time_constraint=True),
                            fig3_solution())
    assert not rep.feasible
    assert rep.slacks["aggregate_time"][0] == pytest.approx(-0.5)


def test_all_zero_solution_flagged():
    s = AllocationSolution([1, 2, 3, 4], np.zeros(4), np.zeros(4), np.zeros(4),
                           np.zeros(3), 0.0, 0.0)
    rep = check_feasibility(fig3_problem(), s)
    assert rep.feasible
    assert not rep.objective_defined and rep.objective_value is None


def test_dimension_mismatch():
    s = AllocationSolution([1, 2, 3, 4], np.zeros(3), np.zeros(4), np.zeros(4),
                           np.zeros(3), 0.0, 0.0)
    with pytest.raises(SolverError):
        check_feasibility(fig3_problem(), s)


def test_aggregate_time_toggle_on_solves():
    p = fig3_problem(include_aggregate_time_constraint=True)
    s = solve_allocation(p)
    assert check_feasibility(p, s).feasible
    assert (s.x + s.y + s.z).sum() <= 1 + 1e-6


# -- grid-search oracle ------------------------------------------------------

def grid_oracle(p, step=1e-3):
    """Best objective over a grid of feasible points.

    Handles instances where each client has one active class and at most two
    clients use the WAN.  ``a`` runs over the grid with all activation time
    used (budgets only grow with ``a``), LAN clients take their whole budget,
    the first WAN client runs over the grid and the second takes the best
    share the WAN constraints leave it.
    """
    cl = p.clients
    K = len(p.M)
    Mm = p.M.membership
    row = {c: i for i, c in enumerate(p.M.clients)}
    kind = {c: p.demand_flags[c].index(True) for c in cl}
    w = {c: p.weights[c][kind[c]] for c in cl}
    wan = [c for c in cl if kind[c] < 2]
    assert len(wan) <= 2
    if K == 1:
        a_grid = np.ones((1, 1))
    else:
        t = np.arange(0.0, 1.0 + step / 2, step)
        a_grid = np.stack([t, 1.0 - t], axis=1)
    budgets = a_grid @ Mm.T.astype(float)      # rows: a points, cols: M.clients
    # coefficients of a client's rate in (inbound, outbound)
    coef = {c: ((1.0, p.alpha) if kind[c] == 0 else (p.alpha, 1.0)) for c in wan}
    best = -np.inf
    for i in range(len(a_grid)):
        b = {c: budgets[i, row[c]] for c in cl}
        total = 0.0
        ok = True
        for c in cl:
            if kind[c] == 2:
                if b[c] <= 0:
                    ok = False
                    break
                total += w[c] * math.log(b[c] * p.v[c])
        if not ok:
            continue
        if not wan:
            best = max(best, total)
            continue
        c1 = wan[0]
        f1 = np.arange(step, b[c1] + step / 2, step)
        if f1.size == 0:
            continue
        r1 = f1 * p.v[c1]
        rem_in = p.r_in - coef[c1][0] * r1
        rem_out = p.r_out - coef[c1][1] * r1
        feas = (rem_in >= 0) & (rem_out >= 0)
        val = w[c1] * np.log(np.maximum(r1, 1e-300))
        if len(wan) == 2:
            c2 = wan[1]
            r2 = np.minimum.reduce([np.full_like(r1, b[c2] * p.v[c2]),
                                    rem_in / coef[c2][0], rem_out / coef[c2][1]])
            feas &= r2 > 0
            val = val + w[c2] * np.log(np.maximum(r2, 1e-300))
        if feas.any():
            best = max(best, total + float(np.max(val[feas])))
    return best


def random_instance(rng):
    shapes = [
        ([1], []),
        ([1, 2], []),
        ([1, 2], [(1, 2)]),
        ([1, 2, 3], []),
        ([1, 2, 3], [(1, 2)]),
        ([1, 2, 3], [(1, 2), (2, 3)]),
    ]
    verts, edges = shapes[rng.randrange(len(shapes))]
    M = enumerate_maximal_independent_sets(DependenceGraph.from_edges(verts, edges))
    assert len(M) <= 2
    kinds = [LAN, WAN_DOWN, WAN_UP]
    while True:
        flags = {c: kinds[rng.randrange(3)] for c in verts}
        if sum(f != LAN for f in flags.values()) <= 2:
            break
    weights = {}
    for c in verts:
        w = [0.0, 0.0, 0.0]
        w[flags[c].index(True)] = rng.uniform(0.5, 2.0)
        weights[c] = tuple(w)
    v = {c: rng.uniform(5.0, 30.0) for c in verts}
    return AllocationProblem(verts, weights, v, flags, M, rng.uniform(2.0, 40.0),
                             rng.uniform(2.0, 40.0))


def test_fifty_random_instances_against_grid():
    rng = random.Random(7)
    for _ in range(50):
        p = random_instance(rng)
        s = solve_allocation(p)
        assert s.kkt_residual <= 1e-6
        assert check_feasibility(p, s).feasible
        best = grid_oracle(p)
        assert s.objective_value >= best - 1e-4
        # the grid is coarse, but not that coarse
        assert s.objective_value <= best + 0.05


def test_oracle_finds_fig3_optimum():
    # the oracle itself, on a problem whose optimum is known in closed form
    cl = [1, 2]
    p = AllocationProblem(cl, {c: ONES for c in cl}, {c: 10.0 for c in cl},
                          {c: LAN for c in cl}, matrix(cl, [{1}, {2}]), 8.0, 8.0)
    assert grid_oracle(p) == pytest.approx(2 * math.log(5.0), abs=1e-9)


# -- properties --------------------------------------------------------------

seeds = st.integers(0, 10_000)


@settings(max_examples=30)
@given(seeds, st.floats(0.1, 10.0))
def test_weight_scaling_scales_objective(seed, k):
    p = random_instance(random.Random(seed))
    s1 = solve_allocation(p)
    p.weights = {c: tuple(k * w for w in p.weights[c]) for c in p.clients}
    s2 = solve_allocation(p)
    assert s2.objective_value == pytest.approx(k * s1.objective_value, rel=1e-6, abs=1e-6)
    assert np.allclose(s1.z, s2.z, atol=1e-6)
    assert np.allclose(s1.x, s2.x, atol=1e-6)
    assert np.allclose(s1.y, s2.y, atol=1e-6)


@settings(max_examples=30)
@given(seeds, st.permutations([1, 2, 3]))
def test_relabelling_clients_permutes_solution(seed, perm):
    p = random_instance(random.Random(seed))
    s = solve_allocation(p)
    relabel = dict(zip([1, 2, 3], perm))
    cl = [relabel[c] for c in p.clients]
    sets = [frozenset(relabel[c] for c in col) for col in p.M.sets]
    order = sorted(range(len(sets)), key=lambda k: sorted(sets[k]))
    q = AllocationProblem(cl, {relabel[c]: p.weights[c] for c in p.clients},
                          {relabel[c]: p.v[c] for c in p.clients},
                          {relabel[c]: p.demand_flags[c] for c in p.clients},
                          IndependentSetMatrix(tuple(sorted(cl)), tuple(sets[k] for k in order)),
                          p.r_in, p.r_out)
    t = solve_allocation(q)
    assert t.objective_value == pytest.approx(s.objective_value, abs=1e-6)
    for j in range(len(cl)):
        assert s.share(p.clients[j]) == pytest.approx(t.share(cl[j]), abs=1e-5)


@settings(max_examples=20)
@given(st.integers(2, 4), st.floats(5.0, 30.0))
def test_symmetric_clients_share_equally(n, v):
    cl = list(range(1, n + 1))
    p = AllocationProblem(cl, {c: ONES for c in cl}, {c: v for c in cl},
                          {c: LAN for c in cl}, matrix(cl, [{c} for c in cl]), 8.0, 8.0)
    s = solve_allocation(p)
    assert np.allclose(s.z, 1.0 / n, atol=1e-6)


def test_deterministic():
    a = solve_allocation(mixed_problem()).to_dict()
    b = solve_allocation(mixed_problem()).to_dict()
    assert a == b


def test_alpha_default():
    assert ALPHA_DEFAULT == pytest.approx(52 / 3000)
