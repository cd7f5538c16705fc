import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from conftest import graphs
from wlanslice.errors import ScheduleError
from wlanslice.scheduler import (FlowClass, TimeFrameSchedule, check_independent,
                                 derive_schedule, fixed_schedule, gate, parse_schedule,
                                 spread_group, spread_subslices)
from wlanslice.topology import (DependenceGraph, IndependentSetMatrix,
                                enumerate_maximal_independent_sets)

LONG = FlowClass.LONG_LIVED


def fig3_graph():
    return DependenceGraph.from_edges([1, 2, 3, 4], [(1, 2), (1, 3), (2, 3), (2, 4), (3, 4)])


def fig3():
    M = enumerate_maximal_independent_sets(fig3_graph())
    assert [sorted(s) for s in M.sets] == [[1, 4], [2], [3]]
    return derive_schedule([0.5, 0.25, 0.25], M)


def layout(sched):
    return [(s.start, s.end, sorted(s.active)) for s in sched.slots]


def assert_partition(sched):
    t = 0.0
    for s in sched.slots:
        assert abs(s.start - t) <= 1.0
        assert s.end > s.start
        t = s.end
    assert abs(t - sched.T) <= 1.0


# -- derive_schedule -----------------------------------------------------------

def test_fig3_layout():
    assert layout(fig3()) == [(0, 500, [1, 4]), (500, 750, [2]), (750, 1000, [3])]


def test_single_column_covers_frame():
    M = IndependentSetMatrix((1, 2), (frozenset({1, 2}),))
    assert layout(derive_schedule([1.0], M)) == [(0, 1000, [1, 2])]


def test_thirds_round_down_with_idle_tail():
    g = DependenceGraph.from_edges([1, 2, 3], [(1, 2), (1, 3), (2, 3)])
    s = derive_schedule([0.333, 0.333, 0.333], enumerate_maximal_independent_sets(g))
    assert layout(s) == [(0, 330, [1]), (330, 660, [2]), (660, 990, [3]), (990, 1000, [])]
    for c in (1, 2, 3):
        assert abs(s.on_time(c) - 333) <= 10


@pytest.mark.parametrize("a", [[-0.1, 0.5, 0.5], [0.6, 0.3, 0.3], [0.5, 0.5]])
def test_bad_activations_rejected(a):
    with pytest.raises(ScheduleError):
        derive_schedule(a, enumerate_maximal_independent_sets(fig3_graph()))


def test_dump_round_trip():
    s = fig3().with_bypass([2])
    text = s.dump()
    assert text.splitlines()[:3] == ["FRAME 1000", "BYPASS 2", "SLOT 0 500 1,4"]
    assert parse_schedule(text) == s
    assert "SLOT 990 1000 IDLE" in derive_schedule(
        [0.333] * 3, enumerate_maximal_independent_sets(
            DependenceGraph.from_edges([1, 2, 3], [(1, 2), (1, 3), (2, 3)]))).dump()


@st.composite
def activations(draw):
    g = draw(graphs(max_vertices=7))
    assume(g.vertices)
    M = enumerate_maximal_independent_sets(g)
    raw = np.array(draw(st.lists(st.floats(0.0, 1.0), min_size=len(M), max_size=len(M))))
    assume(raw.sum() > 0)
    total = draw(st.floats(0.05, 1.0))
    return g, M, raw / raw.sum() * total


@given(activations())
def test_schedule_invariants(case):
    g, M, a = case
    s = derive_schedule(a, M)
    assert_partition(s)
    assert check_independent(s, g)
    for j, c in enumerate(M.clients):
        target = float(M.membership[j] @ a) * s.T
        assert abs(s.on_time(c) - target) <= s.quantum + 1e-9
    assert derive_schedule(a, M) == s


# -- gate ----------------------------------------------------------------------

def test_gate_lookup_and_wrap():
    s = fig3()
    assert gate(s, 600, 2, LONG)
    assert not gate(s, 600, 1, LONG)
    assert gate(s, 1200, 1, LONG) and gate(s, 1200, 4, LONG)
    assert not gate(s, 1200, 2, LONG)


def test_interactive_bypass():
    s = fig3().with_bypass([1])
    for t in (0, 600, 800, 1999):
        assert gate(s, t, 1, FlowClass.INTERACTIVE)
    assert not gate(s, 600, 1, LONG)
    assert not gate(s, 600, 3, FlowClass.INTERACTIVE)


@given(activations(), st.floats(0, 10_000))
def test_gated_clients_always_independent(case, t):
    g, M, a = case
    s = derive_schedule(a, M)
    on = {c for c in g.vertices if gate(s, t, c, LONG)}
    assert g.is_independent(on)


# -- spreading -----------------------------------------------------------------

def test_three_parts_spaced_evenly():
    s = spread_subslices(fig3(), 2, 0.1, 3)
    ivs = s.on_intervals(2)
    assert len(ivs) == 3
    assert [round(lo) for lo, _ in ivs] == [0, 333, 667]
    assert sum(hi - lo for lo, hi in ivs) == pytest.approx(100.0)
    assert_partition(s)
    # others keep their proportions in the remaining 900 ms
    assert s.on_time(1) == pytest.approx(450.0)
    assert s.on_time(3) == pytest.approx(225.0)
    assert check_independent(s, fig3_graph())


def test_one_part_is_contiguous():
    s = spread_subslices(fig3(), 2, 0.25, 1)
    assert s.on_intervals(2) == [(0.0, 250.0)]


def test_too_small_share_rejected():
    with pytest.raises(ScheduleError):
        spread_subslices(fig3(), 2, 0.02, 3)
    with pytest.raises(ScheduleError):
        spread_subslices(fig3(), 2, 0.0, 1)


def test_overlay_where_independent():
    # 1 and 4 are independent, so 4's gates may ride on 1's slot at no cost
    g = fig3_graph()
    base = fixed_schedule(1000, [(0, 500, {1}), (500, 750, {2}), (750, 1000, {3})])
    s = spread_subslices(base, 4, 0.1, 3, graph=g)
    assert check_independent(s, g)
    assert s.on_time(4) == pytest.approx(100.0)
    # gates at 0 and 333 ride on client 1's slot; the one at 667 meets client 2
    # and is carved, so the rest of the frame shrinks by one gate only
    assert len([x for x in s.slots if x.active == {4}]) == 1
    assert s.on_time(1) == pytest.approx(500.0 * (1 - 1 / 30))
    assert s.on_time(2) + s.on_time(3) == pytest.approx(500.0 * (1 - 1 / 30))


def test_group_must_be_independent():
    with pytest.raises(ScheduleError):
        spread_group(fig3(), [1, 2], 0.1, 2, graph=fig3_graph())


@given(activations(), st.integers(1, 4), st.floats(0.05, 0.5), st.booleans())
def test_spreading_keeps_invariants(case, parts, share, use_graph):
    g, M, a = case
    base = derive_schedule(a, M)
    c = M.clients[0]
    s = spread_subslices(base, c, share, parts, graph=g if use_graph else None)
    assert_partition(s)
    assert check_independent(s, g)
    assert s.on_time(c) == pytest.approx(share * s.T, abs=1e-6)
    starts = [lo for lo, _ in s.on_intervals(c)]
    for p in range(parts):
        assert any(abs(x - p * s.T / parts) < 1e-6 for x in starts) or any(
            lo < p * s.T / parts < hi for lo, hi in s.on_intervals(c))


def test_fixed_schedule_fills_gaps_with_idle():
    s = fixed_schedule(1000, [(100, 300, {1})])
    assert layout(s) == [(0, 100, []), (100, 300, [1]), (300, 1000, [])]
    assert isinstance(s, TimeFrameSchedule)
