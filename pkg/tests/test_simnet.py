import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wlanslice.errors import ConfigurationError
from wlanslice.harness.report import load_scenario, mode_segments
from wlanslice.harness.scenario_file import parse_scenario
from wlanslice.scheduler import fixed_schedule
from wlanslice.simnet.config import MANAGED, UNMANAGED, FlowSpec
from wlanslice.simnet.engine import Sim
from wlanslice.simnet.metrics import CSV_FILES
from wlanslice.simnet.network import (AccessLink, ApLink, advance_on_time, emitter,
                                      gate_intervals, on_time_between, unmanaged_contention)
from wlanslice.simnet.oracle import expected_throughput
from wlanslice.simnet.run import Runner, run
from wlanslice.simnet.tcp import MSS, Kind, Packet

LAN_ONLY = """
name = "lan_only"
duration_s = 20

[[network.aps]]
id = "AP1"

[[network.clients]]
id = 1
ap = "AP1"
"""


def table2(ton, duration=30):
    return load_scenario("table2_sweep", [("Ton", str(ton)), ("duration_s", str(duration))])


# -- closed-form expectation ---------------------------------------------------

def test_expected_throughput_examples():
    assert expected_throughput(22, 400, 1000) == pytest.approx(8.8)
    assert expected_throughput(22, 360, 1000, 8, proxy=True) == pytest.approx(7.92)
    assert expected_throughput(22, 180, 1000, 8, proxy=True) == pytest.approx(3.96)
    assert expected_throughput(22, 400, 1000, 8, proxy=True) == pytest.approx(8.0)
    assert expected_throughput(22, 0, 1000) == 0.0
    assert math.isnan(expected_throughput(22, 360, 1000, 32, proxy=False))
    with pytest.raises(ConfigurationError):
        expected_throughput(22, 1200, 1000)


# -- medium model --------------------------------------------------------------

def test_contention_examples():
    pairs = {frozenset((1, 2))}
    assert unmanaged_contention([1, 3], pairs, set(), {}) == {1: 1.0, 3: 1.0}
    assert unmanaged_contention([1, 2], pairs, set(), {}) == {1: 0.5, 2: 0.5}
    shares = unmanaged_contention([1, 2], pairs, pairs, {1: 0.9})
    assert shares[1] == pytest.approx(0.05)       # 10% of the fair half
    assert shares[2] == pytest.approx(0.5)
    noisy = unmanaged_contention([1, 2], pairs, set(), {}, noise={1: 1.5})
    assert noisy[1] == pytest.approx(0.75)


def test_full_packets_served_at_mu():
    link = ApLink(1, 54.0)
    assert link.mu == pytest.approx(23.0)
    assert MSS * 8 / link.airtime_us(MSS) == pytest.approx(23.0)
    assert ApLink(1, 54.0, mu=11.0).airtime_us(MSS) == pytest.approx(MSS * 8 / 11.0)
    # small frames still pay the per-frame overhead
    assert link.airtime_us(52) > 52 * 8 / 54.0


def test_access_link_serialises_at_rate():
    sim = Sim()
    got = []
    link = AccessLink(sim, 8.0, 10 * MSS)
    send = emitter((link.enqueue, lambda p: got.append(sim.now)))
    for i in range(12):
        send(Packet(Kind.DATA, i, MSS, 0))
    sim.run(10 ** 6)
    assert len(got) == 10 and link.dropped == 2
    assert got[-1] == 10 * 1500
    assert np.diff(got).tolist() == [1500] * 9


intervals = st.lists(st.tuples(st.integers(0, 999), st.integers(1, 300)), min_size=1,
                     max_size=4)


@given(intervals, st.integers(0, 5_000_000), st.integers(1, 3_000_000))
def test_advance_and_measure_agree(raw, t, need):
    sched = fixed_schedule(1000, [(s, min(1000, s + d), {1}) for s, d in raw])
    f = 10 ** 6
    ivs = gate_intervals(sched, 1, f)
    end = advance_on_time(ivs, f, t, need)
    assert on_time_between(ivs, f, t, end) == need
    # ending any earlier would not be enough
    assert on_time_between(ivs, f, t, end - 1) < need


def test_no_on_time_never_arrives():
    assert advance_on_time([], 1000, 0, 10) is None
    assert on_time_between([], 1000, 0, 10_000) == 0


# -- whole runs ----------------------------------------------------------------

@pytest.mark.parametrize("ton, rate", [(400, 8.8), (1000, 22.0)])
def test_gated_lan_flow_rate(ton, rate):
    m = run(table2(ton), MANAGED)
    assert m.mean_mbps(1, t0=2) == pytest.approx(rate, rel=0.03)


def test_no_flows_zero_filled():
    m = run(parse_scenario(LAN_ONLY))
    assert m.n_bins == 20
    assert not m.client_series(1).any()
    tables = m.csv_tables()
    assert set(tables) == set(CSV_FILES)
    assert tables["throughput.csv"] == "t_s,client,class,Mbps\n"
    assert tables["utility.csv"].count("\n") == 21


def test_bad_config_rejected_before_running():
    sc = parse_scenario(LAN_ONLY)
    with pytest.raises(ConfigurationError):
        type(sc)(sc.net, flows=(FlowSpec(9),))
    with pytest.raises(ConfigurationError):
        FlowSpec(1, cache_hit=1.5)


def test_managed_releases_only_while_gated():
    sc = table2(400, duration=10)
    m = run(sc, MANAGED, record_releases=True)
    ivs = gate_intervals(fixed_schedule(1000, [(0, 400, {1})]), 1, 10 ** 6)
    assert len(m.releases) > 1000
    for t, c in m.releases:
        assert c == 1
        assert any(s <= t % 10 ** 6 <= e for s, e in ivs)


def test_delivered_never_exceeds_sent():
    r = Runner(load_scenario("sec73_mixed_lan_wan", [("duration_s", "20")]), MANAGED)
    m = r.run()
    for c in m.clients:
        sent = sum(s.high for s in r.senders if s.client == c) * MSS
        assert m.client_series(c).sum() * 1e6 / 8 <= sent


def test_proxy_hides_wan_delay():
    sc = load_scenario("table3_table4_sweep", [("Ton", "1000"), ("duration_s", "20")])
    r = Runner(sc, MANAGED)
    r.run()
    wlan = [s for s in r.senders if s.supplied]
    wan = [s for s in r.senders if not s.supplied]
    assert wlan and wan
    assert all(s.srtt < 20_000 for s in wlan)
    assert all(s.srtt > 150_000 for s in wan)


def test_same_seed_same_bytes_other_seed_same_means():
    sc = load_scenario("fig3_2ap4sta_lan", [("duration_s", "40")])
    a = run(sc, MANAGED).csv_tables()
    b = run(sc, MANAGED).csv_tables()
    assert a == b
    other = run(load_scenario("fig3_2ap4sta_lan", [("duration_s", "40"), ("seed", "7")]),
                MANAGED)
    assert other.csv_tables() != a
    base = run(sc, MANAGED)
    for c in base.clients:
        assert other.mean_mbps(c, t0=5) == pytest.approx(base.mean_mbps(c, t0=5), rel=0.03)


def test_unmanaged_two_ap_starves_one_client():
    m = run(load_scenario("fig3_2ap4sta_lan", [("duration_s", "100")]), UNMANAGED)
    assert m.mean_mbps(3) < 1.0
    s1 = m.client_series(1)
    assert s1.std() / s1.mean() > 0.2


def test_timeline_switch_restores_fair_split():
    m = run(load_scenario("fig3_2ap4sta_lan"))
    assert [seg[0] for seg in mode_segments(m)] == [UNMANAGED, MANAGED]
    # allow the starved connection a few seconds to come out of backoff
    means = [m.mean_mbps(c, t0=110, t1=200) for c in m.clients]
    assert means == pytest.approx([11.0, 5.5, 5.5, 11.0], rel=0.05)
