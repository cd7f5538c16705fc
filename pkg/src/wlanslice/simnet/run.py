"""Builds the simulated network for a scenario and runs it."""
from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from ..errors import ConfigurationError, ReportRejected
from ..inference import (InferenceConfig, ScanReport, ScanState, infer_type3_edges,
                         ingest_scan_report)
from ..optimizer import AllocationProblem, solve_allocation
from ..scheduler import FlowClass, derive_schedule, fixed_schedule, spread_group
from ..topology import (EXACT_ENUMERATION_CAP, DependenceGraph, build_dependence_graph,
                        enumerate_maximal_independent_sets, greedy_cover)
from ..vqueue import (RateAdapterState, class_weights, format_adapt, rate_adapt_step,
                      sample_post_service_queue, v_max_for_phy)
from .config import MANAGED, UNMANAGED, ScenarioConfig
from .engine import US_PER_S, Sim, ms, seconds
from .metrics import RunMetrics
from .network import AccessLink, ApLink, Controller, Medium, Transmitter, delay, emitter
from .tcp import ACK_BYTES, MSS, Kind, Packet, TcpReceiver, TcpSender


def _receive(rx):
    def hop(pkt):
        if pkt.kind == Kind.CTRL:
            rx.on_ctrl(pkt)
        else:
            rx.on_data(pkt)
    return hop


def demand_flags(flows) -> dict:
    """(wan_down, wan_up, lan) per client from its long- and short-lived flows."""
    out = {}
    for f in flows:
        if f.cls is FlowClass.INTERACTIVE:
            continue
        wd, wu, lan = out.get(f.client, (False, False, False))
        if f.endpoint == "WAN":
            wd, wu = wd or f.direction == "down", wu or f.direction == "up"
        else:
            lan = True
        out[f.client] = (wd, wu, lan)
    return out


def physical_conflicts(sc: ScenarioConfig) -> set:
    """Pairs of links that contend on the air, including same-AP pairs."""
    net = sc.net
    if sc.conflicts is None:
        edges = set(build_dependence_graph(net, sc.type3_edges).edges)
    else:
        edges = {frozenset(e) for e in sc.conflicts}
        edges |= set(build_dependence_graph(net).edges)
    return edges


def plan_schedule(sliced, graph, weights, v, demand, wan, cc, spread=None) -> tuple:
    """Frame schedule for the sliced clients, and the solver record if one ran.

    ``weights`` maps client to (eta, xi, delta), ``v`` to its virtual rate
    and ``demand`` to its (wan_down, wan_up, lan) flags.
    """
    rec = None
    if cc.fixed_slots:
        sched = fixed_schedule(cc.T_ms, cc.fixed_slots, quantum=cc.quantum_ms)
    elif not sliced:
        sched = fixed_schedule(cc.T_ms, (), quantum=cc.quantum_ms)
    else:
        keep = set(sliced)
        g = DependenceGraph.from_edges(keep, [e for e in graph.edges if e <= keep])
        if len(keep) <= EXACT_ENUMERATION_CAP:
            M = enumerate_maximal_independent_sets(g)
        else:
            M = greedy_cover(g)
        prob = AllocationProblem(
            list(sliced), {c: weights[c] for c in sliced}, {c: v[c] for c in sliced},
            {c: demand[c] for c in sliced}, M, wan.r_in, wan.r_out, cc.alpha,
            include_aggregate_time_constraint=cc.include_aggregate_time_constraint)
        sol = solve_allocation(prob)
        rec = sol.to_dict()
        rec["sets"] = [sorted(s) for s in M.sets]
        rec["rates"] = {c: [float(r) for r in rs] for c, rs in sol.rates(prob).items()}
        sched = derive_schedule(sol.a, M, cc.T_ms, cc.quantum_ms)
    if spread is not None:
        sched = spread_group(sched, spread.clients, spread.share, spread.parts, graph)
    return sched.with_bypass(cc.bypass), rec


class Runner:
    """One simulation run.  ``mode`` forces MANAGED or UNMANAGED throughout."""

    def __init__(self, sc: ScenarioConfig, mode: str | None = None,
                 record_releases: bool = False):
        if mode is not None and mode not in (MANAGED, UNMANAGED):
            raise ConfigurationError(f"mode override must be MANAGED or UNMANAGED, not {mode!r}")
        self.sc = sc
        self.mode_override = mode
        self.net = sc.net
        self.sim = sim = Sim()
        sp, cc = sc.sim, sc.controller
        clients = self.net.client_ids
        self.clients = clients
        self.metrics = RunMetrics(clients, sc.duration_s)
        self.duration_us = seconds(sc.duration_s)

        seeds = np.random.SeedSequence(sc.seed).spawn(2 + len(self.net.aps) + len(clients)
                                                      + len(sc.flows))
        gens = [np.random.default_rng(s) for s in seeds]
        self._gen_medium = gens[0]
        self._gen_ap = dict(zip([a.id for a in self.net.aps], gens[2:]))
        off = 2 + len(self.net.aps)
        self._gen_radio = dict(zip(clients, gens[off:off + len(clients)]))
        self._gen_flow = gens[off + len(clients):]

        links = {}
        for i, c in enumerate(clients):
            spec = sc.link(c)
            links[c] = ApLink(c, self.net.client(c).phy_rate, spec.mu, spec.jitter_cov,
                              spec.hidden_penalty, i)
        self.links = links
        self.medium = Medium(sim, links, self._gen_medium, sp.noise_sigma,
                             ms(sp.noise_epoch_ms), self.duration_us, sp.max_attempts)
        self._conflicts = physical_conflicts(sc)
        self._hidden = {frozenset(e) for e in sc.hidden}
        self.medium.set_conflicts(self._conflicts, self._hidden)
        self.ap_tx = {a.id: Transmitter(sim, self.medium, a.id, sp.ap_buffer_pkts,
                                        self._gen_ap[a.id]) for a in self.net.aps}
        self.radios = {}

        wan = self.net.wan
        self.wan_oneway = ms(wan.rtpd / 2.0)
        self.lan_rtt = ms(sp.lan_rtpd_ms)

        def access_buffer(rate):
            if sp.access_buffer_kb > 0:
                return sp.access_buffer_kb * 1000.0
            return max(10 * MSS, rate * wan.rtpd * 1000.0 / 8.0)
        self.access_in = AccessLink(sim, wan.r_in, access_buffer(wan.r_in))
        self.access_out = AccessLink(sim, wan.r_out, access_buffer(wan.r_out))
        self.proxy_cap = max(4, int(sp.proxy_buffer_kb * 1000 // MSS))

        self.frame_us = ms(cc.T_ms)
        self.weights3 = {c: sc.weights_of(c) for c in clients}
        fixed = dict(cc.fixed_v_per_client)
        if cc.adaptive:
            ap = cc.adapter
            self.adapters = {c: RateAdapterState(
                v=ap.v_init, q_lb=ap.q_lb, epsilon=ap.epsilon, lam=ap.lam, beta=ap.beta,
                t_interval=ap.t_interval, t_prev=0.0, v_min=ap.v_min,
                v_max=v_max_for_phy(self.net.client(c).phy_rate, ap.v_margin))
                for c in clients}
            v0 = {c: self.adapters[c].v for c in clients}
        else:
            self.adapters = {}
            v0 = {c: float(fixed.get(c, cc.fixed_v)) for c in clients}
        self.controller = Controller(sim, clients, self.frame_us, cc.queue_capacity_kb,
                                     {c: class_weights(*self.weights3[c]) for c in clients},
                                     v0, record_releases)
        self.v_solved = None
        self.samples = {}

        self.demand = demand_flags(sc.flows)
        self.scan_state = ScanState(self.net)
        self.infer_cfg = InferenceConfig(cc.p_th, cc.report_ttl_ms)
        self.inferred = frozenset()
        self.graph = build_dependence_graph(self.net, sc.type3_edges)
        self.scans_rejected = 0

        self.mode = self._mode(MANAGED)
        self.ungated = frozenset()
        self.spread = None
        self.dirty = True
        self.senders = []
        self.next_conn = 0
        self._validate()

    # -- set-up helpers ----------------------------------------------------

    def _mode(self, m):
        return self.mode_override or m

    def _validate(self) -> None:
        bypass = set(self.sc.controller.bypass)
        for f in self.sc.flows:
            if f.cls is FlowClass.INTERACTIVE and f.client not in self.demand \
                    and f.client not in bypass:
                ever_ungated = any(f.client in ev.ungated for ev in self.sc.timeline)
                if not ever_ungated:
                    raise ConfigurationError(
                        f"client {f.client} has only interactive flows and must be in bypass")
            if f.direction == "up" and f.cls is not FlowClass.LONG_LIVED:
                raise ConfigurationError("only long-lived flows may run upstream")

    def _radio(self, c) -> Transmitter:
        tx = self.radios.get(c)
        if tx is None:
            tx = Transmitter(self.sim, self.medium, f"sta{c}", self.sc.sim.client_buffer_pkts,
                             self._gen_radio[c])
            self.radios[c] = tx
        return tx

    def _ap(self, c) -> Transmitter:
        return self.ap_tx[self.net.client(c).associated_ap]

    def _sender(self, total, handshake=False, supplied=False, **kw) -> TcpSender:
        sp = self.sc.sim
        s = TcpSender(self.sim, None, total=total, iw=sp.iw, frto_enabled=sp.frto,
                      undo_on_timestamps=sp.timestamps_undo, handshake=handshake,
                      supplied=supplied, **kw)
        self.senders.append(s)
        return s

    def _counter(self, client, cls, total=None, done=None):
        seen = [0]
        metrics, sim = self.metrics, self.sim

        def on_deliver(rcv_nxt):
            new = rcv_nxt - seen[0]
            if new > 0:
                seen[0] = rcv_nxt
                metrics.add_bytes(client, cls, sim.now, new * MSS)
                if total is not None and rcv_nxt >= total and done is not None:
                    done()
        return on_deliver

    def _charged(self, emit):
        """ACKs for an uploader are charged at the data volume they acknowledge."""
        last = [0]

        def send(a):
            a.charge = max(ACK_BYTES, (a.ack - last[0]) * MSS)
            if a.ack > last[0]:
                last[0] = a.ack
            emit(a)
        return send

    def _relay(self, upstream_rx, downstream: TcpSender):
        """Proxy buffer: bytes received on one leg are handed to the other."""
        fed = [0]

        def on_deliver(rcv_nxt):
            if rcv_nxt > fed[0]:
                downstream.supply(rcv_nxt - fed[0])
                fed[0] = rcv_nxt
        cap = self.proxy_cap
        upstream_rx.on_deliver = on_deliver
        upstream_rx.window_fn = lambda: cap - (upstream_rx.rcv_nxt - downstream.una)
        downstream.on_acked = lambda una: upstream_rx.window_update()

    # -- connections -------------------------------------------------------

    def _connect(self, f, total, handshake=False, done=None, cached=False):
        """Create the legs of one transfer; returns ``(start, source_sender)``.

        ``cached`` serves a WAN download from the proxy without a WAN leg.
        """
        sim, ctrl = self.sim, self.controller
        c, q = f.client, f.qclass
        self.next_conn += 1
        cid = self.next_conn
        tags = dict(client=c, qclass=q, conn=cid)
        count = self._counter(c, q, total, done)
        lan = self.lan_rtt
        wan = self.wan_oneway
        proxy = self.net.proxy_enabled
        if f.direction == "down":
            ap = self._ap(c)
            rc = TcpReceiver(sim, None, on_deliver=count, **tags)
            if f.endpoint == "LAN" or proxy:
                local = f.endpoint == "LAN" or cached
                w = self._sender(total, handshake, supplied=not local, **tags)
                w.emit = emitter((ctrl.ingress, ap.enqueue, _receive(rc)))
                rc.emit = emitter((delay(sim, lan), w.on_ack))
                if local:
                    return (lambda: sim.after(lan // 2, w.start)), w
                s = self._sender(total, handshake, **tags)
                rw = TcpReceiver(sim, None, **tags)
                self._relay(rw, w)
                s.emit = emitter((delay(sim, wan), self.access_in.enqueue, _receive(rw)))
                rw.emit = emitter((delay(sim, wan), s.on_ack))
                if handshake:
                    w.on_established = lambda _: sim.after(wan, s.start)
                    return (lambda: sim.after(lan // 2, w.start)), s
                return (lambda: (s.start(), w.start())), s
            s = self._sender(total, handshake, **tags)
            s.emit = emitter((delay(sim, wan), self.access_in.enqueue, ctrl.ingress,
                              ap.enqueue, _receive(rc)))
            rc.emit = emitter((delay(sim, lan + wan), s.on_ack))
            return (lambda: sim.after(lan // 2 + wan, s.start)), s

        radio, ap = self._radio(c), self._ap(c)
        down = (ctrl.ingress, ap.enqueue)
        s = self._sender(total, handshake, **tags)
        rs = TcpReceiver(sim, None, on_deliver=count, **tags)
        if f.endpoint == "LAN":
            s.emit = emitter((radio.enqueue, delay(sim, lan), _receive(rs)))
            rs.emit = self._charged(emitter(down + (s.on_ack,)))
        elif proxy:
            rp = TcpReceiver(sim, None, **tags)
            p = self._sender(total, supplied=True, **tags)
            self._relay(rp, p)
            s.emit = emitter((radio.enqueue, delay(sim, lan), _receive(rp)))
            rp.emit = self._charged(emitter(down + (s.on_ack,)))
            p.emit = emitter((self.access_out.enqueue, delay(sim, wan), _receive(rs)))
            rs.emit = emitter((delay(sim, wan), p.on_ack))
            return (lambda: (s.start(), p.start())), s
        else:
            s.emit = emitter((radio.enqueue, delay(sim, lan), self.access_out.enqueue,
                              delay(sim, wan), _receive(rs)))
            rs.emit = self._charged(emitter((delay(sim, wan),) + down + (s.on_ack,)))
        return s.start, s

    def _long_flow(self, f) -> None:
        total = None if f.size is None else int(math.ceil(f.size / MSS))
        start, src = self._connect(f, total)
        self.sim.at(seconds(f.start_s), start)
        if f.stop_s is not None and total is None:
            self.sim.at(seconds(f.stop_s), self._stop, src)

    @staticmethod
    def _stop(s: TcpSender) -> None:
        s.unbounded = False
        s.available = s.total = max(s.high, s.una, 1)
        if s.una >= s.total:
            s.done = True
            s.timer.cancel()

    def _short_flow(self, f, gen) -> None:
        stop_us = self.duration_us if f.stop_s is None else seconds(f.stop_s)
        sizes = f.sizes
        rid = [0]
        sim = self.sim

        def draw_size() -> int:
            if sizes.dist == "fixed":
                b = sizes.median
            elif sizes.dist == "lognormal":
                b = sizes.median * math.exp(sizes.sigma * gen.standard_normal())
            else:
                xm = sizes.median / 2.0 ** (1.0 / sizes.alpha)
                b = xm * (1.0 + gen.pareto(sizes.alpha))
            return max(1, int(math.ceil(min(b, sizes.max_bytes) / MSS)))

        def issue():
            if sim.now >= stop_us:
                return
            rid[0] += 1
            n = draw_size()
            t0 = sim.now
            this = rid[0]

            def done():
                self.metrics.responses.append(
                    (f.client, this, t0 / US_PER_S, (sim.now - t0) / 1000.0))
                think = gen.exponential(f.think_s) if f.think_s > 0 else 0.0
                sim.after(max(1, seconds(think)), issue)
            cached = (f.cache_hit > 0 and f.endpoint == "WAN" and self.net.proxy_enabled
                      and gen.random() < f.cache_hit)
            start, _ = self._connect(f, n, handshake=True, done=done, cached=cached)
            start()

        sim.at(seconds(f.start_s), issue)

    def _ping_flow(self, f) -> None:
        sim, ctrl = self.sim, self.controller
        c, q = f.client, f.qclass
        ap = self._ap(c)
        stop_us = self.duration_us if f.stop_s is None else seconds(f.stop_s)
        period = seconds(f.interval_s)
        rtts = self.metrics.rtts

        def pong(p):
            rtts.append((p.born / US_PER_S, c, (sim.now - p.born) / 1000.0))
        if f.endpoint == "WAN":
            path = (delay(sim, self.wan_oneway), self.access_in.enqueue, ctrl.ingress,
                    ap.enqueue, delay(sim, self.lan_rtt + self.wan_oneway), pong)
        else:
            path = (ctrl.ingress, ap.enqueue, delay(sim, self.lan_rtt), pong)
        send = emitter(path)
        seq = [0]

        def probe():
            if sim.now >= stop_us:
                return
            seq[0] += 1
            send(Packet(Kind.PING, seq[0], f.ping_bytes, sim.now, c, q))
            sim.after(period, probe)
        sim.at(seconds(f.start_s), probe)

    # -- control plane -----------------------------------------------------

    def _sliced(self) -> list:
        spread = set(self.spread.clients) if self.spread else set()
        return [c for c in self.clients
                if c in self.demand and c not in self.ungated and c not in spread]

    def _v(self) -> dict:
        return dict(self.controller.v)

    def _plan(self) -> None:
        t_s = self.sim.now / US_PER_S
        sched, rec = plan_schedule(self._sliced(), self.graph, self.weights3, self._v(),
                                   self.demand, self.net.wan, self.sc.controller, self.spread)
        if rec is not None:
            self.metrics.solutions.append((t_s, rec))
        self.controller.set_schedule(sched)
        self.metrics.schedules.append((t_s, sched.dump()))
        self.v_solved = self._v()
        self.dirty = False

    def _needs_resolve(self) -> bool:
        if self.dirty or self.v_solved is None:
            return True
        th = self.sc.controller.resolve_threshold
        return any(abs(self.controller.v[c] - self.v_solved[c]) > th * self.v_solved[c]
                   for c in self._sliced())

    def _frame(self) -> None:
        sim = self.sim
        t_s = sim.now / US_PER_S
        managed = self.mode == MANAGED
        if managed and self.adapters:
            for c in sorted(self.samples):
                st = self.adapters[c]
                new = rate_adapt_step(st, self.samples[c], t_s, True)
                if new is not st:
                    self.adapters[c] = new
                    self.metrics.adapt.append(format_adapt(c, t_s, new))
            self.samples = {}
            self.controller.set_rates({c: st.v for c, st in self.adapters.items()})
        if managed and self._needs_resolve():
            self._plan()
        if managed and self.adapters:
            for c in self._sliced():
                ivs = self.controller.intervals[c]
                if ivs:
                    sim.at(sim.now + ivs[-1][1], self._sample, c)
        nxt = sim.now + self.frame_us
        if nxt <= self.duration_us:
            sim.at(nxt, self._frame)

    def _mode_label(self) -> str:
        label = self.mode
        if self.mode == MANAGED and self.ungated:
            label += " ungated=" + ",".join(str(c) for c in sorted(self.ungated))
        if self.mode == MANAGED and self.spread is not None:
            label += " spread=" + ",".join(str(c) for c in sorted(self.spread.clients))
        return label

    def _sample(self, c) -> None:
        self.samples[c] = sample_post_service_queue(self.controller.queues, c)

    def _event(self, ev) -> None:
        if ev.mode is not None:
            self.mode = self._mode(ev.mode)
            self.ungated = frozenset(ev.ungated)
            self.spread = ev.spread
            self.controller.set_mode(self.mode, self.ungated)
            self.metrics.modes.append((self.sim.now / US_PER_S, self._mode_label()))
            self.dirty = True
        if ev.client is not None and (ev.phy_rate is not None or ev.mu is not None):
            c = ev.client
            phy = ev.phy_rate if ev.phy_rate is not None else self.links[c].phy
            mu = ev.mu if ev.mu is not None else (None if ev.phy_rate is not None
                                                  else self.links[c].mu)
            self.links[c].set_rate(phy, mu)
            if ev.phy_rate is not None:
                self.net = self.net.with_client(c, phy_rate=ev.phy_rate)
                if c in self.adapters:
                    self.adapters[c] = replace(
                        self.adapters[c],
                        v_max=v_max_for_phy(ev.phy_rate, self.sc.controller.adapter.v_margin))
        if ev.add_conflicts or ev.remove_conflicts:
            self._conflicts |= {frozenset(e) for e in ev.add_conflicts}
            self._conflicts -= {frozenset(e) for e in ev.remove_conflicts}
            self.medium.set_conflicts(self._conflicts, self._hidden)

    def _scan(self, ev) -> None:
        rep = ScanReport(ev.client, self.sim.now / 1000.0, tuple(ev.measurements))
        try:
            ingest_scan_report(self.scan_state, rep)
        except ReportRejected:
            self.scans_rejected += 1
            return
        inferred = frozenset(infer_type3_edges(self.scan_state, self.net, self.infer_cfg))
        if inferred != self.inferred:
            self.inferred = inferred
            self.graph = build_dependence_graph(self.net,
                                                set(self.sc.type3_edges) | set(inferred))
            self.metrics.graphs.append(
                (self.sim.now / US_PER_S, sorted(tuple(sorted(e)) for e in self.graph.edges)))
            self.dirty = True

    # -- driver ------------------------------------------------------------

    def run(self) -> RunMetrics:
        sim = self.sim
        for ev in self.sc.scans:
            sim.at(seconds(ev.t_s), self._scan, ev)
        for ev in self.sc.timeline:
            sim.at(seconds(ev.t_s), self._event, ev)
        self.controller.set_mode(self.mode)
        self.metrics.modes.append((0.0, self.mode))
        for f, gen in zip(self.sc.flows, self._gen_flow):
            if f.cls is FlowClass.LONG_LIVED:
                self._long_flow(f)
            elif f.cls is FlowClass.SHORT_LIVED:
                self._short_flow(f, gen)
            else:
                self._ping_flow(f)
        sim.at(0, self._frame)
        sim.run(self.duration_us)
        m = self.metrics
        m.compute_utility(self.demand, self.weights3)
        m.releases = self.controller.releases
        m.counters = dict(
            events=sim.events,
            ap_dropped=sum(t.dropped_full for t in self.ap_tx.values()),
            retry_dropped=sum(t.dropped_retry for t in list(self.ap_tx.values())
                              + list(self.radios.values())),
            controller_dropped=sum(self.controller.dropped.values()),
            access_dropped=self.access_in.dropped + self.access_out.dropped,
            timeouts=sum(s.timeouts for s in self.senders),
            spurious=sum(s.spurious for s in self.senders),
            retransmits=sum(s.retransmits for s in self.senders),
            scans_rejected=self.scans_rejected,
        )
        return m


def run(sc: ScenarioConfig, mode: str | None = None, record_releases: bool = False) -> RunMetrics:
    """Simulate ``sc`` to its duration and return the collected metrics."""
    return Runner(sc, mode, record_releases).run()
