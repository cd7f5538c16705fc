"""TOML scenario files: schema check, conversion to ``ScenarioConfig`` and back.

A file has top-level ``name``, ``seed`` and ``duration_s`` plus the tables
``[network]``, ``[[flows]]``, ``[controller]``, ``[sim]``, ``[[timeline]]``,
``[[scans]]`` and an optional ``[sweep]``.  Unknown keys anywhere are errors.
"""
from __future__ import annotations

import copy
import itertools

try:
    import tomllib as tomli
except ModuleNotFoundError:  # Python 3.10
    import tomli
import tomli_w

from ..errors import ConfigurationError
from ..scheduler import FlowClass
from ..simnet.config import (AdapterParams, ControllerConfig, FlowSpec, LinkSpec,
                             ObjectSizes, ScanEvent, ScenarioConfig, SimParams, Spread,
                             TimelineEvent)
from ..topology import AccessPoint, Client, NetworkDescription, WanLink

NUM = (int, float)

TOP_KEYS = {"name": str, "seed": int, "duration_s": NUM, "network": dict, "flows": list,
            "controller": dict, "sim": dict, "timeline": list, "scans": list, "sweep": dict}
NETWORK_KEYS = {"proxy": bool, "wan": dict, "aps": list, "clients": list,
                "static_ap_conflicts": list, "type3_edges": list, "conflicts": list,
                "hidden": list}
WAN_KEYS = {"r_in": NUM, "r_out": NUM, "rtpd_ms": NUM}
AP_KEYS = {"id": str, "channel": int, "position": list}
CLIENT_KEYS = {"id": int, "ap": str, "phy_rate": NUM, "position": list, "mu": NUM,
               "jitter_cov": NUM, "hidden_penalty": NUM}
FLOW_KEYS = {"client": int, "class": str, "direction": str, "endpoint": str,
             "start_s": NUM, "stop_s": NUM, "size": int, "think_s": NUM, "sizes": dict,
             "interval_s": NUM, "ping_bytes": int, "cache_hit": NUM}
SIZES_KEYS = {"dist": str, "median": NUM, "sigma": NUM, "alpha": NUM, "max_bytes": NUM}
CONTROLLER_KEYS = {"T_ms": NUM, "quantum_ms": NUM, "adaptive": bool, "fixed_v": NUM,
                   "fixed_v_per_client": list, "adapter": dict, "p_th": NUM,
                   "report_ttl_ms": NUM, "weights": list, "alpha": NUM,
                   "include_aggregate_time_constraint": bool, "queue_capacity_kb": NUM,
                   "bypass": list, "fixed_slots": list, "resolve_threshold": NUM}
ADAPTER_KEYS = {"epsilon": NUM, "lambda": NUM, "beta": NUM, "q_lb": NUM, "t_interval": NUM,
                "v_init": NUM, "v_min": NUM, "v_margin": NUM}
SIM_KEYS = {"lan_rtpd_ms": NUM, "ap_buffer_pkts": int, "client_buffer_pkts": int,
            "access_buffer_kb": NUM, "proxy_buffer_kb": NUM, "noise_sigma": NUM,
            "noise_epoch_ms": NUM, "max_attempts": int, "frto": bool,
            "timestamps_undo": bool, "iw": int}
TIMELINE_KEYS = {"t_s": NUM, "mode": str, "ungated": list, "spread": dict, "client": int,
                 "phy_rate": NUM, "mu": NUM, "add_conflicts": list, "remove_conflicts": list}
SPREAD_KEYS = {"clients": list, "share": NUM, "parts": int}
SCAN_KEYS = {"t_s": NUM, "client": int, "rssi": dict, "repeat_s": NUM, "until_s": NUM}
SWEEP_KEYS = {"grid": dict}


def _check(table, schema, where: str, required=()) -> None:
    if not isinstance(table, dict):
        raise ConfigurationError(f"{where}: expected a table")
    for k, v in table.items():
        if k not in schema:
            raise ConfigurationError(f"{where}: unknown key {k!r}")
        want = schema[k]
        if want is NUM:
            ok = isinstance(v, NUM) and not isinstance(v, bool)
        elif want is int:
            ok = isinstance(v, int) and not isinstance(v, bool)
        else:
            ok = isinstance(v, want)
        if not ok:
            raise ConfigurationError(f"{where}.{k}: wrong type {type(v).__name__}")
    for k in required:
        if k not in table:
            raise ConfigurationError(f"{where}: missing key {k!r}")


def _pairs(items, where: str) -> tuple:
    out = []
    for e in items:
        if not (isinstance(e, list) and len(e) == 2):
            raise ConfigurationError(f"{where}: entries must be two-element arrays")
        out.append(tuple(e))
    return tuple(out)


def _opt(d, key, default=None):
    return d[key] if key in d else default


def validate_document(doc: dict) -> None:
    """Reject unknown keys and wrongly typed values before any conversion."""
    _check(doc, TOP_KEYS, "scenario", required=("network",))
    net = doc["network"]
    _check(net, NETWORK_KEYS, "network", required=("aps", "clients"))
    if "wan" in net:
        _check(net["wan"], WAN_KEYS, "network.wan")
    for i, ap in enumerate(net["aps"]):
        _check(ap, AP_KEYS, f"network.aps[{i}]", required=("id",))
    for i, c in enumerate(net["clients"]):
        _check(c, CLIENT_KEYS, f"network.clients[{i}]", required=("id", "ap"))
    for i, f in enumerate(doc.get("flows", [])):
        _check(f, FLOW_KEYS, f"flows[{i}]", required=("client",))
        if "sizes" in f:
            _check(f["sizes"], SIZES_KEYS, f"flows[{i}].sizes")
    ctrl = doc.get("controller", {})
    _check(ctrl, CONTROLLER_KEYS, "controller")
    if "adapter" in ctrl:
        _check(ctrl["adapter"], ADAPTER_KEYS, "controller.adapter")
    _check(doc.get("sim", {}), SIM_KEYS, "sim")
    for i, ev in enumerate(doc.get("timeline", [])):
        _check(ev, TIMELINE_KEYS, f"timeline[{i}]", required=("t_s",))
        if "spread" in ev:
            _check(ev["spread"], SPREAD_KEYS, f"timeline[{i}].spread",
                   required=("clients", "share", "parts"))
    for i, s in enumerate(doc.get("scans", [])):
        _check(s, SCAN_KEYS, f"scans[{i}]", required=("t_s", "client", "rssi"))
    if "sweep" in doc:
        _check(doc["sweep"], SWEEP_KEYS, "sweep", required=("grid",))


def _flow_class(name: str) -> FlowClass:
    try:
        return FlowClass(name)
    except ValueError:
        raise ConfigurationError(f"unknown flow class {name!r}") from None


def from_document(doc: dict) -> ScenarioConfig:
    validate_document(doc)
    n = doc["network"]
    wan = n.get("wan", {})
    aps = tuple(AccessPoint(a["id"], a.get("channel", 11),
                            tuple(a["position"]) if "position" in a else None)
                for a in n["aps"])
    clients, links = [], []
    for c in n["clients"]:
        clients.append(Client(c["id"], c["ap"], float(c.get("phy_rate", 54.0)),
                              tuple(c["position"]) if "position" in c else None))
        if any(k in c for k in ("mu", "jitter_cov", "hidden_penalty")):
            links.append((c["id"], LinkSpec(_opt(c, "mu"), float(c.get("jitter_cov", 0.1)),
                                            float(c.get("hidden_penalty", 0.0)))))
    net = NetworkDescription(
        aps, tuple(clients),
        frozenset(frozenset(p) for p in _pairs(n.get("static_ap_conflicts", []),
                                               "network.static_ap_conflicts")),
        WanLink(float(wan.get("r_in", 8.0)), float(wan.get("r_out", 8.0)),
                float(wan.get("rtpd_ms", 150.0))),
        bool(n.get("proxy", True)))

    flows = []
    for f in doc.get("flows", []):
        sz = f.get("sizes", {})
        flows.append(FlowSpec(
            f["client"], _flow_class(f.get("class", "LONG_LIVED")), f.get("direction", "down"),
            f.get("endpoint", "LAN"), float(f.get("start_s", 0.0)), _opt(f, "stop_s"),
            _opt(f, "size"), float(f.get("think_s", 1.0)),
            ObjectSizes(sz.get("dist", "lognormal"), float(sz.get("median", 60_000.0)),
                        float(sz.get("sigma", 1.0)), float(sz.get("alpha", 1.3)),
                        float(sz.get("max_bytes", 2_000_000.0))),
            float(f.get("interval_s", 1.0)), f.get("ping_bytes", 64),
            float(f.get("cache_hit", 0.0))))

    c = doc.get("controller", {})
    ad = c.get("adapter", {})
    adapter = AdapterParams(
        float(ad.get("epsilon", 0.05)), float(ad.get("lambda", 0.9)), float(ad.get("beta", 0.8)),
        float(ad.get("q_lb", 7.5)), float(ad.get("t_interval", 3.0)),
        float(ad.get("v_init", 1.0)), float(ad.get("v_min", 1.0)),
        float(ad.get("v_margin", 1.2)))
    slots = []
    for s in c.get("fixed_slots", []):
        if not (isinstance(s, list) and len(s) == 3 and isinstance(s[2], list)):
            raise ConfigurationError(
                "controller.fixed_slots: entries are [start_ms, end_ms, [clients]]")
        slots.append((float(s[0]), float(s[1]), tuple(s[2])))
    weights = []
    for w in c.get("weights", []):
        if not (isinstance(w, list) and len(w) == 4):
            raise ConfigurationError("controller.weights: entries are [client, eta, xi, delta]")
        weights.append((w[0], float(w[1]), float(w[2]), float(w[3])))
    ctrl = ControllerConfig(
        float(c.get("T_ms", 1000.0)), float(c.get("quantum_ms", 10.0)),
        bool(c.get("adaptive", False)), float(c.get("fixed_v", 22.0)),
        tuple((k, float(v)) for k, v in _pairs(c.get("fixed_v_per_client", []),
                                               "controller.fixed_v_per_client")),
        adapter, float(c.get("p_th", 0.3)), float(c.get("report_ttl_ms", 10_000.0)),
        tuple(weights), float(c.get("alpha", 52.0 / 3000.0)),
        bool(c.get("include_aggregate_time_constraint", False)),
        float(c.get("queue_capacity_kb", 200.0)), tuple(c.get("bypass", [])), tuple(slots),
        float(c.get("resolve_threshold", 0.05)))

    s = doc.get("sim", {})
    d = SimParams()
    sim = SimParams(**{k: type(getattr(d, k))(s[k]) for k in SIM_KEYS if k in s})

    timeline = []
    for ev in doc.get("timeline", []):
        sp = ev.get("spread")
        timeline.append(TimelineEvent(
            float(ev["t_s"]), _opt(ev, "mode"), tuple(ev.get("ungated", [])),
            Spread(tuple(sp["clients"]), float(sp["share"]), sp["parts"]) if sp else None,
            _opt(ev, "client"), _opt(ev, "phy_rate"), _opt(ev, "mu"),
            _pairs(ev.get("add_conflicts", []), "timeline.add_conflicts"),
            _pairs(ev.get("remove_conflicts", []), "timeline.remove_conflicts")))
    scans = []
    for e in doc.get("scans", []):
        meas = tuple((ap, float(r)) for ap, r in e["rssi"].items())
        t, step = float(e["t_s"]), e.get("repeat_s")
        end = float(e.get("until_s", t))
        if step is not None and not step > 0:
            raise ConfigurationError("scans.repeat_s must be positive")
        k = 0
        while True:
            tk = t + k * step if step else t
            if k and (not step or tk > end + 1e-9):
                break
            scans.append(ScanEvent(round(tk, 9), e["client"], meas))
            k += 1
    scans = tuple(sorted(scans, key=lambda ev: (ev.t_s, ev.client)))
    conflicts = n.get("conflicts")
    return ScenarioConfig(
        net, tuple(flows), tuple(timeline), ctrl, tuple(links),
        _pairs(n.get("type3_edges", []), "network.type3_edges"),
        None if conflicts is None else _pairs(conflicts, "network.conflicts"),
        _pairs(n.get("hidden", []), "network.hidden"), scans, sim,
        doc.get("seed", 1), float(doc.get("duration_s", 100.0)), doc.get("name", "scenario"))


def to_document(sc: ScenarioConfig) -> dict:
    """Inverse of ``from_document``; every field is written out explicitly."""
    net = sc.net
    links = dict(sc.links)
    clients = []
    for c in net.clients:
        d = {"id": c.id, "ap": c.associated_ap, "phy_rate": c.phy_rate}
        if c.position is not None:
            d["position"] = list(c.position)
        if c.id in links:
            spec = links[c.id]
            if spec.mu is not None:
                d["mu"] = spec.mu
            d["jitter_cov"] = spec.jitter_cov
            d["hidden_penalty"] = spec.hidden_penalty
        clients.append(d)
    aps = []
    for a in net.aps:
        d = {"id": a.id, "channel": a.channel}
        if a.position is not None:
            d["position"] = list(a.position)
        aps.append(d)
    network = {
        "proxy": net.proxy_enabled,
        "wan": {"r_in": net.wan.r_in, "r_out": net.wan.r_out, "rtpd_ms": net.wan.rtpd},
        "aps": aps, "clients": clients,
        "static_ap_conflicts": sorted(sorted(p) for p in net.static_ap_conflicts),
        "type3_edges": [list(e) for e in sc.type3_edges],
        "hidden": [list(e) for e in sc.hidden],
    }
    if sc.conflicts is not None:
        network["conflicts"] = [list(e) for e in sc.conflicts]
    flows = []
    for f in sc.flows:
        d = {"client": f.client, "class": f.cls.value, "direction": f.direction,
             "endpoint": f.endpoint, "start_s": f.start_s}
        if f.stop_s is not None:
            d["stop_s"] = f.stop_s
        if f.size is not None:
            d["size"] = f.size
        d.update(think_s=f.think_s, interval_s=f.interval_s, ping_bytes=f.ping_bytes,
                 cache_hit=f.cache_hit,
                 sizes={"dist": f.sizes.dist, "median": f.sizes.median, "sigma": f.sizes.sigma,
                        "alpha": f.sizes.alpha, "max_bytes": f.sizes.max_bytes})
        flows.append(d)
    c = sc.controller
    a = c.adapter
    controller = {
        "T_ms": c.T_ms, "quantum_ms": c.quantum_ms, "adaptive": c.adaptive, "fixed_v": c.fixed_v,
        "fixed_v_per_client": [list(p) for p in c.fixed_v_per_client],
        "adapter": {"epsilon": a.epsilon, "lambda": a.lam, "beta": a.beta, "q_lb": a.q_lb,
                    "t_interval": a.t_interval, "v_init": a.v_init, "v_min": a.v_min,
                    "v_margin": a.v_margin},
        "p_th": c.p_th, "report_ttl_ms": c.report_ttl_ms,
        "weights": [list(w) for w in c.weights], "alpha": c.alpha,
        "include_aggregate_time_constraint": c.include_aggregate_time_constraint,
        "queue_capacity_kb": c.queue_capacity_kb, "bypass": list(c.bypass),
        "fixed_slots": [[s, e, list(m)] for s, e, m in c.fixed_slots],
        "resolve_threshold": c.resolve_threshold,
    }
    sim = {k: getattr(sc.sim, k) for k in SIM_KEYS}
    timeline = []
    for ev in sc.timeline:
        d = {"t_s": ev.t_s}
        if ev.mode is not None:
            d["mode"] = ev.mode
        if ev.ungated:
            d["ungated"] = list(ev.ungated)
        if ev.spread is not None:
            d["spread"] = {"clients": list(ev.spread.clients), "share": ev.spread.share,
                           "parts": ev.spread.parts}
        for k in ("client", "phy_rate", "mu"):
            if getattr(ev, k) is not None:
                d[k] = getattr(ev, k)
        if ev.add_conflicts:
            d["add_conflicts"] = [list(e) for e in ev.add_conflicts]
        if ev.remove_conflicts:
            d["remove_conflicts"] = [list(e) for e in ev.remove_conflicts]
        timeline.append(d)
    scans = [{"t_s": s.t_s, "client": s.client, "rssi": dict(s.measurements)}
             for s in sc.scans]
    doc = {"name": sc.name, "seed": sc.seed, "duration_s": sc.duration_s,
           "network": network, "flows": flows, "controller": controller, "sim": sim}
    if timeline:
        doc["timeline"] = timeline
    if scans:
        doc["scans"] = scans
    return doc


def load_document(text: str) -> dict:
    try:
        return tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigurationError(f"scenario file does not parse: {exc}") from None


def parse_scenario(text: str) -> ScenarioConfig:
    return from_document(load_document(text))


def serialize_scenario(sc: ScenarioConfig) -> str:
    return tomli_w.dumps(to_document(sc))


# -- overrides --------------------------------------------------------------

def _value(text: str):
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def apply_override(doc: dict, key: str, value) -> dict:
    """Set a dotted ``key`` (array indices allowed) in a copy of ``doc``.

    ``Ton`` is shorthand for one gated slot ``[0, Ton)`` holding the clients
    of the first fixed slot (or every client when there is none).
    """
    doc = copy.deepcopy(doc)
    if isinstance(value, str):
        value = _value(value)
    if key == "Ton":
        if not isinstance(value, (int, float)) or value <= 0:
            raise ConfigurationError("Ton must be a positive number of ms")
        ctrl = doc.setdefault("controller", {})
        slots = ctrl.get("fixed_slots") or []
        members = slots[0][2] if slots else [c["id"] for c in doc["network"]["clients"]]
        ctrl["fixed_slots"] = [[0.0, float(value), list(members)]]
        return doc
    parts = key.split(".")
    node = doc
    for p in parts[:-1]:
        if isinstance(node, list):
            try:
                node = node[int(p)]
            except (ValueError, IndexError):
                raise ConfigurationError(f"override {key!r}: bad index {p!r}") from None
        else:
            node = node.setdefault(p, {})
    last = parts[-1]
    if isinstance(node, list):
        try:
            node[int(last)] = value
        except (ValueError, IndexError):
            raise ConfigurationError(f"override {key!r}: bad index {last!r}") from None
    else:
        node[last] = value
    return doc


def parse_override(item: str) -> tuple:
    if "=" not in item:
        raise ConfigurationError(f"override {item!r} is not key=value")
    k, v = item.split("=", 1)
    return k.strip(), v.strip()


def sweep_points(doc: dict, params: dict | None = None) -> list:
    """Cartesian product of ``params`` (or the file's ``[sweep.grid]``)."""
    grid = params if params is not None else doc.get("sweep", {}).get("grid", {})
    if not grid:
        raise ConfigurationError("nothing to sweep: give --param or a [sweep.grid] table")
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]
