"""Scenario configuration consumed by the simulator."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..errors import ConfigurationError
from ..scheduler import FlowClass
from ..topology import NetworkDescription
from ..vqueue import QueueClass

MANAGED = "MANAGED"
UNMANAGED = "UNMANAGED"
MODES = (MANAGED, UNMANAGED)


@dataclass(frozen=True)
class LinkSpec:
    """Per-client wireless link.  ``mu`` None means 23 Mbps scaled by PHY rate."""

    mu: Optional[float] = None
    jitter_cov: float = 0.1
    hidden_penalty: float = 0.0

    def __post_init__(self):
        if self.mu is not None and not self.mu > 0:
            raise ConfigurationError("link mu must be > 0")
        if not 0 <= self.jitter_cov < 1:
            raise ConfigurationError("jitter_cov must lie in [0, 1)")
        if not 0 <= self.hidden_penalty <= 1:
            raise ConfigurationError("hidden_penalty must lie in [0, 1]")


@dataclass(frozen=True)
class ObjectSizes:
    """Object-size distribution for short-lived transfers (bytes)."""

    dist: str = "lognormal"     # lognormal | fixed | pareto
    median: float = 60_000.0
    sigma: float = 1.0
    alpha: float = 1.3
    max_bytes: float = 2_000_000.0

    def __post_init__(self):
        if self.dist not in ("lognormal", "fixed", "pareto"):
            raise ConfigurationError(f"unknown size distribution {self.dist!r}")
        if not self.median > 0:
            raise ConfigurationError("object size must be > 0")


@dataclass(frozen=True)
class FlowSpec:
    client: int
    cls: FlowClass = FlowClass.LONG_LIVED
    direction: str = "down"      # down | up
    endpoint: str = "LAN"        # LAN | WAN
    start_s: float = 0.0
    stop_s: Optional[float] = None
    size: Optional[int] = None   # bytes; None is unbounded (LONG_LIVED only)
    think_s: float = 1.0         # SHORT_LIVED mean idle time between objects
    sizes: ObjectSizes = field(default_factory=ObjectSizes)
    interval_s: float = 1.0      # INTERACTIVE probe period
    ping_bytes: int = 64
    cache_hit: float = 0.0       # SHORT_LIVED WAN objects the proxy already holds

    def __post_init__(self):
        if self.direction not in ("down", "up"):
            raise ConfigurationError(f"flow direction must be down|up, not {self.direction!r}")
        if self.endpoint not in ("LAN", "WAN"):
            raise ConfigurationError(f"flow endpoint must be LAN|WAN, not {self.endpoint!r}")
        if self.start_s < 0 or (self.stop_s is not None and self.stop_s < self.start_s):
            raise ConfigurationError("flow times must satisfy 0 <= start_s <= stop_s")
        if self.cls is FlowClass.INTERACTIVE and self.direction != "down":
            raise ConfigurationError("interactive probes run downstream only")
        if self.size is not None and self.size <= 0:
            raise ConfigurationError("flow size must be positive")
        if self.think_s < 0 or self.interval_s <= 0:
            raise ConfigurationError("think_s must be >= 0 and interval_s > 0")
        if not 0.0 <= self.cache_hit <= 1.0:
            raise ConfigurationError("cache_hit must lie in [0, 1]")

    @property
    def qclass(self) -> QueueClass:
        if self.endpoint == "WAN":
            return QueueClass.WAN_DOWN if self.direction == "down" else QueueClass.WAN_UP
        return QueueClass.LAN_DOWN if self.direction == "down" else QueueClass.LAN_UP


@dataclass(frozen=True)
class Spread:
    clients: tuple
    share: float
    parts: int


@dataclass(frozen=True)
class TimelineEvent:
    """A mode switch or a scripted client change at ``t_s``.

    ``mode`` switches managed/unmanaged operation and replaces the sets of
    clients exempt from slicing (``ungated``) or given spread sub-slices
    (``spread``).  ``client`` with ``phy_rate``/``mu`` changes a link.
    """

    t_s: float
    mode: Optional[str] = None
    ungated: tuple = ()
    spread: Optional[Spread] = None
    client: Optional[int] = None
    phy_rate: Optional[float] = None
    mu: Optional[float] = None
    add_conflicts: tuple = ()
    remove_conflicts: tuple = ()

    def __post_init__(self):
        if self.mode is not None and self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, not {self.mode!r}")
        if self.t_s < 0:
            raise ConfigurationError("timeline times must be >= 0")


@dataclass(frozen=True)
class ScanEvent:
    t_s: float
    client: int
    measurements: tuple   # of (ap_id, rssi_dbm)


@dataclass(frozen=True)
class AdapterParams:
    epsilon: float = 0.05
    lam: float = 0.9
    beta: float = 0.8
    q_lb: float = 7.5
    t_interval: float = 3.0
    v_init: float = 1.0
    v_min: float = 1.0
    v_margin: float = 1.2


@dataclass(frozen=True)
class ControllerConfig:
    T_ms: float = 1000.0
    quantum_ms: float = 10.0
    adaptive: bool = False
    fixed_v: float = 22.0
    fixed_v_per_client: tuple = ()       # of (client, Mbps)
    adapter: AdapterParams = field(default_factory=AdapterParams)
    p_th: float = 0.3
    report_ttl_ms: float = 10_000.0
    weights: tuple = ()                  # of (client, eta, xi, delta); default unity
    alpha: float = 52.0 / 3000.0
    include_aggregate_time_constraint: bool = False
    queue_capacity_kb: float = 200.0
    bypass: tuple = ()
    fixed_slots: tuple = ()              # of (start_ms, end_ms, clients): skips the optimizer
    resolve_threshold: float = 0.05

    def __post_init__(self):
        if not self.T_ms > 0 or not self.quantum_ms > 0:
            raise ConfigurationError("T_ms and quantum_ms must be > 0")
        if not self.fixed_v > 0:
            raise ConfigurationError("fixed_v must be > 0")
        if not 0 < self.alpha < 1:
            raise ConfigurationError("alpha must lie in (0, 1)")


@dataclass(frozen=True)
class SimParams:
    lan_rtpd_ms: float = 0.5
    ap_buffer_pkts: int = 200
    client_buffer_pkts: int = 200
    access_buffer_kb: float = 0.0        # 0 derives one bandwidth-delay product
    proxy_buffer_kb: float = 2000.0
    noise_sigma: float = 0.5
    noise_epoch_ms: float = 10.0
    max_attempts: int = 7
    frto: bool = False
    timestamps_undo: bool = True
    iw: int = 10

    def __post_init__(self):
        if self.lan_rtpd_ms < 0 or self.ap_buffer_pkts < 1 or self.max_attempts < 1:
            raise ConfigurationError("invalid simulation parameters")


@dataclass(frozen=True)
class ScenarioConfig:
    net: NetworkDescription
    flows: tuple = ()
    timeline: tuple = ()
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    links: tuple = ()                    # of (client, LinkSpec)
    type3_edges: tuple = ()              # dependence edges known up front
    conflicts: Optional[tuple] = None    # physical cross-transmitter conflicts
    hidden: tuple = ()                   # subset of conflicts that are hidden-node pairs
    scans: tuple = ()
    sim: SimParams = field(default_factory=SimParams)
    seed: int = 1
    duration_s: float = 100.0
    name: str = "scenario"

    def __post_init__(self):
        ids = set(self.net.client_ids)
        if not self.duration_s > 0:
            raise ConfigurationError("duration_s must be > 0")
        for f in self.flows:
            if f.client not in ids:
                raise ConfigurationError(f"flow references unknown client {f.client}")
        last = -1.0
        for ev in self.timeline:
            if ev.t_s < last:
                raise ConfigurationError("timeline events must be in time order")
            last = ev.t_s
            for c in tuple(ev.ungated) + (ev.spread.clients if ev.spread else ()):
                if c not in ids:
                    raise ConfigurationError(f"timeline references unknown client {c}")
            if ev.client is not None and ev.client not in ids:
                raise ConfigurationError(f"timeline references unknown client {ev.client}")
        for c, _ in self.links:
            if c not in ids:
                raise ConfigurationError(f"link spec for unknown client {c}")
        for e in tuple(self.type3_edges) + tuple(self.conflicts or ()) + tuple(self.hidden):
            if len(set(e)) != 2 or not set(e) <= ids:
                raise ConfigurationError(f"edge {tuple(e)} must join two known clients")
        for s in self.scans:
            if s.client not in ids:
                raise ConfigurationError(f"scan from unknown client {s.client}")
        for c in self.controller.bypass:
            if c not in ids:
                raise ConfigurationError(f"bypass client {c} unknown")

    def link(self, client) -> LinkSpec:
        for c, spec in self.links:
            if c == client:
                return spec
        return LinkSpec()

    def weights_of(self, client) -> tuple:
        for c, eta, xi, delta in self.controller.weights:
            if c == client:
                return (eta, xi, delta)
        return (1.0, 1.0, 1.0)
