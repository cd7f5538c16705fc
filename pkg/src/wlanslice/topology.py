"""Network description, link dependence graph and maximal independent sets.

Clients are identified by integers and access points by strings.  A
client-AP link is named by its client id, so the dependence graph is a graph
over client ids.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .errors import ConfigurationError, EnumerationCapError

EXACT_ENUMERATION_CAP = 20


def pair(a, b) -> frozenset:
    """Unordered pair; rejects self loops."""
    if a == b:
        raise ConfigurationError(f"self-pair {a!r}")
    return frozenset((a, b))


@dataclass(frozen=True)
class AccessPoint:
    id: str
    channel: int = 11
    position: Optional[tuple[float, float]] = None


@dataclass(frozen=True)
class Client:
    id: int
    associated_ap: str
    phy_rate: float = 54.0
    position: Optional[tuple[float, float]] = None


@dataclass(frozen=True)
class WanLink:
    r_in: float = 8.0
    r_out: float = 8.0
    rtpd: float = 150.0


@dataclass(frozen=True)
class NetworkDescription:
    aps: tuple[AccessPoint, ...]
    clients: tuple[Client, ...]
    static_ap_conflicts: frozenset = frozenset()
    wan: WanLink = field(default_factory=WanLink)
    proxy_enabled: bool = True

    def __post_init__(self):
        ap_ids = [a.id for a in self.aps]
        if len(set(ap_ids)) != len(ap_ids):
            raise ConfigurationError("duplicate AP id")
        cl_ids = [c.id for c in self.clients]
        if len(set(cl_ids)) != len(cl_ids):
            raise ConfigurationError("duplicate client id")
        known = set(ap_ids)
        for c in self.clients:
            if c.associated_ap not in known:
                raise ConfigurationError(
                    f"client {c.id} associated with unknown AP {c.associated_ap!r}")
            if not c.phy_rate > 0:
                raise ConfigurationError(f"client {c.id}: phy_rate must be > 0")
        conflicts = frozenset(frozenset(p) for p in self.static_ap_conflicts)
        for p in conflicts:
            if len(p) != 2:
                raise ConfigurationError(f"AP conflict {set(p)} is not a pair of distinct APs")
            if not p <= known:
                raise ConfigurationError(f"AP conflict {set(p)} references unknown AP")
        object.__setattr__(self, "static_ap_conflicts", conflicts)
        if not (self.wan.r_in > 0 and self.wan.r_out > 0):
            raise ConfigurationError("WAN rates must be > 0")

    @property
    def client_ids(self) -> list[int]:
        return sorted(c.id for c in self.clients)

    def client(self, cid: int) -> Client:
        for c in self.clients:
            if c.id == cid:
                return c
        raise ConfigurationError(f"unknown client {cid!r}")

    def ap(self, aid: str) -> AccessPoint:
        for a in self.aps:
            if a.id == aid:
                return a
        raise ConfigurationError(f"unknown AP {aid!r}")

    def clients_of(self, aid: str) -> list[int]:
        return sorted(c.id for c in self.clients if c.associated_ap == aid)

    def with_client(self, cid: int, **changes) -> "NetworkDescription":
        """Copy with one client record replaced (used for scripted mobility)."""
        new = []
        for c in self.clients:
            if c.id == cid:
                d = dict(id=c.id, associated_ap=c.associated_ap,
                         phy_rate=c.phy_rate, position=c.position)
                d.update(changes)
                c = Client(**d)
            new.append(c)
        return NetworkDescription(self.aps, tuple(new), self.static_ap_conflicts,
                                  self.wan, self.proxy_enabled)


@dataclass(frozen=True)
class DependenceGraph:
    vertices: frozenset
    edges: frozenset

    def __post_init__(self):
        verts = frozenset(self.vertices)
        edges = frozenset(frozenset(e) for e in self.edges)
        for e in edges:
            if len(e) != 2:
                raise ConfigurationError(f"edge {set(e)} is a self loop")
            if not e <= verts:
                raise ConfigurationError(f"edge {set(e)} references unknown vertex")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "edges", edges)

    @classmethod
    def from_edges(cls, vertices: Iterable, edges: Iterable) -> "DependenceGraph":
        return cls(frozenset(vertices), frozenset(frozenset(e) for e in edges))

    def neighbors(self, v) -> set:
        out = set()
        for e in self.edges:
            if v in e:
                out |= e - {v}
        return out

    def adjacency(self) -> dict:
        adj = {v: set() for v in self.vertices}
        for e in self.edges:
            a, b = tuple(e)
            adj[a].add(b)
            adj[b].add(a)
        return adj

    def has_edge(self, a, b) -> bool:
        return frozenset((a, b)) in self.edges

    def is_independent(self, members: Iterable) -> bool:
        members = list(members)
        return not any(frozenset(p) in self.edges
                       for p in itertools.combinations(members, 2))


@dataclass(frozen=True)
class IndependentSetMatrix:
    """Columns are maximal independent sets; rows follow ``clients`` order."""

    clients: tuple
    sets: tuple

    @property
    def membership(self) -> np.ndarray:
        m = np.zeros((len(self.clients), len(self.sets)), dtype=np.int8)
        index = {c: i for i, c in enumerate(self.clients)}
        for k, s in enumerate(self.sets):
            for c in s:
                m[index[c], k] = 1
        return m

    def M(self, client, k: int) -> int:
        return int(client in self.sets[k])

    def __len__(self) -> int:
        return len(self.sets)


def build_dependence_graph(net: NetworkDescription,
                           extra_edges: Iterable = ()) -> DependenceGraph:
    """Same-AP pairs, closure of static AP conflicts, plus ``extra_edges``."""
    ids = set(net.client_ids)
    edges = set()
    for ap in net.aps:
        for p in itertools.combinations(net.clients_of(ap.id), 2):
            edges.add(frozenset(p))
    for conflict in net.static_ap_conflicts:
        a1, a2 = tuple(conflict)
        for i in net.clients_of(a1):
            for j in net.clients_of(a2):
                edges.add(frozenset((i, j)))
    for e in extra_edges:
        e = frozenset(e)
        if len(e) != 2 or not e <= ids:
            raise ConfigurationError(f"extra edge {set(e)} references unknown client")
        edges.add(e)
    return DependenceGraph(frozenset(ids), frozenset(edges))


def _column_key(s) -> tuple:
    return tuple(sorted(s))


def is_maximal_independent(g: DependenceGraph, members) -> bool:
    members = set(members)
    if not members <= g.vertices or not g.is_independent(members):
        return False
    adj = g.adjacency()
    return all(adj[v] & members for v in g.vertices - members)


def enumerate_maximal_independent_sets(g: DependenceGraph,
                                       cap: int = EXACT_ENUMERATION_CAP
                                       ) -> IndependentSetMatrix:
    """All maximal independent sets (Bron-Kerbosch with pivoting on the complement)."""
    if len(g.vertices) > cap:
        raise EnumerationCapError(
            f"{len(g.vertices)} vertices exceed the exact-enumeration cap {cap}")
    adj = g.adjacency()
    verts = frozenset(g.vertices)
    # independent sets of g are cliques of its complement
    comp = {v: verts - adj[v] - {v} for v in verts}
    found = []

    def expand(r, p, x):
        if not p and not x:
            found.append(frozenset(r))
            return
        pivot = min(p | x, key=lambda u: (-len(comp[u] & p), _order(u)))
        for v in sorted(p - comp[pivot], key=_order):
            expand(r | {v}, p & comp[v], x & comp[v])
            p = p - {v}
            x = x | {v}

    if verts:
        expand(frozenset(), set(verts), set())
    sets = tuple(sorted(found, key=_column_key))
    return IndependentSetMatrix(tuple(sorted(verts, key=_order)), sets)


def _order(v):
    return (str(type(v)), v)


def greedy_cover(g: DependenceGraph) -> IndependentSetMatrix:
    """Cover every vertex with greedily grown maximal independent sets.

    Each round seeds with the uncovered vertex of minimum degree (ties by
    smallest id), then adds non-adjacent vertices in the same order.
    """
    adj = g.adjacency()
    order = sorted(g.vertices, key=lambda v: (len(adj[v]), _order(v)))
    uncovered = set(g.vertices)
    sets = []
    while uncovered:
        seed = next(v for v in order if v in uncovered)
        members = {seed}
        blocked = set(adj[seed]) | {seed}
        # prefer uncovered vertices so the cover finishes in fewer columns
        for v in sorted(order, key=lambda u: u not in uncovered):
            if v not in blocked:
                members.add(v)
                blocked |= adj[v] | {v}
        s = frozenset(members)
        if s not in sets:
            sets.append(s)
        uncovered -= members
    return IndependentSetMatrix(tuple(sorted(g.vertices, key=_order)),
                                tuple(sorted(sets, key=_column_key)))
