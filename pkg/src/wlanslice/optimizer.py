"""Airtime allocation as a concave utility maximization under linear constraints.

Decision variables per client ``j``: WLAN time fractions ``x_j`` (WAN
download), ``y_j`` (WAN upload), ``z_j`` (LAN), and one activation fraction
``a_k`` per maximal independent set.  Client rates are ``fraction * v_j``.

The problem is solved with a feasible-start primal-dual interior point
method; every iterate satisfies the linear constraints exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .errors import SolverError
from .topology import IndependentSetMatrix

ALPHA_DEFAULT = 52.0 / 3000.0
RATE_FLOOR = 1e-3
KKT_TOL = 1e-6
FEAS_TOL = 1e-6

CLASSES = ("wan_down", "wan_up", "lan")


class LogUtility:
    name = "log"

    def value(self, r):
        return np.log(r)

    def deriv(self, r):
        return 1.0 / r

    def second(self, r):
        return -1.0 / (r * r)


class GenericUtility:
    """Strictly concave increasing utility given by value and derivative.

    The second derivative is taken by central differences of ``deriv``.
    """

    name = "generic"

    def __init__(self, value: Callable, deriv: Callable, probe=(1e-2, 1e2)):
        self._f = value
        self._df = deriv
        self.check_concave(probe)

    def value(self, r):
        return np.asarray(self._f(np.asarray(r, dtype=float)), dtype=float)

    def deriv(self, r):
        return np.asarray(self._df(np.asarray(r, dtype=float)), dtype=float)

    def second(self, r):
        r = np.asarray(r, dtype=float)
        h = 1e-5 * np.maximum(r, 1e-6)
        return (self.deriv(r + h) - self.deriv(r - h)) / (2 * h)

    def check_concave(self, probe):
        grid = np.geomspace(probe[0], probe[1], 64)
        d = self.deriv(grid)
        if np.any(~np.isfinite(d)) or np.any(d <= 0):
            raise SolverError("utility must be increasing (derivative > 0)")
        if np.any(np.diff(d) >= 0):
            raise SolverError("utility is not strictly concave (derivative not decreasing)")


@dataclass
class AllocationProblem:
    clients: Sequence[int]
    weights: Mapping[int, tuple]  # (eta, xi, delta)
    v: Mapping[int, float]
    demand_flags: Mapping[int, tuple]  # (has_wan_down, has_wan_up, has_lan)
    M: IndependentSetMatrix
    r_in: float
    r_out: float
    alpha: float = ALPHA_DEFAULT
    utility: object = field(default_factory=LogUtility)
    include_aggregate_time_constraint: bool = False

    def __post_init__(self):
        self.clients = list(self.clients)
        for c in self.clients:
            w = self.weights[c]
            if len(w) != 3 or min(w) < 0:
                raise SolverError(f"client {c}: weights must be three non-negative numbers")
            if not self.v[c] > 0:
                raise SolverError(f"client {c}: v must be positive")
            if len(self.demand_flags[c]) != 3:
                raise SolverError(f"client {c}: demand_flags must have three entries")
        if not 0 < self.alpha < 1:
            raise SolverError("alpha must lie in (0, 1)")
        if not (self.r_in > 0 and self.r_out > 0):
            raise SolverError("WAN rates must be positive")
        missing = set(self.clients) - set(self.M.clients)
        if missing:
            raise SolverError(f"clients {sorted(missing)} absent from the independent-set matrix")

    def active(self) -> list[tuple[int, int]]:
        """(client index, class index) pairs that enter the objective."""
        out = []
        for j, c in enumerate(self.clients):
            for k in range(3):
                if self.demand_flags[c][k] and self.weights[c][k] > 0:
                    out.append((j, k))
        return out


@dataclass
class AllocationSolution:
    clients: list
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    a: np.ndarray
    objective_value: float
    kkt_residual: float
    iterations: int = 0

    def rates(self, p: AllocationProblem) -> dict:
        """Allocated rate per (client, class) in Mbps."""
        out = {}
        for j, c in enumerate(self.clients):
            v = p.v[c]
            out[c] = (self.x[j] * v, self.y[j] * v, self.z[j] * v)
        return out

    def share(self, client) -> float:
        j = self.clients.index(client)
        return float(self.x[j] + self.y[j] + self.z[j])

    def to_dict(self) -> dict:
        return {
            "clients": list(self.clients),
            "x": [float(t) for t in self.x],
            "y": [float(t) for t in self.y],
            "z": [float(t) for t in self.z],
            "a": [float(t) for t in self.a],
            "objective_value": float(self.objective_value),
            "kkt_residual": float(self.kkt_residual),
        }


class _Layout:
    """Dense constraint system ``G u <= h`` for the active variables."""

    def __init__(self, p: AllocationProblem):
        self.p = p
        self.act = p.active()
        if not self.act:
            raise SolverError("empty objective: no active traffic class")
        n = len(p.clients)
        K = len(p.M)
        self.nu = len(self.act)
        self.nvar = self.nu + K
        Mm = p.M.membership
        row_of = {c: i for i, c in enumerate(p.M.clients)}
        v = np.array([p.v[c] for c in p.clients], dtype=float)
        rows, h = [], []
        # inbound and outbound WAN capacity
        g_in = np.zeros(self.nvar)
        g_out = np.zeros(self.nvar)
        for i, (j, k) in enumerate(self.act):
            if k == 0:
                g_in[i], g_out[i] = v[j], p.alpha * v[j]
            elif k == 1:
                g_in[i], g_out[i] = p.alpha * v[j], v[j]
        rows += [g_in, g_out]
        h += [p.r_in, p.r_out]
        # per-client airtime within its independent sets
        for j, c in enumerate(p.clients):
            g = np.zeros(self.nvar)
            for i, (jj, _) in enumerate(self.act):
                if jj == j:
                    g[i] = 1.0
            g[self.nu:] = -Mm[row_of[c], :]
            rows.append(g)
            h.append(0.0)
        g = np.zeros(self.nvar)
        g[self.nu:] = 1.0
        rows.append(g)
        h.append(1.0)
        if p.include_aggregate_time_constraint:
            g = np.zeros(self.nvar)
            g[:self.nu] = 1.0
            rows.append(g)
            h.append(1.0)
        self.n_linear = len(rows)
        for i in range(self.nvar):
            g = np.zeros(self.nvar)
            g[i] = -1.0
            rows.append(g)
            h.append(0.0)
        self.G = np.array(rows)
        self.h = np.array(h)
        self.scale = np.array([v[j] for j, _ in self.act])
        self.w = np.array([p.weights[p.clients[j]][k] for j, k in self.act], dtype=float)
        self.n = n
        self.K = K

    def start(self) -> np.ndarray:
        p = self.p
        u = np.zeros(self.nvar)
        u[self.nu:] = 1.0 / (self.K + 1)
        Mm = p.M.membership
        row_of = {c: i for i, c in enumerate(p.M.clients)}
        per_client = np.zeros(self.n)
        for j, _ in self.act:
            per_client[j] += 1
        cap = np.inf
        for j, c in enumerate(p.clients):
            if per_client[j]:
                budget = Mm[row_of[c], :].sum() / (self.K + 1)
                if budget <= 0:
                    raise SolverError(f"client {c} belongs to no independent set")
                cap = min(cap, budget / (per_client[j] + 1))
        if p.include_aggregate_time_constraint:
            cap = min(cap, 1.0 / (self.nu + 1))
        for row, rhs in ((self.G[0], p.r_in), (self.G[1], p.r_out)):
            load = row[:self.nu].sum()
            if load > 0:
                cap = min(cap, 0.5 * rhs / load)
        u[:self.nu] = 0.5 * cap
        return u

    def objective(self, u) -> float:
        U = self.p.utility
        return float(np.sum(self.w * U.value(self.scale * u[:self.nu])))

    def grad_hess(self, u):
        U = self.p.utility
        r = self.scale * u[:self.nu]
        g = np.zeros(self.nvar)
        hd = np.zeros(self.nvar)
        # minimize F = -objective
        g[:self.nu] = -self.w * self.scale * U.deriv(r)
        hd[:self.nu] = -self.w * self.scale ** 2 * U.second(r)
        return g, hd


def _kkt_residual(L: _Layout, u, lam) -> float:
    g, _ = L.grad_hess(u)
    s = L.h - L.G @ u
    stat = np.max(np.abs(g + L.G.T @ lam)) / max(1.0, np.max(np.abs(g)))
    prim = max(0.0, float(np.max(-s)))
    comp = float(np.max(np.abs(lam * s))) if len(s) else 0.0
    dual = max(0.0, float(np.max(-lam)))
    return max(stat, prim, comp, dual)


def solve_allocation(p: AllocationProblem, max_iter: int = 500,
                     tol: float = 1e-10) -> AllocationSolution:
    """Maximize the weighted utility; returns a KKT-certified solution."""
    L = _Layout(p)
    u = L.start()
    s = L.h - L.G @ u
    if np.any(s <= 0):
        raise SolverError("internal: starting point is not strictly feasible")
    m = len(s)
    lam = np.full(m, 1.0)
    mu = float(s @ lam) / m
    it = 0
    for it in range(1, max_iter + 1):
        g, hd = L.grad_hess(u)
        r_d = g + L.G.T @ lam
        mu = float(s @ lam) / m
        sigma = 0.1 if mu > 1e-6 else 0.01
        # feasible path: primal residual is identically zero
        r_c = lam * s - sigma * mu
        D = lam / s
        H = np.diag(hd + 1e-14) + L.G.T @ (D[:, None] * L.G)
        rhs = -r_d + L.G.T @ (r_c / s)
        try:
            du = np.linalg.solve(H, rhs)
        except np.linalg.LinAlgError:
            du = np.linalg.lstsq(H, rhs, rcond=None)[0]
        ds = -L.G @ du
        dlam = -(r_c + lam * ds) / s
        step = 1.0
        for vec, dvec in ((s, ds), (lam, dlam)):
            neg = dvec < 0
            if np.any(neg):
                step = min(step, 0.995 * float(np.min(-vec[neg] / dvec[neg])))
        # keep the utility argument inside its domain; slacks are carried
        # along the step because recomputing h - G u loses them to rounding
        for _ in range(40):
            u_new = u + step * du
            s_new = s + step * ds
            if np.all(s_new > 0) and np.isfinite(L.objective(u_new)):
                break
            step *= 0.5
        else:
            break
        u = u_new
        s = s_new
        lam = np.maximum(lam + step * dlam, 1e-300)
        if float(s @ lam) / m < tol and _kkt_residual(L, u, lam) < KKT_TOL:
            break
    res = _kkt_residual(L, u, lam)
    if res > KKT_TOL:
        raise SolverError(f"solver stalled with KKT residual {res:.3g}")
    n = len(p.clients)
    xyz = np.zeros((3, n))
    for i, (j, k) in enumerate(L.act):
        xyz[k, j] = max(u[i], 0.0)
    a = np.maximum(u[L.nu:], 0.0)
    return AllocationSolution(list(p.clients), xyz[0], xyz[1], xyz[2], a,
                              L.objective(u), res, it)


def evaluate_utility(rates, weights, utility=None, floor: float = RATE_FLOOR) -> float:
    """Weighted sum of utilities; rates at or below ``floor`` are clamped to it."""
    utility = utility or LogUtility()
    r = np.maximum(np.asarray(rates, dtype=float), floor)
    w = np.asarray(weights, dtype=float)
    return float(np.sum(w * utility.value(r)))


@dataclass
class FeasibilityReport:
    slacks: dict
    feasible: bool
    objective_value: Optional[float]
    objective_defined: bool

    def worst(self) -> float:
        return min(float(np.min(v)) for v in self.slacks.values())


def check_feasibility(p: AllocationProblem, s: AllocationSolution,
                      tol: float = FEAS_TOL) -> FeasibilityReport:
    """Slack of every constraint (negative means violated)."""
    n = len(p.clients)
    K = len(p.M)
    if any(len(vec) != n for vec in (s.x, s.y, s.z)) or len(s.a) != K:
        raise SolverError("solution dimensions do not match the problem")
    if list(s.clients) != list(p.clients):
        raise SolverError("solution client order does not match the problem")
    v = np.array([p.v[c] for c in p.clients], dtype=float)
    x, y, z, a = (np.asarray(t, dtype=float) for t in (s.x, s.y, s.z, s.a))
    Mm = p.M.membership
    row_of = {c: i for i, c in enumerate(p.M.clients)}
    cover = np.array([Mm[row_of[c], :] @ a for c in p.clients])
    slacks = {
        "wan_in": np.array([p.r_in - np.sum((x + p.alpha * y) * v)]),
        "wan_out": np.array([p.r_out - np.sum((p.alpha * x + y) * v)]),
        "independent_sets": cover - (x + y + z),
        "activation_total": np.array([1.0 - a.sum()]),
        "nonnegative": np.concatenate([x, y, z, a]),
    }
    if p.include_aggregate_time_constraint:
        slacks["aggregate_time"] = np.array([1.0 - np.sum(x + y + z)])
    flags = np.array([p.demand_flags[c] for c in p.clients], dtype=bool)
    absent = np.concatenate([x[~flags[:, 0]], y[~flags[:, 1]], z[~flags[:, 2]]])
    slacks["absent_classes"] = -np.abs(absent) if absent.size else np.zeros(1)
    feasible = all(float(np.min(t)) >= -tol for t in slacks.values())
    rates, weights = [], []
    for j, c in enumerate(p.clients):
        for k, frac in enumerate((x[j], y[j], z[j])):
            if p.demand_flags[c][k] and p.weights[c][k] > 0:
                rates.append(frac * v[j])
                weights.append(p.weights[c][k])
    defined = not (isinstance(p.utility, LogUtility) and any(r <= 0 for r in rates))
    obj = None
    if defined:
        r = np.asarray(rates, dtype=float)
        obj = float(np.sum(np.asarray(weights) * p.utility.value(r)))
    return FeasibilityReport(slacks, feasible, obj, defined)
