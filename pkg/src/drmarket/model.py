"""Power network and demand-response data model.

Bus and slot indices are 1-based throughout the data types (bus 1 is the
first bus, slot 1 the first hour); the matrix builders translate to 0-based
array positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KWH_PER_MWH = 1000.0


class ModelError(ValueError):
    """A data-model invariant is violated."""


@dataclass(frozen=True)
class GeneratorSpec:
    """Quadratic-cost generator, cost ``a p^2 + b p`` per slot."""

    bus: int
    a: float
    b: float
    p_min: float
    p_max: float
    ramp_up: float
    ramp_down: float
    p_initial: float | None = None

    def __post_init__(self):
        if self.p_initial is None:
            object.__setattr__(self, "p_initial", float(self.p_min))

    def violations(self) -> list[str]:
        out = []
        if not 0 <= self.p_min <= self.p_max:
            out.append(f"generator limits must satisfy 0 <= p_min <= p_max (got {self.p_min}, {self.p_max})")
        if self.ramp_up < 0 or self.ramp_down < 0:
            out.append("ramp limits must be nonnegative")
        if self.a < 0:
            out.append(f"quadratic cost coefficient must be nonnegative (got {self.a})")
        if not self.p_min <= self.p_initial <= self.p_max:
            out.append(f"p_initial {self.p_initial} outside [{self.p_min}, {self.p_max}]")
        return out

    def cost(self, p):
        return self.a * np.square(p) + self.b * np.asarray(p)


@dataclass(frozen=True)
class ApplianceSpec:
    """Energy-window appliance (e.g. PHEV charging); quantities in kWh per slot."""

    energy_total: float
    p_min: float
    p_max: float
    t_start: int
    t_end: int

    @property
    def window_length(self) -> int:
        return self.t_end - self.t_start + 1

    def violations(self, horizon: int | None = None) -> list[str]:
        out = []
        if self.t_start < 1 or self.t_end < self.t_start:
            out.append(f"window [{self.t_start}, {self.t_end}] is empty or starts before slot 1")
        if horizon is not None and self.t_end > horizon:
            out.append(f"window end {self.t_end} beyond horizon {horizon}")
        if not 0 <= self.p_min <= self.p_max:
            out.append(f"appliance limits must satisfy 0 <= p_min <= p_max (got {self.p_min}, {self.p_max})")
        n = max(self.window_length, 0)
        lo, hi = n * self.p_min, n * self.p_max
        if not lo <= self.energy_total <= hi:
            out.append(f"energy {self.energy_total} kWh not attainable in {n} slots "
                       f"with per-slot range [{self.p_min}, {self.p_max}] (range [{lo:g}, {hi:g}])")
        return out


@dataclass(frozen=True)
class AggregatorModel:
    """An aggregator, its bus, its consumption cap and its users' appliances.

    ``users`` is a tuple of users, each a tuple of ``ApplianceSpec``.
    """

    id: int
    bus: int
    p_dra_max: float
    users: tuple = ()

    def appliances(self):
        for user in self.users:
            yield from user

    @property
    def n_users(self) -> int:
        return len(self.users)


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    reactance: float
    f_min: float = -np.inf
    f_max: float = np.inf


@dataclass(frozen=True)
class NetworkModel:
    """Buses, lines, generators, aggregator placements and base load.

    ``base_load`` is an ``(n_buses, horizon)`` array in MW.
    """

    n_buses: int
    lines: tuple
    generators: tuple
    aggregator_buses: dict
    base_load: np.ndarray
    horizon: int
    reference_bus: int = 1

    def __post_init__(self):
        bl = np.array(self.base_load, dtype=float)
        bl.setflags(write=False)
        object.__setattr__(self, "base_load", bl)
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "aggregator_buses", dict(self.aggregator_buses))

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @property
    def n_generators(self) -> int:
        return len(self.generators)

    @property
    def n_aggregators(self) -> int:
        return len(self.aggregator_buses)

    @property
    def aggregator_ids(self) -> list:
        return sorted(self.aggregator_buses)

    @property
    def flow_limits(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([ln.f_min for ln in self.lines], dtype=float),
                np.array([ln.f_max for ln in self.lines], dtype=float))

    def violations(self) -> list[str]:
        out = []
        nb = self.n_buses

        def bus_ok(b):
            return isinstance(b, (int, np.integer)) and 1 <= b <= nb

        if nb < 1:
            out.append("network needs at least one bus")
        if self.horizon < 1:
            out.append(f"horizon must be >= 1 (got {self.horizon})")
        if not bus_ok(self.reference_bus):
            out.append(f"reference bus {self.reference_bus} out of range 1..{nb}")
        seen = set()
        for q, ln in enumerate(self.lines, start=1):
            if not (bus_ok(ln.from_bus) and bus_ok(ln.to_bus)):
                out.append(f"line {q} endpoint out of range 1..{nb}")
            if ln.from_bus == ln.to_bus:
                out.append(f"line {q} connects bus {ln.from_bus} to itself")
            if not ln.reactance > 0:
                out.append(f"line {q} reactance must be positive (got {ln.reactance})")
            if ln.f_min > ln.f_max:
                out.append(f"line {q} has f_min > f_max")
            key = frozenset((ln.from_bus, ln.to_bus))
            if key in seen:
                out.append(f"line {q} duplicates an existing bus pair")
            seen.add(key)
        for i, g in enumerate(self.generators, start=1):
            if not bus_ok(g.bus):
                out.append(f"generator {i} bus {g.bus} out of range")
            out.extend(f"generator {i}: {v}" for v in g.violations())
        for j, b in self.aggregator_buses.items():
            if not bus_ok(b):
                out.append(f"aggregator {j} bus {b} out of range")
        if self.base_load.shape != (nb, self.horizon):
            out.append(f"base_load has shape {self.base_load.shape}, expected {(nb, self.horizon)}")
        return out

    def validate(self) -> "NetworkModel":
        errs = self.violations()
        if errs:
            raise ModelError("; ".join(errs))
        return self


def build_admittance(net: NetworkModel) -> np.ndarray:
    """Bus admittance matrix ``B`` (reactances only, lossless)."""
    B = np.zeros((net.n_buses, net.n_buses))
    for ln in net.lines:
        m, n = ln.from_bus - 1, ln.to_bus - 1
        y = 1.0 / ln.reactance
        B[m, n] -= y
        B[n, m] -= y
        B[m, m] += y
        B[n, n] += y
    return B


def build_flow_matrix(net: NetworkModel) -> np.ndarray:
    """Line-flow matrix ``H``: ``(H theta)_q = (theta_from - theta_to) / X_q``."""
    H = np.zeros((net.n_lines, net.n_buses))
    for q, ln in enumerate(net.lines):
        y = 1.0 / ln.reactance
        H[q, ln.from_bus - 1] = y
        H[q, ln.to_bus - 1] = -y
    return H


def build_incidence(net: NetworkModel) -> tuple[np.ndarray, np.ndarray]:
    """Generator and aggregator bus-incidence matrices ``(A_g, A_a)``.

    Aggregator columns follow ``net.aggregator_ids`` order.
    """
    A_g = np.zeros((net.n_buses, net.n_generators))
    for i, g in enumerate(net.generators):
        A_g[g.bus - 1, i] = 1.0
    A_a = np.zeros((net.n_buses, net.n_aggregators))
    for j, agg_id in enumerate(net.aggregator_ids):
        A_a[net.aggregator_buses[agg_id] - 1, j] = 1.0
    return A_g, A_a


@dataclass(frozen=True)
class MarketInstance:
    """A materialized market: network plus aggregators with their users."""

    network: NetworkModel
    aggregators: tuple = field(default_factory=tuple)

    def __post_init__(self):
        aggs = tuple(sorted(self.aggregators, key=lambda a: a.id))
        object.__setattr__(self, "aggregators", aggs)

    @property
    def n_aggregators(self) -> int:
        return len(self.aggregators)

    @property
    def horizon(self) -> int:
        return self.network.horizon

    @property
    def p_dra_max(self) -> np.ndarray:
        return np.array([a.p_dra_max for a in self.aggregators], dtype=float)

    def violations(self) -> list[str]:
        out = self.network.violations()
        ids = [a.id for a in self.aggregators]
        if sorted(ids) != self.network.aggregator_ids:
            out.append("aggregator ids do not match the network's aggregator placements")
        for a in self.aggregators:
            if a.id in self.network.aggregator_buses and self.network.aggregator_buses[a.id] != a.bus:
                out.append(f"aggregator {a.id} bus disagrees with network placement")
            if a.p_dra_max < 0:
                out.append(f"aggregator {a.id} p_dra_max must be nonnegative")
            for r, user in enumerate(a.users, start=1):
                for s, app in enumerate(user, start=1):
                    out.extend(f"aggregator {a.id} user {r} appliance {s}: {v}"
                               for v in app.violations(self.network.horizon))
        return out

    def validate(self) -> "MarketInstance":
        errs = self.violations()
        if errs:
            raise ModelError("; ".join(errs))
        return self
