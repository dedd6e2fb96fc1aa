"""Scenario files: schema, validation and the seeded default generator.

A scenario file is JSON with a ``schema`` tag and explicit keys. Users are
either listed explicitly per aggregator or drawn from the appliance
distribution with one independent random stream per (aggregator, user):
``numpy.random.default_rng(SeedSequence(seed, spawn_key=(aggregator_id, user_index)))``.
Adding users therefore never changes the parameters of existing ones.

Slot ``t`` is the hour ending at ``t`` o'clock, counted from the start of the
horizon (slot 1 ends at 1am). Appliance windows are inclusive, so a window
starting at 1am and ending at 6am covers slots 1..6.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .model import (KWH_PER_MWH, AggregatorModel, ApplianceSpec, GeneratorSpec, Line,
                    MarketInstance, NetworkModel)

logger = logging.getLogger(__name__)

SCHEMA = "drmarket.scenario/1"

# 6-bus ring: (from, to, reactance p.u.)
DEFAULT_LINES = ((1, 6, 0.2), (6, 2, 0.3), (2, 5, 0.25), (5, 3, 0.1), (3, 4, 0.3), (4, 1, 0.4))
DEFAULT_GENERATORS = (
    # bus, a, b, p_max, p_min, ramp
    (1, 0.3, 3.0, 60.0, 2.4, 50.0),
    (2, 0.15, 20.0, 50.0, 0.0, 35.0),
    (3, 0.2, 50.0, 50.0, 0.0, 40.0),
)
DEFAULT_AGGREGATOR_BUSES = (3, 4, 5, 6)
DEFAULT_LOAD_BUSES = (1, 2, 6)


class ScenarioError(ValueError):
    """Malformed scenario file (unknown or missing keys, wrong types)."""


@dataclass(frozen=True)
class ApplianceDistribution:
    energy_kwh: tuple = (10.0, 11.0, 12.0)
    p_max_kwh: tuple = (2.1, 2.3, 2.5)
    p_min_kwh: float = 0.0
    t_start: int = 1
    t_end_choices: tuple = (6, 7)
    t_end_probs: tuple = (0.7, 0.3)

    def sample(self, rng: np.random.Generator) -> ApplianceSpec:
        e = self.energy_kwh[int(rng.integers(len(self.energy_kwh)))]
        pmax = self.p_max_kwh[int(rng.integers(len(self.p_max_kwh)))]
        u = rng.random()
        cum = np.cumsum(self.t_end_probs)
        k = min(int(np.searchsorted(cum, u, side="right")), len(self.t_end_choices) - 1)
        return ApplianceSpec(energy_total=float(e), p_min=float(self.p_min_kwh), p_max=float(pmax),
                             t_start=int(self.t_start), t_end=int(self.t_end_choices[k]))


@dataclass(frozen=True)
class AggregatorEntry:
    id: int
    bus: int
    p_dra_max: float
    n_users: int
    users: tuple | None = None  # explicit users override sampling


@dataclass(frozen=True)
class ScenarioFile:
    n_buses: int
    lines: tuple
    reference_bus: int
    base_load: tuple  # ((bus, (mw per slot, ...)), ...)
    generators: tuple
    aggregators: tuple
    horizon: int
    seed: int | None = None
    appliances: ApplianceDistribution = field(default_factory=ApplianceDistribution)

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        def bound(v):
            return None if not np.isfinite(v) else float(v)

        aggs = []
        for a in self.aggregators:
            d = {"id": a.id, "bus": a.bus, "p_dra_max": float(a.p_dra_max), "n_users": a.n_users}
            if a.users is not None:
                d["users"] = [[_appliance_to_dict(app) for app in user] for user in a.users]
            aggs.append(d)
        return {
            "schema": SCHEMA,
            "horizon": self.horizon,
            "seed": self.seed,
            "network": {
                "n_buses": self.n_buses,
                "reference_bus": self.reference_bus,
                "lines": [{"from": ln.from_bus, "to": ln.to_bus, "reactance": float(ln.reactance),
                           "f_min": bound(ln.f_min), "f_max": bound(ln.f_max)} for ln in self.lines],
                "base_load": [{"bus": b, "mw": [float(v) for v in mw]} for b, mw in self.base_load],
            },
            "generators": [{"bus": g.bus, "a": float(g.a), "b": float(g.b), "p_min": float(g.p_min),
                            "p_max": float(g.p_max), "ramp_up": float(g.ramp_up),
                            "ramp_down": float(g.ramp_down), "p_initial": float(g.p_initial)}
                           for g in self.generators],
            "aggregators": aggs,
            "appliance_distribution": {
                "energy_kwh": [float(v) for v in self.appliances.energy_kwh],
                "p_max_kwh": [float(v) for v in self.appliances.p_max_kwh],
                "p_min_kwh": float(self.appliances.p_min_kwh),
                "t_start": self.appliances.t_start,
                "t_end_choices": list(self.appliances.t_end_choices),
                "t_end_probs": [float(v) for v in self.appliances.t_end_probs],
            },
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.dumps())

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioFile":
        _keys(d, "scenario", {"schema", "horizon", "seed", "network", "generators", "aggregators",
                              "appliance_distribution"}, optional={"seed"})
        if d["schema"] != SCHEMA:
            raise ScenarioError(f"unsupported schema {d['schema']!r} (expected {SCHEMA!r})")
        net = d["network"]
        _keys(net, "network", {"n_buses", "reference_bus", "lines", "base_load"})
        lines = []
        for ln in _list(net["lines"], "network.lines"):
            _keys(ln, "line", {"from", "to", "reactance", "f_min", "f_max"}, optional={"f_min", "f_max"})
            lo = ln.get("f_min")
            hi = ln.get("f_max")
            lines.append(Line(_int(ln["from"], "line.from"), _int(ln["to"], "line.to"),
                              _num(ln["reactance"], "line.reactance"),
                              -np.inf if lo is None else _num(lo, "line.f_min"),
                              np.inf if hi is None else _num(hi, "line.f_max")))
        base = []
        for entry in _list(net["base_load"], "network.base_load"):
            _keys(entry, "base_load", {"bus", "mw"})
            base.append((_int(entry["bus"], "base_load.bus"),
                         tuple(_num(v, "base_load.mw") for v in _list(entry["mw"], "base_load.mw"))))
        gens = []
        for g in _list(d["generators"], "generators"):
            _keys(g, "generator", {"bus", "a", "b", "p_min", "p_max", "ramp_up", "ramp_down", "p_initial"},
                  optional={"p_initial"})
            gens.append(GeneratorSpec(bus=_int(g["bus"], "generator.bus"), a=_num(g["a"], "a"),
                                      b=_num(g["b"], "b"), p_min=_num(g["p_min"], "p_min"),
                                      p_max=_num(g["p_max"], "p_max"), ramp_up=_num(g["ramp_up"], "ramp_up"),
                                      ramp_down=_num(g["ramp_down"], "ramp_down"),
                                      p_initial=None if g.get("p_initial") is None
                                      else _num(g["p_initial"], "p_initial")))
        aggs = []
        for a in _list(d["aggregators"], "aggregators"):
            _keys(a, "aggregator", {"id", "bus", "p_dra_max", "n_users", "users"}, optional={"users"})
            users = None
            if a.get("users") is not None:
                users = tuple(tuple(_appliance_from_dict(app) for app in _list(user, "user"))
                              for user in _list(a["users"], "aggregator.users"))
            aggs.append(AggregatorEntry(_int(a["id"], "aggregator.id"), _int(a["bus"], "aggregator.bus"),
                                        _num(a["p_dra_max"], "p_dra_max"),
                                        _int(a["n_users"], "n_users"), users))
        dist = d["appliance_distribution"]
        _keys(dist, "appliance_distribution",
              {"energy_kwh", "p_max_kwh", "p_min_kwh", "t_start", "t_end_choices", "t_end_probs"})
        appliances = ApplianceDistribution(
            energy_kwh=tuple(_num(v, "energy_kwh") for v in _list(dist["energy_kwh"], "energy_kwh")),
            p_max_kwh=tuple(_num(v, "p_max_kwh") for v in _list(dist["p_max_kwh"], "p_max_kwh")),
            p_min_kwh=_num(dist["p_min_kwh"], "p_min_kwh"),
            t_start=_int(dist["t_start"], "t_start"),
            t_end_choices=tuple(_int(v, "t_end_choices") for v in _list(dist["t_end_choices"], "t_end_choices")),
            t_end_probs=tuple(_num(v, "t_end_probs") for v in _list(dist["t_end_probs"], "t_end_probs")),
        )
        seed = d.get("seed")
        return cls(n_buses=_int(net["n_buses"], "n_buses"), lines=tuple(lines),
                   reference_bus=_int(net["reference_bus"], "reference_bus"), base_load=tuple(base),
                   generators=tuple(gens), aggregators=tuple(aggs), horizon=_int(d["horizon"], "horizon"),
                   seed=None if seed is None else _int(seed, "seed"), appliances=appliances)

    @classmethod
    def loads(cls, text: str) -> "ScenarioFile":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ScenarioError("scenario must be a JSON object")
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "ScenarioFile":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())

    # -- materialization -----------------------------------------------
    def users_for(self, agg: AggregatorEntry) -> tuple:
        if agg.users is not None:
            return agg.users
        if agg.n_users and self.seed is None:
            raise ScenarioError("a seed is required to sample users")
        out = []
        for r in range(agg.n_users):
            rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(agg.id, r)))
            out.append((self.appliances.sample(rng),))
        return tuple(out)

    def network(self) -> NetworkModel:
        bl = np.zeros((self.n_buses, self.horizon))
        for bus, mw in self.base_load:
            if 1 <= bus <= self.n_buses and len(mw) == self.horizon:
                bl[bus - 1] += np.asarray(mw, dtype=float)
        return NetworkModel(n_buses=self.n_buses, lines=self.lines, generators=self.generators,
                            aggregator_buses={a.id: a.bus for a in self.aggregators}, base_load=bl,
                            horizon=self.horizon, reference_bus=self.reference_bus)

    def materialize(self) -> MarketInstance:
        """Build the network and all users; raises ``ScenarioError`` if invalid."""
        errs = validate(self)
        if errs:
            raise ScenarioError("invalid scenario: " + "; ".join(errs))
        aggs = tuple(AggregatorModel(id=a.id, bus=a.bus, p_dra_max=a.p_dra_max, users=self.users_for(a))
                     for a in self.aggregators)
        return MarketInstance(self.network(), aggs)


def _appliance_to_dict(app: ApplianceSpec) -> dict:
    return {"energy_kwh": float(app.energy_total), "p_min_kwh": float(app.p_min),
            "p_max_kwh": float(app.p_max), "t_start": app.t_start, "t_end": app.t_end}


def _appliance_from_dict(d) -> ApplianceSpec:
    _keys(d, "appliance", {"energy_kwh", "p_min_kwh", "p_max_kwh", "t_start", "t_end"})
    return ApplianceSpec(_num(d["energy_kwh"], "energy_kwh"), _num(d["p_min_kwh"], "p_min_kwh"),
                         _num(d["p_max_kwh"], "p_max_kwh"), _int(d["t_start"], "t_start"),
                         _int(d["t_end"], "t_end"))


def _keys(d, where, required, optional=frozenset()):
    if not isinstance(d, dict):
        raise ScenarioError(f"{where}: expected an object")
    unknown = set(d) - set(required)
    if unknown:
        raise ScenarioError(f"{where}: unknown keys {sorted(unknown)}")
    missing = set(required) - set(optional) - set(d)
    if missing:
        raise ScenarioError(f"{where}: missing keys {sorted(missing)}")


def _list(v, where):
    if not isinstance(v, list):
        raise ScenarioError(f"{where}: expected a list")
    return v


def _num(v, where) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"{where}: expected a number, got {v!r}")
    return float(v)


def _int(v, where) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ScenarioError(f"{where}: expected an integer, got {v!r}")
    return v


def validate(s: ScenarioFile) -> list[str]:
    """Return every invariant violation of a parsed scenario (empty if valid)."""
    out = []
    if s.horizon < 1:
        out.append(f"horizon must be >= 1 (got {s.horizon})")
    for bus, mw in s.base_load:
        if not 1 <= bus <= s.n_buses:
            out.append(f"base load bus {bus} out of range 1..{s.n_buses}")
        if len(mw) != s.horizon:
            out.append(f"base load at bus {bus} has {len(mw)} slots, expected {s.horizon}")
    ids = [a.id for a in s.aggregators]
    if len(set(ids)) != len(ids):
        out.append("aggregator ids must be unique")
    if s.horizon >= 1:
        out.extend(s.network().violations())
    dist = s.appliances
    needs_sampling = any(a.users is None and a.n_users > 0 for a in s.aggregators)
    for a in s.aggregators:
        if a.p_dra_max < 0:
            out.append(f"aggregator {a.id}: p_dra_max must be nonnegative")
        if a.n_users < 0:
            out.append(f"aggregator {a.id}: n_users must be nonnegative")
        if a.users is not None:
            if len(a.users) != a.n_users:
                out.append(f"aggregator {a.id}: n_users={a.n_users} but {len(a.users)} users listed")
            for r, user in enumerate(a.users, start=1):
                for k, app in enumerate(user, start=1):
                    out.extend(f"aggregator {a.id} user {r} appliance {k}: {v}"
                               for v in app.violations(s.horizon))
    if needs_sampling:
        if s.seed is None:
            out.append("seed is required when users are sampled from the appliance distribution")
        if not dist.energy_kwh or not dist.p_max_kwh or not dist.t_end_choices:
            out.append("appliance distribution has an empty choice list")
        elif len(dist.t_end_choices) != len(dist.t_end_probs):
            out.append("t_end_choices and t_end_probs differ in length")
        else:
            if any(p < 0 for p in dist.t_end_probs) or abs(sum(dist.t_end_probs) - 1.0) > 1e-9:
                out.append("t_end_probs must be nonnegative and sum to 1")
            for e in dist.energy_kwh:
                for pmax in dist.p_max_kwh:
                    for te in dist.t_end_choices:
                        app = ApplianceSpec(e, dist.p_min_kwh, pmax, dist.t_start, te)
                        out.extend(f"appliance distribution (E={e:g}, p_max={pmax:g}, end={te}): {v}"
                                   for v in app.violations(s.horizon))
    return out


def sanity_warnings(s: ScenarioFile) -> list[str]:
    """Non-fatal checks: users' peak demand against the aggregator cap."""
    out = []
    if validate(s):
        return out
    for a in s.aggregators:
        users = s.users_for(a)
        peak = np.zeros(s.horizon)
        for user in users:
            for app in user:
                peak[app.t_start - 1:app.t_end] += app.p_max
        if peak.max(initial=0.0) > a.p_dra_max * KWH_PER_MWH:
            out.append(f"aggregator {a.id}: users' combined p_max {peak.max():g} kWh exceeds "
                       f"p_dra_max {a.p_dra_max:g} MW in some slot; the consumption cap may bind")
    return out


def generate_default(seed: int, users_per_aggregator: int = 1000, horizon: int = 24) -> ScenarioFile:
    """The 6-bus, 3-generator, 4-aggregator PHEV charging scenario."""
    gens = tuple(GeneratorSpec(bus=b, a=a, b=lin, p_min=pmin, p_max=pmax, ramp_up=r, ramp_down=r,
                               p_initial=pmin) for b, a, lin, pmax, pmin, r in DEFAULT_GENERATORS)
    aggs = tuple(AggregatorEntry(id=j, bus=b, p_dra_max=50.0, n_users=users_per_aggregator)
                 for j, b in enumerate(DEFAULT_AGGREGATOR_BUSES, start=1))
    return ScenarioFile(
        n_buses=6,
        lines=tuple(Line(m, n, x) for m, n, x in DEFAULT_LINES),
        reference_bus=1,
        base_load=tuple((b, (5.0,) * horizon) for b in DEFAULT_LOAD_BUSES),
        generators=gens,
        aggregators=aggs,
        horizon=horizon,
        seed=seed,
    )
