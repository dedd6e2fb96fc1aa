"""Distributed market clearing loop and the centralized reference solve.

Each round the MO sends aggregator ``j`` only its own price row, every
aggregator answers with its dual value and total consumption, the MO solves
its own subproblem and then updates the multipliers. Messages travel through
an in-process channel that can force a JSON round-trip, so the wire schema is
what separates user data from the MO.
"""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import dual, qp
from .model import KWH_PER_MWH, AggregatorModel, MarketInstance
from .scenario import ScenarioFile
from .subproblems import InfeasibleSubproblem, MoSubproblem, aggregator_respond

logger = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITERATIONS = "max_iterations"
INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class PriceSignal:
    """MO -> aggregator: this aggregator's prices for every slot."""

    aggregator_id: int
    iteration: int
    prices: tuple

    def to_wire(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_wire(cls, text: str) -> "PriceSignal":
        d = json.loads(text)
        return cls(int(d["aggregator_id"]), int(d["iteration"]), tuple(float(v) for v in d["prices"]))


@dataclass(frozen=True)
class AggregatorReport:
    """Aggregator -> MO: dual value and aggregate consumption (MW) only."""

    aggregator_id: int
    iteration: int
    dual_value: float
    consumption: tuple

    def to_wire(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_wire(cls, text: str) -> "AggregatorReport":
        d = json.loads(text)
        return cls(int(d["aggregator_id"]), int(d["iteration"]), float(d["dual_value"]),
                   tuple(float(v) for v in d["consumption"]))


def wire_fields(message_type) -> tuple:
    return tuple(f.name for f in fields(message_type))


class Channel:
    """Counts messages; with ``round_trip`` every message is serialized and parsed."""

    def __init__(self, round_trip: bool = False):
        self.round_trip = round_trip
        self.sent = 0

    def deliver(self, msg):
        self.sent += 1
        if self.round_trip:
            return type(msg).from_wire(msg.to_wire())
        return msg


class AggregatorAgent:
    """Aggregator side: owns its users' appliances, answers price signals."""

    def __init__(self, model: AggregatorModel):
        self.model = model
        self.last_schedules = None

    @property
    def id(self) -> int:
        return self.model.id

    def handle(self, signal: PriceSignal) -> AggregatorReport:
        if signal.aggregator_id != self.model.id:
            raise ValueError(f"aggregator {self.model.id} received prices addressed to {signal.aggregator_id}")
        resp = aggregator_respond(self.model, np.array(signal.prices), keep_schedules=True)
        self.last_schedules = resp.schedules
        return AggregatorReport(self.model.id, signal.iteration, resp.dual_value,
                                tuple(float(v) for v in resp.consumption))


@dataclass
class IterationTrace:
    k: int
    mu: np.ndarray
    dual_value: float
    components: np.ndarray
    d_ap: float | None
    eta: float | None
    step_type: str
    balance_residual: float
    prox_value: float
    msgs_down: int
    msgs_up: int
    timings_ms: dict = field(default_factory=dict)


@dataclass
class ClearingResult:
    method: str
    mu_star: np.ndarray
    p_G: np.ndarray | None
    p_DRA: np.ndarray | None
    theta: np.ndarray | None
    consumption: np.ndarray | None
    trace: list
    termination: str
    iterations: int
    final_dual: float
    message: str = ""

    @property
    def best_dual(self) -> float:
        return max((row.dual_value for row in self.trace), default=-math.inf)

    @property
    def messages(self) -> int:
        return sum(row.msgs_down + row.msgs_up for row in self.trace)


def _as_instance(scenario) -> MarketInstance:
    if isinstance(scenario, ScenarioFile):
        return scenario.materialize()
    if isinstance(scenario, MarketInstance):
        return scenario.validate()
    raise TypeError(f"expected ScenarioFile or MarketInstance, got {type(scenario).__name__}")


class MarketOperator:
    """MO side of the loop: sees only aggregator reports, never users."""

    def __init__(self, instance: MarketInstance, config: dual.SolverConfig):
        self.net = instance.network
        self.agg_ids = [a.id for a in instance.aggregators]
        self.sub = MoSubproblem(self.net, instance.p_dra_max, tol=config.qp_tol)
        self.state = dual.new_state((len(self.agg_ids), self.net.horizon), config)

    def signals(self, mu, k) -> list:
        return [PriceSignal(j, k, tuple(float(v) for v in mu[row])) for row, j in enumerate(self.agg_ids)]

    def collect(self, reports) -> tuple[np.ndarray, np.ndarray]:
        by_id = {r.aggregator_id: r for r in reports}
        if sorted(by_id) != sorted(self.agg_ids):
            raise RuntimeError("missing or unexpected aggregator reports")
        values = np.array([by_id[j].dual_value for j in self.agg_ids])
        cons = np.array([by_id[j].consumption for j in self.agg_ids]).reshape(len(self.agg_ids), -1)
        return values, cons


def run(scenario, config: dual.SolverConfig | None = None, *, round_trip: bool = False,
        sink=None, workers: int = 1) -> ClearingResult:
    """Run the two-step dual decomposition until ``eta < epsilon`` or the cap.

    Parameters
    ----------
    scenario : ScenarioFile or MarketInstance
    config : SolverConfig
    round_trip : bool
        Serialize every message through its wire format.
    sink : callable, optional
        Called with each ``IterationTrace`` as soon as it is complete.
    workers : int
        Threads used for aggregator responses; results are always applied
        in aggregator order.
    """
    config = (config or dual.SolverConfig()).validate()
    inst = _as_instance(scenario)
    mo = MarketOperator(inst, config)
    state = mo.state
    agents = [AggregatorAgent(a) for a in inst.aggregators]
    down, up = Channel(round_trip), Channel(round_trip)
    na, T = state.shape
    mu = np.zeros((na, T))
    trace: list[IterationTrace] = []
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 and agents else None

    best = None  # (D, mu, mo_solution, consumption)
    prox_snapshot = None
    termination = MAX_ITERATIONS
    message = ""
    k = 0
    try:
        while True:
            k += 1
            timings = {}
            t0 = time.perf_counter()
            delivered = [down.deliver(s) for s in mo.signals(mu, k)]
            if pool is not None:
                answers = list(pool.map(lambda pair: pair[0].handle(pair[1]), zip(agents, delivered)))
            else:
                answers = [agent.handle(sig) for agent, sig in zip(agents, delivered)]
            reports = [up.deliver(r) for r in answers]
            agg_values, cons = mo.collect(reports)
            timings["aggregators"] = 1e3 * (time.perf_counter() - t0)

            t0 = time.perf_counter()
            try:
                mo_sol = mo.sub.solve(mu)
            except InfeasibleSubproblem as exc:
                termination, message = INFEASIBLE, str(exc)
                logger.error("iteration %d: %s", k, exc)
                break
            timings["mo"] = 1e3 * (time.perf_counter() - t0)

            values = [mo_sol.D0, *agg_values]
            d_val = float(sum(values))
            grads = [mo_sol.g0, *cons]
            residual = float(np.max(np.abs(mo_sol.p_DRA - cons), initial=0.0))
            dual.add_iteration_cuts(state, mu, values, grads)
            if config.method == dual.SUBGRADIENT:
                step = "subgradient"
            elif k == 1:
                step = dual.SERIOUS
            else:
                step = dual.ascent_test(state, mu, d_val)
            if best is None or d_val > best[0]:
                best = (d_val, mu.copy(), mo_sol, cons.copy())
            if step == dual.SERIOUS:
                prox_snapshot = (d_val, mu.copy(), mo_sol, cons.copy())

            t0 = time.perf_counter()
            d_ap = eta = None
            stop = False
            if config.method == dual.SUBGRADIENT:
                mu_next = dual.subgradient_step(state, mu, mo_sol.g0 + cons)
                stop = dual.check_termination(state)
            else:
                master = dual.solve_master(state)
                d_ap, eta = master.d_ap, master.eta
                mu_next = master.mu_next
                stop = dual.check_termination(state)
            timings["master"] = 1e3 * (time.perf_counter() - t0)

            row = IterationTrace(k=k, mu=mu.copy(), dual_value=d_val, components=np.array(values),
                                 d_ap=d_ap, eta=eta, step_type=step, balance_residual=residual,
                                 prox_value=state.prox_value if config.method != dual.SUBGRADIENT else best[0],
                                 msgs_down=len(delivered), msgs_up=len(reports), timings_ms=timings)
            trace.append(row)
            if sink is not None:
                sink(row)
            if stop:
                termination = CONVERGED
                break
            if k >= config.max_iters:
                termination = MAX_ITERATIONS
                break
            mu = mu_next
    except dual.MasterError as exc:
        termination, message = INFEASIBLE, str(exc)
        logger.error("master problem failed: %s", exc)
    finally:
        if pool is not None:
            pool.shutdown()

    final = best if config.method == dual.SUBGRADIENT else prox_snapshot
    if final is None:
        return ClearingResult(config.method, mu, None, None, None, None, trace, termination,
                              len(trace), -math.inf, message)
    d_fin, mu_fin, mo_fin, cons_fin = final
    return ClearingResult(method=config.method, mu_star=mu_fin, p_G=mo_fin.p_G, p_DRA=mo_fin.p_DRA,
                          theta=mo_fin.theta, consumption=cons_fin, trace=trace, termination=termination,
                          iterations=len(trace), final_dual=d_fin, message=message)


@dataclass
class CentralizedResult:
    f_star: float
    p_G: np.ndarray
    p_DRA: np.ndarray
    theta: np.ndarray
    schedules: list  # per aggregator: (n_appliances, T) kWh
    mu: np.ndarray  # multipliers of the aggregator-users balance
    qp_status: str


def solve_centralized(scenario, tol: float = 1e-8, max_variables: int = 20_000) -> CentralizedResult:
    """Solve the full market clearing problem as one QP (zero user utilities).

    Appliance variables exist only inside each appliance's window. The
    balance multipliers are returned with the sign of the distributed
    prices, so they are directly comparable to ``ClearingResult.mu_star``.
    """
    inst = _as_instance(scenario)
    net = inst.network
    T = net.horizon
    sub = MoSubproblem(net, inst.p_dra_max, tol=tol)
    base = sub.problem(np.zeros((inst.n_aggregators, T)))
    n0 = base.n
    apps = [(j, app) for j, agg in enumerate(inst.aggregators) for app in agg.appliances()]
    n_app = sum(app.window_length for _, app in apps)
    n = n0 + n_app
    if n > max_variables:
        raise ValueError(f"centralized problem has {n} variables, above the cap of {max_variables}")
    ng_T = net.n_generators * T
    na = inst.n_aggregators

    Q = np.zeros((n, n))
    Q[:n0, :n0] = base.Q
    c = np.concatenate([base.c, np.zeros(n_app)])
    me0 = base.A_eq.shape[0]
    A_eq = np.zeros((me0 + len(apps) + na * T, n))
    b_eq = np.zeros(A_eq.shape[0])
    A_eq[:me0, :n0] = base.A_eq
    b_eq[:me0] = base.b_eq
    lo = np.concatenate([base.lo, np.zeros(n_app)])
    hi = np.concatenate([base.hi, np.zeros(n_app)])
    bal0 = me0 + len(apps)
    for j in range(na):
        for t in range(T):
            A_eq[bal0 + j * T + t, ng_T + j * T + t] = 1.0
    col = n0
    cols = []
    for r, (j, app) in enumerate(apps):
        w = app.window_length
        idx = np.arange(col, col + w)
        cols.append(idx)
        A_eq[me0 + r, idx] = 1.0
        b_eq[me0 + r] = app.energy_total
        lo[idx] = app.p_min
        hi[idx] = app.p_max
        for k, t in enumerate(range(app.t_start - 1, app.t_end)):
            A_eq[bal0 + j * T + t, idx[k]] = -1.0 / KWH_PER_MWH
        col += w
    A_in = np.hstack([base.A_in, np.zeros((base.A_in.shape[0], n_app))])
    sol = qp.solve(qp.QpProblem(Q, c, A_eq, b_eq, A_in, base.b_in, lo, hi), tol=tol)
    if sol.status != qp.OPTIMAL:
        raise InfeasibleSubproblem(f"centralized problem not solved (status {sol.status})", sol)
    x = sol.x
    na_T = na * T
    schedules = [np.zeros((0, T)) for _ in range(na)]
    per_agg: dict[int, list] = {j: [] for j in range(na)}
    for (j, app), idx in zip(apps, cols):
        p = np.zeros(T)
        p[app.t_start - 1:app.t_end] = x[idx]
        per_agg[j].append(p)
    for j in range(na):
        if per_agg[j]:
            schedules[j] = np.array(per_agg[j])
    mu = -sol.y_eq[bal0:bal0 + na_T].reshape(na, T)
    return CentralizedResult(f_star=sol.objective, p_G=x[:ng_T].reshape(-1, T),
                             p_DRA=x[ng_T:ng_T + na_T].reshape(na, T),
                             theta=x[ng_T + na_T:n0].reshape(-1, T), schedules=schedules, mu=mu,
                             qp_status=sol.status)


def evaluate_dual(instance: MarketInstance, mu, tol: float = 1e-8):
    """``(D, components, gradient)`` at ``mu`` without running the loop.

    ``components[0]`` is the MO's value; the gradient is on the multiplier grid.
    """
    mu = np.asarray(mu, dtype=float)
    sub = MoSubproblem(instance.network, instance.p_dra_max, tol=tol)
    mo_sol = sub.solve(mu)
    resp = [aggregator_respond(a, mu[row]) for row, a in enumerate(instance.aggregators)]
    comps = np.array([mo_sol.D0] + [r.dual_value for r in resp])
    grad = mo_sol.g0 + np.array([r.consumption for r in resp]).reshape(mu.shape)
    return float(comps.sum()), comps, grad
