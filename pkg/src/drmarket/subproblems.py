"""Lagrangian subproblems for a fixed multiplier field ``mu``.

The market operator (MO) solves a DC-OPF over generator outputs, aggregator
purchases and bus angles with the aggregator price ``mu`` as a revenue term.
Each aggregator sums the closed-form fractional-knapsack schedules of its
users. Multipliers are indexed ``mu[j, t]`` with ``j`` following aggregator id
order and ``t`` the 0-based slot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import qp
from .model import (KWH_PER_MWH, AggregatorModel, ApplianceSpec, NetworkModel,
                    build_admittance, build_flow_matrix, build_incidence)


class InfeasibleSubproblem(RuntimeError):
    """The MO subproblem has no feasible dispatch."""

    def __init__(self, message: str, solution: qp.QpSolution | None = None):
        super().__init__(message)
        self.solution = solution


@dataclass
class MoSolution:
    p_G: np.ndarray
    p_DRA: np.ndarray
    theta: np.ndarray
    D0: float
    g0: np.ndarray
    qp_status: str = qp.OPTIMAL
    kkt_residual: float = 0.0


@dataclass
class AggregatorResponse:
    """Aggregated answer of one aggregator to its price signal.

    ``consumption`` is in MW per slot; ``schedules`` (kWh, users' appliances by
    slot) stays on the aggregator side.
    """

    dual_value: float
    consumption: np.ndarray
    schedules: np.ndarray | None = field(default=None, repr=False)


class MoSubproblem:
    """The MO's DC-OPF with all slots coupled through ramp limits.

    Constant matrices are assembled once; ``solve`` only rewrites the linear
    cost for each multiplier field.
    """

    def __init__(self, net: NetworkModel, p_dra_max, tol: float = 1e-8):
        self.net = net
        self.tol = tol
        T, nb, ng, na = net.horizon, net.n_buses, net.n_generators, net.n_aggregators
        self.p_dra_max = np.broadcast_to(np.asarray(p_dra_max, dtype=float), (na,)).copy()
        self.shape = (na, T)
        B = build_admittance(net)
        H = build_flow_matrix(net)
        A_g, A_a = build_incidence(net)
        self._sizes = (ng * T, na * T, nb * T)
        n = sum(self._sizes)
        og, oa, ot = 0, ng * T, (ng + na) * T

        def ig(i, t):
            return og + i * T + t

        def ia(j, t):
            return oa + j * T + t

        def it(b, t):
            return ot + b * T + t

        Q = np.zeros((n, n))
        c_gen = np.zeros(n)
        for i, g in enumerate(net.generators):
            for t in range(T):
                Q[ig(i, t), ig(i, t)] = 2.0 * g.a
                c_gen[ig(i, t)] = g.b

        A_eq = np.zeros((nb * T + T, n))
        b_eq = np.zeros(nb * T + T)
        row = 0
        for t in range(T):
            for m in range(nb):
                for i in range(ng):
                    A_eq[row, ig(i, t)] = A_g[m, i]
                for j in range(na):
                    A_eq[row, ia(j, t)] = -A_a[m, j]
                for k in range(nb):
                    A_eq[row, it(k, t)] = -B[m, k]
                b_eq[row] = net.base_load[m, t]
                row += 1
        for t in range(T):
            A_eq[row, it(net.reference_bus - 1, t)] = 1.0
            row += 1

        rows, rhs = [], []
        for i, g in enumerate(net.generators):
            for t in range(T):
                r = np.zeros(n)
                r[ig(i, t)] = 1.0
                prev = g.p_initial
                if t > 0:
                    r[ig(i, t - 1)] = -1.0
                    prev = 0.0
                rows.append(r)
                rhs.append(g.ramp_up + prev)
                rows.append(-r)
                rhs.append(g.ramp_down - prev)
        f_min, f_max = net.flow_limits
        for q in range(net.n_lines):
            for t in range(T):
                r = np.zeros(n)
                for b in range(nb):
                    r[it(b, t)] = H[q, b]
                if np.isfinite(f_max[q]):
                    rows.append(r)
                    rhs.append(f_max[q])
                if np.isfinite(f_min[q]):
                    rows.append(-r)
                    rhs.append(-f_min[q])
        A_in = np.array(rows).reshape(len(rows), n)
        b_in = np.array(rhs, dtype=float)

        lo = np.full(n, -np.inf)
        hi = np.full(n, np.inf)
        for i, g in enumerate(net.generators):
            lo[og + i * T: og + (i + 1) * T] = g.p_min
            hi[og + i * T: og + (i + 1) * T] = g.p_max
        for j in range(na):
            lo[oa + j * T: oa + (j + 1) * T] = 0.0
            hi[oa + j * T: oa + (j + 1) * T] = self.p_dra_max[j]

        self._Q, self._c_gen = Q, c_gen
        self._A_eq, self._b_eq, self._A_in, self._b_in = A_eq, b_eq, A_in, b_in
        self._lo, self._hi = lo, hi

    @property
    def n_variables(self) -> int:
        return sum(self._sizes)

    def problem(self, mu) -> qp.QpProblem:
        mu = np.asarray(mu, dtype=float).reshape(self.shape)
        c = self._c_gen.copy()
        ng_T, na_T, _ = self._sizes
        c[ng_T:ng_T + na_T] = -mu.ravel()
        return qp.QpProblem(self._Q, c, self._A_eq, self._b_eq, self._A_in, self._b_in,
                            self._lo, self._hi)

    def solve(self, mu) -> MoSolution:
        prob = self.problem(mu)
        sol = qp.solve(prob, tol=self.tol)
        if sol.status != qp.OPTIMAL:
            raise InfeasibleSubproblem(
                f"MO subproblem not solved (status {sol.status}, KKT residual "
                f"{sol.kkt_residual:.3e}); check generation limits, ramps and base load", sol)
        T = self.net.horizon
        ng_T, na_T, nb_T = self._sizes
        x = sol.x
        p_G = x[:ng_T].reshape(-1, T)
        p_DRA = x[ng_T:ng_T + na_T].reshape(self.shape)
        theta = x[ng_T + na_T:].reshape(-1, T)
        return MoSolution(p_G=p_G, p_DRA=p_DRA, theta=theta, D0=sol.objective,
                          g0=-p_DRA.copy(), qp_status=sol.status, kkt_residual=sol.kkt_residual)


def solve_mo(net: NetworkModel, p_dra_max, mu, tol: float = 1e-8) -> MoSolution:
    """One-shot MO subproblem; see ``MoSubproblem`` for repeated solves."""
    return MoSubproblem(net, p_dra_max, tol).solve(mu)


def _conserve(row: np.ndarray, marginal: int, energy: float, p_min: float, p_max: float) -> None:
    """Adjust ``row[marginal]`` in place so that ``math.fsum(row) == energy``.

    A few ulp steps usually reach it. When the exact sum can only land on a
    rounding tie the loop stops one ulp away from ``energy``.
    """
    others = math.fsum(row) - row[marginal]
    row[marginal] = min(max(energy - others, p_min), p_max)
    last = 0
    for _ in range(64):
        total = math.fsum(row)
        if total == energy:
            return
        direction = 1 if total < energy else -1
        if direction == -last:
            return
        nudged = np.nextafter(row[marginal], direction * np.inf)
        if not p_min <= nudged <= p_max:
            return
        row[marginal] = nudged
        last = direction


def schedule_appliance(app: ApplianceSpec, prices) -> tuple[np.ndarray, float]:
    """Cheapest schedule of one appliance under per-slot ``prices`` ($/MWh).

    Every slot of the window first gets ``p_min``; the remaining energy goes to
    the cheapest slots (ties broken by earliest slot) up to ``p_max``, leaving
    at most one fractional slot. Returns the kWh schedule over the whole
    horizon and its cost ``prices @ p`` (price times kWh).
    """
    prices = np.asarray(prices, dtype=float)
    p = np.zeros(prices.size)
    lo, hi = app.t_start - 1, app.t_end
    window = prices[lo:hi]
    order = np.argsort(window, kind="stable")
    n = window.size
    cap = app.p_max - app.p_min
    rest = app.energy_total - n * app.p_min
    fill = np.clip(rest - np.arange(n) * cap, 0.0, cap)
    sched = np.full(n, float(app.p_min))
    sched[order] += fill
    if n:
        _conserve(sched, order[min(int(np.sum(fill >= cap)), n - 1)], app.energy_total, app.p_min, app.p_max)
    p[lo:hi] = sched
    cost = float(prices @ p)
    return p, cost


def _group_arrays(appliances):
    groups: dict[tuple[int, int], list[int]] = {}
    for k, app in enumerate(appliances):
        groups.setdefault((app.t_start, app.t_end), []).append(k)
    return groups


def schedule_many(appliances, prices) -> np.ndarray:
    """Vectorized ``schedule_appliance`` for appliances sharing one price vector.

    Returns a ``(len(appliances), T)`` kWh array.
    """
    prices = np.asarray(prices, dtype=float)
    T = prices.size
    out = np.zeros((len(appliances), T))
    for (ts, te), idx in sorted(_group_arrays(appliances).items()):
        apps = [appliances[k] for k in idx]
        E = np.array([a.energy_total for a in apps])
        pmin = np.array([a.p_min for a in apps])
        pmax = np.array([a.p_max for a in apps])
        n = te - ts + 1
        order = np.argsort(prices[ts - 1:te], kind="stable")
        cap = pmax - pmin
        rest = E - n * pmin
        fill = np.clip(rest[:, None] - np.arange(n)[None, :] * cap[:, None], 0.0, cap[:, None])
        block = np.repeat(pmin[:, None], n, axis=1)
        block[:, order] += fill
        marginal = order[np.minimum(np.sum(fill >= cap[:, None], axis=1), n - 1)]
        for r in range(len(apps)):
            _conserve(block[r], marginal[r], E[r], pmin[r], pmax[r])
        out[np.asarray(idx)[:, None], np.arange(ts - 1, te)[None, :]] = block
    return out


def aggregator_respond(agg: AggregatorModel, mu_j, keep_schedules: bool = False) -> AggregatorResponse:
    """Aggregate response of aggregator ``agg`` to its own prices ``mu_j``.

    ``consumption`` is the users' total in MW (kWh per 1-hour slot / 1000) and
    ``dual_value`` the summed minimal user costs, equal to ``mu_j @ consumption``
    for zero utilities.
    """
    mu_j = np.asarray(mu_j, dtype=float)
    apps = list(agg.appliances())
    if apps:
        sched = schedule_many(apps, mu_j)
        consumption = sched.sum(axis=0) / KWH_PER_MWH
    else:
        sched = np.zeros((0, mu_j.size))
        consumption = np.zeros(mu_j.size)
    return AggregatorResponse(dual_value=float(mu_j @ consumption), consumption=consumption,
                              schedules=sched if keep_schedules else None)
