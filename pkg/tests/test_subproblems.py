import numpy as np
import pytest

from drmarket import qp
from drmarket.model import (AggregatorModel, ApplianceSpec, GeneratorSpec, Line, MarketInstance,
                            NetworkModel)
from drmarket.orchestrator import evaluate_dual
from drmarket.subproblems import (InfeasibleSubproblem, MoSubproblem, aggregator_respond, schedule_appliance,
                                  schedule_many, solve_mo)

from conftest import phev, single_bus_instance, two_bus_instance
from oracles import knapsack_lp_bruteforce


def mo_for(inst, mu):
    return solve_mo(inst.network, inst.p_dra_max, mu)


def test_single_bus_balance_pins_generation():
    inst = single_bus_instance(horizon=3, with_aggregator=False)
    sol = solve_mo(inst.network, [], np.zeros((0, 3)))
    np.testing.assert_allclose(sol.p_G, 5.0, atol=1e-9)
    assert sol.D0 == pytest.approx(3 * (0.3 * 25 + 15))
    assert sol.p_DRA.shape == (0, 3)


def test_large_price_buys_up_to_cap():
    inst = two_bus_instance(horizon=2, p_dra_max=10.0)
    sol = mo_for(inst, np.full((1, 2), 1000.0))
    np.testing.assert_allclose(sol.p_DRA, 10.0, atol=1e-8)
    # generation cost of 15 MW minus revenue, per slot
    assert sol.D0 == pytest.approx(2 * (0.1 * 15 ** 2 + 15 - 1000 * 10))


def test_interior_purchase_matches_marginal_cost():
    # mu = 2 * 0.1 * (5 + P) + 1  ->  P = 5 at mu = 3
    inst = two_bus_instance(horizon=2)
    sol = mo_for(inst, np.full((1, 2), 3.0))
    np.testing.assert_allclose(sol.p_DRA, 5.0, atol=1e-7)
    np.testing.assert_allclose(sol.p_G, 10.0, atol=1e-7)
    # flow from bus 1 to bus 2 carries the purchase; reference angle stays zero
    np.testing.assert_allclose(sol.theta[0], 0.0, atol=1e-12)
    np.testing.assert_allclose((sol.theta[0] - sol.theta[1]) / 0.5, 5.0, atol=1e-7)


def test_mo_solution_is_consistent_on_default_network(small_instance):
    rng = np.random.default_rng(0)
    inst = small_instance
    sub = MoSubproblem(inst.network, inst.p_dra_max)
    mu = rng.uniform(-50, 50, size=(4, 24))
    sol = sub.solve(mu)
    assert np.array_equal(sol.g0, -sol.p_DRA)
    assert np.all(sol.g0 <= 1e-9) and np.all(sol.g0 >= -50 - 1e-9)
    np.testing.assert_allclose(sol.theta[0], 0.0, atol=1e-12)
    from drmarket.model import build_admittance, build_incidence
    B = build_admittance(inst.network)
    A_g, A_a = build_incidence(inst.network)
    lhs = A_g @ sol.p_G - A_a @ sol.p_DRA - inst.network.base_load
    np.testing.assert_allclose(lhs, B @ sol.theta, atol=1e-7)
    for i, g in enumerate(inst.network.generators):
        assert np.all(sol.p_G[i] >= g.p_min - 1e-8) and np.all(sol.p_G[i] <= g.p_max + 1e-8)
        ramps = np.diff(np.concatenate([[g.p_initial], sol.p_G[i]]))
        assert np.all(ramps <= g.ramp_up + 1e-8) and np.all(ramps >= -g.ramp_down - 1e-8)
    cost = sum(g.cost(sol.p_G[i]).sum() for i, g in enumerate(inst.network.generators))
    assert sol.D0 == pytest.approx(cost - np.sum(mu * sol.p_DRA), rel=1e-12, abs=1e-9)


def test_ramp_from_initial_output_binds():
    cheap = GeneratorSpec(1, 0.01, 1.0, 0.0, 100.0, ramp_up=3.0, ramp_down=3.0, p_initial=0.0)
    dear = GeneratorSpec(1, 0.01, 50.0, 0.0, 100.0, 100.0, 100.0)
    net = NetworkModel(1, (), (cheap, dear), {}, np.full((1, 3), 8.0), 3)
    sol = solve_mo(net, [], np.zeros((0, 3)))
    np.testing.assert_allclose(sol.p_G[0], [3.0, 6.0, 8.0], atol=1e-7)


def test_infeasible_dispatch_raises():
    gen = GeneratorSpec(1, 0.1, 1.0, 0.0, 4.0, 10.0, 10.0)
    net = NetworkModel(1, (), (gen,), {}, np.full((1, 2), 5.0), 2)
    with pytest.raises(InfeasibleSubproblem):
        solve_mo(net, [], np.zeros((0, 2)))


def test_flow_limit_is_respected():
    gen = GeneratorSpec(1, 0.1, 1.0, 0.0, 100.0, 100.0, 100.0)
    net = NetworkModel(2, (Line(1, 2, 0.5, f_min=-2.0, f_max=2.0),), (gen,), {1: 2},
                       np.zeros((2, 1)), 1)
    sol = solve_mo(net, [10.0], np.array([[1000.0]]))
    assert sol.p_DRA[0, 0] == pytest.approx(2.0, abs=1e-7)


# -- appliance scheduling ---------------------------------------------------

def test_knapsack_example():
    p, cost = schedule_appliance(ApplianceSpec(4.0, 0.0, 2.0, 1, 3), [3.0, 1.0, 2.0])
    np.testing.assert_array_equal(p, [0.0, 2.0, 2.0])
    assert cost == 6.0
    assert knapsack_lp_bruteforce([3.0, 1.0, 2.0], 4.0, 0.0, 2.0) == pytest.approx(6.0)


def test_knapsack_ties_fill_earliest():
    p, _ = schedule_appliance(ApplianceSpec(4.0, 0.0, 2.0, 1, 3), [5.0, 5.0, 5.0])
    np.testing.assert_array_equal(p, [2.0, 2.0, 0.0])


def test_knapsack_forced_saturation():
    app = ApplianceSpec(6 * 2.1, 0.0, 2.1, 2, 7)
    p, _ = schedule_appliance(app, np.random.default_rng(1).normal(size=10))
    np.testing.assert_allclose(p[1:7], 2.1)
    assert p[0] == 0 and np.all(p[7:] == 0)


def test_knapsack_respects_minimum_and_window():
    app = ApplianceSpec(5.0, 0.5, 2.0, 3, 6)
    prices = np.array([-9, -9, 4, 1, 3, 2, -9, -9], dtype=float)
    p, cost = schedule_appliance(app, prices)
    np.testing.assert_allclose(p, [0, 0, 0.5, 2.0, 0.5, 2.0, 0, 0])
    assert p.sum() == pytest.approx(5.0, abs=1e-15)
    assert cost == pytest.approx(knapsack_lp_bruteforce(prices[2:6], 5.0, 0.5, 2.0))


def test_knapsack_against_lp():
    rng = np.random.default_rng(3)
    for _ in range(100):
        n = int(rng.integers(1, 7))
        pmin = float(rng.choice([0.0, rng.uniform(0, 1)]))
        pmax = pmin + float(rng.uniform(0.1, 3))
        E = float(rng.uniform(n * pmin, n * pmax))
        prices = rng.integers(-3, 4, size=n).astype(float)  # integer prices make ties common
        p, cost = schedule_appliance(ApplianceSpec(E, pmin, pmax, 1, n), prices)
        lp = qp.solve(qp.QpProblem(None, prices, A_eq=np.ones((1, n)), b_eq=[E], lo=pmin, hi=pmax))
        assert cost == pytest.approx(lp.objective, abs=1e-9 * (1 + abs(lp.objective)))
        assert cost == pytest.approx(knapsack_lp_bruteforce(prices, E, pmin, pmax), abs=1e-9)
        assert abs(p.sum() - E) <= 8 * np.finfo(float).eps * max(E, 1)
        assert np.sum(p[(p > pmin + 1e-12) & (p < pmax - 1e-12)] > 0) <= 1


def test_vectorized_schedules_match_scalar():
    rng = np.random.default_rng(4)
    apps = []
    for _ in range(50):
        ts = int(rng.integers(1, 6))
        te = int(rng.integers(ts, 12))
        n = te - ts + 1
        pmin = float(rng.uniform(0, 0.5))
        pmax = pmin + float(rng.uniform(0.5, 2))
        apps.append(ApplianceSpec(float(rng.uniform(n * pmin, n * pmax)), pmin, pmax, ts, te))
    prices = rng.integers(0, 5, size=12).astype(float)
    batch = schedule_many(apps, prices)
    for row, app in zip(batch, apps):
        np.testing.assert_array_equal(row, schedule_appliance(app, prices)[0])


# -- aggregator ---------------------------------------------------------------

def test_zero_prices_zero_value():
    agg = AggregatorModel(1, 1, 50.0, users=((phev(11, 2.3, 1, 6),), (phev(10, 2.1, 1, 7),)))
    resp = aggregator_respond(agg, np.zeros(24))
    assert resp.dual_value == 0.0
    expected = (np.array([2.3, 2.3, 2.3, 2.3, 1.8, 0] + [0] * 18)
                + np.array([2.1, 2.1, 2.1, 2.1, 1.6, 0, 0] + [0] * 17)) / 1000
    np.testing.assert_allclose(resp.consumption, expected, atol=1e-15)
    assert np.all(resp.consumption >= 0)


def test_identical_users_double_the_response():
    prices = np.random.default_rng(2).uniform(0, 30, size=24)
    one = aggregator_respond(AggregatorModel(1, 1, 50.0, users=((phev(),),)), prices)
    two = aggregator_respond(AggregatorModel(1, 1, 50.0, users=((phev(),), (phev(),))), prices)
    assert two.dual_value == pytest.approx(2 * one.dual_value, rel=1e-14)
    np.testing.assert_allclose(two.consumption, 2 * one.consumption, rtol=1e-14)


def test_aggregator_value_sums_user_optima():
    rng = np.random.default_rng(6)
    users = tuple((phev(float(rng.choice([10, 11, 12])), float(rng.choice([2.1, 2.3, 2.5])), 1,
                        int(rng.choice([6, 7]))),) for _ in range(5))
    prices = rng.uniform(-20, 20, size=24)
    resp = aggregator_respond(AggregatorModel(1, 1, 50.0, users=users), prices, keep_schedules=True)
    total = 0.0
    for (app,) in users:
        n = app.window_length
        lp = qp.solve(qp.QpProblem(None, prices[:n], A_eq=np.ones((1, n)), b_eq=[app.energy_total],
                                   lo=app.p_min, hi=app.p_max))
        total += lp.objective / 1000.0
    assert resp.dual_value == pytest.approx(total, abs=1e-9)
    assert resp.dual_value == pytest.approx(prices @ resp.consumption, rel=1e-12)
    assert resp.schedules.shape == (5, 24)


# -- properties of the dual components ------------------------------------------

def components_and_grads(inst, mu):
    sol = solve_mo(inst.network, inst.p_dra_max, mu)
    resp = [aggregator_respond(a, mu[j]) for j, a in enumerate(inst.aggregators)]
    vals = [sol.D0] + [r.dual_value for r in resp]
    grads = [sol.g0]
    for j, r in enumerate(resp):
        g = np.zeros_like(mu)
        g[j] = r.consumption
        grads.append(g)
    return vals, grads


def test_subgradient_inequality_each_component(tiny_instance):
    rng = np.random.default_rng(8)
    shape = (4, 12)
    for _ in range(10):
        mu, mu2 = rng.uniform(-50, 50, size=shape), rng.uniform(-50, 50, size=shape)
        v1, g1 = components_and_grads(tiny_instance, mu)
        v2, _ = components_and_grads(tiny_instance, mu2)
        for j in range(5):
            assert v2[j] <= v1[j] + np.sum((mu2 - mu) * g1[j]) + 1e-6


def test_dual_components_are_concave(tiny_instance):
    rng = np.random.default_rng(9)
    for _ in range(5):
        a, b = rng.uniform(-50, 50, size=(4, 12)), rng.uniform(-50, 50, size=(4, 12))
        lam = float(rng.uniform())
        va, _ = components_and_grads(tiny_instance, a)
        vb, _ = components_and_grads(tiny_instance, b)
        vm, _ = components_and_grads(tiny_instance, lam * a + (1 - lam) * b)
        for j in range(5):
            assert vm[j] >= lam * va[j] + (1 - lam) * vb[j] - 1e-6


def test_evaluate_dual_gradient_is_balance_mismatch(tiny_instance):
    mu = np.full((4, 12), 12.5)
    D, comps, grad = evaluate_dual(tiny_instance, mu)
    assert D == pytest.approx(comps.sum())
    sol = solve_mo(tiny_instance.network, tiny_instance.p_dra_max, mu)
    cons = np.array([aggregator_respond(a, mu[j]).consumption for j, a in enumerate(tiny_instance.aggregators)])
    np.testing.assert_allclose(grad, cons - sol.p_DRA, atol=1e-12)
