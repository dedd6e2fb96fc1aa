import numpy as np
import pytest

from drmarket.model import (AggregatorModel, ApplianceSpec, GeneratorSpec, Line, MarketInstance,
                            NetworkModel)
from drmarket.scenario import generate_default


def single_bus_instance(horizon=3, users=(), base_load=5.0, p_dra_max=50.0, a=0.3, b=3.0,
                        p_min=2.4, p_max=60.0, ramp=50.0, with_aggregator=True):
    gen = GeneratorSpec(bus=1, a=a, b=b, p_min=p_min, p_max=p_max, ramp_up=ramp, ramp_down=ramp)
    aggs = {1: 1} if with_aggregator else {}
    net = NetworkModel(n_buses=1, lines=(), generators=(gen,), aggregator_buses=aggs,
                       base_load=np.full((1, horizon), base_load), horizon=horizon)
    agg = (AggregatorModel(id=1, bus=1, p_dra_max=p_dra_max, users=tuple(users)),) if with_aggregator else ()
    return MarketInstance(net, agg)


def two_bus_instance(horizon=2, users=(), p_dra_max=10.0):
    gen = GeneratorSpec(bus=1, a=0.1, b=1.0, p_min=0.0, p_max=100.0, ramp_up=100.0, ramp_down=100.0)
    net = NetworkModel(n_buses=2, lines=(Line(1, 2, 0.5),), generators=(gen,), aggregator_buses={1: 2},
                       base_load=np.array([[5.0] * horizon, [0.0] * horizon]), horizon=horizon)
    return MarketInstance(net, (AggregatorModel(id=1, bus=2, p_dra_max=p_dra_max, users=tuple(users)),))


def phev(E=11.0, pmax=2.3, start=1, end=6, pmin=0.0):
    return ApplianceSpec(energy_total=E, p_min=pmin, p_max=pmax, t_start=start, t_end=end)


@pytest.fixture(scope="session")
def small_scenario():
    return generate_default(seed=42, users_per_aggregator=20)


@pytest.fixture(scope="session")
def small_instance(small_scenario):
    return small_scenario.materialize()


@pytest.fixture(scope="session")
def tiny_instance():
    """Default network with 2 users per aggregator and a 12-slot horizon."""
    return generate_default(seed=7, users_per_aggregator=2, horizon=12).materialize()
