import numpy as np
import pytest

from solvlearn import case_path
from solvlearn.matpower import parse_case_file
from solvlearn.network import Branch, Bus, BusKind, Generator, Load, PowerNetwork


@pytest.fixture(scope="session")
def case39_path() -> str:
    return case_path("case39")


@pytest.fixture(scope="session")
def case39(case39_path):
    return parse_case_file(case39_path)


@pytest.fixture(scope="session")
def two_bus_path() -> str:
    return case_path("two_bus")


@pytest.fixture(scope="session")
def two_bus(two_bus_path):
    return parse_case_file(two_bus_path)


def make_two_bus(load_p: float = 0.3, load_q: float = 0.0, x: float = 0.1) -> PowerNetwork:
    """Slack feeding one PQ load over a lossless line, all per-unit."""
    return PowerNetwork(
        base_mva=100.0,
        buses=(
            Bus(id=1, kind=BusKind.SLACK, base_kv=345.0, voltage_setpoint=1.0),
            Bus(id=2, kind=BusKind.PQ, base_kv=345.0),
        ),
        generators=(
            Generator(bus_id=1, p=load_p, q=0.0, q_min=-99.0, q_max=99.0, p_min=-99.0, p_max=99.0),
        ),
        loads=(Load(bus_id=2, p=load_p, q=load_q),),
        branches=(Branch(from_bus=1, to_bus=2, r=0.0, x=x),),
    )


def two_bus_v2(p: float, x: float = 0.1, q: float = 0.0) -> float | None:
    """High-voltage root of the two-bus quartic; None when no real solution.

    For a load (p, q) behind a lossless reactance x with a 1.0 pu slack:
    V^4 + (2*q*x - 1)*V^2 + x^2*(p^2 + q^2) = 0.
    """
    b = 2.0 * q * x - 1.0
    disc = b * b - 4.0 * x * x * (p * p + q * q)
    if disc < 0:
        return None
    v2 = (-b + np.sqrt(disc)) / 2.0
    return float(np.sqrt(v2))
