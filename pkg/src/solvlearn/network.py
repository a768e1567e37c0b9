"""Power network model and bus admittance matrix assembly.

All quantities are per-unit on the system MVA base; the MATPOWER reader in
:mod:`solvlearn.matpower` converts physical units at the file boundary.
Networks are immutable once constructed (tuples of frozen dataclasses), so a
single instance can be shared read-only across parallel workers.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np

__all__ = [
    "BusKind",
    "Bus",
    "Generator",
    "Load",
    "Branch",
    "PowerNetwork",
    "build_ybus",
    "validate",
]


class BusKind(Enum):
    """Bus types, numbered as in the MATPOWER bus-type column."""

    PQ = 1
    PV = 2
    SLACK = 3


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind
    base_kv: float = 0.0
    voltage_setpoint: float | None = None  # pu; meaningful for PV/slack buses
    gs: float = 0.0  # shunt conductance, pu on system base
    bs: float = 0.0  # shunt susceptance, pu


@dataclass(frozen=True)
class Generator:
    """Dispatch and limits of the (aggregated) generation at one bus, pu."""

    bus_id: int
    p: float
    q: float
    q_min: float
    q_max: float
    p_min: float
    p_max: float
    in_service: bool = True


@dataclass(frozen=True)
class Load:
    bus_id: int
    p: float
    q: float


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float = 0.0  # total line charging, pu
    tap_ratio: float = 1.0  # off-nominal tap on the from side, 1 = none
    phase_shift: float = 0.0  # radians
    in_service: bool = True


@dataclass(frozen=True)
class PowerNetwork:
    base_mva: float
    buses: tuple[Bus, ...]
    generators: tuple[Generator, ...]
    loads: tuple[Load, ...]
    branches: tuple[Branch, ...]

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @cached_property
    def bus_index(self) -> dict[int, int]:
        """Map external bus id -> position in ``buses``."""
        return {bus.id: i for i, bus in enumerate(self.buses)}

    @cached_property
    def slack_bus(self) -> Bus:
        slack = [b for b in self.buses if b.kind is BusKind.SLACK]
        if len(slack) != 1:
            raise ValueError(f"network has {len(slack)} slack buses, expected exactly 1")
        return slack[0]

    def bus(self, bus_id: int) -> Bus:
        return self.buses[self.bus_index[bus_id]]

    def generators_at(self, bus_id: int, in_service_only: bool = True) -> tuple[Generator, ...]:
        return tuple(
            g
            for g in self.generators
            if g.bus_id == bus_id and (g.in_service or not in_service_only)
        )

    def loads_at(self, bus_id: int) -> tuple[Load, ...]:
        return tuple(ld for ld in self.loads if ld.bus_id == bus_id)


def build_ybus(net: PowerNetwork) -> np.ndarray:
    """Assemble the dense complex bus admittance matrix, pu.

    Standard pi model: each in-service branch contributes its series admittance
    corrected for the from-side tap, half the line charging at each end, and
    bus shunts land on the diagonal. Out-of-service branches are skipped.
    """
    n = net.n_buses
    idx = net.bus_index
    y = np.zeros((n, n), dtype=complex)
    for br in net.branches:
        if not br.in_service:
            continue
        f, t = idx[br.from_bus], idx[br.to_bus]
        y_series = 1.0 / complex(br.r, br.x)
        b_half = 0.5j * br.b_charging
        tap = br.tap_ratio * np.exp(1j * br.phase_shift)
        y[f, f] += (y_series + b_half) / (tap * np.conj(tap))
        y[f, t] += -y_series / np.conj(tap)
        y[t, f] += -y_series / tap
        y[t, t] += y_series + b_half
    for bus in net.buses:
        k = idx[bus.id]
        y[k, k] += complex(bus.gs, bus.bs)
    return y


def validate(net: PowerNetwork) -> list[str]:
    """Check the network invariants; returns one message per violation.

    Violations are data, not faults: an empty list means the network is valid.
    """
    issues: list[str] = []
    if net.base_mva <= 0:
        issues.append(f"base MVA must be positive, got {net.base_mva}")

    counts = Counter(b.id for b in net.buses)
    for bus_id, n in sorted(counts.items()):
        if n > 1:
            issues.append(f"bus {bus_id}: duplicate id ({n} rows)")
    known = set(counts)

    slack_ids = [b.id for b in net.buses if b.kind is BusKind.SLACK]
    if not slack_ids:
        issues.append("no slack bus")
    elif len(slack_ids) > 1:
        issues.append("multiple slack buses: " + ", ".join(str(i) for i in slack_ids))

    for bus in net.buses:
        if bus.voltage_setpoint is not None and bus.voltage_setpoint <= 0:
            issues.append(f"bus {bus.id}: voltage setpoint must be positive")

    for gen in net.generators:
        if gen.bus_id not in known:
            issues.append(f"generator at bus {gen.bus_id}: bus does not exist")
        if gen.p_min > gen.p_max:
            issues.append(f"generator at bus {gen.bus_id}: p_min > p_max")
        if gen.q_min > gen.q_max:
            issues.append(f"generator at bus {gen.bus_id}: q_min > q_max")

    for load in net.loads:
        if load.bus_id not in known:
            issues.append(f"load at bus {load.bus_id}: bus does not exist")

    for br in net.branches:
        tag = f"branch {br.from_bus}-{br.to_bus}"
        for end in (br.from_bus, br.to_bus):
            if end not in known:
                issues.append(f"{tag}: bus {end} does not exist")
        if br.from_bus == br.to_bus:
            issues.append(f"{tag}: from and to bus coincide")
        if br.r == 0.0 and br.x == 0.0:
            issues.append(f"{tag}: zero series impedance")

    if len(slack_ids) == 1:
        slack_id = slack_ids[0]
        if not any(g.bus_id == slack_id and g.in_service for g in net.generators):
            issues.append(f"slack bus {slack_id} has no in-service generator")

    return issues
