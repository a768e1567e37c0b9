"""MATPOWER-style case file reader/writer.

Supports the column subset the power flow needs: baseMVA, bus (type, Pd, Qd,
Gs, Bs, Vm, baseKV), gen (bus, Pg, Qg, Qmax, Qmin, Vg, status, Pmax, Pmin) and
branch (f, t, r, x, b, ratio, angle, status). Everything is converted to
per-unit on baseMVA while parsing; physical MW/MVAr appear only in the file.
"""

from __future__ import annotations

import math
import re
from pathlib import Path

from .network import Branch, Bus, BusKind, Generator, Load, PowerNetwork, validate

__all__ = [
    "CaseError",
    "CaseSyntaxError",
    "CaseSemanticError",
    "parse_case",
    "parse_case_file",
    "serialize_case",
]

# minimum numeric columns needed per table row (indices used below)
_MIN_COLS = {"bus": 10, "gen": 10, "branch": 11}

_ASSIGN_RE = re.compile(r"^\s*\w+\.(baseMVA|bus|gen|branch)\s*=\s*(.*)$")


class CaseError(ValueError):
    """Problem in a case file; ``line`` is 1-based where known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class CaseSyntaxError(CaseError):
    pass


class CaseSemanticError(CaseError):
    pass


def _scan_tables(text: str) -> tuple[float, dict[str, list[tuple[list[float], int]]]]:
    """Extract baseMVA and the numeric rows (with line numbers) of each table."""
    base_mva: float | None = None
    tables: dict[str, list[tuple[list[float], int]]] = {}
    current: str | None = None
    pending: list[str] = []  # row text accumulated across lines

    def flush_row(segment: str, lineno: int) -> None:
        tokens = segment.split()
        if not tokens:
            return
        try:
            row = [float(tok) for tok in tokens]
        except ValueError as exc:
            raise CaseSyntaxError(f"non-numeric value in {current} table: {exc}", lineno) from None
        if len(row) < _MIN_COLS[current]:
            raise CaseSyntaxError(
                f"{current} row has {len(row)} columns, need at least {_MIN_COLS[current]}", lineno
            )
        tables[current].append((row, lineno))

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("%", 1)[0]
        if current is None:
            m = _ASSIGN_RE.match(line)
            if not m:
                continue
            name, rest = m.group(1), m.group(2)
            if name == "baseMVA":
                value = rest.split(";", 1)[0].strip()
                try:
                    base_mva = float(value)
                except ValueError:
                    raise CaseSyntaxError(f"bad baseMVA value {value!r}", lineno) from None
                continue
            if name in tables:
                raise CaseSyntaxError(f"duplicate {name} table", lineno)
            bracket = rest.find("[")
            if bracket < 0:
                raise CaseSyntaxError(f"expected '[' after {name} =", lineno)
            tables[name] = []
            current = name
            line = rest[bracket + 1 :]
        # inside a table: rows end at ';', table ends at ']'
        closed = False
        if "]" in line:
            line, _, _ = line.partition("]")
            closed = True
        parts = line.split(";")
        for part in parts[:-1]:
            flush_row(" ".join(pending) + " " + part, lineno)
            pending = []
        if parts[-1].strip():
            pending.append(parts[-1])
        if closed:
            if pending:
                flush_row(" ".join(pending), lineno)
                pending = []
            current = None

    if current is not None:
        raise CaseSyntaxError(f"unterminated {current} table", len(text.splitlines()))
    if base_mva is None:
        raise CaseSyntaxError("missing baseMVA")
    for name in ("bus", "gen", "branch"):
        if name not in tables:
            raise CaseSyntaxError(f"missing {name} table")
    return base_mva, tables


def parse_case(text: str) -> PowerNetwork:
    """Parse MATPOWER-style case text into a validated :class:`PowerNetwork`.

    Raises :class:`CaseSyntaxError` (with a line number) on malformed input and
    :class:`CaseSemanticError` when the parsed network violates an invariant
    (no slack bus, dangling references, ...). Out-of-service generator and
    branch rows are retained with ``in_service=False``; multiple in-service
    generators on one bus are aggregated by summing injections and limits.
    """
    base_mva, tables = _scan_tables(text)
    if base_mva <= 0:
        raise CaseSemanticError(f"baseMVA must be positive, got {base_mva}")

    kinds = {1: BusKind.PQ, 2: BusKind.PV, 3: BusKind.SLACK}
    bus_rows: dict[int, list[float]] = {}
    buses: list[Bus] = []
    loads: list[Load] = []
    for row, lineno in tables["bus"]:
        bus_id = int(row[0])
        kind_code = int(row[1])
        if kind_code not in kinds:
            raise CaseSemanticError(f"bus {bus_id}: unsupported bus type {kind_code}", lineno)
        if bus_id in bus_rows:
            raise CaseSemanticError(f"bus {bus_id}: duplicate bus id", lineno)
        bus_rows[bus_id] = row
        if row[2] != 0.0 or row[3] != 0.0:
            loads.append(Load(bus_id=bus_id, p=row[2] / base_mva, q=row[3] / base_mva))

    # one aggregated in-service generator per bus; out-of-service rows retained
    agg: dict[int, dict[str, float]] = {}
    agg_order: list[int] = []
    inactive: list[Generator] = []
    setpoints: dict[int, float] = {}
    for row, lineno in tables["gen"]:
        bus_id = int(row[0])
        values = {
            "p": row[1] / base_mva,
            "q": row[2] / base_mva,
            "q_max": row[3] / base_mva,
            "q_min": row[4] / base_mva,
            "p_max": row[8] / base_mva,
            "p_min": row[9] / base_mva,
        }
        if row[7] <= 0:
            inactive.append(Generator(bus_id=bus_id, in_service=False, **values))
            continue
        if bus_id not in agg:
            agg[bus_id] = values
            agg_order.append(bus_id)
        else:
            for key, val in values.items():
                agg[bus_id][key] += val
        if row[5] > 0 and bus_id not in setpoints:
            setpoints[bus_id] = row[5]

    generators = [Generator(bus_id=b, in_service=True, **agg[b]) for b in agg_order]
    generators.extend(inactive)

    for bus_id, row in bus_rows.items():
        kind = kinds[int(row[1])]
        setpoint = None
        if kind in (BusKind.PV, BusKind.SLACK):
            setpoint = setpoints.get(bus_id, row[7] if row[7] > 0 else None)
        buses.append(
            Bus(
                id=bus_id,
                kind=kind,
                base_kv=row[9],
                voltage_setpoint=setpoint,
                gs=row[4] / base_mva,
                bs=row[5] / base_mva,
            )
        )

    branches = []
    for row, lineno in tables["branch"]:
        branches.append(
            Branch(
                from_bus=int(row[0]),
                to_bus=int(row[1]),
                r=row[2],
                x=row[3],
                b_charging=row[4],
                tap_ratio=row[8] if row[8] != 0.0 else 1.0,
                phase_shift=math.radians(row[9]),
                in_service=row[10] > 0,
            )
        )

    net = PowerNetwork(
        base_mva=base_mva,
        buses=tuple(buses),
        generators=tuple(generators),
        loads=tuple(loads),
        branches=tuple(branches),
    )
    violations = validate(net)
    if violations:
        raise CaseSemanticError("; ".join(violations))
    return net


def parse_case_file(path: str | Path) -> PowerNetwork:
    return parse_case(Path(path).read_text())


def _file_value(internal: float, to_file, from_file) -> float:
    """File-side float whose re-parse reproduces ``internal`` exactly.

    Unit conversions (pu*base, rad->deg) are not bit-invertible in general, so
    nudge the emitted value by ulps until the inverse conversion round-trips.
    """
    emitted = to_file(internal)
    if from_file(emitted) == internal:
        return emitted
    for direction in (math.inf, -math.inf):
        candidate = emitted
        for _ in range(4):
            candidate = math.nextafter(candidate, direction)
            if from_file(candidate) == internal:
                return candidate
    return emitted


def serialize_case(net: PowerNetwork, name: str = "case") -> str:
    """Render the network back to MATPOWER-style case text.

    Only the supported column subset is meaningful; remaining columns are
    filled with conventional placeholders. parse_case(serialize_case(net))
    reproduces ``net`` exactly.
    """
    base = net.base_mva

    def mw(pu: float) -> float:
        return _file_value(pu, lambda v: v * base, lambda v: v / base)

    def deg(rad: float) -> float:
        return _file_value(rad, math.degrees, math.radians)

    load_at = {ld.bus_id: ld for ld in net.loads}
    lines = [
        f"function mpc = {name}",
        "mpc.version = '2';",
        f"mpc.baseMVA = {base!r};",
        "",
        "%% bus data",
        "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin",
        "mpc.bus = [",
    ]
    for bus in net.buses:
        load = load_at.get(bus.id)
        pd = mw(load.p) if load else 0.0
        qd = mw(load.q) if load else 0.0
        vm = bus.voltage_setpoint if bus.voltage_setpoint is not None else 1.0
        cols = [bus.id, bus.kind.value, pd, qd, mw(bus.gs), mw(bus.bs), 1, vm, 0.0,
                bus.base_kv, 1, 1.1, 0.9]
        lines.append("\t" + "\t".join(repr(c) if isinstance(c, float) else str(c) for c in cols) + ";")
    lines += [
        "];",
        "",
        "%% generator data",
        "%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin",
        "mpc.gen = [",
    ]
    for gen in net.generators:
        setpoint = net.bus(gen.bus_id).voltage_setpoint if gen.bus_id in net.bus_index else None
        vg = setpoint if setpoint is not None else 1.0
        cols = [gen.bus_id, mw(gen.p), mw(gen.q), mw(gen.q_max), mw(gen.q_min), vg,
                base, 1 if gen.in_service else 0, mw(gen.p_max), mw(gen.p_min)]
        lines.append("\t" + "\t".join(repr(c) if isinstance(c, float) else str(c) for c in cols) + ";")
    lines += [
        "];",
        "",
        "%% branch data",
        "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax",
        "mpc.branch = [",
    ]
    for br in net.branches:
        cols = [br.from_bus, br.to_bus, br.r, br.x, br.b_charging, 0.0, 0.0, 0.0,
                br.tap_ratio, deg(br.phase_shift), 1 if br.in_service else 0, -360.0, 360.0]
        lines.append("\t" + "\t".join(repr(c) if isinstance(c, float) else str(c) for c in cols) + ";")
    lines += ["];", ""]
    return "\n".join(lines)
