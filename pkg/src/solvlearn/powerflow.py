"""Newton-Raphson AC power flow and the solvability labeling oracle.

A sample is labeled solvable exactly when the polar Newton iteration converges
from the configured start (flat, or warmed from the base operating point)
within the mismatch tolerance and iteration cap. That operational definition
mirrors how commercial solvers certify solvability and is knowingly not a
mathematical existence proof.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .network import BusKind, PowerNetwork, build_ybus
from .sampling import FeatureMatrix, InjectionSample

__all__ = [
    "PfConfig",
    "PfSolution",
    "SolvabilityLabel",
    "apply_injections",
    "solve_newton",
    "label",
    "label_batch",
]

DIVERGENCE_LIMIT = 1e6  # pu mismatch beyond which the iteration is abandoned
MAX_QLIMIT_PASSES = 10
_BACKTRACK_HALVINGS = 4  # step halvings before accepting a non-improving step


@dataclass(frozen=True)
class PfConfig:
    tol: float = 1e-8  # pu infinity-norm mismatch tolerance
    max_iter: int = 20
    flat_start: bool = True
    enforce_q_limits: bool = True

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass(frozen=True, eq=False)
class PfSolution:
    v_mag: np.ndarray  # pu, one per bus in network order
    v_ang: np.ndarray  # radians
    iterations: int  # Newton steps, cumulative over Q-limit passes
    max_mismatch: float  # pu, at the returned voltages
    converged: bool


@dataclass(frozen=True)
class SolvabilityLabel:
    """One-hot pair (non-solvable, solvable)."""

    one_hot: tuple[int, int]

    def __post_init__(self):
        if sorted(self.one_hot) != [0, 1]:
            raise ValueError(f"not a valid one-hot pair: {self.one_hot}")

    @classmethod
    def from_solvable(cls, solvable: bool) -> "SolvabilityLabel":
        return cls((0, 1) if solvable else (1, 0))

    @property
    def is_solvable(self) -> bool:
        return self.one_hot == (0, 1)

    @property
    def class_index(self) -> int:
        """0 = non-solvable, 1 = solvable."""
        return int(self.is_solvable)


def apply_injections(net: PowerNetwork, sample: InjectionSample) -> PowerNetwork:
    """Return a copy of ``net`` with the sampled injections written in.

    Sampled generator reactive power is pinned (q_min = q_max = sample) so the
    dispatched value survives the solve; unsampled quantities keep their base
    values and the slack generator is never touched.
    """
    spec = sample.spec
    values = np.asarray(sample.values, dtype=np.float64).reshape(-1)
    if values.shape[0] != spec.dimension:
        raise ValueError(f"sample has {values.shape[0]} values, spec expects {spec.dimension}")

    base = net.base_mva
    new_p: dict[tuple[str, int], float] = {}
    new_q: dict[tuple[str, int], float] = {}
    for feat, value in zip(spec.features, values):
        target = new_p if feat.quantity == "p" else new_q
        target[(feat.kind, feat.bus_id)] = value / base

    slack_id = net.slack_bus.id
    touched_gens = {b for k, b in set(new_p) | set(new_q) if k == "gen"}
    if slack_id in touched_gens:
        raise ValueError(f"sampling spec touches the slack generator at bus {slack_id}")

    generators = []
    seen: set[int] = set()
    for gen in net.generators:
        key = ("gen", gen.bus_id)
        if gen.in_service and (key in new_p or key in new_q):
            if gen.bus_id in seen:
                raise ValueError(
                    f"multiple in-service generators at bus {gen.bus_id}; aggregate before sampling"
                )
            seen.add(gen.bus_id)
            fields = {}
            if key in new_p:
                fields["p"] = new_p[key]
            if key in new_q:
                q = new_q[key]
                fields.update(q=q, q_min=q, q_max=q)
            gen = replace(gen, **fields)
        generators.append(gen)
    missing = touched_gens - seen
    if missing:
        raise ValueError(f"no in-service generator at sampled bus(es) {sorted(missing)}")

    loads = []
    seen_loads: set[int] = set()
    for load in net.loads:
        key = ("load", load.bus_id)
        if key in new_p or key in new_q:
            seen_loads.add(load.bus_id)
            load = replace(
                load,
                p=new_p.get(key, load.p),
                q=new_q.get(key, load.q),
            )
        loads.append(load)
    missing_loads = {b for k, b in set(new_p) | set(new_q) if k == "load"} - seen_loads
    if missing_loads:
        raise ValueError(f"no load at sampled bus(es) {sorted(missing_loads)}")

    return replace(net, generators=tuple(generators), loads=tuple(loads))


def _jacobian(ybus: np.ndarray, v: np.ndarray, pvpq: np.ndarray, pq: np.ndarray) -> np.ndarray:
    """Real 2x2-block power flow Jacobian from the complex derivative identities."""
    i_bus = ybus @ v
    v_norm = v / np.abs(v)
    ds_dva = 1j * v[:, None] * np.conj(np.diag(i_bus) - ybus * v[None, :])
    ds_dvm = v[:, None] * np.conj(ybus * v_norm[None, :]) + np.diag(np.conj(i_bus) * v_norm)
    return np.block(
        [
            [ds_dva[np.ix_(pvpq, pvpq)].real, ds_dvm[np.ix_(pvpq, pq)].real],
            [ds_dva[np.ix_(pq, pvpq)].imag, ds_dvm[np.ix_(pq, pq)].imag],
        ]
    )


def _mismatch(ybus, v, s_spec, pvpq, pq) -> np.ndarray:
    ds = v * np.conj(ybus @ v) - s_spec
    return np.concatenate([ds[pvpq].real, ds[pq].imag])


def _newton(ybus, s_spec, vm, va, is_pv, is_pq, tol, max_iter):
    """Inner Newton iteration on fixed bus classification.

    Returns (vm, va, iterations, max_mismatch, converged). Singular Jacobians,
    non-finite values and mismatch blow-ups all end the iteration as
    non-converged; callers treat that as a label, not a fault.
    """
    pvpq = np.flatnonzero(is_pv | is_pq)
    pq = np.flatnonzero(is_pq)
    n_ang = pvpq.size
    v = vm * np.exp(1j * va)
    f = _mismatch(ybus, v, s_spec, pvpq, pq)
    norm = float(np.max(np.abs(f))) if f.size else 0.0
    iterations = 0
    while True:
        if not np.isfinite(norm) or norm > DIVERGENCE_LIMIT:
            return vm, va, iterations, norm, False
        if norm <= tol:
            return vm, va, iterations, norm, True
        if iterations >= max_iter:
            return vm, va, iterations, norm, False
        try:
            dx = np.linalg.solve(_jacobian(ybus, v, pvpq, pq), -f)
        except np.linalg.LinAlgError:
            return vm, va, iterations, norm, False
        if not np.all(np.isfinite(dx)):
            return vm, va, iterations, norm, False
        # backtracking step control: halve the step while it worsens the
        # residual (full Newton overshoots badly on weakly anchored systems)
        step = 1.0
        for _ in range(_BACKTRACK_HALVINGS + 1):
            va_new = va.copy()
            vm_new = vm.copy()
            va_new[pvpq] += step * dx[:n_ang]
            vm_new[pq] += step * dx[n_ang:]
            v_new = vm_new * np.exp(1j * va_new)
            vm_new, va_new = np.abs(v_new), np.angle(v_new)  # wrap negative Vm
            f_new = _mismatch(ybus, v_new, s_spec, pvpq, pq)
            norm_new = float(np.max(np.abs(f_new))) if f_new.size else 0.0
            if np.isfinite(norm_new) and norm_new < norm:
                break
            step *= 0.5
        vm, va, v, f, norm = vm_new, va_new, v_new, f_new, norm_new
        iterations += 1


def solve_newton(
    net: PowerNetwork,
    cfg: PfConfig = PfConfig(),
    start: tuple[np.ndarray, np.ndarray] | None = None,
) -> PfSolution:
    """Polar Newton-Raphson solve of the AC power flow.

    Active power is balanced at PV and PQ buses and reactive power at PQ
    buses. Starting point is flat (V=1, theta=0) except at voltage setpoints;
    when ``cfg.flat_start`` is off, ``start`` supplies (v_mag, v_ang) to warm
    the iteration, as solvers warm-start from a solved operating point.
    With ``enforce_q_limits``, PV buses whose required generator reactive
    power leaves its limits are switched to PQ pinned at the violated limit
    after each converged pass (monotone, at most ``MAX_QLIMIT_PASSES``);
    generators with q_min == q_max are treated as fixed-Q from the start.
    """
    n = net.n_buses
    idx = net.bus_index
    ybus = build_ybus(net)
    slack_pos = idx[net.slack_bus.id]

    p_inj = np.zeros(n)
    q_inj = np.zeros(n)
    q_gen_min = np.full(n, -np.inf)
    q_gen_max = np.full(n, np.inf)
    has_gen = np.zeros(n, dtype=bool)
    for gen in net.generators:
        if not gen.in_service:
            continue
        k = idx[gen.bus_id]
        p_inj[k] += gen.p
        q_inj[k] += gen.q
        if has_gen[k]:
            q_gen_min[k] += gen.q_min
            q_gen_max[k] += gen.q_max
        else:
            q_gen_min[k] = gen.q_min
            q_gen_max[k] = gen.q_max
        has_gen[k] = True
    q_load = np.zeros(n)
    for load in net.loads:
        k = idx[load.bus_id]
        p_inj[k] -= load.p
        q_load[k] += load.q
    q_inj -= q_load

    kinds = np.array([bus.kind.value for bus in net.buses])
    vm_set = np.array(
        [bus.voltage_setpoint if bus.voltage_setpoint is not None else 1.0 for bus in net.buses]
    )

    # PV buses regulate only while backed by a generator with reactive slack;
    # pinned limits (q_min == q_max) degenerate to fixed-Q operation.
    is_pv = (kinds == BusKind.PV.value) & has_gen & (q_gen_min < q_gen_max)
    fixed_q = (kinds == BusKind.PV.value) & has_gen & ~(q_gen_min < q_gen_max)
    q_inj[fixed_q] = q_gen_min[fixed_q] - q_load[fixed_q]
    is_pq = np.ones(n, dtype=bool)
    is_pq[slack_pos] = False
    is_pq &= ~is_pv

    if not cfg.flat_start and start is not None:
        vm = np.array(start[0], dtype=np.float64)
        va = np.array(start[1], dtype=np.float64)
    else:
        vm = np.ones(n)
        va = np.zeros(n)
        vm[slack_pos] = vm_set[slack_pos]
        vm[fixed_q] = vm_set[fixed_q]  # setpoint-carrying buses start there even when pinned
    vm[slack_pos] = vm_set[slack_pos]
    va[slack_pos] = 0.0
    vm[is_pv] = vm_set[is_pv]

    iterations = 0
    for _ in range(MAX_QLIMIT_PASSES):
        s_spec = p_inj + 1j * q_inj
        vm, va, steps, norm, converged = _newton(
            ybus, s_spec, vm, va, is_pv, is_pq, cfg.tol, cfg.max_iter
        )
        iterations += steps
        if not converged or not cfg.enforce_q_limits or not is_pv.any():
            break
        # reactive power each regulating generator must supply at the solution
        v = vm * np.exp(1j * va)
        q_needed = (v * np.conj(ybus @ v)).imag + q_load
        hi = is_pv & (q_needed > q_gen_max)
        lo = is_pv & (q_needed < q_gen_min)
        if not (hi.any() or lo.any()):
            break
        q_inj[hi] = q_gen_max[hi] - q_load[hi]
        q_inj[lo] = q_gen_min[lo] - q_load[lo]
        is_pv &= ~(hi | lo)
        is_pq |= hi | lo

    return PfSolution(
        v_mag=vm, v_ang=va, iterations=iterations, max_mismatch=norm, converged=converged
    )


@lru_cache(maxsize=8)
def base_operating_point(net: PowerNetwork, cfg: PfConfig) -> tuple[np.ndarray, np.ndarray] | None:
    """Solved voltages of the unsampled network, used to warm-start samples.

    Solved once per (network, config) from flat start with the network's own
    regulation; None when even the base case does not converge.
    """
    base_cfg = replace(cfg, flat_start=True)
    solution = solve_newton(net, base_cfg)
    if not solution.converged:
        return None
    return solution.v_mag, solution.v_ang


def _start_for(net: PowerNetwork, cfg: PfConfig):
    if cfg.flat_start:
        return None
    return base_operating_point(net, cfg)


def label(net: PowerNetwork, sample: InjectionSample, cfg: PfConfig = PfConfig()) -> SolvabilityLabel:
    """Solvable exactly when Newton converges for the injected sample.

    With ``cfg.flat_start`` off, each sample solve warm-starts from the base
    network's solved operating point.
    """
    start = _start_for(net, cfg)
    solution = solve_newton(apply_injections(net, sample), cfg, start=start)
    return SolvabilityLabel.from_solvable(solution.converged)


def label_batch(
    net: PowerNetwork, samples: FeatureMatrix, cfg: PfConfig = PfConfig()
) -> list[SolvabilityLabel]:
    """Label every row of the pool, preserving row order."""
    start = _start_for(net, cfg)
    labels = []
    for i in range(samples.n):
        try:
            injected = apply_injections(net, samples.sample(i))
        except ValueError as exc:
            raise ValueError(f"row {i}: {exc}") from exc
        solution = solve_newton(injected, cfg, start=start)
        labels.append(SolvabilityLabel.from_solvable(solution.converged))
    return labels
