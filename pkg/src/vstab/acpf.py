"""Newton-Raphson AC power flow with generator Q-limit enforcement.

Polar formulation; the mismatch function uses the injection convention
(generation positive, load negative). PV buses whose generator exceeds a
reactive limit are re-typed PQ with Q fixed at the limit; back-switching is
enabled. Non-convergence is reported on the returned state, not raised,
because load ramps treat it as "beyond collapse".
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from . import kernels
from .netmodel import (
    PQ, PV, SLACK, AdmittanceMatrix, NetworkModel, build_ybus, connectivity_check,
)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 30
Q_LIMIT_EPS = 1e-7


class PowerFlowError(RuntimeError):
    pass


@dataclass(frozen=True)
class LoadDirection:
    """Per-bus participation factors for load growth (p.u. per unit multiplier)."""

    dp: np.ndarray
    dq: np.ndarray

    def __post_init__(self):
        if not (np.any(self.dp) or np.any(self.dq)):
            raise ValueError("load direction has no nonzero entry")
        if not (np.all(np.isfinite(self.dp)) and np.all(np.isfinite(self.dq))):
            raise ValueError("load direction has non-finite entries")

    @classmethod
    def proportional(cls, model: NetworkModel) -> "LoadDirection":
        """Default: proportional to base-case load at constant power factor,
        at load (PQ) buses only. Loads tapped at generator buses are treated
        as station service and held constant along the ramp."""
        dp = np.array([b.pd if b.btype == PQ else 0.0 for b in model.buses])
        dq = np.array([b.qd if b.btype == PQ else 0.0 for b in model.buses])
        return cls(dp=dp, dq=dq)

    def total_apparent(self) -> float:
        return float(np.sum(np.abs(self.dp + 1j * self.dq)))


def scale_loading(model: NetworkModel, k: float,
                  direction: LoadDirection | None = None) -> NetworkModel:
    """Scale loads along the growth direction; generator setpoints stay fixed
    and the slack machine absorbs the added demand and losses."""
    if k <= 0:
        raise ValueError(f"loading multiplier must be positive, got {k}")
    if k == 1.0:
        return model
    direction = direction or LoadDirection.proportional(model)
    buses = tuple(
        dc_replace(b,
                   pd=b.pd + (k - 1.0) * direction.dp[i],
                   qd=b.qd + (k - 1.0) * direction.dq[i])
        for i, b in enumerate(model.buses)
    )
    return dc_replace(model, buses=buses)


@dataclass(frozen=True)
class OperatingState:
    model: NetworkModel            # the (scaled) model this state solves
    vm: np.ndarray                 # p.u.
    va: np.ndarray                 # rad
    roles: np.ndarray              # effective bus type after PV/PQ switching
    p_inj: np.ndarray              # net injection, p.u.
    q_inj: np.ndarray
    qg: np.ndarray                 # per model.generators entry, p.u.
    converged: bool
    iterations: int
    max_mismatch: float
    k: float = 1.0
    ybus: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def v(self) -> np.ndarray:
        return self.vm * np.exp(1j * self.va)

    def generator_qg(self, bus_id: int) -> float:
        for gi, g in enumerate(self.model.generators):
            if g.bus == bus_id and g.status:
                return float(self.qg[gi])
        raise KeyError(f"no in-service generator at bus {bus_id}")


def _spec_injections(model: NetworkModel, roles: np.ndarray,
                     q_fixed: dict[int, float]) -> tuple[np.ndarray, np.ndarray]:
    n = model.n_bus
    p = np.array([-b.pd for b in model.buses])
    q = np.array([-b.qd for b in model.buses])
    for g in model.generators:
        if not g.status:
            continue
        i = model.bus_index(g.bus)
        p[i] += g.pg
        if i in q_fixed:
            q[i] += q_fixed[i]
    return p, q


def mismatch(ybus: np.ndarray, vm: np.ndarray, va: np.ndarray,
             p_spec: np.ndarray, q_spec: np.ndarray,
             roles: np.ndarray) -> np.ndarray:
    """Stacked [P; Q] mismatch for the reduced equation set (calc minus spec)."""
    v = vm * np.exp(1j * va)
    s = v * np.conj(ybus @ v)
    pvpq = np.flatnonzero(roles != SLACK)
    pq = np.flatnonzero(roles == PQ)
    return np.concatenate([(s.real - p_spec)[pvpq], (s.imag - q_spec)[pq]])


def _newton(ybus, vm, va, p_spec, q_spec, roles, tol, max_iter):
    pvpq = np.flatnonzero(roles != SLACK)
    pq = np.flatnonzero(roles == PQ)
    n_pv = len(pvpq)
    it = 0
    f = mismatch(ybus, vm, va, p_spec, q_spec, roles)
    norm = np.max(np.abs(f)) if f.size else 0.0
    while norm > tol and it < max_iter:
        v = vm * np.exp(1j * va)
        ds_dva, ds_dvm = kernels.dSbus_dV(ybus, v)
        j = np.block([
            [ds_dva.real[np.ix_(pvpq, pvpq)], ds_dvm.real[np.ix_(pvpq, pq)]],
            [ds_dva.imag[np.ix_(pq, pvpq)], ds_dvm.imag[np.ix_(pq, pq)]],
        ])
        try:
            dx = np.linalg.solve(j, f)
        except np.linalg.LinAlgError:
            return vm, va, it, np.inf, False
        if not np.all(np.isfinite(dx)):
            return vm, va, it, np.inf, False
        va = va.copy()
        vm = vm.copy()
        va[pvpq] -= dx[:n_pv]
        vm[pq] -= dx[n_pv:]
        if np.any(vm <= 0):
            return vm, va, it, np.inf, False
        it += 1
        f = mismatch(ybus, vm, va, p_spec, q_spec, roles)
        norm = np.max(np.abs(f))
    return vm, va, it, norm, norm <= tol


def solve_power_flow(model: NetworkModel, k: float = 1.0,
                     enforce_q_limits: bool = True,
                     direction: LoadDirection | None = None,
                     warm_start: OperatingState | None = None,
                     tol: float = DEFAULT_TOL,
                     max_iter: int = DEFAULT_MAX_ITER,
                     max_switch_rounds: int = 20) -> OperatingState:
    scaled = scale_loading(model, k, direction)
    connectivity_check(scaled)
    adm = build_ybus(scaled)
    ybus = adm.ybus
    n = scaled.n_bus

    roles = np.array([b.btype for b in scaled.buses])
    vset = np.ones(n)
    for g in scaled.generators:
        if g.status:
            vset[scaled.bus_index(g.bus)] = g.vg

    if warm_start is not None and warm_start.vm.shape == (n,):
        vm = warm_start.vm.copy()
        va = warm_start.va.copy()
    else:
        vm = np.ones(n)
        va = np.zeros(n)
    fixed = roles != PQ
    vm[fixed] = vset[fixed]

    q_fixed: dict[int, float] = {}       # bus index -> fixed generator Q
    at_limit: dict[int, str] = {}        # bus index -> "max" | "min"
    gen_bus_idx = {scaled.bus_index(g.bus): gi
                   for gi, g in enumerate(scaled.generators) if g.status}

    total_iters = 0
    for _ in range(max_switch_rounds + 1):
        p_spec, q_spec = _spec_injections(scaled, roles, q_fixed)
        vm, va, it, norm, ok = _newton(ybus, vm, va, p_spec, q_spec, roles,
                                       tol, max_iter)
        total_iters += it
        if not ok:
            break
        if not enforce_q_limits:
            break
        v = vm * np.exp(1j * va)
        s = v * np.conj(ybus @ v)
        switched = False
        for i, gi in gen_bus_idx.items():
            g = scaled.generators[gi]
            if i == scaled.slack_index:
                continue
            if i not in at_limit:
                qg_i = s.imag[i] + scaled.buses[i].qd
                if qg_i > g.qmax + Q_LIMIT_EPS:
                    at_limit[i] = "max"
                    q_fixed[i] = g.qmax
                    roles[i] = PQ
                    switched = True
                elif qg_i < g.qmin - Q_LIMIT_EPS:
                    at_limit[i] = "min"
                    q_fixed[i] = g.qmin
                    roles[i] = PQ
                    switched = True
            else:
                # back-switch when the bus voltage recovers past the setpoint
                side = at_limit[i]
                if (side == "max" and vm[i] > vset[i] + Q_LIMIT_EPS) or \
                   (side == "min" and vm[i] < vset[i] - Q_LIMIT_EPS):
                    del at_limit[i], q_fixed[i]
                    roles[i] = PV
                    vm[i] = vset[i]
                    switched = True
        if not switched:
            break

    v = vm * np.exp(1j * va)
    s = v * np.conj(ybus @ v)
    qg = np.zeros(len(scaled.generators))
    for gi, g in enumerate(scaled.generators):
        if g.status:
            i = scaled.bus_index(g.bus)
            qg[gi] = s.imag[i] + scaled.buses[i].qd
    return OperatingState(
        model=scaled, vm=vm, va=va, roles=roles,
        p_inj=s.real, q_inj=s.imag, qg=qg,
        converged=bool(ok), iterations=total_iters, max_mismatch=float(norm),
        k=k, ybus=ybus,
    )


# -- explicit Jacobian ----------------------------------------------------


@dataclass(frozen=True)
class JacobianMatrix:
    """Real power-flow Jacobian plus bijective index maps to equations/variables.

    rows: ("P", bus_index) then ("Q", bus_index); cols: ("va", i) then ("vm", i)
    for the reduced (non-slack / PQ) sets, unless rebuilt by augmentation.
    """

    matrix: np.ndarray
    rows: tuple[tuple[str, int], ...]
    cols: tuple[tuple[str, int], ...]
    v: np.ndarray                   # complex voltages the partials are evaluated at
    ybus: np.ndarray
    roles: np.ndarray

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def row_index(self, kind: str, bus: int) -> int:
        return self.rows.index((kind, bus))

    def entry_map(self) -> dict[tuple, float]:
        """(row_key, col_key) -> value; ordering-independent comparison aid."""
        out = {}
        for ri, rk in enumerate(self.rows):
            for ci, ck in enumerate(self.cols):
                out[(rk, ck)] = self.matrix[ri, ci]
        return out


def build_jacobian(model: NetworkModel, state: OperatingState | None,
                   roles: np.ndarray | None = None,
                   v: np.ndarray | None = None,
                   ybus: np.ndarray | None = None) -> JacobianMatrix:
    """Analytic Jacobian at the state's voltages for its current role assignment.

    `roles` / `v` / `ybus` overrides support re-typed role sets and
    estimator-filtered voltage profiles; with all three given, `state` may be
    None (measurement-driven evaluation without a solved power flow).
    """
    roles = state.roles if roles is None else roles
    v = state.v if v is None else v
    if ybus is None:
        ybus = state.ybus if state is not None and state.ybus is not None \
            else build_ybus(model).ybus
    ds_dva, ds_dvm = kernels.dSbus_dV(ybus, v)
    pvpq = np.flatnonzero(roles != SLACK)
    pq = np.flatnonzero(roles == PQ)
    matrix = np.block([
        [ds_dva.real[np.ix_(pvpq, pvpq)], ds_dvm.real[np.ix_(pvpq, pq)]],
        [ds_dva.imag[np.ix_(pq, pvpq)], ds_dvm.imag[np.ix_(pq, pq)]],
    ])
    rows = tuple([("P", int(i)) for i in pvpq] + [("Q", int(i)) for i in pq])
    cols = tuple([("va", int(i)) for i in pvpq] + [("vm", int(i)) for i in pq])
    return JacobianMatrix(matrix=matrix, rows=rows, cols=cols,
                          v=np.asarray(v, dtype=complex), ybus=ybus, roles=roles.copy())
