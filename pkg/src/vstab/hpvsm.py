"""Hybrid voltage stability index: Jacobian perturbation, fictitious
measurements, per-bus Thevenin impedance and VSI, plus the classic windowed
least-squares Thevenin baseline used for comparison.

The hybrid method perturbs the injections at the load buses, maps the
perturbation through one Jacobian solve into a fictitious voltage profile,
and reads the Thevenin impedance seen from each load bus out of the pair of
operating points (measured, fictitious). The ratio |Z_th|/|Z_load| is the
stability index; it approaches 1 at maximum power transfer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .acpf import JacobianMatrix, LoadDirection
from .netmodel import PQ, PV, SLACK
from .telemetry import EstimatedState, MeasurementWindow

INDETERMINATE_CURRENT = 1e-12
DEFAULT_COND_LIMIT = 1e8
VOLTAGE_ROLE_TOL = 0.005


def index_roles(model, vm: np.ndarray, tol: float = VOLTAGE_ROLE_TOL) -> np.ndarray:
    """Role assignment for the index Jacobian, read off the measured voltages.

    A generator bus keeps its PV role while its voltage magnitude still sits
    at the setpoint; once the measured magnitude has drifted away by more than
    `tol` the machine has evidently lost voltage control (limit reached), so
    the bus counts as PQ. This needs no knowledge of the internal switching
    history of the solver, only setpoints and measurements.
    """
    roles = np.array([b.btype for b in model.buses])
    for g in model.generators:
        if not g.status:
            continue
        i = model.bus_index(g.bus)
        if roles[i] == PV and abs(vm[i] - g.vg) > tol:
            roles[i] = PQ
    return roles


class SingularJacobianError(RuntimeError):
    """The Jacobian cannot be factorized; the operating point is at or past
    the loadability limit."""


@dataclass(frozen=True)
class PerturbationResult:
    d_va: np.ndarray       # angle deltas per bus, rad (zero at fixed buses)
    d_vm: np.ndarray       # magnitude deltas per bus, p.u.
    v_f: np.ndarray        # fictitious complex voltage profile
    i_f: np.ndarray        # fictitious injection currents, Ybus @ v_f
    dp: np.ndarray         # applied injection perturbation, p.u.
    dq: np.ndarray
    alpha: float
    roles: np.ndarray      # role set of the Jacobian the solve used


def default_alpha(state: EstimatedState, direction: LoadDirection) -> float:
    """Scale such that the applied ||dQ|| is 1% of the present total reactive
    load; falls back to the active direction when the grid carries no Q load."""
    nq = float(np.linalg.norm(direction.dq))
    if nq > 0 and state.q_total > 0:
        return 0.01 * state.q_total / nq
    np_ = float(np.linalg.norm(direction.dp))
    if np_ > 0:
        return 0.01 * float(np.sum(state.pd)) / np_ if np.sum(state.pd) > 0 else 0.01
    return 0.01


def perturb(jac: JacobianMatrix, state: EstimatedState,
            direction: LoadDirection, alpha: float | None = None,
            recovery: str = "polar") -> PerturbationResult:
    """Solve J [d_delta; d_vm] = [dP; dQ] for a load-step perturbation and
    assemble the fictitious operating point.

    A load increase of alpha * direction lowers the net injections, so the
    right-hand side carries a minus sign. `recovery` selects how the state
    deltas become a fictitious phasor: "polar" adds them in magnitude/angle
    coordinates, "linear" applies the first-order rectangular equivalent
    (which makes the resulting index exactly independent of alpha).
    """
    if recovery not in ("polar", "linear"):
        raise ValueError(f"recovery must be 'polar' or 'linear', got {recovery!r}")
    if alpha is None:
        alpha = default_alpha(state, direction)
    if alpha <= 0:
        raise ValueError(f"perturbation scale must be positive, got {alpha}")

    rhs = np.zeros(jac.n)
    for ri, (kind, i) in enumerate(jac.rows):
        if kind == "P":
            rhs[ri] = -alpha * direction.dp[i]
        else:
            rhs[ri] = -alpha * direction.dq[i]

    try:
        dx = np.linalg.solve(jac.matrix, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularJacobianError(f"Jacobian is singular: {exc}") from None
    if not np.all(np.isfinite(dx)):
        raise SingularJacobianError("Jacobian solve produced non-finite deltas")

    n = len(jac.v)
    d_va = np.zeros(n)
    d_vm = np.zeros(n)
    for ci, (kind, i) in enumerate(jac.cols):
        if kind == "va":
            d_va[i] = dx[ci]
        else:
            d_vm[i] = dx[ci]

    vm = np.abs(jac.v)
    va = np.angle(jac.v)
    if recovery == "polar":
        v_f = (vm + d_vm) * np.exp(1j * (va + d_va))
    else:
        v_f = jac.v + (d_vm + 1j * vm * d_va) * np.exp(1j * va)
    i_f = jac.ybus @ v_f
    return PerturbationResult(
        d_va=d_va, d_vm=d_vm, v_f=v_f, i_f=i_f,
        dp=alpha * direction.dp, dq=alpha * direction.dq,
        alpha=float(alpha), roles=jac.roles,
    )


@dataclass(frozen=True)
class VsiVector:
    """Per-bus index values; NaN where not applicable (generator buses and
    zero-injection buses)."""

    values: np.ndarray
    z_th: np.ndarray            # complex, NaN where not applicable
    z_load: np.ndarray
    evaluated: tuple[int, ...]      # bus positions the index was computed at
    indeterminate: tuple[int, ...] = ()  # buses the perturbation did not move

    def worst(self) -> tuple[int, float]:
        """(bus position, value) of the largest index."""
        i = int(np.nanargmax(self.values))
        return i, float(self.values[i])


def _rereference(v: np.ndarray, slack: int) -> np.ndarray:
    return v * np.exp(-1j * np.angle(v[slack]))


def compute_vsi(state: EstimatedState, pert: PerturbationResult) -> VsiVector:
    """Per-bus Thevenin impedance and VSI from the measured/fictitious pair.

    Z_th[i] = (V_f[i] - V_se[i]) / (I_se[i] - I_f[i]) with load currents
    (positive out of the network), Z_load[i] = V_se[i] / I_se[i],
    VSI[i] = |Z_th[i]| / |Z_load[i]|.
    """
    roles = pert.roles
    n = len(roles)
    slack = int(np.flatnonzero(roles == SLACK)[0])
    # eligibility by static bus type: generator buses are skipped even after
    # a PV-to-PQ switch, since the index targets composite loads
    btype = state.btype if state.btype is not None else roles

    v_se = _rereference(state.v, slack)
    rot_se = np.exp(-1j * np.angle(state.v[slack]))
    i_load_se = -state.i_inj * rot_se
    rot_f = np.exp(-1j * np.angle(pert.v_f[slack]))
    v_f = pert.v_f * rot_f
    i_load_f = -pert.i_f * rot_f

    values = np.full(n, np.nan)
    z_th = np.full(n, np.nan, dtype=complex)
    z_load = np.full(n, np.nan, dtype=complex)
    evaluated = []
    indeterminate = []
    for i in range(n):
        if btype[i] != PQ or (state.pd[i] == 0 and state.qd[i] == 0):
            continue
        di = i_load_se[i] - i_load_f[i]
        if abs(di) < INDETERMINATE_CURRENT or abs(i_load_se[i]) < INDETERMINATE_CURRENT:
            indeterminate.append(i)
            continue
        z_th[i] = (v_f[i] - v_se[i]) / di
        z_load[i] = v_se[i] / i_load_se[i]
        values[i] = abs(z_th[i]) / abs(z_load[i])
        evaluated.append(i)
    return VsiVector(values=values, z_th=z_th, z_load=z_load,
                     evaluated=tuple(evaluated), indeterminate=tuple(indeterminate))


@dataclass(frozen=True)
class TheveninEstimate:
    bus: int                # bus position
    z_th: complex
    e_th: complex
    z_load: complex
    vsi: float
    condition: float
    ill_conditioned: bool


def thevenin_baseline(window: MeasurementWindow, bus: int,
                      slack: int = 0,
                      cond_limit: float = DEFAULT_COND_LIMIT) -> TheveninEstimate:
    """Windowed least-squares Thevenin fit at one bus.

    Fits E_th = V + Z_th * I over the window in real unknowns (u, w, r, v)
    with E_th = u + jw, Z_th = r + jv. A near-constant operating condition
    makes the system rank deficient; that is reported through the condition
    number instead of a hard failure.
    """
    if len(window) < 2:
        raise ValueError("Thevenin window needs at least 2 snapshots")
    rows = []
    rhs = []
    for est in window:
        v = _rereference(est.v, slack)[bus]
        i = -est.i_inj[bus] * np.exp(-1j * np.angle(est.v[slack]))
        rows.append([1.0, 0.0, -i.real, i.imag])
        rows.append([0.0, 1.0, -i.imag, -i.real])
        rhs.append(v.real)
        rhs.append(v.imag)
    a = np.array(rows)
    b = np.array(rhs)
    condition = float(np.linalg.cond(a))
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    u, w, r, x = sol
    e_th = complex(u, w)
    z_th = complex(r, x)

    latest = window.latest
    v_l = _rereference(latest.v, slack)[bus]
    i_l = -latest.i_inj[bus] * np.exp(-1j * np.angle(latest.v[slack]))
    z_load = v_l / i_l if abs(i_l) > INDETERMINATE_CURRENT else complex(np.inf)
    vsi = abs(z_th) / abs(z_load) if np.isfinite(z_load.real) else 0.0
    return TheveninEstimate(
        bus=bus, z_th=z_th, e_th=e_th, z_load=z_load, vsi=float(vsi),
        condition=condition, ill_conditioned=condition > cond_limit,
    )
