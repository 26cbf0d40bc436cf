"""Reactive-reserve anticipation and the weighted stability index.

Each generator's reactive power reserve RPR_i = Qmax_i - Qg_i is tracked as a
quadratic function of the total reactive load Q_T over a sliding measurement
window. The realistic root of the quadratic, Q_cr, predicts the total load at
which the reserve exhausts. Generators whose Q_cr falls inside a narrow band
above the smallest predicted value form the critical list; re-typing their
buses as PQ in an augmented Jacobian yields the anticipated index VSI_u, and
the reserve-weighted combination WVSI = w1*VSI + w2*VSI_u trades the present
index off against the anticipated one as reserves melt.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace as dc_replace

import numpy as np

from . import kernels
from .acpf import JacobianMatrix, LoadDirection, OperatingState, build_jacobian
from .hpvsm import compute_vsi, index_roles, perturb
from .netmodel import PQ, PV, NetworkModel
from .telemetry import EstimatedState, MeasurementWindow

LINEAR_COEFF_EPS = 1e-9
EXHAUSTED_RPR = 1e-9
DEFAULT_BAND = 0.01


class DegenerateWindowError(ValueError):
    """The window does not span enough distinct loading levels for a fit."""


@dataclass(frozen=True)
class RprModel:
    """Quadratic reserve model RPR(Q_T) = a*Q_T^2 + b*Q_T + c for one generator."""

    gen: int                 # generator position in the model's generator table
    bus: int                 # bus id the generator connects to
    a: float
    b: float
    c: float
    residual: float          # rms misfit over the window
    q_t: float               # latest total reactive load the fit was anchored at
    qcr: float | None = None  # predicted exhaustion level, absent if no realistic root

    def evaluate(self, q_t: float) -> float:
        return self.a * q_t * q_t + self.b * q_t + self.c


def fit_rpr_model(window: MeasurementWindow, gen: int,
                  bus: int | None = None,
                  forgetting: float | None = None) -> RprModel:
    """Least-squares quadratic fit of (Q_T, RPR_gen) pairs over the window.

    `forgetting` < 1 applies exponential downweighting of older snapshots;
    the default is a uniform fit.
    """
    q_t = window.series(lambda e: e.q_total)
    rpr = window.series(lambda e: e.rpr[gen])
    if len(np.unique(np.round(q_t, 12))) < 3:
        raise DegenerateWindowError(
            f"window spans {len(np.unique(q_t))} distinct Q_T levels, need 3"
        )
    if forgetting is None:
        w = None
    else:
        if not 0 < forgetting <= 1:
            raise ValueError(f"forgetting factor must be in (0, 1], got {forgetting}")
        # polyfit weights multiply the residuals, so sqrt of the sample weight
        w = np.sqrt(forgetting ** np.arange(len(q_t) - 1, -1, -1))
    coeffs = np.polyfit(q_t, rpr, 2, w=w)
    a, b, c = (float(x) for x in coeffs)
    residual = float(np.sqrt(np.mean((np.polyval(coeffs, q_t) - rpr) ** 2)))
    model = RprModel(gen=gen, bus=int(bus) if bus is not None else -1,
                     a=a, b=b, c=c, residual=residual,
                     q_t=float(q_t[-1]))
    return dc_replace(model, qcr=predict_qcr(model, float(q_t[-1])))


def predict_qcr(model: RprModel, q_t: float, side: str = "upper") -> float | None:
    """Realistic root of RPR(Q_T) = 0: the total reactive load at which the
    reserve is predicted to exhaust.

    For a growing load (side="upper") only roots above the present Q_T are
    realistic; side="lower" mirrors this for shrinking load. When both roots
    qualify the nearer one is kept, anticipating the earlier exhaustion.
    """
    if side not in ("upper", "lower"):
        raise ValueError(f"side must be 'upper' or 'lower', got {side!r}")
    a, b, c = model.a, model.b, model.c
    if abs(a) < LINEAR_COEFF_EPS:
        if abs(b) < LINEAR_COEFF_EPS:
            return None
        roots = np.array([-c / b])
    else:
        disc = b * b - 4.0 * a * c
        if disc < 0:
            return None
        sq = np.sqrt(disc)
        roots = np.array([(-b - sq) / (2 * a), (-b + sq) / (2 * a)])
    realistic = roots[roots > q_t] if side == "upper" else roots[roots < q_t]
    if realistic.size == 0:
        return None
    return float(realistic[np.argmin(np.abs(realistic - q_t))])


@dataclass(frozen=True)
class CriticalGeneratorList:
    """Generators predicted to exhaust their reserve soonest, ordered by Q_cr."""

    entries: tuple[tuple[int, int, float], ...]  # (gen position, bus id, Q_cr)
    threshold: float
    q_t: float

    def __len__(self):
        return len(self.entries)

    def __bool__(self):
        return bool(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def buses(self) -> tuple[int, ...]:
        return tuple(e[1] for e in self.entries)

    @property
    def gens(self) -> tuple[int, ...]:
        return tuple(e[0] for e in self.entries)

    @property
    def first(self) -> tuple[int, int, float] | None:
        return self.entries[0] if self.entries else None


def select_critical_generators(models: list[RprModel], q_t: float,
                               th: float = DEFAULT_BAND) -> CriticalGeneratorList:
    """Minimal-Q_cr generator plus all whose Q_cr lies within th*Q_T above it.

    Models without a realistic root, and generators the fit already shows as
    exhausted, do not participate.
    """
    if th < 0:
        raise ValueError(f"band threshold must be nonnegative, got {th}")
    viable = [m for m in models
              if m.qcr is not None and m.evaluate(q_t) > EXHAUSTED_RPR]
    if not viable:
        return CriticalGeneratorList(entries=(), threshold=th, q_t=q_t)
    viable.sort(key=lambda m: m.qcr)
    qcr_min = viable[0].qcr
    band = qcr_min + th * q_t
    entries = tuple((m.gen, m.bus, m.qcr) for m in viable if m.qcr <= band)
    return CriticalGeneratorList(entries=entries, threshold=th, q_t=q_t)


def anticipate(window: MeasurementWindow, model: NetworkModel,
               th: float = DEFAULT_BAND,
               forgetting: float | None = None) -> tuple[list[RprModel], CriticalGeneratorList]:
    """Fit every eligible generator over the window and form the critical list.

    The slack machine and generators already sitting at a limit are skipped;
    they need no anticipation. Generators whose fit is degenerate are skipped
    silently (their reserve did not respond to the load change).
    """
    latest = window.latest
    models = []
    slack_bus = model.buses[model.slack_index].id
    for gi, g in enumerate(model.generators):
        if not g.status or g.bus == slack_bus:
            continue
        if latest.rpr[gi] <= EXHAUSTED_RPR:
            continue
        try:
            models.append(fit_rpr_model(window, gi, bus=g.bus, forgetting=forgetting))
        except DegenerateWindowError:
            continue
    clist = select_critical_generators(models, latest.q_total, th=th)
    return models, clist


# -- augmented Jacobian ----------------------------------------------------


def augment_jacobian(jac: JacobianMatrix, clist: CriticalGeneratorList,
                     model: NetworkModel, state: OperatingState) -> JacobianMatrix:
    """Grow the Jacobian by one (Q_x row, vm_x column) pair per listed
    generator bus, as if that bus had been PQ all along.

    Insertion keeps the sorted-by-bus ordering of the row and column key
    tuples, so the result is entrywise identical to a from-scratch build with
    the listed buses re-typed.
    """
    if not clist:
        return jac
    matrix = jac.matrix
    rows = list(jac.rows)
    cols = list(jac.cols)
    roles = jac.roles.copy()
    ds_dva, ds_dvm = kernels.dSbus_dV(jac.ybus, jac.v)

    for bus_id in clist.buses:
        x = model.bus_index(bus_id)
        if roles[x] == PQ:
            warnings.warn(f"bus {bus_id} is already PQ; skipping augmentation")
            continue
        roles[x] = PQ
        q_keys = [i for i, (kind, b) in enumerate(rows) if kind == "Q" and b > x]
        ri = q_keys[0] if q_keys else len(rows)
        v_keys = [i for i, (kind, b) in enumerate(cols) if kind == "vm" and b > x]
        ci = v_keys[0] if v_keys else len(cols)

        new_row = np.array([
            ds_dva.imag[x, b] if kind == "va" else ds_dvm.imag[x, b]
            for kind, b in cols
        ])
        new_col = np.array([
            ds_dvm.real[b, x] if kind == "P" else ds_dvm.imag[b, x]
            for kind, b in rows
        ])
        corner = ds_dvm.imag[x, x]

        matrix = np.insert(matrix, ri, new_row, axis=0)
        new_col = np.insert(new_col, ri, corner)
        matrix = np.insert(matrix, ci, new_col, axis=1)
        rows.insert(ri, ("Q", x))
        cols.insert(ci, ("vm", x))

    return JacobianMatrix(matrix=matrix, rows=tuple(rows), cols=tuple(cols),
                          v=jac.v, ybus=jac.ybus, roles=roles)


# -- weighted index --------------------------------------------------------


@dataclass(frozen=True)
class StabilityReport:
    """Per-bus indices for one snapshot: present, anticipated, and weighted."""

    vsi: np.ndarray
    vsi_u: np.ndarray
    wvsi: np.ndarray
    w1: float
    w2: float
    critical_generators: CriticalGeneratorList
    timestamp: float = 0.0

    def worst(self) -> tuple[int, float]:
        """(bus position, value) of the largest weighted index."""
        i = int(np.nanargmax(self.wvsi))
        return i, float(self.wvsi[i])


def compute_wvsi(vsi: np.ndarray, state: EstimatedState,
                 clist: CriticalGeneratorList,
                 pert_u) -> StabilityReport:
    """WVSI = w1*VSI + w2*VSI_u with w1 the listed generators' remaining
    reserve fraction (Sum RPR / Sum Qmax, clamped to [0, 1]).

    `pert_u` is the perturbation solved on the augmented Jacobian; with an
    empty list it is ignored and the report degenerates to WVSI = VSI.
    """
    vsi = np.asarray(vsi, dtype=float)
    if not clist:
        return StabilityReport(vsi=vsi, vsi_u=vsi.copy(), wvsi=vsi.copy(),
                               w1=1.0, w2=0.0, critical_generators=clist,
                               timestamp=state.timestamp)

    vsi_u = compute_vsi(state, pert_u).values
    rpr_sum = float(sum(state.rpr[g] for g in clist.gens))
    # Qmax = RPR + Qg holds exactly for generators below their upper limit
    qmax_sum = float(sum(state.rpr[g] + state.qg[g] for g in clist.gens))
    if qmax_sum <= 0:
        warnings.warn("listed generators have zero total Qmax; forcing w1 = 0")
        w1 = 0.0
    else:
        w1 = float(np.clip(rpr_sum / qmax_sum, 0.0, 1.0))
    w2 = 1.0 - w1
    wvsi = w1 * vsi + w2 * vsi_u
    return StabilityReport(vsi=vsi, vsi_u=vsi_u, wvsi=wvsi, w1=w1, w2=w2,
                           critical_generators=clist, timestamp=state.timestamp)


def assess_snapshot(model: NetworkModel, est: EstimatedState,
                    window: MeasurementWindow | None = None,
                    direction: LoadDirection | None = None,
                    th: float = DEFAULT_BAND,
                    state: OperatingState | None = None,
                    role_tol: float | None = None) -> StabilityReport:
    """Full single-snapshot assessment: present VSI, reserve anticipation,
    anticipated VSI_u on the augmented Jacobian, and the weighted WVSI.

    Without a `window` (or with one too short to fit) anticipation is skipped
    and the report carries WVSI = VSI with an empty critical list.
    """
    direction = direction or LoadDirection.proportional(model)
    kw = {"tol": role_tol} if role_tol is not None else {}
    roles = index_roles(model, np.abs(est.v), **kw)
    jac = build_jacobian(model, state, roles=roles, v=est.v)
    pert = perturb(jac, est, direction)
    vsi = compute_vsi(est, pert)

    clist = CriticalGeneratorList(entries=(), threshold=th, q_t=est.q_total)
    if window is not None and len(window) >= 3:
        _, clist = anticipate(window, model, th=th)
        # anticipation only matters for machines still under voltage control
        clist = CriticalGeneratorList(
            entries=tuple(e for e in clist.entries
                          if roles[model.bus_index(e[1])] == PV),
            threshold=clist.threshold, q_t=clist.q_t,
        )

    pert_u = None
    if clist:
        jac_u = augment_jacobian(jac, clist, model, state)
        pert_u = perturb(jac_u, est, direction)
    report = compute_wvsi(vsi.values, est, clist, pert_u)
    return dc_replace(report, timestamp=est.timestamp)
