"""Measurement playback: synthetic PMU snapshots, linear WLS state estimation
and the sliding window consumed by the reserve-fitting and baseline estimators.

The measurement model is linear in the complex bus-voltage state: voltage
phasors (identity rows), bus injection currents (Ybus rows) and branch
from-end currents. Weighted least squares is solved directly in the complex
domain.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .acpf import OperatingState
from .netmodel import NetworkModel, branch_admittances, build_ybus


@dataclass(frozen=True)
class NoiseSpec:
    sigma_mag: float = 0.001    # relative magnitude noise (PMU class)
    sigma_angle: float = 0.001  # absolute angle noise, rad


@dataclass(frozen=True)
class PmuSnapshot:
    timestamp: float
    v: np.ndarray               # complex bus voltage phasors
    i_inj: np.ndarray           # complex bus injection currents
    i_branch: np.ndarray        # complex from-end branch currents (in-service order)
    qg: np.ndarray              # per-generator reactive output, p.u.
    pd: np.ndarray              # per-bus load, p.u.
    qd: np.ndarray
    noise: NoiseSpec = field(default=NoiseSpec())

    def __post_init__(self):
        # NaN marks a missing measurement; infinities are corrupt data
        for arr in (self.v, self.i_inj, self.i_branch):
            finite = np.isfinite(arr) | np.isnan(arr)
            if not np.all(finite):
                raise ValueError("snapshot contains infinite phasors")


def _perturb_phasor(rng, z: np.ndarray, noise: NoiseSpec) -> np.ndarray:
    mag = np.abs(z) * (1.0 + noise.sigma_mag * rng.standard_normal(z.shape))
    ang = np.angle(z) + noise.sigma_angle * rng.standard_normal(z.shape)
    return mag * np.exp(1j * ang)


def synthesize_pmu(state: OperatingState, noise: NoiseSpec | None = None,
                   seed: int | None = None, timestamp: float = 0.0) -> PmuSnapshot:
    """Truth phasors from a converged state plus independent Gaussian noise."""
    noise = noise or NoiseSpec()
    rng = np.random.default_rng(seed)
    model = state.model
    v = state.v
    i_inj = state.ybus @ v
    i_branch = []
    for _, br in model.in_service_branches():
        i = model.bus_index(br.from_bus)
        j = model.bus_index(br.to_bus)
        yff, yft, _, _ = branch_admittances(br)
        i_branch.append(yff * v[i] + yft * v[j])
    i_branch = np.array(i_branch, dtype=complex)
    if noise.sigma_mag or noise.sigma_angle:
        v = _perturb_phasor(rng, v, noise)
        i_inj = _perturb_phasor(rng, i_inj, noise)
        i_branch = _perturb_phasor(rng, i_branch, noise)
    return PmuSnapshot(
        timestamp=timestamp, v=v, i_inj=i_inj, i_branch=i_branch,
        qg=state.qg.copy(),
        pd=np.array([b.pd for b in model.buses]),
        qd=np.array([b.qd for b in model.buses]),
        noise=noise,
    )


@dataclass(frozen=True)
class EstimatedState:
    timestamp: float
    v: np.ndarray        # filtered complex bus voltages
    i_inj: np.ndarray    # Ybus @ v, injection convention
    q_total: float       # total reactive load consumption, p.u.
    rpr: np.ndarray      # per-generator upper reserve Qmax - Qg, p.u.
    qg: np.ndarray
    pd: np.ndarray
    qd: np.ndarray
    residual: float      # weighted residual norm of the WLS fit
    btype: np.ndarray = None  # static bus types (index eligibility)

    def load_current(self, bus_index: int) -> complex:
        """Current drawn by the composite load at a bus (out of the network)."""
        return -self.i_inj[bus_index]


class ObservabilityError(ValueError):
    def __init__(self, buses):
        self.buses = list(buses)
        super().__init__(f"state not observable; uncovered buses: {self.buses}")


def estimate_state(snapshot: PmuSnapshot, model: NetworkModel,
                   use_currents: bool = True) -> EstimatedState:
    """WLS over the complex-linear phasor measurement model."""
    n = model.n_bus
    ybus = build_ybus(model).ybus
    blocks = [np.eye(n, dtype=complex)]
    z = [snapshot.v]
    weights = [np.full(n, 1.0 / max(snapshot.noise.sigma_mag, 1e-9))]
    if use_currents and snapshot.i_inj.size:
        blocks.append(ybus)
        z.append(snapshot.i_inj)
        weights.append(np.full(n, 1.0 / max(snapshot.noise.sigma_mag, 1e-9)))
    h = np.vstack(blocks)
    z = np.concatenate(z)
    w = np.concatenate(weights)

    mask = np.isfinite(z)
    h, z, w = h[mask], z[mask], w[mask]
    covered = np.any(np.abs(h) > 1e-12, axis=0)
    if not covered.all():
        raise ObservabilityError([model.buses[i].id for i in np.flatnonzero(~covered)])
    hw = h * w[:, None]
    zw = z * w
    v_est, *_ = np.linalg.lstsq(hw, zw, rcond=None)
    rank = np.linalg.matrix_rank(hw)
    if rank < n:
        # identify deficient directions by column pivoting on the normal matrix
        diag = np.abs(np.diag(np.conj(h.T) @ h))
        bad = np.argsort(diag)[: n - rank]
        raise ObservabilityError([model.buses[i].id for i in bad])
    residual = float(np.linalg.norm(hw @ v_est - zw))

    qmax = np.array([g.qmax for g in model.generators])
    rpr = np.clip(qmax - snapshot.qg, 0.0, None)
    q_total = float(np.sum(snapshot.qd))
    return EstimatedState(
        timestamp=snapshot.timestamp,
        v=v_est,
        i_inj=ybus @ v_est,
        q_total=q_total,
        rpr=rpr,
        qg=snapshot.qg.copy(),
        pd=snapshot.pd.copy(),
        qd=snapshot.qd.copy(),
        residual=residual,
        btype=np.array([b.btype for b in model.buses]),
    )


class MeasurementWindow:
    """Bounded, time-ordered FIFO of estimated states."""

    def __init__(self, capacity: int = 30):
        if capacity < 1:
            raise ValueError("window capacity must be >= 1")
        self.capacity = capacity
        self._items: deque[EstimatedState] = deque(maxlen=capacity)

    def append(self, est: EstimatedState) -> "MeasurementWindow":
        if self._items and est.timestamp <= self._items[-1].timestamp:
            raise ValueError(
                f"out-of-order timestamp {est.timestamp} "
                f"(latest is {self._items[-1].timestamp})"
            )
        self._items.append(est)
        return self

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(list(self._items))

    def __getitem__(self, idx):
        return list(self._items)[idx]

    @property
    def latest(self) -> EstimatedState:
        return self._items[-1]

    def series(self, fn) -> np.ndarray:
        return np.array([fn(e) for e in self._items])


def estimated_from_state(state: OperatingState, timestamp: float = 0.0) -> EstimatedState:
    """Truth-mode wrapper: treat a converged power-flow state as if it had been
    estimated with zero noise (used for ramps and contingency evaluation)."""
    model = state.model
    qmax = np.array([g.qmax for g in model.generators])
    return EstimatedState(
        timestamp=timestamp,
        v=state.v,
        i_inj=state.ybus @ state.v,
        q_total=float(sum(b.qd for b in model.buses)),
        rpr=np.clip(qmax - state.qg, 0.0, None),
        qg=state.qg.copy(),
        pd=np.array([b.pd for b in model.buses]),
        qd=np.array([b.qd for b in model.buses]),
        residual=0.0,
        btype=np.array([b.btype for b in model.buses]),
    )
