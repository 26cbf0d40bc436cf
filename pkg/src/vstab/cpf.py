"""Continuation-style loadability oracle: PV curves and margins to the nose.

Realized as repeated power flow with warm starts and bisection refinement of
the last convergent loading, which is all the downstream consumers need
(nose multiplier, margin, PV-curve samples).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .acpf import LoadDirection, OperatingState, solve_power_flow
from .netmodel import NetworkModel


@dataclass(frozen=True)
class CpfTrace:
    model: NetworkModel
    direction: LoadDirection
    lambdas: tuple[float, ...]          # loading multipliers, strictly increasing
    states: tuple[OperatingState, ...]  # converged state per lambda
    lambda_max: float                   # nose multiplier (last convergent)
    resolution: float

    def pv_samples(self, bus_id: int) -> np.ndarray:
        """(lambda, |V|) samples for one bus."""
        i = self.model.bus_index(bus_id)
        return np.array([[lam, st.vm[i]] for lam, st in zip(self.lambdas, self.states)])

    @property
    def nose_state(self) -> OperatingState:
        return self.states[-1]


class BaseCaseDivergence(RuntimeError):
    pass


def trace_pv_curve(model: NetworkModel,
                   direction: LoadDirection | None = None,
                   k_start: float = 1.0,
                   step: float = 0.05,
                   resolution: float = 1e-3,
                   enforce_q_limits: bool = True) -> CpfTrace:
    """Trace loadability from k_start to the nose with adaptive step halving."""
    direction = direction or LoadDirection.proportional(model)
    base = solve_power_flow(model, k=k_start, direction=direction,
                            enforce_q_limits=enforce_q_limits)
    if not base.converged:
        raise BaseCaseDivergence(
            f"base case (k={k_start}) did not converge: mismatch {base.max_mismatch:.3g}"
        )
    lambdas = [k_start]
    states = [base]
    k = k_start
    h = step
    while h > resolution / 2:
        trial = k + h
        st = solve_power_flow(model, k=trial, direction=direction,
                              enforce_q_limits=enforce_q_limits,
                              warm_start=states[-1])
        if st.converged:
            k = trial
            lambdas.append(k)
            states.append(st)
        else:
            h /= 2
    return CpfTrace(model=model, direction=direction,
                    lambdas=tuple(lambdas), states=tuple(states),
                    lambda_max=k, resolution=resolution)


def margin(trace: CpfTrace) -> float:
    """Distance from the base point to the nose in total per-unit apparent power."""
    base = trace.lambdas[0]
    return (trace.lambda_max - base) * trace.direction.total_apparent()


def critical_bus(trace: CpfTrace) -> int:
    """Load bus with the steepest PV-curve knee: largest voltage drop over the
    final loading increment, a proxy for the bus that collapses first."""
    model = trace.model
    if len(trace.states) < 2:
        raise ValueError("trace has fewer than two points")
    first, last = trace.states[0], trace.states[-1]
    candidates = [model.bus_index(b.id) for b in model.buses
                  if b.btype == 1 and (b.pd != 0 or b.qd != 0)]
    drops = {i: first.vm[i] - last.vm[i] for i in candidates}
    worst = max(drops, key=drops.get)
    return model.buses[worst].id
