"""Acceptance suite: one test per headline capability, each at its stated
tolerance. Shared expensive computations (collapse ramps, oracle limit-hit
sequences, the classification study) are session-cached fixtures.

Known honest failures are asserted at the stated tolerance anyway; the
assertion messages carry the measured values.
"""

import dataclasses
import time

import numpy as np
import pytest

from vstab import load_case
from vstab.acpf import LoadDirection, build_jacobian, solve_power_flow
from vstab.cpf import trace_pv_curve
from vstab.hpvsm import compute_vsi, index_roles, perturb
from vstab.netmodel import (
    PQ, PV, IslandingError, apply_outage, connectivity_check, find_branch,
)
from vstab.qlimits import anticipate, assess_snapshot
from vstab.security import (
    MIN_DK, PiecewiseDivergence, calibrate_thresholds, confusion_metrics,
    label_contingencies, piecewise_post_contingency, rank_agreement,
    screen_contingencies, wilcoxon_signed_rank,
)
from vstab.telemetry import MeasurementWindow, estimated_from_state
from vstab.runner import snapshot_latency

from conftest import TWO_BUS_X, ramp_grid, ramp_states

RAMP_STEP = 0.005
FIT_WINDOW = 30


def _collapse_ramp(model, step):
    """(k, state) pairs along a warm-started ramp up to the last convergent
    point before divergence."""
    direction = LoadDirection.proportional(model)
    out = []
    st = None
    k = 1.0
    while True:
        nst = solve_power_flow(model, k=k, direction=direction, warm_start=st)
        if not nst.converged:
            return out
        st = nst
        out.append((k, st))
        k = round(k + step, 9)


def _vsi_at(model, state):
    est = estimated_from_state(state)
    roles = index_roles(model, np.abs(est.v))
    jac = build_jacobian(model, state, roles=roles, v=est.v)
    pert = perturb(jac, est, LoadDirection.proportional(model))
    return compute_vsi(est, pert)


def _fit_window(model, kt):
    """Truth-mode measurement window ending at kt: trailing snapshots at the
    ramp step, never reaching below the base loading."""
    k0 = max(1.0, round(kt - RAMP_STEP * (FIT_WINDOW - 1), 9))
    ks = ramp_grid(k0, kt, RAMP_STEP)
    states = ramp_states(model, ks)
    assert len(states) == len(ks)
    window = MeasurementWindow(capacity=len(states))
    for t, st in enumerate(states):
        window.append(estimated_from_state(st, timestamp=float(t)))
    return window


def _limit_hit_sequence(model, k_max):
    """Oracle: (k, bus id) of each generator bus newly switched PV-to-PQ by
    the enforcing solver along the ramp."""
    direction = LoadDirection.proportional(model)
    hits = []
    seen = set()
    st = None
    for k in ramp_grid(1.0, k_max, RAMP_STEP):
        nst = solve_power_flow(model, k=float(k), direction=direction,
                               warm_start=st)
        if not nst.converged:
            break
        st = nst
        for g in model.generators:
            i = model.bus_index(g.bus)
            if model.buses[i].btype == PV and st.roles[i] == PQ \
                    and g.bus not in seen:
                seen.add(g.bus)
                hits.append((float(k), g.bus))
    return hits


@pytest.fixture(scope="session")
def hit_sequences(case14, case57, case118):
    return {
        "case14": _limit_hit_sequence(case14, 2.2),
        "case57": _limit_hit_sequence(case57, 1.8),
        "case118": _limit_hit_sequence(case118, 2.5),
    }


@pytest.fixture(scope="session")
def classification_study(case14, case57):
    """Screen every in-service branch of both systems at two loadings and
    label each with the loadability oracle."""
    study = {}
    for name, model in (("case14", case14), ("case57", case57)):
        for k in (1.0, 1.3):
            state = solve_power_flow(model, k=k)
            assert state.converged
            verdicts = screen_contingencies(model, state)
            labels = label_contingencies(model, k)
            study[(name, k)] = (verdicts, labels)
    return study


# -- criteria --------------------------------------------------------------


def test_c01_two_bus_analytic_oracle(two_bus):
    """Nose at E^2/(4X), unit index and line-impedance recovery at the nose,
    all inside one second."""
    t0 = time.perf_counter()
    trace = trace_pv_curve(two_bus, step=0.1, resolution=1e-4)
    p_max_over_p_base = 1.0 / (4 * TWO_BUS_X)  # E = 1, P_base = 1 p.u.
    assert trace.lambda_max == pytest.approx(p_max_over_p_base, rel=0.01)

    near_nose = solve_power_flow(two_bus, k=trace.lambda_max - 1e-4)
    assert near_nose.converged
    vsi = _vsi_at(two_bus, near_nose)
    assert vsi.values[1] == pytest.approx(1.0, abs=0.02)
    assert abs(vsi.z_th[1]) == pytest.approx(TWO_BUS_X, rel=0.01)
    assert time.perf_counter() - t0 < 1.0


def test_c02_critical_bus_identification(case14, case57, case118):
    """At the last convergent ramp point the largest index sits at the known
    weak bus, with index at least 0.9 there."""
    expected = {"case14": (case14, 9), "case57": (case57, 32),
                "case118": (case118, 14)}
    t0 = time.perf_counter()
    failures = []
    for name, (model, weak_bus) in expected.items():
        k_last, state = _collapse_ramp(model, step=0.01)[-1]
        vsi = _vsi_at(model, state)
        worst_pos, worst_val = vsi.worst()
        worst_id = model.buses[worst_pos].id
        weak_val = float(vsi.values[model.bus_index(weak_bus)])
        if worst_id != weak_bus:
            failures.append(
                f"{name}: argmax bus {worst_id} (VSI {worst_val:.3f}) at "
                f"k={k_last}, expected bus {weak_bus} (VSI {weak_val:.3f})")
        if not weak_val >= 0.9:
            failures.append(
                f"{name}: VSI {weak_val:.3f} < 0.9 at bus {weak_bus}")
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    assert not failures, "; ".join(failures)


def test_c03_ieee57_collapse_point(case57):
    trace = trace_pv_curve(case57, step=0.05, resolution=1e-3)
    assert 1.6 <= trace.lambda_max <= 1.85


# (case, snapshot loading, allowed first-listed buses, reference Q_cr of the
#  first-listed machine, oracle-confirmable). The 57 @ 1.5 row allows the
# documented near-tie and the last 118 row sits at the published reserve
# level rather than the nominal loading; its machine never reaches the limit
# before the nose, so the oracle cannot confirm it.
ANTICIPATION_ROWS = [
    ("case14", 1.04, {2}, 0.7794, True),
    ("case14", 1.30, {8}, 0.84165, True),
    ("case14", 1.40, {3}, 0.87932, True),
    ("case57", 1.015, {9}, 3.4757, True),
    ("case57", 1.30, {3}, 3.9733, True),
    ("case57", 1.50, {8, 2}, 4.4777, True),
    ("case57", 1.60, {8}, 4.4151, True),
    ("case57", 1.70, {8}, 4.38, True),
    ("case57", 1.72, {8}, 4.377, True),
    ("case118", 1.01, {12}, 16.034, True),
    ("case118", 1.40, {77}, 16.508, True),
    ("case118", 1.80, {80}, 18.965, True),
    ("case118", 2.00, {104, 105}, 20.231, True),
    ("case118", 2.20, {73}, 20.98, True),
    ("case118", 2.44, {32}, 22.689, False),
]


def test_c04_reserve_exhaustion_anticipation(case14, case57, case118,
                                             hit_sequences):
    """Reserve fits over a trailing window predict which machine exhausts
    next and at what total reactive load, confirmed by the enforcing solver."""
    models = {"case14": case14, "case57": case57, "case118": case118}
    failures = []
    for name, kt, allowed, qcr_ref, confirmable in ANTICIPATION_ROWS:
        model = models[name]
        window = _fit_window(model, kt)
        fits, clist = anticipate(window, model)
        if not clist:
            failures.append(f"{name}@{kt}: empty critical list")
            continue
        _, first_bus, first_qcr = clist.first
        if first_bus not in allowed:
            failures.append(
                f"{name}@{kt}: first-listed bus {first_bus}, expected "
                f"{sorted(allowed)}")
        ref_bus = min(allowed)
        fit = next((m for m in fits if m.bus == ref_bus and m.qcr), None)
        if fit is None:
            failures.append(f"{name}@{kt}: no viable fit for bus {ref_bus}")
        elif abs(fit.qcr - qcr_ref) > 0.05 * qcr_ref:
            failures.append(
                f"{name}@{kt}: Q_cr {fit.qcr:.4f} vs reference {qcr_ref} "
                f"({100 * abs(fit.qcr - qcr_ref) / qcr_ref:.1f}% off)")
        if confirmable:
            nxt = next((bus for k, bus in hit_sequences[name] if k > kt), None)
            if nxt not in allowed:
                failures.append(
                    f"{name}@{kt}: solver switches bus {nxt} first, "
                    f"prediction allows {sorted(allowed)}")
    assert not failures, "; ".join(failures)


def test_c05_weighted_index_early_warning(case9):
    """On the 9-bus system the weighted index crosses its alarm level at
    least one snapshot before the plain index crosses its own."""
    model = case9
    direction = LoadDirection.proportional(model)
    window = MeasurementWindow(FIT_WINDOW)
    reports = []
    for t, (k, st) in enumerate(_collapse_ramp(model, RAMP_STEP)):
        est = estimated_from_state(st, timestamp=float(t))
        window.append(est)
        reports.append(assess_snapshot(model, est, window, direction, state=st))
    worst_pos, _ = reports[-1].worst()
    vsi_cross = next((i for i, r in enumerate(reports)
                      if r.vsi[worst_pos] > 0.9), None)
    wvsi_cross = next((i for i, r in enumerate(reports)
                       if r.wvsi[worst_pos] > 0.8), None)
    assert vsi_cross is not None and wvsi_cross is not None
    assert wvsi_cross < vsi_cross


def test_c06_weighted_index_identities(case9, case14):
    """Exact weight partition, bracketing between the present and anticipated
    indices, and the empty-list degeneracy, over ramp snapshots."""
    for model, k_end in ((case9, 1.6), (case14, 1.25)):
        direction = LoadDirection.proportional(model)
        window = MeasurementWindow(12)
        nonempty = 0
        for t, st in enumerate(ramp_states(model, ramp_grid(1.0, k_end, 0.01))):
            est = estimated_from_state(st, timestamp=float(t))
            window.append(est)
            r = assess_snapshot(model, est, window, direction, state=st)
            assert r.w1 + r.w2 == 1.0
            mask = np.isfinite(r.wvsi)
            lo = np.minimum(r.vsi[mask], r.vsi_u[mask])
            hi = np.maximum(r.vsi[mask], r.vsi_u[mask])
            assert np.all(r.wvsi[mask] >= lo - 1e-12)
            assert np.all(r.wvsi[mask] <= hi + 1e-12)
            if r.critical_generators:
                nonempty += 1
            else:
                assert np.array_equal(r.wvsi[mask], r.vsi[mask])
        assert nonempty > 0


def test_c07_piecewise_against_ac_resolve(case14, state14):
    """Every non-islanding base-load branch outage: the piecewise prediction
    lands within 0.02 p.u. of the AC re-solve at 90% of the buses, and each
    limit event closes its step exactly on the constraint boundary."""
    gens = case14.generators
    bus_of = {gi: case14.bus_index(g.bus) for gi, g in enumerate(gens)}
    failures = []
    for l, br in case14.in_service_branches():
        try:
            connectivity_check(apply_outage(case14, l, 1.0))
        except IslandingError:
            continue
        oracle = solve_power_flow(apply_outage(case14, l, 1.0))
        try:
            trace = piecewise_post_contingency(case14, state14, l)
        except PiecewiseDivergence:
            if oracle.converged:
                failures.append(f"{br.from_bus}-{br.to_bus}: prediction "
                                "diverged on a solvable outage")
            continue
        if not oracle.converged:
            continue
        close = np.mean(np.abs(trace.vm - oracle.vm) < 0.02)
        if close < 0.9:
            failures.append(
                f"{br.from_bus}-{br.to_bus}: only {100 * close:.0f}% of "
                "buses within 0.02")

        # replay the piecewise reserve accumulation and check breakpoints
        qg = state14.qg.copy()
        pinned = {gi for gi, i in bus_of.items()
                  if state14.roles[i] == PQ and case14.buses[i].btype == PV}
        for step in trace.steps:
            hit = {}
            for e in step.events:
                if "hits Q" in e:
                    bus_id = int(e.split("@bus")[1].split(" ")[0])
                    side = "max" if "Qmax" in e else "min"
                    hit[bus_id] = side
            landed = []
            for gi, i in bus_of.items():
                if gi in pinned or i == case14.slack_index:
                    continue
                unclipped = qg[gi] + step.dk * step.dq_dk[i]
                limit = gens[gi].qmax if step.dq_dk[i] > 0 else gens[gi].qmin
                if gens[gi].bus in hit:
                    landed.append(abs(unclipped - limit))
                    pinned.add(gi)
                    qg[gi] = limit
                else:
                    overshoot = (max(unclipped - gens[gi].qmax, 0.0)
                                 + max(gens[gi].qmin - unclipped, 0.0))
                    slack = abs(step.dq_dk[i]) * MIN_DK + 1e-9
                    if overshoot > slack:
                        failures.append(
                            f"{br.from_bus}-{br.to_bus}: missed event at "
                            f"bus {gens[gi].bus} (overshoot {overshoot:.2e})")
                    qg[gi] = unclipped
            if hit and landed:
                # the binding event determines the step length exactly
                tol = max(abs(step.dq_dk[bus_of[gi]])
                          for gi in bus_of) * MIN_DK + 1e-8
                if min(landed) > tol:
                    failures.append(
                        f"{br.from_bus}-{br.to_bus}: breakpoint misses the "
                        f"boundary by {min(landed):.2e}")
    assert not failures, "; ".join(failures)


def test_c08_security_classification(classification_study):
    """Jointly calibrated screening thresholds: pooled accuracy at least 90%
    and recall at least 85% against the loadability labels, with published
    spot severities reproduced within 0.15."""
    groups = {}
    for key, (verdicts, labels) in classification_study.items():
        scores = np.array([np.inf if v.status != "ok" else v.wvsi_max
                           for v in verdicts])
        actual = np.array([labels[v.branch][0] for v in verdicts])
        groups[key] = (scores, actual)
    thresholds = calibrate_thresholds(groups, min_recall=0.85)
    pred_all, act_all = [], []
    for key, (scores, actual) in groups.items():
        pred_all.extend(~np.isfinite(scores) | (scores > thresholds[key]))
        act_all.extend(actual)
    m = confusion_metrics(pred_all, act_all)
    failures = []
    if m.accuracy < 0.90:
        failures.append(f"pooled accuracy {100 * m.accuracy:.1f}% < 90%")
    if m.recall < 0.85:
        failures.append(f"pooled recall {100 * m.recall:.1f}% < 85%")

    spots = [("case14", 1.0, "5-6", 0.381), ("case14", 1.3, "5-6", 0.9286),
             ("case57", 1.3, "3-4", 1.0586)]
    for name, k, label, ref in spots:
        verdicts, _ = classification_study[(name, k)]
        v = next(v for v in verdicts if v.label == label)
        if abs(v.wvsi_max - ref) > 0.15:
            failures.append(
                f"{name}@{k} branch {label}: severity {v.wvsi_max:.4f} vs "
                f"published {ref} (outside 0.15)")
    assert not failures, "; ".join(failures)


def test_c09_published_confusion_metrics():
    predicted = [True] * 65 + [True] * 13 + [False] * 4 + [False] * 446
    actual = [True] * 65 + [False] * 13 + [True] * 4 + [False] * 446
    m = confusion_metrics(predicted, actual)
    assert (m.tp, m.fp, m.fn, m.tn) == (65, 13, 4, 446)
    assert round(100 * m.accuracy, 2) == 96.78
    assert round(100 * m.precision, 2) == 83.33
    assert round(100 * m.recall, 2) == 94.20
    assert round(100 * m.f_score, 2) == 88.44


def test_c10_ranking_agreement(case14, case57, case118):
    """Exact signed-rank arithmetic on a known difference vector, then no
    detectable disagreement between the predicted top-10 severity order and
    the loadability order on any of the three systems."""
    r = wilcoxon_signed_rank([1, 2, 3], [0, 4, 0])
    assert r.p_value == pytest.approx(0.75, abs=1e-12)

    failures = []
    for name, model in (("case14", case14), ("case57", case57),
                        ("case118", case118)):
        state = solve_power_flow(model)
        res = rank_agreement(model, state, top=10)
        if not (res.degenerate or res.p_value > 0.05):
            failures.append(f"{name}: p={res.p_value:.4f} <= 0.05 "
                            f"(W+={res.statistic}, n={res.n})")
    assert not failures, "; ".join(failures)


def test_c11_latency_budgets(case57):
    """Reserve fitting for a full machine fleet within 50 ms; one complete
    snapshot assessment of the largest system within 1 s."""
    window = _fit_window(case57, 1.3)
    anticipate(window, case57)  # warm the code paths
    t0 = time.perf_counter()
    anticipate(window, case57)
    fit_time = time.perf_counter() - t0
    assert fit_time <= 0.05, f"reserve fit took {1000 * fit_time:.1f} ms"

    latency = snapshot_latency(case="case118")
    assert latency <= 1.0, f"snapshot pipeline took {latency:.2f} s"
