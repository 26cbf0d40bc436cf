"""Contingency analysis: piecewise prediction against the AC re-solve oracle,
screening/ranking, oracle labels, threshold calibration and the statistics."""

import numpy as np
import pytest
import scipy.stats

from vstab.acpf import LoadDirection, solve_power_flow
from vstab.netmodel import PQ, apply_outage, find_branch
from vstab.cpf import trace_pv_curve
from vstab.security import (
    MAX_DK, ContingencyVerdict, calibrate_threshold, calibrate_thresholds,
    confusion_metrics, label_contingencies, piecewise_post_contingency,
    predict_contingency, rank_agreement, rank_contingencies,
    screen_contingencies, wilcoxon_signed_rank,
)


# -- piecewise post-contingency prediction ---------------------------------


@pytest.mark.parametrize("pair", [(2, 3), (5, 6), (9, 10), (13, 14)])
def test_piecewise_matches_ac_resolve(case14, state14, pair):
    trace = piecewise_post_contingency(case14, state14,
                                       find_branch(case14, *pair))
    oracle = solve_power_flow(apply_outage(case14, trace.branch, 1.0))
    assert oracle.converged
    close = np.abs(trace.vm - oracle.vm) < 0.02
    assert np.mean(close) >= 0.9


def test_piecewise_steps_partition_the_switch(case14, state14):
    trace = piecewise_post_contingency(case14, state14,
                                       find_branch(case14, 2, 3))
    dks = [s.dk for s in trace.steps]
    assert sum(dks) == pytest.approx(1.0, abs=1e-9)
    assert all(0 < dk <= MAX_DK + 1e-12 for dk in dks)
    assert trace.steps[0].k == 0.0


def test_piecewise_tracks_limit_events(case57):
    """A heavy outage at elevated loading pins at least one machine; the
    predicted state keeps pinned outputs at the limit and controlled buses
    at their setpoints."""
    state = solve_power_flow(case57, k=1.3)
    trace = piecewise_post_contingency(case57, state,
                                       find_branch(case57, 8, 9))
    events = [e for s in trace.steps for e in s.events]
    assert any("hits Q" in e for e in events)
    gens = case57.generators
    slack = case57.slack_index
    for gi in trace.constrained:
        assert (trace.qg[gi] == pytest.approx(gens[gi].qmax)
                or trace.qg[gi] == pytest.approx(gens[gi].qmin))
        assert trace.roles[case57.bus_index(gens[gi].bus)] == PQ
    for gi in trace.unconstrained:
        i = case57.bus_index(gens[gi].bus)
        if i != slack:
            assert trace.vm[i] == pytest.approx(gens[gi].vg, abs=1e-9)


# -- screening and ranking -------------------------------------------------


def test_islanding_outage_is_flagged_critical(case14, state14):
    v = predict_contingency(case14, state14, find_branch(case14, 7, 8))
    assert v.status == "islanding"
    assert v.critical
    assert np.isnan(v.wvsi_max)


def test_screen_covers_all_in_service_branches(case14, state14):
    verdicts = screen_contingencies(case14, state14)
    assert len(verdicts) == sum(1 for _ in case14.in_service_branches())
    ok = [v for v in verdicts if v.status == "ok"]
    assert ok
    for v in ok:
        assert 0 < v.wvsi_max
        assert v.worst_bus is not None
        assert v.critical == (v.wvsi_max > 0.75)


def test_ranking_order_and_severity_rules():
    mk = lambda br, wvsi, status="ok": ContingencyVerdict(
        branch=br, label=str(br), wvsi_max=wvsi, critical=True, status=status)
    ranked = rank_contingencies([
        mk(3, 0.5), mk(1, 0.9), mk(7, np.nan, "islanding"),
        mk(2, np.inf, "divergence"), mk(5, 0.9),
    ])
    assert [v.branch for v in ranked] == [2, 7, 1, 5, 3]
    assert [v.rank for v in ranked] == [1, 2, 3, 4, 5]


# -- oracle labels ---------------------------------------------------------


def test_labels_match_direct_margin_computation(case14):
    l = find_branch(case14, 2, 3)
    direction = LoadDirection.proportional(case14)
    labels = label_contingencies(case14, 1.0, branches=[l],
                                 direction=direction)
    trace = trace_pv_curve(apply_outage(case14, l, 1.0), direction=direction,
                           step=0.05, resolution=1e-3)
    expected = (trace.lambda_max - 1.0) * direction.total_apparent()
    critical, dlam = labels[l]
    assert dlam == pytest.approx(expected, abs=1e-9)
    assert critical == (dlam < 0.75)


def test_islanding_label_is_critical_with_zero_margin(case14):
    labels = label_contingencies(case14, 1.0,
                                 branches=[find_branch(case14, 7, 8)])
    assert labels[find_branch(case14, 7, 8)] == (True, 0.0)


# -- threshold calibration -------------------------------------------------


def test_separable_scores_calibrate_cleanly():
    scores = np.array([0.9, 0.8, 0.85, 0.2, 0.3, 0.1])
    actual = np.array([True, True, True, False, False, False])
    th = calibrate_threshold(scores, actual, min_recall=1.0)
    predicted = scores > th
    assert np.array_equal(predicted, actual)


def test_joint_calibration_respects_pooled_recall():
    rng = np.random.default_rng(1)
    groups = {}
    for g in range(3):
        pos = rng.uniform(0.4, 1.0, size=10)
        neg = rng.uniform(0.0, 0.7, size=30)
        groups[g] = (np.concatenate([pos, neg]),
                     np.array([True] * 10 + [False] * 30))
    ths = calibrate_thresholds(groups, min_recall=0.85)
    tp = fn = fp = tn = 0
    for g, (scores, actual) in groups.items():
        predicted = scores > ths[g]
        tp += np.sum(predicted & actual)
        fn += np.sum(~predicted & actual)
        fp += np.sum(predicted & ~actual)
        tn += np.sum(~predicted & ~actual)
    assert tp / (tp + fn) >= 0.85
    # allowing misses must not do worse than the all-catch calibration
    strict = calibrate_thresholds(groups, min_recall=1.0)
    errs_strict = sum(
        np.sum((scores > strict[g]) != actual)
        for g, (scores, actual) in groups.items())
    assert tp + tn >= sum(len(s) for s, _ in groups.values()) - errs_strict


def test_nonfinite_scores_are_always_positive_predictions():
    scores = np.array([np.inf, 0.9, 0.1, np.nan])
    actual = np.array([True, True, False, False])
    th = calibrate_threshold(scores, actual, min_recall=1.0)
    assert 0.1 < th < 0.9


def test_calibration_rejects_mismatched_lengths():
    with pytest.raises(ValueError, match="mismatch"):
        calibrate_thresholds({"a": (np.zeros(3), np.zeros(2, dtype=bool))})


# -- statistics ------------------------------------------------------------


def test_confusion_metrics_known_vector():
    predicted = [1, 1, 0, 0, 1, 0]
    actual = [1, 0, 1, 0, 1, 0]
    m = confusion_metrics(predicted, actual)
    assert (m.tp, m.fp, m.fn, m.tn) == (2, 1, 1, 2)
    assert m.accuracy == pytest.approx(4 / 6)
    assert m.precision == pytest.approx(2 / 3)
    assert m.recall == pytest.approx(2 / 3)
    assert m.f_score == pytest.approx(2 / 3)
    degenerate = confusion_metrics([0, 0], [1, 0])
    assert degenerate.degenerate and degenerate.precision == 0.0
    with pytest.raises(ValueError):
        confusion_metrics([1], [1, 0])


def test_wilcoxon_agrees_with_scipy_exact():
    # distinct difference magnitudes keep scipy's exact mode applicable
    a = np.array([1, 2, 3, 4, 5, 6, 7], dtype=float)
    b = np.array([0, 4, 0, 8, 0, 12, 0], dtype=float)
    ours = wilcoxon_signed_rank(a, b)
    ref = scipy.stats.wilcoxon(a, b, mode="exact")
    assert ours.p_value == pytest.approx(ref.pvalue, abs=1e-12)
    assert ours.ci_low <= np.median(a - b) <= ours.ci_high


def test_wilcoxon_identical_rankings_degenerate():
    r = wilcoxon_signed_rank([1, 2, 3], [1, 2, 3])
    assert r.degenerate and r.p_value == 1.0 and r.n == 0


def test_wilcoxon_handles_ties_in_magnitude():
    r = wilcoxon_signed_rank([1.0, 2.0, 3.0], [2.0, 1.0, 1.0])
    assert r.n == 3
    assert 0 < r.p_value <= 1.0


def test_rank_agreement_runs_on_small_top(case14, state14):
    result = rank_agreement(case14, state14, top=4)
    assert 0 <= result.p_value <= 1.0
    assert result.n <= 4
