"""Contingency analysis: piecewise-linear post-outage prediction, screening
and ranking by the weighted stability index, and the evaluation statistics
(confusion matrix, exact Wilcoxon signed-rank test).

A branch outage is parametrized by K in [0, 1] scaling the branch admittance
out of the network, Ybus(K) = Ybus - K * dY. Between generator limit events
the post-contingency state moves linearly in K along the implicit-function
sensitivity dx/dK = -J^-1 (df/dK); the step length to the next event is the
smallest positive ratio of remaining headroom to its consumption rate. The
predicted K=1 state feeds the same per-bus index pipeline that monitors the
pre-contingency grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace as dc_replace
from itertools import combinations_with_replacement

import numpy as np

from . import kernels
from .acpf import LoadDirection, OperatingState, Q_LIMIT_EPS, build_jacobian
from .cpf import BaseCaseDivergence, trace_pv_curve
from .hpvsm import compute_vsi, perturb
from .netmodel import (
    PQ, PV, SLACK, IslandingError, NetworkModel, apply_outage, build_ybus,
    connectivity_check,
)
from .qlimits import CriticalGeneratorList, compute_wvsi
from .telemetry import EstimatedState

MIN_DK = 1e-4
MAX_DK = 0.05
DEFAULT_THRESHOLD = 0.75
NEAR_LIMIT_FRACTION = 0.05


class PiecewiseDivergence(RuntimeError):
    """The sensitivity system became singular before K reached 1; the
    contingency drives the grid past its loadability limit."""


@dataclass(frozen=True)
class PiecewiseStep:
    k: float                    # K value at the start of the step
    dk: float                   # step length taken
    dvm_dk: np.ndarray          # per-bus voltage-magnitude gradient
    dq_dk: np.ndarray           # per-bus reactive-injection gradient
    events: tuple[str, ...]     # limit/back-switch events closing the step


@dataclass(frozen=True)
class PiecewiseTrace:
    branch: int                             # branch index outaged
    steps: tuple[PiecewiseStep, ...]
    vm: np.ndarray                          # predicted K=1 voltage magnitudes
    va: np.ndarray
    roles: np.ndarray                       # predicted role set at K=1
    qg: np.ndarray                          # predicted generator outputs
    unconstrained: tuple[int, ...]          # gen positions still on voltage control
    constrained: tuple[int, ...]            # gen positions pinned at a limit
    ybus_post: np.ndarray = field(repr=False)

    @property
    def v(self) -> np.ndarray:
        return self.vm * np.exp(1j * self.va)


def _gen_map(model: NetworkModel) -> dict[int, int]:
    return {model.bus_index(g.bus): gi
            for gi, g in enumerate(model.generators) if g.status}


def piecewise_post_contingency(model: NetworkModel, state: OperatingState,
                               branch: int,
                               max_dk: float = MAX_DK) -> PiecewiseTrace:
    """Predict the post-outage state of one branch without re-solving.

    Starting from the converged pre-contingency state, K is advanced from 0
    to 1 in pieces; each piece ends where a generator exhausts a reactive
    limit (it moves to the constrained set, bus re-typed PQ), where a pinned
    generator's voltage recovers to its setpoint (back to voltage control),
    or at the `max_dk` cap that bounds the linearization error of one piece.
    """
    connectivity_check(apply_outage(model, branch, 1.0))
    adm = build_ybus(model)
    dy = adm.branch_delta(branch)
    y0 = adm.ybus

    vm = state.vm.copy()
    va = state.va.copy()
    roles = state.roles.copy()
    qg = state.qg.copy()
    gen_at = _gen_map(model)
    slack = model.slack_index
    vset = {i: model.generators[gi].vg for i, gi in gen_at.items()}
    # which side a constrained machine is pinned at, by bus position
    pinned: dict[int, str] = {}
    for i, gi in gen_at.items():
        if i == slack or roles[i] != PQ:
            continue
        g = model.generators[gi]
        pinned[i] = "max" if qg[gi] >= g.qmax - Q_LIMIT_EPS else "min"

    k = 0.0
    steps = []
    while k < 1.0 - 1e-12:
        ybus_k = y0 - k * dy
        v = vm * np.exp(1j * va)
        jac = build_jacobian(model, None, roles=roles, v=v, ybus=ybus_k)
        # df/dK at the P/Q equation rows: S(V, K) = diag(V) conj(Ybus(K) V)
        ds_dk = -v * np.conj(dy @ v)
        rhs = np.array([ds_dk.real[b] if kind == "P" else ds_dk.imag[b]
                        for kind, b in jac.rows])
        try:
            dx = np.linalg.solve(jac.matrix, -rhs)
        except np.linalg.LinAlgError:
            raise PiecewiseDivergence(
                f"sensitivity system singular at K={k:.4f}"
            ) from None
        if not np.all(np.isfinite(dx)):
            raise PiecewiseDivergence(f"non-finite sensitivities at K={k:.4f}")

        n = model.n_bus
        dva = np.zeros(n)
        dvm = np.zeros(n)
        for ci, (kind, b) in enumerate(jac.cols):
            if kind == "va":
                dva[b] = dx[ci]
            else:
                dvm[b] = dx[ci]
        ds_dva, ds_dvm_ = kernels.dSbus_dV(ybus_k, v)
        ds_total = ds_dva @ dva + ds_dvm_ @ dvm + ds_dk
        dq = ds_total.imag

        # candidate events ahead of the current K
        ratios: list[tuple[float, str, int]] = []
        for i, gi in gen_at.items():
            if i == slack:
                continue
            g = model.generators[gi]
            if i not in pinned:
                if dq[i] > 1e-12:
                    ratios.append(((g.qmax - qg[gi]) / dq[i], "hit_max", i))
                elif dq[i] < -1e-12:
                    ratios.append(((g.qmin - qg[gi]) / dq[i], "hit_min", i))
            else:
                side = pinned[i]
                if side == "max" and dvm[i] > 1e-12:
                    ratios.append(((vset[i] - vm[i]) / dvm[i], "release", i))
                elif side == "min" and dvm[i] < -1e-12:
                    ratios.append(((vset[i] - vm[i]) / dvm[i], "release", i))
        ratios = [(r, ev, i) for r, ev, i in ratios if np.isfinite(r) and r > 0]

        dk = min(1.0 - k, max_dk)
        if ratios:
            dk = min(dk, max(min(r for r, _, _ in ratios), MIN_DK))
        events = []
        for r, ev, i in ratios:
            if r > dk + MIN_DK:
                continue
            bus_id = model.buses[i].id
            if ev == "hit_max":
                pinned[i] = "max"
                roles[i] = PQ
                events.append(f"gen@bus{bus_id} hits Qmax at K={k + r:.4f}")
            elif ev == "hit_min":
                pinned[i] = "min"
                roles[i] = PQ
                events.append(f"gen@bus{bus_id} hits Qmin at K={k + r:.4f}")
            else:
                del pinned[i]
                roles[i] = PV
                events.append(f"gen@bus{bus_id} back on control at K={k + r:.4f}")

        va = va + dk * dva
        vm = vm + dk * dvm
        for i, gi in gen_at.items():
            if i == slack:
                continue
            g = model.generators[gi]
            if i in pinned:
                qg[gi] = g.qmax if pinned[i] == "max" else g.qmin
                if roles[i] == PV:
                    vm[i] = vset[i]
            else:
                qg[gi] = float(np.clip(qg[gi] + dk * dq[i], g.qmin, g.qmax))
                vm[i] = vset[i]
        steps.append(PiecewiseStep(k=k, dk=dk, dvm_dk=dvm, dq_dk=dq,
                                   events=tuple(events)))
        k += dk

    unconstrained = tuple(gi for i, gi in sorted(gen_at.items())
                          if i != slack and i not in pinned)
    constrained = tuple(gi for i, gi in sorted(gen_at.items()) if i in pinned)
    return PiecewiseTrace(branch=branch, steps=tuple(steps), vm=vm, va=va,
                          roles=roles, qg=qg, unconstrained=unconstrained,
                          constrained=constrained, ybus_post=y0 - dy)


# -- screening and ranking -------------------------------------------------


@dataclass(frozen=True)
class ContingencyVerdict:
    branch: int                       # branch index
    label: str                        # "f-t" endpoints for display
    wvsi_max: float                   # max predicted post-contingency index
    critical: bool
    status: str = "ok"                # "ok" | "islanding" | "divergence"
    rank: int | None = None
    worst_bus: int | None = None      # bus id carrying the max index
    critical_generators: tuple[int, ...] = ()
    margin: float | None = None       # oracle loadability margin, when evaluated
    actual_critical: bool | None = None


def _final_state_list(model: NetworkModel, trace: PiecewiseTrace,
                      q_t: float,
                      fraction: float = NEAR_LIMIT_FRACTION) -> CriticalGeneratorList:
    """Generators still on voltage control at the predicted K=1 state whose
    remaining upper headroom is a small fraction of their capability: the
    machines the outage has pushed to the edge of exhaustion. The index at
    the predicted state treats them as anticipated limit hits."""
    entries = []
    slack = model.slack_index
    for gi in trace.unconstrained:
        g = model.generators[gi]
        if model.bus_index(g.bus) == slack or g.qmax <= 0:
            continue
        headroom = g.qmax - trace.qg[gi]
        if headroom <= fraction * g.qmax:
            entries.append((gi, g.bus, q_t))
    return CriticalGeneratorList(entries=tuple(entries),
                                 threshold=fraction, q_t=q_t)


def predict_contingency(model: NetworkModel, state: OperatingState,
                        branch: int,
                        threshold: float = DEFAULT_THRESHOLD,
                        direction: LoadDirection | None = None) -> ContingencyVerdict:
    """One branch outage: piecewise trace, index on the predicted state,
    verdict against the screening threshold."""
    br = model.branches[branch]
    label = f"{br.from_bus}-{br.to_bus}"
    try:
        trace = piecewise_post_contingency(model, state, branch)
    except IslandingError:
        return ContingencyVerdict(branch=branch, label=label, wvsi_max=np.nan,
                                  critical=True, status="islanding")
    except PiecewiseDivergence:
        return ContingencyVerdict(branch=branch, label=label, wvsi_max=np.inf,
                                  critical=True, status="divergence")

    qmax = np.array([g.qmax for g in model.generators])
    est = EstimatedState(
        timestamp=0.0, v=trace.v, i_inj=trace.ybus_post @ trace.v,
        q_total=float(sum(b.qd for b in state.model.buses)),
        rpr=np.clip(qmax - trace.qg, 0.0, None), qg=trace.qg,
        pd=np.array([b.pd for b in state.model.buses]),
        qd=np.array([b.qd for b in state.model.buses]),
        residual=0.0,
        btype=np.array([b.btype for b in model.buses]),
    )
    direction = direction or LoadDirection.proportional(model)
    jac = build_jacobian(model, None, roles=trace.roles, v=trace.v,
                         ybus=trace.ybus_post)
    try:
        pert = perturb(jac, est, direction)
    except Exception:
        return ContingencyVerdict(branch=branch, label=label, wvsi_max=np.inf,
                                  critical=True, status="divergence")
    vsi = compute_vsi(est, pert)
    clist = _final_state_list(model, trace, est.q_total)
    pert_u = None
    if clist:
        from .qlimits import augment_jacobian
        try:
            pert_u = perturb(augment_jacobian(jac, clist, model, state), est,
                             direction)
        except Exception:
            pert_u = None
            clist = CriticalGeneratorList(entries=(), threshold=clist.threshold,
                                          q_t=clist.q_t)
    report = compute_wvsi(vsi.values, est, clist, pert_u)
    finite = np.where(np.isfinite(report.wvsi), report.wvsi, -np.inf)
    worst = int(np.argmax(finite))
    wvsi_max = float(finite[worst])
    return ContingencyVerdict(
        branch=branch, label=label, wvsi_max=wvsi_max,
        critical=wvsi_max > threshold, status="ok",
        worst_bus=model.buses[worst].id,
        critical_generators=clist.buses,
    )


def screen_contingencies(model: NetworkModel, state: OperatingState,
                         branches: list[int] | None = None,
                         threshold: float = DEFAULT_THRESHOLD) -> list[ContingencyVerdict]:
    """Evaluate a batch of branch outages; per-contingency failures become
    flagged verdicts, never batch aborts."""
    if branches is None:
        branches = [l for l, _ in model.in_service_branches()]
    return [predict_contingency(model, state, l, threshold=threshold)
            for l in branches]


def rank_contingencies(verdicts: list[ContingencyVerdict]) -> list[ContingencyVerdict]:
    """Descending by predicted index; divergence and islanding outages rank
    first (they are the most severe); ties broken by branch index."""
    def key(v: ContingencyVerdict):
        sev = np.inf if v.status != "ok" else v.wvsi_max
        return (-sev, v.branch)
    ordered = sorted(verdicts, key=key)
    return [dc_replace(v, rank=i + 1) for i, v in enumerate(ordered)]


def label_contingencies(model: NetworkModel, k: float,
                        branches: list[int] | None = None,
                        margin_threshold: float = DEFAULT_THRESHOLD,
                        direction: LoadDirection | None = None,
                        step: float = 0.05,
                        resolution: float = 1e-3) -> dict[int, tuple[bool, float]]:
    """Oracle labels: a contingency is actually critical when the remaining
    loadability margin of the outaged grid, expressed in per-unit apparent
    power along the growth direction, falls below the threshold. Non-solvable
    and islanding outages count critical with zero margin."""
    if branches is None:
        branches = [l for l, _ in model.in_service_branches()]
    direction = direction or LoadDirection.proportional(model)
    s_dir = direction.total_apparent()
    out = {}
    for l in branches:
        try:
            post = apply_outage(model, l, 1.0)
            connectivity_check(post)
            trace = trace_pv_curve(post, direction=direction, k_start=k,
                                   step=step, resolution=resolution)
            dlam = (trace.lambda_max - k) * s_dir
            out[l] = (dlam < margin_threshold, float(dlam))
        except (IslandingError, BaseCaseDivergence):
            out[l] = (True, 0.0)
    return out


def _threshold_options(scores: np.ndarray, actual: np.ndarray):
    """Per-group threshold menu: for each count f of missed finite positives
    (lowest-scoring first), the highest cut that still catches the rest and
    the false-positive count it incurs. Non-finite scores always predict
    critical, so they can never be missed."""
    finite = np.isfinite(scores)
    pos = np.sort(scores[actual & finite])
    neg = scores[~actual & finite]
    n_inf_neg = int(np.sum(~actual & ~finite))
    options = []
    eps = 1e-9
    for f in range(len(pos) + 1):
        if f < len(pos):
            th = pos[f] - eps
        else:
            top = max(np.max(scores[finite], initial=0.0), 0.0)
            th = top + eps
        fp = int(np.sum(neg > th)) + n_inf_neg
        options.append((f, float(th), fp))
    return options


def calibrate_thresholds(groups: dict, min_recall: float = 0.85) -> dict:
    """Offline threshold study over several network configurations and
    loading levels at once.

    `groups` maps a key (for example (system, loading)) to a `(scores,
    actual)` pair. The per-group thresholds are chosen jointly: an allowance
    of missed positives, sized so the pooled recall stays at or above
    `min_recall`, is distributed over the groups to minimize the pooled
    error count. Within a group, missing the f lowest-scoring positives
    admits the highest cut that still catches the remainder, which is the
    false-positive-minimal choice; the distribution over groups is solved
    exactly by dynamic programming on the allowance.
    """
    keys = list(groups)
    opts = {}
    total_pos = 0
    for key in keys:
        scores = np.asarray(groups[key][0], dtype=float)
        actual = np.asarray(groups[key][1], dtype=bool)
        if scores.shape != actual.shape:
            raise ValueError(f"group {key!r}: score/label length mismatch")
        opts[key] = _threshold_options(scores, actual)
        total_pos += int(actual.sum())
    budget = int(np.floor((1.0 - min_recall) * total_pos))

    # dp[b] = (total errors, choices) using at most b missed positives
    dp = {0: (0, [])}
    for key in keys:
        nxt = {}
        for b, (err, picks) in dp.items():
            for f, th, fp in opts[key]:
                nb = b + f
                if nb > budget:
                    continue
                cand = (err + f + fp, picks + [(key, th)])
                if nb not in nxt or cand[0] < nxt[nb][0]:
                    nxt[nb] = cand
        dp = nxt
    best = min(dp.values(), key=lambda t: t[0])
    return dict(best[1])


def calibrate_threshold(scores, actual, min_recall: float = 0.85) -> float:
    """Single-configuration threshold study; see `calibrate_thresholds`."""
    return calibrate_thresholds({"_": (scores, actual)}, min_recall)["_"]


def rank_agreement(model: NetworkModel, state: OperatingState,
                   top: int = 10,
                   direction: LoadDirection | None = None) -> WilcoxonResult:
    """Agreement between the predicted severity ranking and the loadability
    oracle, as an exact Wilcoxon signed-rank test.

    The `top` most severe contingencies by predicted index are re-ranked by
    the oracle margin (ascending; unsolvable outages first, ties by branch
    index) and the two rank vectors over that common set are compared. A
    p-value above the significance level means the orderings cannot be told
    apart."""
    verdicts = rank_contingencies(screen_contingencies(model, state))
    sel = [v.branch for v in verdicts[:top]]
    labels = label_contingencies(model, state.k, branches=sel,
                                 direction=direction)
    by_margin = sorted(sel, key=lambda br: (labels[br][1], br))
    oracle_rank = {br: i + 1 for i, br in enumerate(by_margin)}
    predicted = list(range(1, len(sel) + 1))
    oracle = [oracle_rank[br] for br in sel]
    return wilcoxon_signed_rank(predicted, oracle)


# -- evaluation statistics -------------------------------------------------


@dataclass(frozen=True)
class ConfusionMetrics:
    tp: int
    fp: int
    fn: int
    tn: int
    accuracy: float
    precision: float
    recall: float
    f_score: float
    degenerate: bool = False    # no predicted positives: precision forced to 0


def confusion_metrics(predicted, actual) -> ConfusionMetrics:
    predicted = np.asarray(predicted, dtype=bool)
    actual = np.asarray(actual, dtype=bool)
    if predicted.shape != actual.shape:
        raise ValueError(
            f"label vectors differ in length: {predicted.shape} vs {actual.shape}"
        )
    tp = int(np.sum(predicted & actual))
    fp = int(np.sum(predicted & ~actual))
    fn = int(np.sum(~predicted & actual))
    tn = int(np.sum(~predicted & ~actual))
    total = tp + fp + fn + tn
    accuracy = (tp + tn) / total if total else 0.0
    degenerate = (tp + fp) == 0
    precision = tp / (tp + fp) if not degenerate else 0.0
    recall = tp / (tp + fn) if (tp + fn) else 0.0
    f_score = (2 * precision * recall / (precision + recall)
               if precision + recall > 0 else 0.0)
    return ConfusionMetrics(tp=tp, fp=fp, fn=fn, tn=tn, accuracy=accuracy,
                            precision=precision, recall=recall,
                            f_score=f_score, degenerate=degenerate)


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float            # W+ (sum of ranks of positive differences)
    p_value: float              # exact two-sided
    ci_low: float               # 95% Hodges-Lehmann interval of the median diff
    ci_high: float
    n: int                      # nonzero differences used
    degenerate: bool = False    # all differences zero


def _wplus_distribution(ranks2: np.ndarray) -> np.ndarray:
    """Exact distribution of 2*W+ over all sign assignments, by convolution.
    `ranks2` holds doubled ranks so ties (half-integer ranks) stay integral."""
    total = int(ranks2.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in ranks2:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:total + 1 - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(ranks_a, ranks_b) -> WilcoxonResult:
    """Exact two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped; tied magnitudes receive average ranks; the
    p-value enumerates all sign assignments exactly (feasible for the short
    ranking vectors this compares). The interval is the Hodges-Lehmann 95%
    range of Walsh averages under the same exact null distribution.
    """
    a = np.asarray(ranks_a, dtype=float)
    b = np.asarray(ranks_b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"paired samples differ in length: {a.shape} vs {b.shape}")
    d = a - b
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return WilcoxonResult(statistic=0.0, p_value=1.0, ci_low=0.0,
                              ci_high=0.0, n=0, degenerate=True)

    order = np.argsort(np.abs(d), kind="stable")
    ranks = np.empty(n)
    sorted_abs = np.abs(d)[order]
    pos = 0
    while pos < n:
        end = pos
        while end + 1 < n and sorted_abs[end + 1] == sorted_abs[pos]:
            end += 1
        ranks[order[pos:end + 1]] = (pos + end) / 2.0 + 1.0
        pos = end + 1

    w_plus = float(np.sum(ranks[d > 0]))
    ranks2 = np.round(2 * ranks).astype(int)
    counts = _wplus_distribution(ranks2)
    total_assignments = counts.sum()
    total_rank2 = int(ranks2.sum())

    w2 = int(round(2 * w_plus))
    w2_mirror = total_rank2 - w2
    lo = min(w2, w2_mirror)
    p = 2.0 * counts[: lo + 1].sum() / total_assignments
    p = min(1.0, float(p))

    # Hodges-Lehmann 95% interval from Walsh averages of the raw differences
    walsh = np.sort([(d[i] + d[j]) / 2.0
                     for i, j in combinations_with_replacement(range(n), 2)])
    cdf = np.cumsum(counts) / total_assignments
    crit = int(np.searchsorted(cdf, 0.025, side="right")) - 1
    m = len(walsh)
    if crit < 0 or m == 0:
        ci_low, ci_high = float(walsh[0]), float(walsh[-1])
    else:
        # counts index is 2*W+, Walsh averages are indexed by W+ in halves
        k_low = min(crit, total_rank2) // 2
        ci_low = float(walsh[min(k_low, m - 1)])
        ci_high = float(walsh[max(m - 1 - k_low, 0)])
    return WilcoxonResult(statistic=w_plus, p_value=p, ci_low=ci_low,
                          ci_high=ci_high, n=n)
