"""Command-line entry points: scenario replay, the monitoring service,
one-shot security screening, and the offline evaluation study."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .acpf import solve_power_flow
from .netmodel import load_case
from .runner import ScenarioConfig, run_scenario, serve
from .security import (
    calibrate_thresholds, confusion_metrics, label_contingencies,
    rank_agreement, rank_contingencies, screen_contingencies,
)


def _config_from_args(args) -> ScenarioConfig:
    if args.config:
        cfg = ScenarioConfig.from_file(args.config)
    else:
        cfg = ScenarioConfig()
    overrides = {}
    for name in ("case", "k_start", "k_end", "step", "outdir", "port",
                 "contingencies", "seed"):
        v = getattr(args, name, None)
        if v is not None:
            overrides[name] = v
    if getattr(args, "watch", None):
        overrides["watch_buses"] = tuple(int(b) for b in args.watch.split(","))
    if overrides:
        from dataclasses import replace
        cfg = replace(cfg, **overrides)
    return cfg


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    log = run_scenario(cfg)
    if cfg.outdir:
        print(f"wrote {len(log.reports)} reports to {cfg.outdir}")
    else:
        sys.stdout.buffer.write(log.to_json_bytes())
    return 0


def cmd_serve(args) -> int:
    serve(_config_from_args(args))
    return 0


def cmd_security(args) -> int:
    model = load_case(args.case)
    state = solve_power_flow(model, k=args.k)
    if not state.converged:
        print(f"base case does not converge at k={args.k}", file=sys.stderr)
        return 1
    if args.contingencies == "all-n1":
        branches = None
    else:
        from .netmodel import find_branch
        branches = []
        for tok in args.contingencies.split(","):
            f, t = (int(x) for x in tok.strip().split("-"))
            branches.append(find_branch(model, f, t))
    verdicts = rank_contingencies(screen_contingencies(
        model, state, branches=branches, threshold=args.threshold))
    rows = []
    for v in verdicts:
        rows.append({
            "rank": v.rank, "branch": v.branch, "label": v.label,
            "status": v.status, "critical": bool(v.critical),
            "wvsi_max": None if not np.isfinite(v.wvsi_max) else round(v.wvsi_max, 6),
        })
    json.dump(rows, sys.stdout, indent=1)
    print()
    return 0


def cmd_evaluate(args) -> int:
    """Offline study over several configurations: oracle labels, jointly
    calibrated thresholds, pooled confusion metrics, ranking agreement."""
    cases = args.case or ["case14", "case57"]
    loadings = args.k or [1.0, 1.3]
    groups = {}
    detail = {}
    for case in cases:
        model = load_case(case)
        for k in loadings:
            state = solve_power_flow(model, k=k)
            if not state.converged:
                print(f"skipping {case} k={k}: no base solution",
                      file=sys.stderr)
                continue
            verdicts = screen_contingencies(model, state)
            labels = label_contingencies(model, k,
                                         margin_threshold=args.margin_threshold)
            scores = np.array([np.inf if v.status != "ok" else v.wvsi_max
                               for v in verdicts])
            actual = np.array([labels[v.branch][0] for v in verdicts])
            groups[f"{case}@k={k}"] = (scores, actual)
            detail[f"{case}@k={k}"] = (model, state)
    thresholds = calibrate_thresholds(groups, min_recall=args.min_recall)
    pred_all, act_all = [], []
    for key, (scores, actual) in groups.items():
        pred = ~np.isfinite(scores) | (scores > thresholds[key])
        pred_all.extend(pred)
        act_all.extend(actual)
    m = confusion_metrics(pred_all, act_all)
    ranking = {}
    for key, (model, state) in detail.items():
        w = rank_agreement(model, state, top=args.top)
        ranking[key] = {"statistic": w.statistic, "p_value": round(w.p_value, 6),
                        "n": w.n}
    out = {
        "thresholds": {k: round(v, 6) for k, v in thresholds.items()},
        "confusion": {"tp": m.tp, "fp": m.fp, "fn": m.fn, "tn": m.tn},
        "metrics": {
            "accuracy": round(100 * m.accuracy, 2),
            "precision": round(100 * m.precision, 2),
            "recall": round(100 * m.recall, 2),
            "f_score": round(100 * m.f_score, 2),
        },
        "ranking_agreement": ranking,
    }
    json.dump(out, sys.stdout, indent=1)
    print()
    return 0


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="vstab",
                                description="voltage stability monitoring")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="replay a scenario to files or stdout")
    pr.add_argument("--config")
    pr.add_argument("--case")
    pr.add_argument("--k-start", dest="k_start", type=float)
    pr.add_argument("--k-end", dest="k_end", type=float)
    pr.add_argument("--step", type=float)
    pr.add_argument("--seed", type=int)
    pr.add_argument("--watch", help="comma-separated bus ids for CSV columns")
    pr.add_argument("--contingencies")
    pr.add_argument("--outdir")
    pr.set_defaults(func=cmd_run)

    ps = sub.add_parser("serve", help="run the monitoring HTTP service")
    ps.add_argument("--config")
    ps.add_argument("--case")
    ps.add_argument("--port", type=int)
    ps.add_argument("--k-start", dest="k_start", type=float)
    ps.add_argument("--k-end", dest="k_end", type=float)
    ps.set_defaults(func=cmd_serve)

    pc = sub.add_parser("security", help="screen and rank branch outages")
    pc.add_argument("--case", required=True)
    pc.add_argument("--k", type=float, default=1.0)
    pc.add_argument("--contingencies", default="all-n1")
    pc.add_argument("--threshold", type=float, default=0.75)
    pc.set_defaults(func=cmd_security)

    pe = sub.add_parser("evaluate",
                        help="offline classification and ranking study")
    pe.add_argument("--case", action="append")
    pe.add_argument("--k", action="append", type=float)
    pe.add_argument("--margin-threshold", dest="margin_threshold",
                    type=float, default=0.75)
    pe.add_argument("--min-recall", dest="min_recall", type=float, default=0.85)
    pe.add_argument("--top", type=int, default=10)
    pe.set_defaults(func=cmd_evaluate)

    args = p.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
