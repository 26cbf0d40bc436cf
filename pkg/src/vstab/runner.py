"""Scenario orchestration and the monitoring service boundary.

A scenario replays a load ramp (or a single operating point) at snapshot
rate through the full monitoring pipeline: power flow truth, synthetic
phasor measurements, state estimation, reserve anticipation, and the
weighted stability index. Results are collected in an append-only session
log that is byte-reproducible under a fixed seed, and can be persisted as
CSV plus JSON or served live over HTTP with a server-sent event stream.
"""

from __future__ import annotations

import asyncio
import csv
import hashlib
import io
import json
import time
from dataclasses import asdict, dataclass, field, replace as dc_replace
from pathlib import Path

import numpy as np

from .acpf import LoadDirection, OperatingState, solve_power_flow
from .netmodel import NetworkModel, find_branch, load_case
from .qlimits import StabilityReport, assess_snapshot
from .security import (
    ContingencyVerdict, predict_contingency, rank_contingencies,
    screen_contingencies,
)
from .telemetry import (
    EstimatedState, MeasurementWindow, NoiseSpec, estimate_state,
    synthesize_pmu,
)


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything one monitoring run needs; serializable to and from JSON."""

    case: str = "case14"
    k_start: float = 1.0
    k_end: float = 1.0
    step: float = 0.01
    sigma_mag: float = 0.0          # measurement noise, relative magnitude
    sigma_angle: float = 0.0        # measurement noise, absolute rad
    seed: int = 0
    window: int = 10                # reserve-fit window length W
    screening_threshold: float = 0.75
    band: float = 0.01              # critical-list band th
    contingencies: str = "none"     # "none" | "all-n1" | "5-6,3-4,..."
    watch_buses: tuple[int, ...] = ()
    outdir: str | None = None
    port: int = 8000
    rate: float = 1.0               # snapshots per second when serving; <= 0
                                    # publishes the whole replay immediately

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError(f"ramp step must be positive, got {self.step}")
        if self.window < 3:
            raise ValueError(f"window length must be >= 3, got {self.window}")
        for name in ("screening_threshold", "band"):
            v = getattr(self, name)
            if not 0.0 < v < 2.0:
                raise ValueError(f"{name} must lie in (0, 2), got {v}")
        if self.k_start <= 0:
            raise ValueError(f"k_start must be positive, got {self.k_start}")
        if self.k_end < self.k_start:
            raise ValueError("k_end must be >= k_start")

    @classmethod
    def from_file(cls, path: str | Path) -> "ScenarioConfig":
        data = json.loads(Path(path).read_text())
        if "watch_buses" in data:
            data["watch_buses"] = tuple(data["watch_buses"])
        return cls(**data)

    def digest(self) -> str:
        canon = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def ramp(self) -> np.ndarray:
        if self.k_end <= self.k_start:
            return np.array([self.k_start])
        n = int(round((self.k_end - self.k_start) / self.step))
        return self.k_start + self.step * np.arange(n + 1)

    def contingency_list(self, model: NetworkModel) -> list[int] | None:
        if self.contingencies == "none":
            return None
        if self.contingencies == "all-n1":
            return [l for l, _ in model.in_service_branches()]
        out = []
        for tok in self.contingencies.split(","):
            f, t = (int(x) for x in tok.strip().split("-"))
            out.append(find_branch(model, f, t))
        return out


def _report_record(k: float, report: StabilityReport,
                   model: NetworkModel) -> dict:
    worst_pos, worst_val = report.worst()
    per_bus = {}
    for i, b in enumerate(model.buses):
        if np.isfinite(report.wvsi[i]):
            per_bus[str(b.id)] = {
                "vsi": round(float(report.vsi[i]), 9),
                "vsi_u": round(float(report.vsi_u[i]), 9),
                "wvsi": round(float(report.wvsi[i]), 9),
            }
    return {
        "timestamp": float(report.timestamp),
        "k": round(float(k), 9),
        "w1": round(float(report.w1), 9),
        "w2": round(float(report.w2), 9),
        "worst_bus": int(model.buses[worst_pos].id),
        "worst_wvsi": round(float(worst_val), 9),
        "critical_generators": [
            {"gen": int(g), "bus": int(b), "qcr": round(float(q), 9)}
            for g, b, q in report.critical_generators
        ],
        "buses": per_bus,
    }


def _verdict_record(v: ContingencyVerdict) -> dict:
    return {
        "branch": int(v.branch),
        "label": v.label,
        "status": v.status,
        "wvsi_max": None if not np.isfinite(v.wvsi_max) else round(float(v.wvsi_max), 9),
        "critical": bool(v.critical),
        "rank": v.rank,
        "worst_bus": v.worst_bus,
        "critical_generators": [int(b) for b in v.critical_generators],
    }


class SessionLog:
    """Append-only record of one scenario run.

    Serialization is canonical (sorted keys, fixed float rounding), so two
    runs with the same config and seed produce identical bytes.
    """

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.meta = {"config": asdict(config), "digest": config.digest(),
                     "seed": config.seed}
        self.reports: list[dict] = []
        self.verdicts: list[dict] = []
        self.errors: list[dict] = []

    def append_report(self, record: dict) -> None:
        if self.reports and record["timestamp"] <= self.reports[-1]["timestamp"]:
            raise ValueError("session log timestamps must increase")
        self.reports.append(record)

    def append_verdicts(self, records: list[dict]) -> None:
        self.verdicts.extend(records)

    def append_error(self, timestamp: float, k: float, message: str) -> None:
        self.errors.append({"timestamp": float(timestamp),
                            "k": round(float(k), 9), "error": message})

    def to_json_bytes(self) -> bytes:
        doc = {"meta": self.meta, "reports": self.reports,
               "verdicts": self.verdicts, "errors": self.errors}
        return json.dumps(doc, sort_keys=True, indent=1).encode()

    def reports_csv(self) -> str:
        buf = io.StringIO()
        watch = [str(b) for b in self.config.watch_buses]
        head = ["timestamp", "k", "worst_bus", "worst_wvsi", "w1"]
        for b in watch:
            head += [f"vsi@{b}", f"wvsi@{b}"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(head)
        for r in self.reports:
            row = [r["timestamp"], r["k"], r["worst_bus"], r["worst_wvsi"],
                   r["w1"]]
            for b in watch:
                cell = r["buses"].get(b)
                row += [cell["vsi"], cell["wvsi"]] if cell else ["", ""]
            w.writerow(row)
        return buf.getvalue()

    def ranking_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rank", "branch", "label", "status", "wvsi_max", "critical"])
        for r in self.verdicts:
            w.writerow([r["rank"], r["branch"], r["label"], r["status"],
                        r["wvsi_max"], r["critical"]])
        return buf.getvalue()

    def write(self, outdir: str | Path) -> list[Path]:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        (out / "session.json").write_bytes(self.to_json_bytes())
        written.append(out / "session.json")
        (out / "reports.csv").write_text(self.reports_csv())
        written.append(out / "reports.csv")
        if self.verdicts:
            (out / "ranking.csv").write_text(self.ranking_csv())
            written.append(out / "ranking.csv")
        return written


@dataclass(frozen=True)
class PublishedSnapshot:
    """Immutable bundle the service answers what-if requests from."""

    snapshot_id: int
    timestamp: float
    k: float
    state: OperatingState
    estimate: EstimatedState
    report: StabilityReport
    record: dict = field(repr=False)


def replay_snapshots(config: ScenarioConfig):
    """Generator over the scenario's snapshots; yields a PublishedSnapshot
    per converged ramp point and stops at the first non-convergent one."""
    model = load_case(config.case)
    direction = LoadDirection.proportional(model)
    noise = NoiseSpec(sigma_mag=config.sigma_mag, sigma_angle=config.sigma_angle)
    seeds = np.random.SeedSequence(config.seed).generate_state(
        len(config.ramp()))
    window = MeasurementWindow(config.window)
    state = None
    for i, k in enumerate(config.ramp()):
        state = solve_power_flow(model, k=float(k), direction=direction,
                                 warm_start=state)
        if not state.converged:
            return
        snap = synthesize_pmu(state, noise, seed=int(seeds[i]),
                              timestamp=float(i))
        est = estimate_state(snap, state.model)
        window.append(est)
        report = assess_snapshot(model, est, window=window,
                                 direction=direction, th=config.band,
                                 state=state)
        record = _report_record(k, report, model)
        yield PublishedSnapshot(snapshot_id=i, timestamp=float(i), k=float(k),
                                state=state, estimate=est, report=report,
                                record=record)


def run_scenario(config: ScenarioConfig) -> SessionLog:
    """Batch replay: every snapshot through the monitoring pipeline, an
    optional security batch on the last converged snapshot, results
    persisted when an output directory is configured."""
    log = SessionLog(config)
    model = load_case(config.case)
    last = None
    try:
        for snap in replay_snapshots(config):
            log.append_report(snap.record)
            last = snap
    except Exception as exc:
        t = last.timestamp + 1.0 if last else 0.0
        k = last.k if last else config.k_start
        log.append_error(t, k, f"{type(exc).__name__}: {exc}")
    branches = config.contingency_list(model)
    if branches is not None and last is not None:
        verdicts = rank_contingencies(screen_contingencies(
            model, last.state, branches=branches,
            threshold=config.screening_threshold))
        log.append_verdicts([_verdict_record(v) for v in verdicts])
    if config.outdir:
        log.write(config.outdir)
    return log


# -- HTTP service ----------------------------------------------------------


class ServiceState:
    """Mutable service-side state: published snapshots, the screening
    threshold, and the what-if cache. Snapshots are appended by a single
    writer and only ever read by request handlers."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.model = load_case(config.case)
        self.threshold = config.screening_threshold
        self.snapshots: list[PublishedSnapshot] = []
        self.whatif_cache: dict[tuple[int, int], ContingencyVerdict] = {}
        self.subscribers: list[asyncio.Queue] = []

    @property
    def latest(self) -> PublishedSnapshot | None:
        return self.snapshots[-1] if self.snapshots else None

    def publish(self, snap: PublishedSnapshot) -> None:
        self.snapshots.append(snap)
        for q in list(self.subscribers):
            q.put_nowait(snap.record)

    def whatif(self, branch: int) -> ContingencyVerdict:
        snap = self.latest
        key = (snap.snapshot_id, branch)
        if key not in self.whatif_cache:
            self.whatif_cache[key] = predict_contingency(
                self.model, snap.state, branch, threshold=self.threshold)
        v = self.whatif_cache[key]
        # flags follow the live threshold; cached severity does not change
        if v.status == "ok":
            v = dc_replace(v, critical=bool(v.wvsi_max > self.threshold))
        return v


def create_app(config: ScenarioConfig, state: ServiceState | None = None):
    """FastAPI application over a replayed scenario.

    With `config.rate > 0` a background task publishes one snapshot per
    1/rate seconds; otherwise the full replay is published at startup,
    which suits tests and batch inspection.
    """
    from contextlib import asynccontextmanager

    from fastapi import Body, FastAPI, HTTPException, Query
    from fastapi.responses import StreamingResponse

    svc = state or ServiceState(config)

    async def _replay_task():
        loop = asyncio.get_event_loop()
        gen = replay_snapshots(config)
        while True:
            snap = await loop.run_in_executor(None, next, gen, None)
            if snap is None:
                break
            svc.publish(snap)
            if config.rate > 0:
                await asyncio.sleep(1.0 / config.rate)

    @asynccontextmanager
    async def _lifespan(app):
        task = None
        if config.rate > 0:
            task = asyncio.create_task(_replay_task())
            app.state.replay = task
        else:
            for snap in replay_snapshots(config):
                svc.publish(snap)
        yield
        if task is not None:
            task.cancel()

    app = FastAPI(title="vstab monitoring service", lifespan=_lifespan)
    app.state.svc = svc

    @app.get("/api/report/latest")
    def latest_report():
        snap = svc.latest
        if snap is None:
            raise HTTPException(404, "no snapshot published yet")
        return snap.record

    @app.get("/api/report/history")
    def report_history(from_: float = Query(0.0, alias="from")):
        return [s.record for s in svc.snapshots if s.timestamp >= from_]

    @app.get("/api/generators/critical")
    def critical_generators():
        snap = svc.latest
        if snap is None:
            raise HTTPException(404, "no snapshot published yet")
        est = snap.estimate
        rows = []
        for g, b, q in snap.report.critical_generators:
            rows.append({"gen": int(g), "bus": int(b),
                         "qcr": round(float(q), 9),
                         "rpr": round(float(est.rpr[g]), 9)})
        return {"q_total": round(float(est.q_total), 9), "generators": rows}

    @app.post("/api/whatif")
    def whatif(payload: dict = Body(...)):
        if svc.latest is None:
            raise HTTPException(404, "no snapshot published yet")
        spec = payload.get("branch")
        try:
            f, t = (int(x) for x in str(spec).split("-"))
            branch = find_branch(svc.model, f, t)
        except (ValueError, KeyError):
            raise HTTPException(422, f"unknown branch {spec!r}")
        v = svc.whatif(branch)
        body = _verdict_record(v)
        body["snapshot_id"] = svc.latest.snapshot_id
        return body

    @app.get("/api/contingencies/ranking")
    def ranking():
        if svc.latest is None:
            raise HTTPException(404, "no snapshot published yet")
        snap = svc.latest
        branches = config.contingency_list(svc.model)
        if branches is None:
            branches = [l for l, _ in svc.model.in_service_branches()]
        verdicts = [svc.whatif(l) for l in branches]
        return [_verdict_record(v) for v in rank_contingencies(verdicts)]

    @app.put("/api/config/threshold")
    def set_threshold(payload: dict = Body(...)):
        th = payload.get("threshold")
        if not isinstance(th, (int, float)) or not 0.0 < th < 2.0:
            raise HTTPException(422, "threshold must lie in (0, 2)")
        svc.threshold = float(th)
        return {"threshold": svc.threshold}

    @app.get("/api/stream")
    async def stream():
        queue: asyncio.Queue = asyncio.Queue()
        svc.subscribers.append(queue)

        async def events():
            last_ts = -np.inf
            try:
                # replay for late joiners, then live pushes; the timestamp
                # guard drops records seen both ways during the handover
                for s in list(svc.snapshots):
                    last_ts = s.timestamp
                    yield f"data: {json.dumps(s.record, sort_keys=True)}\n\n"
                while True:
                    rec = await queue.get()
                    if rec["timestamp"] <= last_ts:
                        continue
                    last_ts = rec["timestamp"]
                    yield f"data: {json.dumps(rec, sort_keys=True)}\n\n"
            finally:
                svc.subscribers.remove(queue)

        return StreamingResponse(events(), media_type="text/event-stream")

    return app


def serve(config: ScenarioConfig) -> None:
    import uvicorn

    uvicorn.run(create_app(config), host="127.0.0.1", port=config.port)


def snapshot_latency(case: str = "case118", k: float = 1.0) -> float:
    """Wall time of one full estimate-to-index pipeline pass, seconds."""
    model = load_case(case)
    direction = LoadDirection.proportional(model)
    window = MeasurementWindow(10)
    state = None
    for i, kk in enumerate(np.linspace(max(k - 0.04, 0.1), k, 5)):
        state = solve_power_flow(model, k=float(kk), direction=direction,
                                 warm_start=state)
        snap = synthesize_pmu(state, NoiseSpec(0.0, 0.0), timestamp=float(i))
        window.append(estimate_state(snap, state.model))
    t0 = time.perf_counter()
    snap = synthesize_pmu(state, NoiseSpec(0.0, 0.0), timestamp=10.0)
    est = estimate_state(snap, state.model)
    assess_snapshot(model, est, window=window, direction=direction, state=state)
    return time.perf_counter() - t0
