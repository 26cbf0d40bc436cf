/** Console view model. Presentation-only: every number it holds arrived in
 * a served payload; the only client-side decision is comparing the served
 * maximum index against the operator's alarm threshold. */

import type { ApiClient } from "./client.js";
import { ApiError } from "./client.js";
import type {
  ConnectionState, CriticalGeneratorsPayload, ReportRecord, SparklinePoint,
  VerdictRecord, WhatifRow,
} from "./types.js";

export const DEFAULT_THRESHOLD = 0.75;
export const DEFAULT_HISTORY_LIMIT = 120;

const BRANCH_PATTERN = /^\d+-\d+$/;

export class ConsoleStore {
  latest: ReportRecord | null = null;
  criticalGenerators: CriticalGeneratorsPayload | null = null;
  whatifRows: WhatifRow[] = [];
  ranking: VerdictRecord[] = [];
  threshold: number = DEFAULT_THRESHOLD;
  connection: ConnectionState = "connecting";

  private readonly history = new Map<string, SparklinePoint[]>();
  private readonly inFlight = new Set<string>();
  private readonly listeners: Array<() => void> = [];

  constructor(
    readonly watchBuses: string[] = [],
    readonly historyLimit: number = DEFAULT_HISTORY_LIMIT,
  ) {}

  subscribe(listener: () => void): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const l of this.listeners) l();
  }

  /** Alarm when the served maximum weighted index exceeds the threshold.
   * Uses the served `worst_wvsi` verbatim; nothing is recomputed. */
  get alarmActive(): boolean {
    return this.latest !== null && this.latest.worst_wvsi > this.threshold;
  }

  sparkline(bus: string): SparklinePoint[] {
    return this.history.get(bus) ?? [];
  }

  applyReport(report: ReportRecord): void {
    if (this.latest && report.timestamp <= this.latest.timestamp) return;
    this.latest = report;
    const watched = this.watchBuses.length
      ? this.watchBuses
      : Object.keys(report.buses);
    for (const bus of watched) {
      const cell = report.buses[bus];
      if (!cell) continue;
      const series = this.history.get(bus) ?? [];
      series.push({ timestamp: report.timestamp, wvsi: cell.wvsi });
      if (series.length > this.historyLimit) {
        series.splice(0, series.length - this.historyLimit);
      }
      this.history.set(bus, series);
    }
    this.notify();
  }

  setConnection(state: ConnectionState): void {
    if (state === this.connection) return;
    this.connection = state;
    this.notify();
  }

  setCriticalGenerators(payload: CriticalGeneratorsPayload): void {
    this.criticalGenerators = payload;
    this.notify();
  }

  setRanking(rows: VerdictRecord[]): void {
    this.ranking = rows;
    this.notify();
  }

  /** Operator threshold move: local badge state first, then the service so
   * later what-if verdicts are badged the same way. */
  async setThreshold(value: number, client?: ApiClient): Promise<void> {
    this.threshold = value;
    this.notify();
    if (client) await client.setThreshold(value);
  }

  whatifPending(branch: string): boolean {
    return this.inFlight.has(branch);
  }

  /** What-if request with per-contingency dedupe: a branch already in
   * flight is not re-requested. Service rejections become visible rows. */
  async requestWhatif(client: ApiClient, branch: string): Promise<void> {
    if (this.inFlight.has(branch)) return;
    if (!BRANCH_PATTERN.test(branch)) {
      this.pushWhatifRow({
        branch, verdict: null,
        message: `"${branch}" is not a from-to branch id`,
      });
      return;
    }
    this.inFlight.add(branch);
    this.notify();
    try {
      const verdict = await client.whatif(branch);
      this.pushWhatifRow({ branch, verdict, message: null });
    } catch (err) {
      const message =
        err instanceof ApiError ? err.message : "request failed";
      this.pushWhatifRow({ branch, verdict: null, message });
    } finally {
      this.inFlight.delete(branch);
      this.notify();
    }
  }

  private pushWhatifRow(row: WhatifRow): void {
    this.whatifRows = [...this.whatifRows, row];
    this.notify();
  }
}
