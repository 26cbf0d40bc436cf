import type { ReportRecord, VerdictRecord } from "../src/types.js";

export function makeReport(partial: Partial<ReportRecord> = {}): ReportRecord {
  return {
    timestamp: 0,
    k: 1.0,
    w1: 1.0,
    w2: 0.0,
    worst_bus: 14,
    worst_wvsi: 0.5,
    critical_generators: [],
    buses: {
      "9": { vsi: 0.41, vsi_u: 0.43, wvsi: 0.42 },
      "14": { vsi: 0.49, vsi_u: 0.52, wvsi: 0.5 },
    },
    ...partial,
  };
}

export function makeVerdict(partial: Partial<VerdictRecord> = {}): VerdictRecord {
  return {
    branch: 0,
    label: "5-6",
    status: "ok",
    wvsi_max: 0.61,
    critical: false,
    rank: null,
    worst_bus: 14,
    critical_generators: [],
    ...partial,
  };
}
