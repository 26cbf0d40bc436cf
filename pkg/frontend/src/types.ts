/** Served payload shapes, mirrored from the monitoring service's JSON API.
 * The console never recomputes any of these values; it renders them as
 * received. */

export interface BusIndices {
  vsi: number;
  vsi_u: number;
  wvsi: number;
}

export interface CriticalGeneratorEntry {
  gen: number;
  bus: number;
  qcr: number;
}

export interface ReportRecord {
  timestamp: number;
  k: number;
  w1: number;
  w2: number;
  worst_bus: number;
  worst_wvsi: number;
  critical_generators: CriticalGeneratorEntry[];
  buses: Record<string, BusIndices>;
}

export interface CriticalGeneratorsPayload {
  q_total: number;
  generators: Array<CriticalGeneratorEntry & { rpr: number }>;
}

export type VerdictStatus = "ok" | "islanding" | "divergence";

export interface VerdictRecord {
  branch: number;
  label: string;
  status: VerdictStatus;
  wvsi_max: number | null;
  critical: boolean;
  rank: number | null;
  worst_bus: number | null;
  critical_generators: number[];
  snapshot_id?: number;
}

export type ConnectionState = "connecting" | "live" | "stale";

export interface SparklinePoint {
  timestamp: number;
  wvsi: number;
}

/** One row of the what-if workbench: either a served verdict or a
 * client-side note (validation failure, request error). */
export interface WhatifRow {
  branch: string;
  verdict: VerdictRecord | null;
  message: string | null;
}
