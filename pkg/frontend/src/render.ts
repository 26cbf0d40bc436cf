/** Pure HTML renderers over the view model. Served numbers pass through
 * `verbatim`, which round-trips the parsed JSON number to its shortest
 * decimal form, identical to the service's own JSON text; nothing is
 * reformatted or recomputed. */

import type { ConsoleStore } from "./store.js";
import type { VerdictRecord, WhatifRow } from "./types.js";

export function verbatim(value: number | null): string {
  return value === null ? "&mdash;" : String(value);
}

function esc(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;");
}

export function renderBadge(store: ConsoleStore): string {
  return store.alarmActive
    ? '<span class="badge alarm" data-alarm="on">ALARM</span>'
    : '<span class="badge ok" data-alarm="off">normal</span>';
}

export function renderConnection(store: ConsoleStore): string {
  const cls = store.connection;
  const text =
    cls === "live" ? "live" : cls === "stale" ? "stale data" : "connecting";
  return `<span class="conn ${cls}" data-conn="${cls}">${text}</span>`;
}

export function renderBoard(store: ConsoleStore): string {
  const report = store.latest;
  if (!report) return '<p class="empty">waiting for the first report</p>';
  const rows = Object.entries(report.buses)
    .map(
      ([bus, cell]) => `<tr data-bus="${bus}">
<td>${bus}</td><td>${verbatim(cell.vsi)}</td><td>${verbatim(cell.vsi_u)}</td>
<td class="wvsi">${verbatim(cell.wvsi)}</td></tr>`,
    )
    .join("\n");
  return `<div class="board">
<p>k=${verbatim(report.k)} worst bus ${report.worst_bus}
 max WVSI <span class="worst">${verbatim(report.worst_wvsi)}</span>
 ${renderBadge(store)}</p>
<table><thead><tr><th>bus</th><th>VSI</th><th>VSI_u</th><th>WVSI</th></tr></thead>
<tbody>${rows}</tbody></table></div>`;
}

export function renderSparkline(store: ConsoleStore, bus: string): string {
  const points = store.sparkline(bus);
  if (!points.length) return `<span class="spark" data-bus="${bus}"></span>`;
  const values = points.map((p) => p.wvsi);
  const lo = Math.min(...values);
  const span = Math.max(...values) - lo || 1;
  const bars = "▁▂▃▄▅▆▇█";
  const glyphs = values
    .map((v) => bars[Math.min(7, Math.floor(((v - lo) / span) * 8))])
    .join("");
  return `<span class="spark" data-bus="${bus}">${glyphs}</span>`;
}

export function renderCriticalGenerators(store: ConsoleStore): string {
  const payload = store.criticalGenerators;
  if (!payload || !payload.generators.length) {
    return '<p class="empty">no generators near exhaustion</p>';
  }
  const rows = payload.generators
    .map(
      (g) => `<tr><td>${g.gen}</td><td>${g.bus}</td>
<td>${verbatim(g.qcr)}</td><td>${verbatim(payload.q_total)}</td>
<td>${verbatim(g.rpr)}</td></tr>`,
    )
    .join("\n");
  return `<table><thead>
<tr><th>gen</th><th>bus</th><th>Q_cr</th><th>Q_T</th><th>RPR</th></tr>
</thead><tbody>${rows}</tbody></table>`;
}

function verdictCells(v: VerdictRecord): string {
  if (v.status !== "ok") {
    return `<td colspan="2" class="unevaluable">not evaluable (${v.status})</td>`;
  }
  const flag = v.critical ? "C" : "";
  return `<td class="wvsi">${verbatim(v.wvsi_max)}</td>
<td class="flag">${flag}</td>`;
}

export function renderWhatifTable(rows: WhatifRow[]): string {
  if (!rows.length) return '<p class="empty">no what-if queries yet</p>';
  const body = rows
    .map((row) => {
      if (row.verdict === null) {
        return `<tr class="invalid" data-branch="${esc(row.branch)}">
<td>${esc(row.branch)}</td>
<td colspan="2" class="message">${esc(row.message ?? "")}</td></tr>`;
      }
      const cls = row.verdict.critical ? "critical" : "";
      return `<tr class="${cls}" data-branch="${esc(row.branch)}">
<td>${row.verdict.label}</td>${verdictCells(row.verdict)}</tr>`;
    })
    .join("\n");
  return `<table><thead>
<tr><th>branch</th><th>WVSI</th><th>critical</th></tr>
</thead><tbody>${body}</tbody></table>`;
}

export function renderRanking(rows: VerdictRecord[]): string {
  if (!rows.length) return '<p class="empty">no contingencies evaluated</p>';
  const body = rows
    .map(
      (v) => `<tr class="${v.critical ? "critical" : ""}" data-branch="${v.label}">
<td>${v.rank ?? ""}</td><td>${v.label}</td><td>${v.status}</td>
<td class="wvsi">${verbatim(v.wvsi_max)}</td></tr>`,
    )
    .join("\n");
  return `<table><thead>
<tr><th>#</th><th>branch</th><th>status</th><th>WVSI</th></tr>
</thead><tbody>${body}</tbody></table>`;
}
