/**
 * DOM rendering for the labeling UI. Render is a pure string template over
 * the session state; bindEvents wires one delegated listener pair per root.
 * Re-rendering replaces innerHTML wholesale, so nothing in here keeps
 * references into the tree.
 */

import type { SessionState } from "./state.js";
import type { BatchItem, HistoryView, RoundRecord } from "./types.js";
import { CLASS_NAMES, CONFIDENCE_MAX, CONFIDENCE_MIN } from "./types.js";

export interface Handlers {
  onLabel(instanceId: string, label: number): void;
  onConfidence(instanceId: string, confidence: number): void;
  onSubmit(): void;
  onRetry(): void;
  onStop(): void;
}

export function escapeHtml(value: unknown): string {
  return String(value)
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#039;");
}

function className(label: number): string {
  return CLASS_NAMES[label] ?? `class ${label}`;
}

function predictionBadge(item: BatchItem): string {
  if (item.predicted_class === null || item.predicted_prob === null) {
    return `<span class="prediction prediction-none">no model prediction yet</span>`;
  }
  const pct = (item.predicted_prob * 100).toFixed(0);
  return (
    `<span class="prediction">model: ${escapeHtml(className(item.predicted_class))}` +
    ` (${pct}%)</span>`
  );
}

function displayFields(item: BatchItem): string {
  const keys = Object.keys(item.display);
  if (keys.length === 0) {
    // dataset rows without display context still need something to look at
    return `<div class="display-empty">no display fields for this instance</div>`;
  }
  const rows = keys
    .map(
      (k) =>
        `<div class="display-row"><span class="display-key">${escapeHtml(k)}</span>` +
        `<span class="display-value">${escapeHtml(item.display[k])}</span></div>`,
    )
    .join("");
  return `<div class="display-fields">${rows}</div>`;
}

function labelToggle(item: BatchItem, picked: number | null, disabled: boolean): string {
  const buttons = CLASS_NAMES.map((name, cls) => {
    const active = picked === cls ? " active" : "";
    const dis = disabled ? " disabled" : "";
    return (
      `<button type="button" class="label-btn label-${cls}${active}"` +
      ` data-action="set-label" data-id="${escapeHtml(item.instance_id)}"` +
      ` data-label="${cls}"${dis}>${escapeHtml(name)}</button>`
    );
  }).join("");
  return `<div class="label-toggle" role="group">${buttons}</div>`;
}

function confidenceSlider(item: BatchItem, value: number, disabled: boolean): string {
  const dis = disabled ? " disabled" : "";
  return (
    `<label class="confidence">confidence` +
    `<input type="range" min="${CONFIDENCE_MIN}" max="${CONFIDENCE_MAX}" step="1"` +
    ` value="${value}" data-action="set-confidence"` +
    ` data-id="${escapeHtml(item.instance_id)}"${dis} />` +
    `<output class="confidence-value">${value}</output></label>`
  );
}

function batchCard(state: SessionState, item: BatchItem): string {
  const entry = state.draft.entries[item.instance_id];
  const picked = entry ? entry.label : null;
  const confidence = entry ? entry.confidence : 5;
  const frozen = state.phase !== "labeling";
  const invalid = state.invalidIds.includes(item.instance_id) ? " invalid" : "";
  return `
    <article class="batch-item${invalid}" data-instance="${escapeHtml(item.instance_id)}">
      <header class="batch-item-header">
        <span class="instance-id">${escapeHtml(item.instance_id)}</span>
        ${predictionBadge(item)}
      </header>
      ${displayFields(item)}
      ${labelToggle(item, picked, frozen)}
      ${confidenceSlider(item, confidence, frozen)}
    </article>`;
}

function noticeBanner(state: SessionState): string {
  if (!state.notice) return "";
  const kind = state.phase === "retry" ? "notice-warn" : "notice-error";
  return `<div class="notice ${kind}">${escapeHtml(state.notice)}</div>`;
}

function metricName(key: string): string {
  return key.replace(/_/g, " ");
}

/** Round banner: headline metrics for the last committed round, with a
 * delta against the round before when both carry the metric. */
function roundBanner(last: RoundRecord | null, prev: RoundRecord | null): string {
  if (!last) return "";
  const parts: string[] = [];
  for (const key of ["f1", "mean_confidence"]) {
    const value = last.metrics[key];
    if (value === undefined) continue;
    let delta = "";
    const before = prev?.metrics[key];
    if (before !== undefined) {
      const diff = value - before;
      const sign = diff >= 0 ? "+" : "";
      delta = ` <span class="delta">(${sign}${diff.toFixed(3)})</span>`;
    }
    parts.push(
      `<span class="round-metric">${escapeHtml(metricName(key))} ` +
        `${value.toFixed(3)}${delta}</span>`,
    );
  }
  if (parts.length === 0) return "";
  return (
    `<div class="round-banner">round ${last.round} recorded: ` +
    parts.join(" ") +
    `</div>`
  );
}

// ---------------------------------------------------------------------------
// History charts

interface ChartSpec {
  title: string;
  metric: string;
  color: string;
}

const CHART_W = 320;
const CHART_H = 120;
const PAD = 24;

function chartSvg(history: HistoryView, spec: ChartSpec): string {
  const points: Array<{ round: number; value: number }> = [];
  for (const r of history.rounds) {
    const v = r.metrics[spec.metric];
    if (v !== undefined) points.push({ round: r.round, value: v });
  }
  if (points.length === 0) {
    return (
      `<div class="chart chart-empty" data-chart="${spec.metric}">` +
      `<h3>${escapeHtml(spec.title)}</h3>` +
      `<p class="chart-placeholder">no rounds recorded yet</p></div>`
    );
  }
  const innerW = CHART_W - 2 * PAD;
  const innerH = CHART_H - 2 * PAD;
  const n = points.length;
  const x = (i: number) => PAD + (n === 1 ? innerW / 2 : (i / (n - 1)) * innerW);
  // both tracked metrics live in [0, 1]; a fixed scale keeps rounds comparable
  const y = (v: number) => PAD + (1 - Math.min(1, Math.max(0, v))) * innerH;
  const poly = points.map((p, i) => `${x(i).toFixed(1)},${y(p.value).toFixed(1)}`).join(" ");
  const dots = points
    .map(
      (p, i) =>
        `<circle cx="${x(i).toFixed(1)}" cy="${y(p.value).toFixed(1)}" r="2.5"` +
        ` fill="${spec.color}"><title>round ${p.round}: ${p.value.toFixed(3)}</title></circle>`,
    )
    .join("");
  let stopMarker = "";
  if (history.status === "stopped") {
    const sx = x(n - 1).toFixed(1);
    stopMarker =
      `<line class="stop-marker" x1="${sx}" y1="${PAD}" x2="${sx}" y2="${PAD + innerH}"` +
      ` stroke="#b91c1c" stroke-dasharray="4 3" />` +
      `<text x="${sx}" y="${PAD - 6}" text-anchor="middle" class="stop-label"` +
      ` fill="#b91c1c">stop</text>`;
  }
  const last = points[points.length - 1]!;
  return `
    <div class="chart" data-chart="${spec.metric}">
      <h3>${escapeHtml(spec.title)} <span class="chart-last">${last.value.toFixed(3)}</span></h3>
      <svg viewBox="0 0 ${CHART_W} ${CHART_H}" width="${CHART_W}" height="${CHART_H}"
           role="img" aria-label="${escapeHtml(spec.title)} per round">
        <rect x="${PAD}" y="${PAD}" width="${innerW}" height="${innerH}"
              fill="none" stroke="#d4d4d8" />
        <polyline points="${poly}" fill="none" stroke="${spec.color}" stroke-width="2" />
        ${dots}
        ${stopMarker}
        <text x="${PAD}" y="${CHART_H - 4}" class="axis-label">round ${points[0]!.round}</text>
        <text x="${CHART_W - PAD}" y="${CHART_H - 4}" text-anchor="end" class="axis-label">
          round ${last.round}</text>
      </svg>
    </div>`;
}

export function renderHistory(history: HistoryView | null): string {
  if (!history || history.rounds.length === 0) {
    const marker = history && history.status === "stopped" ? " (session stopped)" : "";
    return (
      `<section class="history history-empty">` +
      `<h2>learning curves</h2>` +
      `<p class="history-placeholder">no completed rounds yet${escapeHtml(marker)}</p>` +
      `</section>`
    );
  }
  const charts = [
    chartSvg(history, { title: "test F1", metric: "f1", color: "#2563eb" }),
    chartSvg(history, { title: "mean confidence", metric: "mean_confidence", color: "#16a34a" }),
  ].join("");
  const rows = history.rounds
    .map(
      (r) =>
        `<tr><td>${r.round}</td><td>${r.queried_ids.length}</td>` +
        `<td>${r.metrics.f1 !== undefined ? r.metrics.f1.toFixed(3) : "–"}</td>` +
        `<td>${r.metrics.mean_confidence !== undefined ? r.metrics.mean_confidence.toFixed(3) : "–"}</td></tr>`,
    )
    .join("");
  return `
    <section class="history">
      <h2>learning curves</h2>
      <div class="charts">${charts}</div>
      <table class="history-table">
        <thead><tr><th>round</th><th>labeled</th><th>F1</th><th>mean conf.</th></tr></thead>
        <tbody>${rows}</tbody>
      </table>
    </section>`;
}

// ---------------------------------------------------------------------------

function renderBatchSection(state: SessionState): string {
  if (state.phase === "stopped") {
    return (
      `<section class="stopped-panel">` +
      `<h2>session stopped</h2>` +
      `<p class="stop-reason">reason: ${escapeHtml(state.stopReason ?? "unknown")}. ` +
      `The history below is read-only.</p></section>`
    );
  }
  if (!state.batch) {
    return `<section class="loading-panel"><p>loading session…</p></section>`;
  }
  const cards = state.batch.items.map((item) => batchCard(state, item)).join("");
  const submitting = state.phase === "submitting";
  const retry = state.phase === "retry";
  const canSubmit = state.phase === "labeling" && state.draft.complete;
  const submitLabel = submitting ? "submitting…" : "submit labels";
  const actions = retry
    ? `<button type="button" class="retry-btn" data-action="retry">retry submission</button>`
    : `<button type="button" class="submit-btn" data-action="submit"` +
      `${canSubmit ? "" : " disabled"}>${submitLabel}</button>`;
  return `
    <section class="batch-panel">
      <header class="batch-header">
        <h2>round ${state.batch.round}</h2>
        <span class="batch-count">${state.batch.items.length} items to label</span>
        <button type="button" class="stop-btn" data-action="stop"${submitting ? " disabled" : ""}>
          stop session</button>
      </header>
      ${noticeBanner(state)}
      <div class="batch-items">${cards}</div>
      <footer class="batch-footer">${actions}</footer>
    </section>`;
}

function renderSummary(state: SessionState): string {
  const s = state.summary;
  if (!s) return "";
  return (
    `<div class="session-bar">` +
    `<span class="session-id">session ${escapeHtml(s.session_id)}</span>` +
    `<span>labeled ${s.n_labeled}</span>` +
    `<span>unlabeled ${s.n_unlabeled}</span>` +
    `<span>batch size ${s.batch_size}</span>` +
    `</div>`
  );
}

export function render(root: HTMLElement, state: SessionState): void {
  if (state.phase === "booting") {
    root.innerHTML = `<div class="booting"><p>connecting to labeling service…</p></div>`;
    return;
  }
  if (state.phase === "error") {
    root.innerHTML =
      `<div class="fatal-error"><h2>session unavailable</h2>` +
      `<p>${escapeHtml(state.notice ?? "unknown error")}</p></div>`;
    return;
  }
  root.innerHTML = `
    ${renderSummary(state)}
    ${state.phase === "stopped" ? noticeBanner(state) : ""}
    ${roundBanner(state.lastRecord, state.prevRecord)}
    ${renderBatchSection(state)}
    ${renderHistory(state.history)}`;
}

/** One-time event wiring via delegation; survives innerHTML swaps. */
export function bindEvents(root: HTMLElement, handlers: Handlers): void {
  root.addEventListener("click", (ev) => {
    const target = (ev.target as HTMLElement | null)?.closest<HTMLElement>("[data-action]");
    if (!target || target.hasAttribute("disabled")) return;
    const action = target.dataset.action;
    if (action === "set-label") {
      handlers.onLabel(target.dataset.id ?? "", Number(target.dataset.label));
    } else if (action === "submit") {
      handlers.onSubmit();
    } else if (action === "retry") {
      handlers.onRetry();
    } else if (action === "stop") {
      handlers.onStop();
    }
  });
  root.addEventListener("input", (ev) => {
    const target = ev.target as HTMLInputElement | null;
    if (!target || target.dataset.action !== "set-confidence") return;
    handlers.onConfidence(target.dataset.id ?? "", Number(target.value));
  });
}
