/** Pure HTML builders; every dynamic string is escaped before insertion.
 *
 * Probabilities are rendered exactly as received: bar widths scale
 * linearly with the raw value and labels show one decimal percent.
 * Nothing is re-normalized.
 */

import type { ApiPrediction, ModelInfo, PredictionEntry, UiPrediction } from "./types.js";

export function escapeHtml(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

export function formatPercent(p: number): string {
  return `${(p * 100).toFixed(1)}%`;
}

function barRow(entry: PredictionEntry, rank: number): string {
  const emphasized = rank < 3 ? " top3" : "";
  const width = entry.probability * 100;
  return `
  <div class="bar-row${emphasized}" data-code="${escapeHtml(entry.code)}" data-probability="${entry.probability}">
    <span class="bar-label">${escapeHtml(entry.name)} <code>${escapeHtml(entry.code)}</code></span>
    <span class="bar-track"><span class="bar-fill" style="width:${width}%"></span></span>
    <span class="bar-value">${formatPercent(entry.probability)}</span>
  </div>`;
}

/** All classes as horizontal bars, descending, top three emphasized. */
export function renderBars(prediction: ApiPrediction): string {
  const rows = prediction.predictions.map((entry, i) => barRow(entry, i)).join("");
  return `<div class="bars">${rows}</div>`;
}

export function renderResult(prediction: UiPrediction): string {
  const top = prediction.predictions[0];
  const headline = top
    ? `<p class="headline">Top prediction: <strong>${escapeHtml(top.name)}</strong> at ${formatPercent(top.probability)}</p>`
    : "";
  return `
  <div class="result">
    <p class="meta">${escapeHtml(prediction.fileName)} &middot; model ${escapeHtml(prediction.model)} &middot; ${prediction.latencyMs.toFixed(0)} ms</p>
    ${headline}
    ${renderBars(prediction)}
  </div>`;
}

export function renderModelInfo(info: ModelInfo): string {
  const rows = info.classes
    .map((c, i) => `<tr><td>${i}</td><td><code>${escapeHtml(c.code)}</code></td><td>${escapeHtml(c.name)}</td></tr>`)
    .join("");
  const checksum = info.weight_file_checksum
    ? `<code>${escapeHtml(info.weight_file_checksum.slice(0, 16))}&hellip;</code>`
    : "<em>unsaved weights</em>";
  return `
  <div class="model-info">
    <p>Input size: <strong>${info.input_size}&times;${info.input_size}</strong> &middot; weights ${checksum}</p>
    <table><thead><tr><th>#</th><th>code</th><th>class</th></tr></thead><tbody>${rows}</tbody></table>
  </div>`;
}

export function renderErrorBanner(message: string, retryable: boolean): string {
  const retry = retryable ? '<button type="button" data-action="retry">Retry</button>' : "";
  return `<div class="banner error" role="alert">${escapeHtml(message)}${retry}</div>`;
}

export function renderOfflineBanner(): string {
  return '<div class="banner offline" role="alert">Service unreachable &mdash; model information unavailable.</div>';
}

export function renderUploading(fileName: string): string {
  return `<div class="uploading">Analyzing ${escapeHtml(fileName)}&hellip;</div>`;
}

export function renderIdle(): string {
  return '<div class="idle">Choose a dermoscopy image (PNG or JPEG) to get ranked class probabilities.</div>';
}
