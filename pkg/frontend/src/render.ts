/** Pure view builders: server responses in, HTML strings out.
 *
 * No scoring, thresholding, or reordering happens here; every ordering
 * and every highlight decision comes from the API response verbatim.
 */

import type { DocSummary, DocumentDetail, OverviewView, Suggestion } from "./types";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function docCard(doc: DocSummary, sessionId: string): string {
  const badge = doc.recommended
    ? '<span class="badge badge-recommended">recommended</span>'
    : "";
  const label = doc.label
    ? `<span class="badge badge-label">${escapeHtml(doc.label)}</span>`
    : "";
  const skipped = doc.skipped ? '<span class="badge badge-skipped">skipped</span>' : "";
  return (
    `<a class="doc-card${doc.recommended ? " recommended" : ""}" ` +
    `href="#/s/${sessionId}/doc/${encodeURIComponent(doc.id)}" data-doc-id="${escapeHtml(doc.id)}">` +
    `<span class="doc-id">${escapeHtml(doc.id)}</span>${badge}${label}${skipped}` +
    `<p class="preview">${escapeHtml(doc.preview)}</p></a>`
  );
}

export function renderOverview(view: OverviewView, sessionId: string): string {
  const parts: string[] = ['<section class="overview">'];
  if (view.recommended_doc) {
    parts.push(
      `<div class="recommend-banner">Up next: ` +
        `<a href="#/s/${sessionId}/doc/${encodeURIComponent(view.recommended_doc)}">` +
        `${escapeHtml(view.recommended_doc)}</a></div>`,
    );
  } else {
    parts.push('<div class="recommend-banner done">Nothing left to label.</div>');
  }
  if (view.documents !== null) {
    // no-topic condition: one flat list, server order (recommended first)
    parts.push('<div class="flat-list">');
    for (const doc of view.documents) parts.push(docCard(doc, sessionId));
    parts.push("</div>");
  } else {
    for (const group of view.groups) {
      parts.push(
        `<details class="topic-group" open>` +
          `<summary>Topic ${group.topic}` +
          `<span class="keywords">${group.keywords.map(escapeHtml).join(", ")}</span>` +
          `</summary><div class="group-docs">`,
      );
      for (const doc of group.documents) parts.push(docCard(doc, sessionId));
      parts.push("</div></details>");
    }
  }
  parts.push("</section>");
  return parts.join("");
}

export function renderHighlights(tokens: string[], mask: boolean[]): string {
  if (mask.length !== tokens.length) {
    console.warn(
      `highlight mask length ${mask.length} != token count ${tokens.length}; ` +
        "rendering unhighlighted",
    );
    return escapeHtml(tokens.join(" "));
  }
  return tokens
    .map((tok, i) =>
      mask[i] ? `<mark class="hl">${escapeHtml(tok)}</mark>` : escapeHtml(tok),
    )
    .join(" ");
}

function suggestionOptions(suggestions: Suggestion[]): string {
  // dropdown order is exactly the server's ranking
  const options = ['<option value="">choose an existing label…</option>'];
  for (const s of suggestions) {
    const pct =
      s.probability === null ? "" : ` (${(s.probability * 100).toFixed(1)}%)`;
    options.push(
      `<option value="${escapeHtml(s.label)}">${escapeHtml(s.label)}${pct}</option>`,
    );
  }
  return options.join("");
}

export function renderDocument(detail: DocumentDetail, sessionId: string): string {
  const parts: string[] = ['<section class="document-view">'];
  parts.push(
    `<header><a href="#/s/${sessionId}/overview">&larr; all documents</a>` +
      `<h2>${escapeHtml(detail.doc_id)}</h2>` +
      (detail.label
        ? `<span class="badge badge-label">current: ${escapeHtml(detail.label)}</span>`
        : "") +
      `</header>`,
  );
  parts.push(`<article class="full-text">${escapeHtml(detail.text)}</article>`);
  if (detail.topics !== null && detail.highlight_mask !== null) {
    parts.push(
      `<div class="token-strip"><h3>Keyword view</h3>` +
        `<p class="tokens">${renderHighlights(detail.tokens, detail.highlight_mask)}</p></div>`,
    );
    parts.push('<aside class="topic-panel"><h3>Top topics</h3>');
    for (const entry of detail.topics) {
      parts.push(
        `<div class="topic-entry"><strong>Topic ${entry.topic}</strong>` +
          `<span class="weight">${entry.weight.toFixed(3)}</span>` +
          `<span class="keywords">${entry.keywords.map(escapeHtml).join(", ")}</span></div>`,
      );
    }
    parts.push("</aside>");
  }
  parts.push(
    `<form class="label-form" data-doc-id="${escapeHtml(detail.doc_id)}">` +
      `<select id="label-select">${suggestionOptions(detail.suggestions)}</select>` +
      `<input id="label-input" type="text" placeholder="or type a new label" ` +
      `autocomplete="off" />` +
      `<button id="submit-next" type="submit">submit &amp; next</button>` +
      `<button id="skip" type="button">skip</button>` +
      `</form>`,
  );
  parts.push("</section>");
  return parts.join("");
}

export function renderStart(corpusIds: string[] = ["default"]): string {
  const options = corpusIds
    .map((c) => `<option value="${escapeHtml(c)}">${escapeHtml(c)}</option>`)
    .join("");
  return (
    '<section class="start"><h2>Start a session</h2>' +
    '<form id="start-form">' +
    `<label>Corpus <select id="corpus-id">${options}</select></label>` +
    '<label>Condition <select id="condition">' +
    '<option value="none">none</option><option value="lda">lda</option>' +
    '<option value="slda">slda</option><option value="imported">imported</option>' +
    "</select></label>" +
    '<label>Seed <input id="seed" type="number" value="0" /></label>' +
    '<button type="submit">create</button></form></section>'
  );
}

export function renderError(message: string): string {
  return (
    `<div class="error-banner">API error: ${escapeHtml(message)} ` +
    `<button id="retry">retry</button></div>`
  );
}
