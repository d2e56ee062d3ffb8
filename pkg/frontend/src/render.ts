import { RatingFormState, canSubmit } from "./form.js";
import { ANCHORS, DIMENSIONS, PendingBundle, SCORE_MAX, SCORE_MIN } from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

export function renderAnchorLegend(): string {
  const parts: string[] = [];
  for (let score = SCORE_MIN; score <= SCORE_MAX; score++) {
    parts.push(`<span class="anchor">${score} ${escapeHtml(ANCHORS[score] ?? "")}</span>`);
  }
  return `<p class="legend">${parts.join(" / ")}</p>`;
}

export function renderLikertRow(dimension: string, selected: number | undefined): string {
  const cells: string[] = [];
  for (let score = SCORE_MIN; score <= SCORE_MAX; score++) {
    const checked = selected === score ? " checked" : "";
    const anchor = ANCHORS[score] ?? "";
    cells.push(
      `<label class="likert-cell" title="${score} ${escapeHtml(anchor)}">` +
        `<input type="radio" name="score-${escapeHtml(dimension)}" value="${score}"` +
        ` data-dimension="${escapeHtml(dimension)}" aria-label="${escapeHtml(dimension)} ${score} ${escapeHtml(anchor)}"${checked}>` +
        `<span>${score}</span></label>`,
    );
  }
  return `<div class="likert-row"><span class="dimension">${escapeHtml(dimension)}</span>${cells.join("")}</div>`;
}

export function renderBundle(bundle: PendingBundle, form: RatingFormState, done: number, total: number): string {
  const rows = DIMENSIONS.map((d) => renderLikertRow(d, form.scores[d])).join("");
  const submitDisabled = canSubmit(form) ? "" : " disabled";
  const submitting = form.phase === "submitting";
  const errorBox =
    form.phase === "error" && form.errorMessage
      ? `<div class="error" role="alert">${escapeHtml(form.errorMessage)}` +
        `<button type="button" data-action="retry">Retry</button></div>`
      : "";
  return `
<section class="bundle" data-bundle-id="${escapeHtml(bundle.bundle_id)}">
  <header>
    <h2>${escapeHtml(bundle.case_alias)} (cohort year ${bundle.cohort_year})</h2>
    <span class="progress">${done + 1} of ${total}</span>
  </header>
  <details open>
    <summary>Case summary</summary>
    <pre class="case-data">${escapeHtml(bundle.case_data)}</pre>
  </details>
  <article class="explanation"><pre>${escapeHtml(bundle.explanation)}</pre></article>
  <form class="rating-form">
    <p>Rate the explanation on each criterion.</p>
    ${renderAnchorLegend()}
    ${rows}
    <label class="comment">Additional comments (optional)
      <textarea name="comment" rows="3">${escapeHtml(form.comment)}</textarea>
    </label>
    ${errorBox}
    <button type="submit" data-action="submit"${submitDisabled}>
      ${submitting ? "Submitting…" : "Submit rating"}
    </button>
  </form>
</section>`;
}

export function renderDone(total: number): string {
  return `<section class="done"><h2>All set</h2><p>You have rated all ${total} explanations. Thank you.</p></section>`;
}

export function renderLoading(): string {
  return `<section class="loading"><p>Loading session…</p></section>`;
}

export function renderFatal(message: string): string {
  return (
    `<section class="fatal" role="alert"><p>${escapeHtml(message)}</p>` +
    `<button type="button" data-action="reload">Retry</button></section>`
  );
}

export function renderMissingToken(): string {
  return `<section class="fatal"><p>Missing rater token: open this page as ?rater=&lt;your token&gt;.</p></section>`;
}
