import type { Phase } from "./store";
import type { ComparisonView, WireExport } from "./types";

/** DOM for each screen. Pure functions of state so tests can render any
 * phase headlessly and inspect what an evaluator would actually see.
 *
 * Blinding rule: while a session is active nothing here may show a
 * realism score, a win count, or a method name. Scores appear only on
 * the completion screen.
 */

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function progressLabel(view: ComparisonView): string {
  return `Round ${view.round}/${view.totalRounds}, ${view.doneInRound}/${view.totalInRound}`;
}

export interface ComparisonHandlers {
  onChoose: (side: "left" | "right") => void;
  onToggleLink: (linked: boolean) => void;
}

export function renderComparison(
  view: ComparisonView,
  handlers: ComparisonHandlers,
  busy: boolean,
): HTMLElement {
  const root = el("div", "comparison");

  const header = el("header", "bar");
  header.append(el("span", "progress", progressLabel(view)));
  if (view.bye !== undefined) {
    header.append(el("span", "bye-note", "one mesh sits out this round"));
  }
  root.append(header);

  const stage = el("div", "stage");
  for (const side of ["left", "right"] as const) {
    const panel = el("figure", `panel panel-${side}`);
    const canvas = el("canvas");
    canvas.dataset.side = side;
    panel.append(canvas);
    const button = el("button", "choose", "This one looks more realistic");
    button.dataset.side = side;
    button.disabled = busy;
    button.addEventListener("click", () => handlers.onChoose(side));
    panel.append(button);
    stage.append(panel);
  }
  root.append(stage);

  const controls = el("footer", "bar");
  const label = el("label", "link-toggle");
  const checkbox = el("input");
  checkbox.type = "checkbox";
  checkbox.checked = true;
  checkbox.addEventListener("change", () => handlers.onToggleLink(checkbox.checked));
  label.append(checkbox, document.createTextNode(" rotate both together"));
  controls.append(label);
  root.append(controls);
  return root;
}

export function renderError(message: string, onRetry: () => void): HTMLElement {
  const banner = el("div", "retry-banner");
  banner.setAttribute("role", "alert");
  banner.append(el("span", "message", `Connection trouble: ${message}`));
  const button = el("button", "retry", "Try again");
  button.addEventListener("click", onRetry);
  banner.append(button);
  return banner;
}

export function renderLoading(): HTMLElement {
  return el("div", "loading", "Loading…");
}

export function renderComplete(exported: WireExport, placementSeed: number): HTMLElement {
  const root = el("div", "complete");
  root.append(el("h2", undefined, "Session complete"));
  root.append(
    el("p", undefined, `Thank you! Results for object "${exported.object_id}".`),
  );
  const table = el("table", "results");
  const head = el("tr");
  for (const h of ["mesh", "score", "wins", "rounds"]) head.append(el("th", undefined, h));
  table.append(head);
  const rows = [...exported.records].sort((a, b) => b.score - a.score);
  for (const rec of rows) {
    const tr = el("tr");
    tr.append(el("td", undefined, rec.mesh_id));
    tr.append(el("td", undefined, rec.score.toFixed(3)));
    tr.append(el("td", undefined, String(rec.wins)));
    tr.append(el("td", undefined, String(rec.rounds_played)));
    table.append(tr);
  }
  root.append(table);
  root.append(
    el("p", "placement-note", `Left/right placement seed: ${placementSeed}`),
  );
  return root;
}

/** Render whatever the store's phase calls for into the mount point. */
export function renderPhase(
  mount: HTMLElement,
  phase: Phase,
  handlers: ComparisonHandlers & { onRetry: () => void },
  placementSeed: number,
): void {
  mount.replaceChildren();
  switch (phase.kind) {
    case "idle":
      break;
    case "loading":
      mount.append(renderLoading());
      break;
    case "comparing":
      mount.append(renderComparison(phase.view, handlers, false));
      break;
    case "submitting":
      mount.append(renderComparison(phase.view, handlers, true));
      break;
    case "error":
      mount.append(renderError(phase.message, handlers.onRetry));
      break;
    case "complete":
      mount.append(renderComplete(phase.export, placementSeed));
      break;
  }
}
