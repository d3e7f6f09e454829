// Small DOM helpers and render functions. All numbers shown come from
// server responses passed in; this layer computes nothing.

import type { ConceptEdit, CurvePoint, InstanceView, PredictionView, StrategyView } from "./types.js";
import type { CurveSelection } from "./model.js";
import { formatProbability, formatStrategy } from "./model.js";

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function clear(node: HTMLElement): void {
  while (node.firstChild) node.removeChild(node.firstChild);
}

export function renderPrediction(container: HTMLElement, title: string, pred: PredictionView): void {
  const box = el("div", "prediction");
  box.append(el("h3", undefined, title));
  box.append(el("div", "pred-label", `class ${pred.label}`));
  box.append(el("div", "pred-conf", `confidence ${formatProbability(pred.confidence)}`));
  container.append(box);
}

export function renderStrategyBars(container: HTMLElement, strategy: StrategyView, title: string): void {
  const box = el("div", "strategy");
  box.append(el("h3", undefined, title));
  strategy.distribution.forEach((value, i) => {
    const row = el("div", "bar-row");
    const id = (i + 1) as 1 | 2 | 3;
    const label = el("span", "bar-label", formatStrategy(id));
    if (id === strategy.chosen) label.classList.add("chosen");
    const bar = el("div", "bar");
    const fill = el("div", "bar-fill");
    fill.style.width = `${Math.round(100 * value)}%`;
    bar.append(fill);
    row.append(label, bar, el("span", "bar-value", formatProbability(value)));
    box.append(row);
  });
  container.append(box);
}

export interface ConceptRowHandlers {
  onToggle(index: number, target: "on" | "off"): void;
}

export function renderConceptEditor(
  container: HTMLElement,
  view: InstanceView,
  displayed: Map<number, boolean>,
  pending: ConceptEdit[],
  conflictGroup: number[] | null,
  handlers: ConceptRowHandlers,
): void {
  const editedSet = new Set(pending.map((e) => e.concept));
  for (const concept of view.concepts) {
    const row = el("div", "concept-row");
    if (conflictGroup && concept.group !== null && conflictGroup.includes(concept.index)) {
      row.classList.add("conflict");
    }
    const name = el("span", "concept-name", concept.name);
    if (concept.group !== null) {
      name.append(el("span", "group-tag", ` g${concept.group}`));
    }
    const prob = el("span", "concept-prob", formatProbability(concept.probability));
    const active = displayed.get(concept.index) ?? false;
    const toggle = el("button", active ? "toggle on" : "toggle off", active ? "on" : "off");
    if (editedSet.has(concept.index) || concept.intervened) toggle.classList.add("edited");
    toggle.addEventListener("click", () => handlers.onToggle(concept.index, active ? "off" : "on"));
    row.append(name, prob, toggle);
    container.append(row);
  }
}

export function renderCurve(
  container: HTMLElement,
  points: CurvePoint[],
  selection: CurveSelection | null,
): void {
  clear(container);
  if (points.length === 0) {
    container.append(el("div", "empty-state", "no sweep data loaded for this noise rate"));
    return;
  }
  const table = el("table", "curve-table");
  const head = el("tr");
  ["lambda", "participation", "accuracy"].forEach((h) => head.append(el("th", undefined, h)));
  table.append(head);
  points.forEach((p, i) => {
    const row = el("tr");
    if (selection && i === selection.index) row.className = "highlight";
    else if (
      selection &&
      ((selection.neighbors.left && points[i] === selection.neighbors.left) ||
        (selection.neighbors.right && points[i] === selection.neighbors.right))
    ) {
      row.className = "neighbor";
    }
    row.append(el("td", undefined, String(p.lambda)));
    row.append(el("td", undefined, formatProbability(p.human_participation_ratio)));
    row.append(el("td", undefined, formatProbability(p.system_accuracy)));
    table.append(row);
  });
  container.append(table);
  if (selection) {
    container.append(
      el(
        "div",
        "curve-summary",
        `lambda ${selection.point.lambda}: accuracy ${formatProbability(selection.point.system_accuracy)}, ` +
          `participation ${formatProbability(selection.point.human_participation_ratio)}` +
          (selection.exact ? "" : " (nearest grid point)"),
      ),
    );
  }
}

export function renderError(container: HTMLElement, message: string): void {
  clear(container);
  container.append(el("div", "error-state", message));
}
