// Console wiring: instance panel (left), group-aware concept editor
// (center), strategy/prediction panel and cost-weight explorer (right).
// The view only changes after a server response confirms the action.

import { ApiError, Client } from "./api.js";
import {
  SessionState,
  displayedConceptState,
  emptySession,
  formatStrategy,
  pushHistory,
  selectCurvePoint,
  toggleEdit,
} from "./model.js";
import { clear, el, renderConceptEditor, renderCurve, renderError, renderPrediction, renderStrategyBars } from "./ui.js";
import type { CurvePoint, InstanceView, InterveneResponse } from "./types.js";

const client = new Client("");
let session: SessionState = emptySession();
let view: InstanceView | null = null;
let lastIntervention: InterveneResponse | null = null;
let conflictGroup: number[] | null = null;
let curvePoints: CurvePoint[] = [];

const $ = (id: string) => document.getElementById(id) as HTMLElement;

async function loadInstance(id: number): Promise<void> {
  conflictGroup = null;
  lastIntervention = null;
  try {
    view = await client.getInstance(id);
  } catch (err) {
    view = null;
    renderError($("instance-panel"), err instanceof ApiError && err.status === 404 ? `instance ${id} not found` : String(err));
    clear($("concept-panel"));
    clear($("result-panel"));
    return;
  }
  session = { ...emptySession(), instanceId: id, history: session.history };
  renderAll();
}

function renderAll(): void {
  if (!view) return;
  const left = $("instance-panel");
  clear(left);
  left.append(el("h2", undefined, `instance #${view.id}`));
  left.append(el("div", undefined, `true label: ${view.true_label}`));
  renderPrediction(left, "model prediction", view.prediction);
  renderStrategyBars(left, view.strategy, "strategy distribution");

  const expertRow = el("div", "expert-row");
  const humanRouted = view.strategy.chosen !== 1;
  const input = el("input") as HTMLInputElement;
  input.type = "number";
  input.min = "0";
  input.max = String(view.n_classes - 1);
  input.id = "expert-input";
  input.disabled = !humanRouted;
  const button = el("button", undefined, "act as expert");
  button.disabled = !humanRouted;
  button.addEventListener("click", () => void actAsExpert(parseInt(input.value, 10)));
  expertRow.append(input, button);
  if (!humanRouted) {
    expertRow.append(el("span", "hint", "expert entry disabled: instance is routed AI-only"));
  }
  left.append(expertRow);

  const center = $("concept-panel");
  clear(center);
  center.append(el("h2", undefined, "concepts"));
  const displayed = displayedConceptState(view.concepts, session.pendingEdits);
  renderConceptEditor(center, view, displayed, session.pendingEdits, conflictGroup, {
    onToggle(index, target) {
      if (!view) return;
      session = { ...session, pendingEdits: toggleEdit(session.pendingEdits, view.concepts, index, target) };
      conflictGroup = null;
      renderAll();
    },
  });
  const applyRow = el("div", "apply-row");
  const apply = el("button", undefined, `apply ${session.pendingEdits.length} edit(s)`);
  apply.disabled = session.pendingEdits.length === 0;
  apply.addEventListener("click", () => void applyEdits());
  applyRow.append(apply);
  center.append(applyRow);

  renderResultPanel();
}

function renderResultPanel(): void {
  const right = $("result-panel");
  clear(right);
  right.append(el("h2", undefined, "outcome"));
  if (lastIntervention) {
    renderPrediction(right, "before", lastIntervention.before);
    renderPrediction(right, "after", lastIntervention.after);
    renderStrategyBars(right, lastIntervention.strategy_after, "re-gated strategy");
  }
  right.append(el("h2", undefined, "cost-weight what-if"));
  const lambdaRow = el("div", "lambda-row");
  const input = el("input") as HTMLInputElement;
  input.type = "number";
  input.step = "0.1";
  input.id = "lambda-input";
  const button = el("button", undefined, "highlight");
  button.addEventListener("click", () => {
    session = { ...session, selectedLambda: parseFloat(input.value) };
    renderCurve($("curve-panel"), curvePoints, selectCurvePoint(parseFloat(input.value), curvePoints));
  });
  lambdaRow.append(input, button);
  right.append(lambdaRow);
  const curveWrap = el("div", "curve-wrap");
  curveWrap.id = "curve-panel";
  right.append(curveWrap);
  renderCurve($("curve-panel"), curvePoints, session.selectedLambda === null ? null : selectCurvePoint(session.selectedLambda, curvePoints));

  const historyBox = el("div", "history");
  historyBox.append(el("h2", undefined, "history"));
  for (const entry of session.history) {
    historyBox.append(
      el("div", "history-entry", entry.prediction ? `${entry.action} -> class ${entry.prediction.label}` : entry.action),
    );
  }
  right.append(historyBox);
}

async function applyEdits(): Promise<void> {
  if (!view || session.pendingEdits.length === 0) return;
  try {
    const response = await client.intervene(view.id, session.pendingEdits);
    lastIntervention = response;
    conflictGroup = null;
    session = pushHistory(
      { ...session, pendingEdits: [] },
      `applied ${response.changed_concepts.length} concept change(s)`,
      response.after,
    );
    view = { ...view, concepts: response.concepts };
    renderAll();
  } catch (err) {
    if (err instanceof ApiError && err.group) {
      conflictGroup = err.group;
    }
    renderAll();
    renderError($("result-panel"), err instanceof Error ? err.message : String(err));
  }
}

async function actAsExpert(label: number): Promise<void> {
  if (!view || Number.isNaN(label)) return;
  if (label < 0 || label >= view.n_classes) {
    renderError($("result-panel"), `label must lie in [0, ${view.n_classes - 1}]`);
    return;
  }
  try {
    const response = await client.actAsExpert(view.id, label);
    session = pushHistory(
      { ...session, expertLabel: label },
      `expert label ${label} via ${formatStrategy(response.chosen_strategy)}`,
      response.fused,
    );
    const right = $("result-panel");
    clear(right);
    right.append(el("h2", undefined, "outcome"));
    renderPrediction(right, `fused decision (${formatStrategy(response.chosen_strategy)})`, response.fused);
    renderResultHistoryOnly(right);
  } catch (err) {
    renderError($("result-panel"), err instanceof Error ? err.message : String(err));
  }
}

function renderResultHistoryOnly(right: HTMLElement): void {
  const historyBox = el("div", "history");
  historyBox.append(el("h2", undefined, "history"));
  for (const entry of session.history) {
    historyBox.append(
      el("div", "history-entry", entry.prediction ? `${entry.action} -> class ${entry.prediction.label}` : entry.action),
    );
  }
  right.append(historyBox);
}

async function boot(): Promise<void> {
  const form = $("instance-form") as HTMLFormElement;
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const id = parseInt((document.getElementById("instance-id") as HTMLInputElement).value, 10);
    if (!Number.isNaN(id)) void loadInstance(id);
  });
  const rhoInput = document.getElementById("rho-input") as HTMLInputElement;
  const loadCurve = async () => {
    const rho = parseFloat(rhoInput.value);
    if (Number.isNaN(rho)) return;
    try {
      const response = await client.getCurve(rho);
      curvePoints = response.points;
    } catch {
      curvePoints = [];
    }
    renderCurve($("curve-panel"), curvePoints, null);
  };
  (document.getElementById("rho-load") as HTMLButtonElement).addEventListener("click", () => void loadCurve());
  await loadInstance(0);
  await loadCurve();
}

void boot();
