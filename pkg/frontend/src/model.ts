// Pure session logic: pending-edit bookkeeping with group exclusivity,
// cost-weight what-if selection, and the append-only action history.
// Nothing here talks to the network or the DOM.

import type { ConceptEdit, ConceptView, CurvePoint, PredictionView } from "./types.js";

export type GroupLookup = (conceptIndex: number) => number | null;

export function groupLookupFrom(concepts: ConceptView[]): GroupLookup {
  const byIndex = new Map(concepts.map((c) => [c.index, c.group]));
  return (index) => byIndex.get(index) ?? null;
}

function siblings(concepts: ConceptView[], group: number): number[] {
  return concepts.filter((c) => c.group === group).map((c) => c.index);
}

/** Toggle a pending edit. Turning a grouped concept on drops any other
 * pending "on" in the same exclusive group; toggling an edited concept
 * again withdraws its edit. Returns a new edit list (inputs untouched). */
export function toggleEdit(
  edits: ConceptEdit[],
  concepts: ConceptView[],
  conceptIndex: number,
  target: "on" | "off",
): ConceptEdit[] {
  const existing = edits.find((e) => e.concept === conceptIndex);
  if (existing && existing.target === target) {
    return edits.filter((e) => e.concept !== conceptIndex);
  }
  let next = edits.filter((e) => e.concept !== conceptIndex);
  const lookup = groupLookupFrom(concepts);
  const group = lookup(conceptIndex);
  if (group !== null && target === "on") {
    const members = siblings(concepts, group);
    next = next.filter((e) => !(members.includes(e.concept) && e.target === "on"));
  }
  return [...next, { concept: conceptIndex, target }];
}

/** Concept on/off state as the editor should render it: server state
 * overlaid with pending edits, exclusive groups kept one-hot. */
export function displayedConceptState(concepts: ConceptView[], edits: ConceptEdit[]): Map<number, boolean> {
  const state = new Map<number, boolean>(concepts.map((c) => [c.index, c.probability > 0.5]));
  for (const edit of edits) {
    state.set(edit.concept, edit.target === "on");
    const group = groupLookupFrom(concepts)(edit.concept);
    if (group !== null && edit.target === "on") {
      for (const sibling of siblings(concepts, group)) {
        if (sibling !== edit.concept) state.set(sibling, false);
      }
    }
  }
  return state;
}

/** Exactly-one-active check per exclusive group over a displayed state. */
export function groupsSatisfied(concepts: ConceptView[], state: Map<number, boolean>): boolean {
  const groups = new Map<number, number[]>();
  for (const c of concepts) {
    if (c.group !== null) {
      groups.set(c.group, [...(groups.get(c.group) ?? []), c.index]);
    }
  }
  for (const members of groups.values()) {
    const active = members.filter((i) => state.get(i)).length;
    if (active !== 1) return false;
  }
  return true;
}

export interface CurveSelection {
  point: CurvePoint;
  index: number;
  exact: boolean;
  neighbors: { left: CurvePoint | null; right: CurvePoint | null };
}

/** Nearest sweep point to the requested cost weight, with its grid
 * neighbors so the UI can show the bracketing points. */
export function selectCurvePoint(lambda: number, points: CurvePoint[]): CurveSelection | null {
  if (points.length === 0) return null;
  let index = 0;
  let best = Infinity;
  points.forEach((p, i) => {
    const d = Math.abs(p.lambda - lambda);
    if (d < best) {
      best = d;
      index = i;
    }
  });
  const point = points[index]!;
  return {
    point,
    index,
    exact: point.lambda === lambda,
    neighbors: {
      left: index > 0 ? points[index - 1]! : null,
      right: index + 1 < points.length ? points[index + 1]! : null,
    },
  };
}

export interface HistoryEntry {
  action: string;
  prediction: PredictionView | null;
}

export interface SessionState {
  instanceId: number | null;
  pendingEdits: ConceptEdit[];
  expertLabel: number | null;
  selectedLambda: number | null;
  history: readonly HistoryEntry[];
}

export function emptySession(): SessionState {
  return { instanceId: null, pendingEdits: [], expertLabel: null, selectedLambda: null, history: [] };
}

/** History is append-only within a session; a fresh state is returned. */
export function pushHistory(state: SessionState, action: string, prediction: PredictionView | null): SessionState {
  return { ...state, history: [...state.history, { action, prediction }] };
}

export function formatStrategy(id: 1 | 2 | 3): string {
  return id === 1 ? "AI-only" : id === 2 ? "AI+Human" : "Defer-to-Human";
}

export function formatProbability(p: number): string {
  return `${(100 * p).toFixed(1)}%`;
}
