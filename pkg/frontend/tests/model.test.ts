// Unit tests for the pure session logic (no server, no DOM).

import { describe, expect, it } from "vitest";

import {
  displayedConceptState,
  emptySession,
  groupsSatisfied,
  pushHistory,
  selectCurvePoint,
  toggleEdit,
} from "../src/model.js";
import type { ConceptView, CurvePoint } from "../src/types.js";

function concept(index: number, group: number | null, probability: number): ConceptView {
  return { index, name: `concept_${index}`, group, logit: 0, probability, intervened: false };
}

const CONCEPTS: ConceptView[] = [
  concept(0, 0, 0.9),
  concept(1, 0, 0.1),
  concept(2, 0, 0.05),
  concept(3, null, 0.8),
  concept(4, null, 0.2),
];

describe("toggleEdit", () => {
  it("adds and withdraws an edit on repeat toggle", () => {
    const once = toggleEdit([], CONCEPTS, 3, "off");
    expect(once).toEqual([{ concept: 3, target: "off" }]);
    expect(toggleEdit(once, CONCEPTS, 3, "off")).toEqual([]);
  });

  it("drops competing on-edits within an exclusive group", () => {
    const first = toggleEdit([], CONCEPTS, 1, "on");
    const second = toggleEdit(first, CONCEPTS, 2, "on");
    expect(second).toEqual([{ concept: 2, target: "on" }]);
  });

  it("keeps edits outside the group untouched", () => {
    const edits = toggleEdit(toggleEdit([], CONCEPTS, 4, "on"), CONCEPTS, 1, "on");
    expect(edits).toContainEqual({ concept: 4, target: "on" });
    expect(edits).toContainEqual({ concept: 1, target: "on" });
  });
});

describe("displayedConceptState", () => {
  it("mirrors the server state with no edits", () => {
    const state = displayedConceptState(CONCEPTS, []);
    expect(state.get(0)).toBe(true);
    expect(state.get(1)).toBe(false);
    expect(state.get(3)).toBe(true);
  });

  it("turning a group member on toggles its siblings off in the view", () => {
    const state = displayedConceptState(CONCEPTS, [{ concept: 1, target: "on" }]);
    expect(state.get(1)).toBe(true);
    expect(state.get(0)).toBe(false);
    expect(state.get(2)).toBe(false);
    expect(groupsSatisfied(CONCEPTS, state)).toBe(true);
  });

  it("keeps exactly one active member per group", () => {
    const state = displayedConceptState(CONCEPTS, [{ concept: 2, target: "on" }]);
    const active = [0, 1, 2].filter((i) => state.get(i));
    expect(active).toEqual([2]);
  });
});

const POINTS: CurvePoint[] = [
  { lambda: 0.0, human_participation_ratio: 0.4, system_accuracy: 0.9 },
  { lambda: 0.5, human_participation_ratio: 0.2, system_accuracy: 0.85 },
  { lambda: 2.0, human_participation_ratio: 0.0, system_accuracy: 0.8 },
];

describe("selectCurvePoint", () => {
  it("hits grid points exactly", () => {
    const sel = selectCurvePoint(0.5, POINTS)!;
    expect(sel.exact).toBe(true);
    expect(sel.point.system_accuracy).toBe(0.85);
    expect(sel.neighbors.left?.lambda).toBe(0.0);
    expect(sel.neighbors.right?.lambda).toBe(2.0);
  });

  it("between grid points picks the nearest and exposes both neighbors", () => {
    const sel = selectCurvePoint(0.7, POINTS)!;
    expect(sel.exact).toBe(false);
    expect(sel.point.lambda).toBe(0.5);
    expect(sel.neighbors.left?.lambda).toBe(0.0);
    expect(sel.neighbors.right?.lambda).toBe(2.0);
  });

  it("lambda 0 selects the zero entry", () => {
    const sel = selectCurvePoint(0, POINTS)!;
    expect(sel.point.lambda).toBe(0.0);
    expect(sel.point.human_participation_ratio).toBe(0.4);
    expect(sel.neighbors.left).toBeNull();
  });

  it("returns null on an empty sweep", () => {
    expect(selectCurvePoint(1.0, [])).toBeNull();
  });
});

describe("session history", () => {
  it("is append-only", () => {
    let session = emptySession();
    session = pushHistory(session, "a", null);
    const afterOne = session.history;
    session = pushHistory(session, "b", null);
    expect(session.history.length).toBe(2);
    expect(afterOne.length).toBe(1); // earlier snapshot untouched
    expect(session.history[0]?.action).toBe("a");
  });
});
