"""Test-time concept interventions on a frozen model.

Forward intervention overwrites chosen concept logits with high-confidence
percentile values and recomputes the label, holding the implicit pathway
fixed. Backward rectification searches for the cheapest set of concept
flips that makes the prediction consistent with a known label. Neither
path mutates model parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cbm import ConceptActivations, DcbmModel
from .dataio import GroupSpec, TripletDataset
from .numerics import cross_entropy


class GroupConflictError(ValueError):
    """An edit set that cannot satisfy a mutually exclusive concept group."""

    def __init__(self, group: list[int], message: str):
        super().__init__(message)
        self.group = list(group)


@dataclass
class PercentileBounds:
    low: np.ndarray   # 5th percentile of each concept logit over the train split
    high: np.ndarray  # 95th percentile

    def __post_init__(self):
        self.low = np.asarray(self.low, dtype=np.float64)
        self.high = np.asarray(self.high, dtype=np.float64)
        if self.low.shape != self.high.shape or self.low.ndim != 1:
            raise ValueError("bounds must be equal-length vectors")
        if np.any(self.low > self.high):
            raise ValueError("low bound exceeds high bound")

    @property
    def n_concepts(self) -> int:
        return self.low.shape[0]


@dataclass
class ConceptEdit:
    index: int
    target: str  # "on" | "off"

    def __post_init__(self):
        if self.target not in ("on", "off"):
            raise ValueError("edit target must be 'on' or 'off'")


@dataclass
class InterventionRequest:
    x: np.ndarray
    edits: list[ConceptEdit]
    group_spec: GroupSpec | None = None


@dataclass
class InterventionResult:
    before_logits: np.ndarray
    after_logits: np.ndarray
    before_label: int
    after_label: int
    activations: ConceptActivations   # edited concept logits/probabilities
    changed: list[int]                # concept indices whose logit changed


@dataclass
class RectificationStep:
    flipped: list[int]
    loss: float
    prediction: int


@dataclass
class RectificationResult:
    original_logits: np.ndarray
    rectified_logits: np.ndarray
    flipped: list[int]
    before_label: int
    after_label: int
    target_label: int
    success: bool
    steps: list[RectificationStep] = field(default_factory=list)


def compute_percentile_bounds(model: DcbmModel, train: TripletDataset) -> PercentileBounds:
    """Per-concept 5th/95th percentiles of predicted logits (linear interpolation)."""
    if train.n == 0:
        raise ValueError("cannot compute bounds on an empty split")
    logits = model.activations(train.X).logits
    low, high = np.percentile(logits, [5.0, 95.0], axis=0)
    return PercentileBounds(low=low, high=high)


def _group_of(index: int, group_spec: GroupSpec | None) -> list[int] | None:
    for g in group_spec or []:
        if index in g:
            return list(g)
    return None


def _validate_edits(edits: list[ConceptEdit], d: int, group_spec: GroupSpec | None) -> None:
    seen: set[int] = set()
    on_by_group: dict[tuple[int, ...], list[int]] = {}
    for e in edits:
        if not 0 <= e.index < d:
            raise ValueError(f"concept index {e.index} out of range")
        if e.index in seen:
            raise ValueError(f"concept {e.index} edited twice")
        seen.add(e.index)
        g = _group_of(e.index, group_spec)
        if g is not None:
            key = tuple(g)
            if e.target == "on":
                on_by_group.setdefault(key, []).append(e.index)
            else:
                on_by_group.setdefault(key, on_by_group.get(key, []))
    for key, ons in on_by_group.items():
        if len(ons) > 1:
            raise GroupConflictError(list(key), f"multiple concepts turned on in exclusive group {list(key)}")
    # an "off" inside a group is only meaningful alongside an "on" that
    # re-activates a sibling; alone it would leave the group with no member
    for e in edits:
        if e.target == "off":
            g = _group_of(e.index, group_spec)
            if g is not None and not any(
                other.target == "on" and other.index in g and other.index != e.index for other in edits
            ):
                raise GroupConflictError(g, f"turning concept {e.index} off would empty exclusive group {g}")


def apply_edits(
    logits: np.ndarray, edits: list[ConceptEdit], bounds: PercentileBounds, group_spec: GroupSpec | None
) -> np.ndarray:
    """Return edited concept logits; group siblings of an "on" go to their low bound."""
    out = np.asarray(logits, dtype=np.float64).copy()
    for e in edits:
        if e.target == "on":
            out[e.index] = bounds.high[e.index]
            g = _group_of(e.index, group_spec)
            if g is not None:
                for sibling in g:
                    if sibling != e.index:
                        out[sibling] = bounds.low[sibling]
        else:
            out[e.index] = bounds.low[e.index]
    return out


def forward_intervene(model: DcbmModel, request: InterventionRequest, bounds: PercentileBounds) -> InterventionResult:
    if not model.frozen:
        raise RuntimeError("interventions require a frozen model")
    if bounds.n_concepts != model.n_concepts:
        raise ValueError("bounds do not match the model's concept count")
    x = np.asarray(request.x, dtype=np.float64).reshape(1, -1)
    acts = model.activations(x)
    implicit_contrib = model.implicit_head(acts.implicit)
    before_logits = (model.explicit_head(acts.logits) + implicit_contrib)[0]

    _validate_edits(request.edits, model.n_concepts, request.group_spec)
    if request.edits:
        edited = apply_edits(acts.logits[0], request.edits, bounds, request.group_spec)
    else:
        edited = acts.logits[0].copy()
    after_logits = model.logits_from_concepts(edited[None, :], implicit_contrib)[0]
    changed = [int(j) for j in np.nonzero(edited != acts.logits[0])[0]]
    from .cbm import _sigmoid

    return InterventionResult(
        before_logits=before_logits,
        after_logits=after_logits,
        before_label=int(np.argmax(before_logits)),
        after_label=int(np.argmax(after_logits)),
        activations=ConceptActivations(
            logits=edited[None, :], probabilities=_sigmoid(edited[None, :]), implicit=acts.implicit
        ),
        changed=changed,
    )


# --- backward rectification ---------------------------------------------------


def _initial_state(logits: np.ndarray, group_spec: GroupSpec | None) -> np.ndarray:
    """Binary view of the concept logits; groups normalized to their argmax member."""
    state = (logits > 0).astype(np.int64)
    for g in group_spec or []:
        active = g[int(np.argmax(logits[g]))]
        state[g] = 0
        state[active] = 1
    return state


def render_state_logits(
    original: np.ndarray, original_state: np.ndarray, state: np.ndarray, bounds: PercentileBounds
) -> np.ndarray:
    """Concept logits for a flip state: untouched concepts keep their original
    logit, flipped ones sit at the matching percentile bound."""
    out = original.copy()
    touched = state != original_state
    out[touched & (state == 1)] = bounds.high[touched & (state == 1)]
    out[touched & (state == 0)] = bounds.low[touched & (state == 0)]
    return out


def _candidate_states(state: np.ndarray, group_spec: GroupSpec | None) -> list[np.ndarray]:
    grouped = {i for g in group_spec or [] for i in g}
    candidates = []
    for j in range(state.shape[0]):
        if j in grouped:
            continue
        s = state.copy()
        s[j] = 1 - s[j]
        candidates.append(s)
    for g in group_spec or []:
        active = g[int(np.argmax(state[g]))]
        for j in g:
            if j == active:
                continue
            s = state.copy()
            s[g] = 0
            s[j] = 1
            candidates.append(s)
    return candidates


def backward_rectify(
    model: DcbmModel,
    x,
    y_true: int,
    bounds: PercentileBounds,
    group_spec: GroupSpec | None = None,
    max_flips: int | None = None,
) -> RectificationResult:
    """Greedy single-flip descent on the label loss until the prediction
    matches ``y_true``, the flip budget runs out, or no flip helps."""
    if not model.frozen:
        raise RuntimeError("interventions require a frozen model")
    if not 0 <= int(y_true) < model.n_classes:
        raise ValueError("target label out of range")
    y_true = int(y_true)
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    acts = model.activations(x)
    implicit_contrib = model.implicit_head(acts.implicit)
    original = acts.logits[0]
    original_state = _initial_state(original, group_spec)
    budget = model.n_concepts if max_flips is None else int(max_flips)

    def label_logits_for(state: np.ndarray) -> np.ndarray:
        rendered = render_state_logits(original, original_state, state, bounds)
        return model.logits_from_concepts(rendered[None, :], implicit_contrib)[0]

    state = original_state.copy()
    logits = label_logits_for(state)
    before_label = int(np.argmax(logits))
    steps: list[RectificationStep] = []
    if before_label == y_true:
        return RectificationResult(
            original_logits=original.copy(),
            rectified_logits=original.copy(),
            flipped=[],
            before_label=before_label,
            after_label=before_label,
            target_label=y_true,
            success=True,
        )

    current_loss = cross_entropy(y_true, logits)
    for _ in range(budget):
        best_state = None
        best_loss = current_loss
        for cand in _candidate_states(state, group_spec):
            loss = cross_entropy(y_true, label_logits_for(cand))
            if loss < best_loss - 1e-15:
                best_loss = loss
                best_state = cand
        if best_state is None:
            break
        flipped_now = [int(j) for j in np.nonzero(best_state != state)[0]]
        state = best_state
        current_loss = best_loss
        pred = int(np.argmax(label_logits_for(state)))
        steps.append(RectificationStep(flipped=flipped_now, loss=best_loss, prediction=pred))
        if pred == y_true:
            break

    rectified = render_state_logits(original, original_state, state, bounds)
    after_logits = label_logits_for(state)
    after_label = int(np.argmax(after_logits))
    flipped = [int(j) for j in np.nonzero(state != original_state)[0]]
    return RectificationResult(
        original_logits=original.copy(),
        rectified_logits=rectified,
        flipped=flipped,
        before_label=before_label,
        after_label=after_label,
        target_label=y_true,
        success=after_label == y_true,
        steps=steps,
    )
