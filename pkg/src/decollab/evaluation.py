"""Metrics, accuracy-coverage sweeps, strategy heatmaps, and report files.

CSV and JSON layouts emitted here are a stable interface (column names
included); numbers are written with 17 significant digits so parsing them
back reproduces the float64 values exactly.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, replace

import numpy as np

from .cbm import DcbmModel
from .dataio import SplitBundle, TripletDataset
from .expert import SimulatedExpert, onehot_rows
from .strategy import (
    FusionNet,
    GateTrainConfig,
    GatingNet,
    StrategyId,
    chosen_strategies,
    fused_rows,
    gate_inputs,
    new_fusion_net,
    new_gating_net,
    train_gate,
)


@dataclass
class EvalReport:
    system_accuracy: float
    ai_accuracy: float
    expert_accuracy: float
    concept_accuracy: float
    participation_ratio: float
    strategy_counts: tuple[int, int, int]
    lam: float
    rho: float
    seed: int

    def __post_init__(self):
        if sum(self.strategy_counts) <= 0:
            raise ValueError("empty evaluation")
        for name in ("system_accuracy", "ai_accuracy", "expert_accuracy", "concept_accuracy", "participation_ratio"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} outside [0, 1]")


@dataclass
class CoveragePoint:
    lam: float
    participation_ratio: float
    system_accuracy: float


@dataclass
class CoverageCurve:
    points: list[CoveragePoint]

    def __post_init__(self):
        lams = [p.lam for p in self.points]
        if any(b <= a for a, b in zip(lams, lams[1:])):
            raise ValueError("curve points must be stored with strictly increasing lambda")


@dataclass
class ConceptStrategyHeatmap:
    values: np.ndarray          # (3, d); rows of NaN where absent
    present: tuple[bool, bool, bool]


def system_decisions(
    model: DcbmModel,
    gating: GatingNet,
    fusion: FusionNet,
    dataset: TripletDataset,
    expert_labels: np.ndarray,
    force_strategy: StrategyId | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-instance (decision, chosen strategy, strategy distribution rows).

    AI-only instances use the model's own argmax; the fusion head only sees
    inputs for the two human-involving routes.
    """
    F = model.label_logits(dataset.X)
    ai_pred = np.argmax(F, axis=1)
    r = gating.distribution(gate_inputs(gating, model, dataset.X))
    if force_strategy is None:
        chosen = chosen_strategies(r)
    else:
        chosen = np.full(dataset.n, int(force_strategy), dtype=np.int64)
    M1h = onehot_rows(expert_labels, dataset.n_classes)
    decisions = ai_pred.copy()
    humans = chosen != StrategyId.AI_ONLY
    if humans.any():
        fused = fused_rows(chosen[humans], F[humans], M1h[humans])
        decisions[humans] = np.argmax(fusion.predict(fused), axis=1)
    return decisions, chosen, r


def evaluate(
    model: DcbmModel,
    gating: GatingNet,
    fusion: FusionNet,
    expert: SimulatedExpert,
    dataset: TripletDataset,
    lam: float,
    force_strategy: StrategyId | None = None,
) -> EvalReport:
    if dataset.n_features != model.n_features:
        raise ValueError("dataset features do not match the model")
    if dataset.n_classes != model.n_classes or expert.n_classes != model.n_classes:
        raise ValueError("class counts do not match")
    M = expert.labels_for(dataset.Y)
    decisions, chosen, _ = system_decisions(model, gating, fusion, dataset, M, force_strategy)
    acts = model.activations(dataset.X)
    concept_acc = float(((acts.probabilities > 0.5).astype(np.int64) == dataset.C).mean())
    ai_pred = np.argmax(model.label_logits(dataset.X), axis=1)
    counts = tuple(int((chosen == s).sum()) for s in (1, 2, 3))
    return EvalReport(
        system_accuracy=float((decisions == dataset.Y).mean()),
        ai_accuracy=float((ai_pred == dataset.Y).mean()),
        expert_accuracy=float((M == dataset.Y).mean()),
        concept_accuracy=concept_acc,
        participation_ratio=float((chosen != StrategyId.AI_ONLY).mean()),
        strategy_counts=counts,
        lam=float(lam),
        rho=expert.noise_rate,
        seed=expert.seed,
    )


def sweep_lambda(
    model: DcbmModel,
    bundle: SplitBundle,
    expert: SimulatedExpert,
    base_config: GateTrainConfig,
    lambda_grid,
) -> tuple[CoverageCurve, list[EvalReport]]:
    """Train one gate per lambda from identical seeds and evaluate each.

    Returns the curve (points in increasing lambda order) plus the full
    reports behind each point.
    """
    grid = [float(v) for v in lambda_grid]
    if not grid:
        raise ValueError("lambda grid must be non-empty")
    if len(set(grid)) != len(grid):
        raise ValueError("lambda grid has duplicates")
    grid = sorted(grid)
    points: list[CoveragePoint] = []
    reports: list[EvalReport] = []
    input_dim = model.n_concepts if base_config.gate_input == "concept" else model.n_features
    for lam in grid:
        config = replace(base_config, lam=lam)
        gating = new_gating_net(
            input_dim,
            hidden_units=config.hidden_units,
            seed=config.seed,
            input_mode=config.gate_input,
            defer_only=config.defer_only,
        )
        fusion = new_fusion_net(model.n_classes, seed=config.seed)
        gating, fusion, _ = train_gate(gating, fusion, model, bundle, expert, config)
        report = evaluate(model, gating, fusion, expert, bundle.test, lam)
        points.append(CoveragePoint(lam, report.participation_ratio, report.system_accuracy))
        reports.append(report)
    return CoverageCurve(points), reports


def concept_strategy_heatmap(model: DcbmModel, gating: GatingNet, dataset: TripletDataset) -> ConceptStrategyHeatmap:
    """Strategy-weighted mean concept activation; rows with zero weight are absent."""
    probs = model.activations(dataset.X).probabilities
    r = gating.distribution(gate_inputs(gating, model, dataset.X))
    values = np.full((3, dataset.n_concepts), np.nan)
    present = []
    for s in range(3):
        w = r[:, s]
        total = w.sum()
        if total > 0.0:
            values[s] = (w[:, None] * probs).sum(axis=0) / total
            present.append(True)
        else:
            present.append(False)
    return ConceptStrategyHeatmap(values=values, present=tuple(present))


# --- emission ----------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def report_csv_rows(report: EvalReport) -> tuple[list[str], list[str]]:
    header = [
        "system_accuracy",
        "ai_accuracy",
        "expert_accuracy",
        "concept_accuracy",
        "human_participation_ratio",
        "count_ai_only",
        "count_ai_human",
        "count_defer",
        "lambda",
        "rho",
        "seed",
    ]
    row = [
        _fmt(report.system_accuracy),
        _fmt(report.ai_accuracy),
        _fmt(report.expert_accuracy),
        _fmt(report.concept_accuracy),
        _fmt(report.participation_ratio),
        str(report.strategy_counts[0]),
        str(report.strategy_counts[1]),
        str(report.strategy_counts[2]),
        _fmt(report.lam),
        _fmt(report.rho),
        str(report.seed),
    ]
    return header, row


def report_to_dict(report: EvalReport) -> dict:
    return {
        "system_accuracy": report.system_accuracy,
        "ai_accuracy": report.ai_accuracy,
        "expert_accuracy": report.expert_accuracy,
        "concept_accuracy": report.concept_accuracy,
        "human_participation_ratio": report.participation_ratio,
        "strategy_counts": {
            "ai_only": report.strategy_counts[0],
            "ai_human": report.strategy_counts[1],
            "defer": report.strategy_counts[2],
        },
        "lambda": report.lam,
        "rho": report.rho,
        "seed": report.seed,
    }


def curve_to_dict(curve: CoverageCurve) -> dict:
    return {
        "points": [
            {
                "lambda": p.lam,
                "human_participation_ratio": p.participation_ratio,
                "system_accuracy": p.system_accuracy,
            }
            for p in curve.points
        ]
    }


def heatmap_to_dict(hm: ConceptStrategyHeatmap) -> dict:
    names = ("ai_only", "ai_human", "defer")
    rows = {}
    for s, name in enumerate(names):
        rows[name] = [float(v) for v in hm.values[s]] if hm.present[s] else None
    return {"strategies": rows}


def emit_report(obj, path, fmt: str = "csv") -> None:
    """Write a report, curve, or heatmap to ``path`` as CSV or JSON."""
    if fmt not in ("csv", "json"):
        raise ValueError("format must be 'csv' or 'json'")
    if fmt == "json":
        if isinstance(obj, EvalReport):
            payload = report_to_dict(obj)
        elif isinstance(obj, CoverageCurve):
            payload = curve_to_dict(obj)
        elif isinstance(obj, ConceptStrategyHeatmap):
            payload = heatmap_to_dict(obj)
        else:
            raise TypeError(f"cannot emit {type(obj).__name__}")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
        return

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if isinstance(obj, EvalReport):
        header, row = report_csv_rows(obj)
        writer.writerow(header)
        writer.writerow(row)
    elif isinstance(obj, CoverageCurve):
        writer.writerow(["lambda", "human_participation_ratio", "system_accuracy"])
        for p in obj.points:
            writer.writerow([_fmt(p.lam), _fmt(p.participation_ratio), _fmt(p.system_accuracy)])
    elif isinstance(obj, ConceptStrategyHeatmap):
        d = obj.values.shape[1]
        writer.writerow(["strategy", "present"] + [f"concept_{j:02d}" for j in range(d)])
        for s, name in enumerate(("ai_only", "ai_human", "defer")):
            if obj.present[s]:
                writer.writerow([name, "1"] + [_fmt(v) for v in obj.values[s]])
            else:
                writer.writerow([name, "0"] + ["" for _ in range(d)])
    else:
        raise TypeError(f"cannot emit {type(obj).__name__}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(buf.getvalue())


def load_curve_csv(path) -> CoverageCurve:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["lambda", "human_participation_ratio", "system_accuracy"]:
        raise ValueError(f"{path} is not a coverage-curve CSV")
    points = [CoveragePoint(float(a), float(b), float(c)) for a, b, c in rows[1:]]
    return CoverageCurve(points)
