"""Command-line entry points for the full pipeline and the HTTP service.

Exit codes: 0 success, 2 missing prerequisite or bad configuration,
3 numeric abort during training.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .cbm import (
    CbmTrainConfig,
    TrainingDiverged,
    load_cbm_checkpoint,
    new_model,
    save_cbm_checkpoint,
    train_cbm,
)
from .container import FormatError
from .dataio import SyntheticConfig, generate_synthetic, load_dataset, save_dataset
from .evaluation import (
    concept_strategy_heatmap,
    emit_report,
    evaluate,
    load_curve_csv,
    sweep_lambda,
)
from .expert import SimulatedExpert, expert_onehot
from .intervene import (
    ConceptEdit,
    GroupConflictError,
    InterventionRequest,
    backward_rectify,
    compute_percentile_bounds,
    forward_intervene,
)
from .numerics import softmax
from .server import ApiState, make_server
from .strategy import (
    GateTrainConfig,
    StrategyId,
    gate_inputs,
    load_gate_checkpoint,
    new_fusion_net,
    new_gating_net,
    route_and_fuse,
    save_gate_checkpoint,
    train_gate,
)

EXIT_BAD_PREREQ = 2
EXIT_NUMERIC_ABORT = 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_BAD_PREREQ):
        super().__init__(message)
        self.code = code


def _parse_groups(text: str | None):
    if not text:
        return None
    groups = []
    for part in text.split(";"):
        groups.append([int(v) for v in part.split(",") if v != ""])
    return groups


def _parse_grid(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v != ""]
    except ValueError as exc:
        raise CliError(f"bad lambda grid {text!r}: {exc}")


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"missing {what}: {p}")
    return p


def _out_dir(path: str) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load_bundle(args):
    if args.dataset:
        return load_dataset(_require_file(args.dataset, "dataset file"))
    if getattr(args, "synthetic", False):
        config = SyntheticConfig(
            n_classes=args.classes,
            n_concepts=args.concepts,
            n_features=args.features,
            n_train=args.n_train,
            n_val=args.n_val,
            n_test=args.n_test,
            concept_noise=args.concept_noise,
            completeness=args.kappa,
            group_spec=_parse_groups(args.groups),
            seed=args.seed,
        )
        return generate_synthetic(config)
    raise CliError("provide either --dataset or --synthetic")


def _write_history_csv(history, path: Path) -> None:
    rows = [asdict(h) for h in history]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(rows[0].keys()) + "\n")
        for row in rows:
            fh.write(",".join(format(v, ".17g") if isinstance(v, float) else str(v) for v in row.values()) + "\n")


def cmd_train_cbm(args) -> int:
    out = _out_dir(args.out)
    bundle = _load_bundle(args)
    if args.synthetic:
        save_dataset(bundle, out / "dataset.dcds")
    model = new_model(
        bundle.n_features,
        bundle.n_concepts,
        bundle.n_classes,
        implicit_dim=args.implicit_dim,
        hidden_units=args.hidden_units,
        seed=args.seed,
    )
    config = CbmTrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        concept_weight=args.concept_weight,
        js_weight=args.js_weight,
        seed=args.seed,
    )
    model, history = train_cbm(model, bundle, config)
    save_cbm_checkpoint(model, out / "cbm.dcck", seed=args.seed)
    _write_history_csv(history, out / "cbm_history.csv")
    print(f"wrote {out / 'cbm.dcck'}")
    return 0


def _gate_config_from_args(args, lam: float) -> GateTrainConfig:
    return GateTrainConfig(
        lam=lam,
        alpha=args.alpha,
        beta=args.beta,
        pseudo_labels=args.pseudo_labels,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        seed=args.seed,
        defer_only=args.defer_only,
        gate_input=args.gate_input,
        hidden_units=args.hidden_units,
    )


def cmd_train_gate(args) -> int:
    out = _out_dir(args.out)
    bundle = _load_bundle(args)
    model = load_cbm_checkpoint(_require_file(args.cbm, "stage-1 checkpoint"))
    expert = SimulatedExpert(noise_rate=args.rho, n_classes=model.n_classes, seed=args.seed)
    config = _gate_config_from_args(args, args.lam)
    input_dim = model.n_concepts if config.gate_input == "concept" else model.n_features
    gating = new_gating_net(
        input_dim, hidden_units=config.hidden_units, seed=config.seed,
        input_mode=config.gate_input, defer_only=config.defer_only,
    )
    fusion = new_fusion_net(model.n_classes, seed=config.seed)
    gating, fusion, history = train_gate(gating, fusion, model, bundle, expert, config)
    save_gate_checkpoint(gating, fusion, out / "gate.dcck", config)
    _write_history_csv(history, out / "gate_history.csv")
    print(f"wrote {out / 'gate.dcck'}")
    return 0


def cmd_evaluate(args) -> int:
    out = _out_dir(args.out)
    bundle = _load_bundle(args)
    model = load_cbm_checkpoint(_require_file(args.cbm, "stage-1 checkpoint"))
    gating, fusion, fields = load_gate_checkpoint(_require_file(args.gate, "gate checkpoint"))
    expert = SimulatedExpert(noise_rate=args.rho, n_classes=model.n_classes, seed=args.seed)
    lam = float(fields.get("lam", "0.0"))
    report = evaluate(model, gating, fusion, expert, bundle.test, lam)
    emit_report(report, out / f"report.{args.format}", args.format)
    if args.heatmap:
        hm = concept_strategy_heatmap(model, gating, bundle.test)
        emit_report(hm, out / f"heatmap.{args.format}", args.format)
    print(
        f"system={report.system_accuracy:.4f} ai={report.ai_accuracy:.4f} "
        f"expert={report.expert_accuracy:.4f} participation={report.participation_ratio:.4f}"
    )
    return 0


def cmd_sweep(args) -> int:
    out = _out_dir(args.out)
    bundle = _load_bundle(args)
    model = load_cbm_checkpoint(_require_file(args.cbm, "stage-1 checkpoint"))
    expert = SimulatedExpert(noise_rate=args.rho, n_classes=model.n_classes, seed=args.seed)
    grid = _parse_grid(args.lambda_grid)
    base = _gate_config_from_args(args, 0.0)
    curve, reports = sweep_lambda(model, bundle, expert, base, grid)
    emit_report(curve, out / "curve.csv", "csv")
    emit_report(curve, out / "curve.json", "json")
    for report in reports:
        emit_report(report, out / f"report_lam_{report.lam:g}.csv", "csv")
    print(f"wrote {out / 'curve.csv'} ({len(curve.points)} points)")
    return 0


def _parse_edits(pairs) -> list[ConceptEdit]:
    edits = []
    for pair in pairs or []:
        index, _, target = pair.partition("=")
        try:
            edits.append(ConceptEdit(int(index), target))
        except ValueError as exc:
            raise CliError(f"bad edit {pair!r}: {exc}")
    return edits


def cmd_intervene(args) -> int:
    out = _out_dir(args.out)
    bundle = _load_bundle(args)
    model = load_cbm_checkpoint(_require_file(args.cbm, "stage-1 checkpoint"))
    split = getattr(bundle, args.split)
    if not 0 <= args.instance < split.n:
        raise CliError(f"instance {args.instance} out of range for split {args.split!r} ({split.n} rows)")
    bounds = compute_percentile_bounds(model, bundle.train)
    group_spec = _parse_groups(args.groups)
    x = split.X[args.instance]
    trace: dict = {"instance": args.instance, "split": args.split, "true_label": int(split.Y[args.instance])}

    if args.rectify:
        result = backward_rectify(model, x, int(split.Y[args.instance]), bounds, group_spec)
        trace["rectify"] = {
            "success": result.success,
            "before_label": result.before_label,
            "after_label": result.after_label,
            "flipped": result.flipped,
            "original_logits": [float(v) for v in result.original_logits],
            "rectified_logits": [float(v) for v in result.rectified_logits],
            "steps": [
                {"flipped": s.flipped, "loss": s.loss, "prediction": s.prediction} for s in result.steps
            ],
        }
    else:
        edits = _parse_edits(args.edit)
        request = InterventionRequest(x=x, edits=edits, group_spec=group_spec)
        try:
            result = forward_intervene(model, request, bounds)
        except GroupConflictError as exc:
            raise CliError(f"group conflict in {exc.group}: {exc}")
        trace["intervene"] = {
            "edits": [{"concept": e.index, "target": e.target} for e in edits],
            "before_label": result.before_label,
            "after_label": result.after_label,
            "before_logits": [float(v) for v in result.before_logits],
            "after_logits": [float(v) for v in result.after_logits],
            "changed_concepts": result.changed,
            "edited_concept_logits": [float(v) for v in result.activations.logits[0]],
        }

    if args.expert_label is not None:
        if args.gate is None:
            raise CliError("--expert-label requires --gate")
        gating, fusion, _ = load_gate_checkpoint(_require_file(args.gate, "gate checkpoint"))
        if not 0 <= args.expert_label < model.n_classes:
            raise CliError(f"expert label {args.expert_label} out of range")
        f_logits = model.label_logits(x)[0]
        r = gating.distribution(gate_inputs(gating, model, x[None, :]))[0]
        fused, chosen = route_and_fuse(r, f_logits, expert_onehot(args.expert_label, model.n_classes))
        final = f_logits if chosen == StrategyId.AI_ONLY else fusion.predict(fused)[0]
        trace["expert"] = {
            "label": args.expert_label,
            "chosen_strategy": int(chosen),
            "strategy_distribution": [float(v) for v in r],
            "fused_label": int(np.argmax(final)),
            "fused_logits": [float(v) for v in final],
            "fused_confidence": float(softmax(final).max()),
        }

    path = out / f"intervention_{args.split}_{args.instance}.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(trace, fh, indent=2)
        fh.write("\n")
    print(f"wrote {path}")
    return 0


def cmd_serve(args) -> int:
    bundle = _load_bundle(args)
    model = load_cbm_checkpoint(_require_file(args.cbm, "stage-1 checkpoint"))
    gating, fusion, _ = load_gate_checkpoint(_require_file(args.gate, "gate checkpoint"))
    curves = {}
    for spec in args.curve or []:
        rho_text, _, path = spec.partition("=")
        if not path:
            raise CliError(f"--curve expects RHO=PATH, got {spec!r}")
        try:
            rho = float(rho_text)
        except ValueError as exc:
            raise CliError(f"bad rho in --curve {spec!r}: {exc}")
        curves[rho] = load_curve_csv(_require_file(path, "curve CSV"))
    static_dir = None
    if args.static:
        static_dir = Path(args.static).resolve()
        if not static_dir.is_dir():
            raise CliError(f"static directory not found: {static_dir}")
    state = ApiState(
        model=model,
        gating=gating,
        fusion=fusion,
        instances=bundle.test,
        bounds=compute_percentile_bounds(model, bundle.train),
        group_spec=_parse_groups(args.groups),
        curves=curves,
        static_dir=static_dir,
    )
    try:
        server = make_server(state, args.port)
    except OSError as exc:
        raise CliError(f"cannot bind port {args.port}: {exc}")
    host, port = server.server_address[:2]
    print(f"listening on http://{host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


def _add_dataset_args(p: argparse.ArgumentParser, allow_synthetic: bool = True) -> None:
    p.add_argument("--dataset", help="path to a dataset file")
    if allow_synthetic:
        p.add_argument("--synthetic", action="store_true", help="generate a synthetic bundle instead")
        p.add_argument("--kappa", type=float, default=0.6, help="concept completeness in [0,1]")
        p.add_argument("--classes", type=int, default=10)
        p.add_argument("--concepts", type=int, default=12)
        p.add_argument("--features", type=int, default=24)
        p.add_argument("--n-train", type=int, default=3000)
        p.add_argument("--n-val", type=int, default=600)
        p.add_argument("--n-test", type=int, default=1500)
        p.add_argument("--concept-noise", type=float, default=0.05)
    p.add_argument("--groups", help="exclusive concept groups, e.g. '0,1,2;5,6'")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", default="runs/latest", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="decollab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-cbm", help="stage 1: train and freeze the concept bottleneck model")
    _add_dataset_args(p)
    p.add_argument("--epochs", type=int, default=CbmTrainConfig.epochs)
    p.add_argument("--batch-size", type=int, default=CbmTrainConfig.batch_size)
    p.add_argument("--learning-rate", type=float, default=CbmTrainConfig.learning_rate)
    p.add_argument("--concept-weight", type=float, default=CbmTrainConfig.concept_weight)
    p.add_argument("--js-weight", type=float, default=CbmTrainConfig.js_weight)
    p.add_argument("--implicit-dim", type=int, default=16)
    p.add_argument("--hidden-units", type=int, default=64)
    p.set_defaults(func=cmd_train_cbm)

    def add_gate_args(p):
        p.add_argument("--cbm", required=True, help="stage-1 checkpoint path")
        p.add_argument("--rho", type=float, default=0.3, help="expert label-noise rate")
        p.add_argument("--alpha", type=float, default=GateTrainConfig.alpha)
        p.add_argument("--beta", type=float, default=GateTrainConfig.beta)
        p.add_argument("--pseudo-labels", choices=("hard", "soft"), default=GateTrainConfig.pseudo_labels)
        p.add_argument("--epochs", type=int, default=GateTrainConfig.epochs)
        p.add_argument("--batch-size", type=int, default=GateTrainConfig.batch_size)
        p.add_argument("--learning-rate", type=float, default=GateTrainConfig.learning_rate)
        p.add_argument("--hidden-units", type=int, default=GateTrainConfig.hidden_units)
        p.add_argument("--defer-only", action="store_true", help="mask the AI+Human strategy")
        p.add_argument("--gate-input", choices=("concept", "image"), default="concept")

    p = sub.add_parser("train-gate", help="stage 2: train the strategy gate and fusion head")
    _add_dataset_args(p)
    add_gate_args(p)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0, help="human-involvement cost weight")
    p.set_defaults(func=cmd_train_gate)

    p = sub.add_parser("evaluate", help="evaluate a trained system on the test split")
    _add_dataset_args(p)
    p.add_argument("--cbm", required=True)
    p.add_argument("--gate", required=True)
    p.add_argument("--rho", type=float, default=0.3)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--heatmap", action="store_true", help="also emit the strategy-concept heatmap")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="accuracy-coverage sweep over a lambda grid")
    _add_dataset_args(p)
    add_gate_args(p)
    p.add_argument("--lambda-grid", default="0,0.1,0.3,1,3,10")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("intervene", help="forward intervention or backward rectification on one instance")
    _add_dataset_args(p)
    p.add_argument("--cbm", required=True)
    p.add_argument("--gate", help="gate checkpoint (needed for --expert-label)")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--instance", type=int, required=True)
    p.add_argument("--edit", action="append", help="concept edit INDEX=on|off (repeatable)")
    p.add_argument("--rectify", action="store_true", help="backward-rectify toward the true label")
    p.add_argument("--expert-label", type=int, help="also run the expert-label fusion path")
    p.set_defaults(func=cmd_intervene)

    p = sub.add_parser("serve", help="HTTP JSON service for the intervention console")
    _add_dataset_args(p)
    p.add_argument("--cbm", required=True)
    p.add_argument("--gate", required=True)
    p.add_argument("--rho", type=float, default=0.3)
    p.add_argument("--port", type=int, default=8151)
    p.add_argument("--curve", action="append", help="precomputed sweep as RHO=PATH (repeatable)")
    p.add_argument("--static", help="directory of console static files to serve at /")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (FileNotFoundError, FormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_PREREQ
    except TrainingDiverged as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC_ABORT


if __name__ == "__main__":
    sys.exit(main())
