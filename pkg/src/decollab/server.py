"""HTTP JSON service for the interactive intervention console.

All state is read-only after startup; requests are served concurrently by
a threading HTTP server. Endpoints:

    GET  /instances/{id}   instance features, concept predictions, routing
    POST /intervene        concept edits -> before/after prediction + re-gated strategy
    POST /expert           human label -> routed fusion result
    GET  /curve?rho=..     precomputed accuracy-coverage sweep points
    GET  /bounds           per-concept intervention bounds

Errors are JSON payloads: {"error": {"code", "message", ...}}.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import numpy as np

from .cbm import DcbmModel
from .dataio import GroupSpec, TripletDataset
from .evaluation import CoverageCurve
from .expert import expert_onehot
from .intervene import (
    ConceptEdit,
    GroupConflictError,
    InterventionRequest,
    PercentileBounds,
    forward_intervene,
)
from .numerics import softmax
from .strategy import FusionNet, GatingNet, StrategyId, gate_inputs, route_and_fuse


@dataclass
class ApiState:
    model: DcbmModel
    gating: GatingNet
    fusion: FusionNet
    instances: TripletDataset
    bounds: PercentileBounds
    group_spec: GroupSpec | None = None
    curves: dict[float, CoverageCurve] = field(default_factory=dict)
    static_dir: Path | None = None

    def concept_name(self, j: int) -> str:
        return f"concept_{j:02d}"

    def group_of(self, j: int) -> int | None:
        for gid, group in enumerate(self.group_spec or []):
            if j in group:
                return gid
        return None


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, **extra):
        super().__init__(message)
        self.status = status
        self.payload = {"error": {"code": code, "message": message, **extra}}


def _prediction_view(logits: np.ndarray) -> dict:
    probs = softmax(logits)
    return {
        "label": int(np.argmax(logits)),
        "confidence": float(probs.max()),
        "logits": [float(v) for v in logits],
    }


def _concept_view(state: ApiState, logits: np.ndarray, probs: np.ndarray, changed=()) -> list[dict]:
    return [
        {
            "index": j,
            "name": state.concept_name(j),
            "group": state.group_of(j),
            "logit": float(logits[j]),
            "probability": float(probs[j]),
            "intervened": j in changed,
        }
        for j in range(logits.shape[0])
    ]


def _gate_view(state: ApiState, gate_input: np.ndarray) -> dict:
    r = state.gating.distribution(gate_input[None, :])[0]
    return {"distribution": [float(v) for v in r], "chosen": int(np.argmax(r)) + 1}


def instance_payload(state: ApiState, instance_id: int) -> dict:
    if not 0 <= instance_id < state.instances.n:
        raise ApiError(404, "not_found", f"no instance {instance_id}")
    x = state.instances.X[instance_id]
    acts = state.model.activations(x)
    logits = state.model.label_logits(x)[0]
    gate_in = gate_inputs(state.gating, state.model, x[None, :])[0]
    gv = _gate_view(state, gate_in)
    return {
        "id": instance_id,
        "n_classes": state.instances.n_classes,
        "true_label": int(state.instances.Y[instance_id]),
        "features": [float(v) for v in x],
        "concepts": _concept_view(state, acts.logits[0], acts.probabilities[0]),
        "strategy": gv,
        "prediction": _prediction_view(logits),
    }


def intervene_payload(state: ApiState, body: dict) -> dict:
    instance_id = _expect_int(body, "instance_id")
    if not 0 <= instance_id < state.instances.n:
        raise ApiError(404, "not_found", f"no instance {instance_id}")
    raw_edits = body.get("edits")
    if not isinstance(raw_edits, list):
        raise ApiError(400, "bad_request", "edits must be a list")
    edits = []
    for e in raw_edits:
        try:
            edits.append(ConceptEdit(int(e["concept"]), str(e["target"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ApiError(400, "bad_request", f"malformed edit: {exc}") from exc
    x = state.instances.X[instance_id]
    request = InterventionRequest(x=x, edits=edits, group_spec=state.group_spec)
    try:
        result = forward_intervene(state.model, request, state.bounds)
    except GroupConflictError as exc:
        raise ApiError(400, "group_conflict", str(exc), group=exc.group) from exc
    except ValueError as exc:
        raise ApiError(400, "bad_request", str(exc)) from exc
    acts_before = state.model.activations(x)
    before_gate = acts_before.probabilities[0] if state.gating.input_mode == "concept" else x
    after_gate = result.activations.probabilities[0] if state.gating.input_mode == "concept" else x
    return {
        "instance_id": instance_id,
        "before": _prediction_view(result.before_logits),
        "after": _prediction_view(result.after_logits),
        "changed_concepts": result.changed,
        "concepts": _concept_view(
            state, result.activations.logits[0], result.activations.probabilities[0], set(result.changed)
        ),
        "strategy_before": _gate_view(state, before_gate),
        "strategy_after": _gate_view(state, after_gate),
    }


def expert_payload(state: ApiState, body: dict) -> dict:
    instance_id = _expect_int(body, "instance_id")
    if not 0 <= instance_id < state.instances.n:
        raise ApiError(404, "not_found", f"no instance {instance_id}")
    label = _expect_int(body, "label")
    if not 0 <= label < state.instances.n_classes:
        raise ApiError(400, "bad_request", f"label {label} out of range")
    x = state.instances.X[instance_id]
    f_logits = state.model.label_logits(x)[0]
    gate_in = gate_inputs(state.gating, state.model, x[None, :])
    r = state.gating.distribution(gate_in)[0]
    fused, chosen = route_and_fuse(r, f_logits, expert_onehot(label, state.instances.n_classes))
    if chosen == StrategyId.AI_ONLY:
        final = _prediction_view(f_logits)
    else:
        final = _prediction_view(state.fusion.predict(fused)[0])
    return {
        "instance_id": instance_id,
        "expert_label": label,
        "chosen_strategy": int(chosen),
        "strategy_distribution": [float(v) for v in r],
        "fused": final,
    }


def curve_payload(state: ApiState, rho_text: str | None) -> dict:
    if rho_text is None:
        raise ApiError(400, "bad_request", "missing rho query parameter")
    try:
        rho = float(rho_text)
    except ValueError as exc:
        raise ApiError(400, "bad_request", f"bad rho {rho_text!r}") from exc
    hit = None
    for key, curve in state.curves.items():
        if abs(key - rho) <= 1e-9:
            hit = curve
            break
    points = (
        [
            {
                "lambda": p.lam,
                "human_participation_ratio": p.participation_ratio,
                "system_accuracy": p.system_accuracy,
            }
            for p in hit.points
        ]
        if hit
        else []
    )
    return {"rho": rho, "points": points}


def bounds_payload(state: ApiState) -> dict:
    return {
        "low": [float(v) for v in state.bounds.low],
        "high": [float(v) for v in state.bounds.high],
    }


def _expect_int(body: dict, key: str) -> int:
    value = body.get(key)
    if not isinstance(value, int) or isinstance(value, bool):
        raise ApiError(400, "bad_request", f"{key} must be an integer")
    return value


_STATIC_TYPES = {".html": "text/html", ".js": "text/javascript", ".css": "text/css", ".map": "application/json"}


def make_handler(state: ApiState):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):
            pass

        def _send_json(self, status: int, payload: dict) -> None:
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def _serve_static(self, path: str) -> None:
            assert state.static_dir is not None
            rel = "index.html" if path in ("", "/") else path.lstrip("/")
            target = (state.static_dir / rel).resolve()
            if not str(target).startswith(str(state.static_dir.resolve())) or not target.is_file():
                self._send_json(404, {"error": {"code": "not_found", "message": path}})
                return
            body = target.read_bytes()
            self.send_response(200)
            self.send_header("Content-Type", _STATIC_TYPES.get(target.suffix, "application/octet-stream"))
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_OPTIONS(self):
            self.send_response(204)
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.end_headers()

        def do_GET(self):
            url = urlparse(self.path)
            try:
                if url.path.startswith("/instances/"):
                    raw = url.path[len("/instances/") :]
                    try:
                        instance_id = int(raw)
                    except ValueError:
                        raise ApiError(400, "bad_request", f"bad instance id {raw!r}")
                    self._send_json(200, instance_payload(state, instance_id))
                elif url.path == "/curve":
                    query = parse_qs(url.query)
                    rho = query.get("rho", [None])[0]
                    self._send_json(200, curve_payload(state, rho))
                elif url.path == "/bounds":
                    self._send_json(200, bounds_payload(state))
                elif state.static_dir is not None:
                    self._serve_static(url.path)
                else:
                    raise ApiError(404, "not_found", self.path)
            except ApiError as err:
                self._send_json(err.status, err.payload)

        def do_POST(self):
            url = urlparse(self.path)
            try:
                length = int(self.headers.get("Content-Length", "0"))
                try:
                    body = json.loads(self.rfile.read(length) or b"{}")
                except json.JSONDecodeError as exc:
                    raise ApiError(400, "bad_request", f"invalid JSON: {exc}")
                if not isinstance(body, dict):
                    raise ApiError(400, "bad_request", "request body must be a JSON object")
                if url.path == "/intervene":
                    self._send_json(200, intervene_payload(state, body))
                elif url.path == "/expert":
                    self._send_json(200, expert_payload(state, body))
                else:
                    raise ApiError(404, "not_found", self.path)
            except ApiError as err:
                self._send_json(err.status, err.payload)

    return Handler


def make_server(state: ApiState, port: int, host: str = "127.0.0.1") -> ThreadingHTTPServer:
    return ThreadingHTTPServer((host, port), make_handler(state))


def serve_in_thread(state: ApiState, port: int = 0) -> tuple[ThreadingHTTPServer, threading.Thread]:
    """Start the service on a background thread; returns (server, thread)."""
    server = make_server(state, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread
