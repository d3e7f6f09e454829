"""Strategy selection and human-AI fusion.

A gating network maps each instance (through its concept probabilities, or
raw features in image mode) to a distribution over three collaboration
strategies: AI-only, AI+Human, Defer-to-Human. The most probable strategy
decides what the fusion head sees: the model's logits, the expert's one-hot
label, or both, with the unused block zeroed. Training has no routing
ground truth, so supervision comes from pseudo-labels built by comparing
AI and expert correctness per instance, plus a cost term that charges any
probability mass on the human-involving strategies.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .cbm import CHECKPOINT_MAGIC, DcbmModel, TrainingDiverged
from .container import FormatError, header_int, read_header, read_magic, write_header
from .dataio import SplitBundle
from .expert import SimulatedExpert, onehot_rows
from .numerics import (
    AffineLayer,
    DifferentiableStack,
    SgdOptimizer,
    cross_entropy,
    glorot_stack,
    softmax,
)

EXPERT_LOGIT_SCALE = 10.0
_LOG_FLOOR = 1e-12


class StrategyId(IntEnum):
    AI_ONLY = 1
    AI_HUMAN = 2
    DEFER = 3


class GatingNet:
    """Three-way strategy selector over the simplex.

    ``defer_only`` masks the AI+Human strategy: its logit is excluded from
    the softmax, so its probability is exactly zero and it can never win
    the argmax.
    """

    def __init__(self, stack: DifferentiableStack, input_mode: str = "concept", defer_only: bool = False):
        if input_mode not in ("concept", "image"):
            raise ValueError("input mode must be 'concept' or 'image'")
        if stack.output_dim != 3:
            raise ValueError("gating stack must emit 3 logits")
        self.stack = stack
        self.input_mode = input_mode
        self.defer_only = defer_only

    @property
    def input_dim(self) -> int:
        return self.stack.input_dim

    def distribution_from_logits(self, logits: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(logits).astype(np.float64, copy=True)
        if self.defer_only:
            z[:, StrategyId.AI_HUMAN - 1] = -np.inf
            z = z - z.max(axis=1, keepdims=True)
            e = np.exp(z)
            e[:, StrategyId.AI_HUMAN - 1] = 0.0
            return e / e.sum(axis=1, keepdims=True)
        return softmax(z)

    def distribution(self, inputs) -> np.ndarray:
        return self.distribution_from_logits(self.stack(np.atleast_2d(inputs)))


class FusionNet:
    """Collaboration head: single affine map from [model logits, expert one-hot]."""

    def __init__(self, stack: DifferentiableStack):
        if len(stack.layers) != 1 or stack.layers[0].activation != "identity":
            raise ValueError("fusion must be a single affine layer")
        if stack.input_dim % 2 != 0 or stack.output_dim * 2 != stack.input_dim:
            raise ValueError("fusion must map 2K inputs to K logits")
        self.stack = stack

    @property
    def n_classes(self) -> int:
        return self.stack.output_dim

    def predict(self, fused) -> np.ndarray:
        return self.stack(np.atleast_2d(fused))


def new_gating_net(
    input_dim: int, hidden_units: int = 24, seed: int = 0, input_mode: str = "concept", defer_only: bool = False
) -> GatingNet:
    rng = np.random.default_rng(seed)
    stack = glorot_stack([input_dim, hidden_units, 3], ["relu", "identity"], rng)
    return GatingNet(stack, input_mode=input_mode, defer_only=defer_only)


MODEL_EVIDENCE_INIT = 1.0
EXPERT_EVIDENCE_INIT = 3.0


def new_fusion_net(n_classes: int, seed: int = 0) -> FusionNet:
    """Fusion head initialized as additive evidence combination.

    Identity blocks (model logits at weight 1, expert one-hot at weight 2)
    make the head behave sensibly from step 0, including on classes that
    rarely appear on human-involving routes during training; training then
    adjusts the mix. A small seeded perturbation breaks symmetry.
    """
    rng = np.random.default_rng(seed)
    k = n_classes
    w = np.zeros((2 * k, k))
    w[:k] = MODEL_EVIDENCE_INIT * np.eye(k)
    w[k:] = EXPERT_EVIDENCE_INIT * np.eye(k)
    w += rng.uniform(-0.01, 0.01, size=w.shape)
    return FusionNet(DifferentiableStack([AffineLayer(w, np.zeros(k), "identity")]))


def gate_inputs(net: GatingNet, model: DcbmModel, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if net.input_mode == "concept":
        return model.activations(x).probabilities
    return x


def gate(net: GatingNet, model: DcbmModel, x) -> np.ndarray:
    """Strategy distribution rows for a batch of raw feature rows."""
    return net.distribution(gate_inputs(net, model, x))


def chosen_strategies(r: np.ndarray) -> np.ndarray:
    """Argmax strategy ids; exact ties go to the cheaper (lower) strategy."""
    r = np.atleast_2d(r)
    return (np.argmax(r, axis=1) + 1).astype(np.int64)


def route_and_fuse(r, f_logits, m_onehot) -> tuple[np.ndarray, StrategyId]:
    """Build the fusion input for one instance from its strategy distribution."""
    r = np.asarray(r, dtype=np.float64)
    f_logits = np.asarray(f_logits, dtype=np.float64)
    m_onehot = np.asarray(m_onehot, dtype=np.float64)
    if r.shape != (3,):
        raise ValueError("strategy distribution must have exactly 3 entries")
    if f_logits.shape != m_onehot.shape or f_logits.ndim != 1:
        raise ValueError("model logits and expert one-hot must be equal-length vectors")
    chosen = StrategyId(int(np.argmax(r)) + 1)
    zeros = np.zeros_like(f_logits)
    if chosen == StrategyId.AI_ONLY:
        fused = np.concatenate([f_logits, zeros])
    elif chosen == StrategyId.AI_HUMAN:
        fused = np.concatenate([f_logits, m_onehot])
    else:
        fused = np.concatenate([zeros, m_onehot])
    return fused, chosen


def fused_rows(strategies: np.ndarray, f_logits: np.ndarray, m_onehot: np.ndarray) -> np.ndarray:
    """Vectorized routing for a batch given already-chosen strategy ids."""
    s = np.asarray(strategies, dtype=np.int64)
    keep_f = (s != StrategyId.DEFER)[:, None]
    keep_m = (s != StrategyId.AI_ONLY)[:, None]
    return np.concatenate([f_logits * keep_f, m_onehot * keep_m], axis=1)


def fusion_predict(net: FusionNet, fused) -> np.ndarray:
    fused = np.atleast_2d(np.asarray(fused, dtype=np.float64))
    if fused.shape[1] != 2 * net.n_classes:
        raise ValueError(f"fused input must have {2 * net.n_classes} entries")
    return net.predict(fused)


@dataclass
class PseudoLabel:
    q: np.ndarray
    kind: str  # "hard" | "soft"

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64)
        if self.q.shape != (3,):
            raise ValueError("pseudo-label must have 3 entries")
        if self.kind not in ("hard", "soft"):
            raise ValueError("kind must be 'hard' or 'soft'")
        if abs(self.q.sum() - 1.0) > 1e-9 or np.any(self.q < 0):
            raise ValueError("pseudo-label must lie on the simplex")


def hard_pseudo_label(ai_correct: bool, expert_correct: bool) -> PseudoLabel:
    """AI-only if the AI is right; defer if only the expert is; AI+Human otherwise."""
    if ai_correct:
        q = [1.0, 0.0, 0.0]
    elif expert_correct:
        q = [0.0, 0.0, 1.0]
    else:
        q = [0.0, 1.0, 0.0]
    return PseudoLabel(np.array(q), "hard")


def strategy_penalties(f_logits, m_onehot, y: int, fusion: FusionNet, beta: float) -> np.ndarray:
    """Per-strategy heuristic losses: how badly each route would classify y.

    Human-involving strategies carry an additive effort charge ``beta``.
    The defer route scores the expert's one-hot scaled into a confident
    logit vector.
    """
    f_logits = np.asarray(f_logits, dtype=np.float64)
    m_onehot = np.asarray(m_onehot, dtype=np.float64)
    fused_both = np.concatenate([f_logits, m_onehot])
    l1 = cross_entropy(y, f_logits)
    l2 = cross_entropy(y, fusion_predict(fusion, fused_both)[0]) + beta
    l3 = cross_entropy(y, EXPERT_LOGIT_SCALE * m_onehot) + beta
    return np.array([l1, l2, l3])


def soft_pseudo_label(penalties) -> PseudoLabel:
    ell = np.asarray(penalties, dtype=np.float64)
    if ell.shape != (3,):
        raise ValueError("expected 3 penalties")
    if not np.all(np.isfinite(ell)):
        raise ValueError("penalties must be finite")
    return PseudoLabel(softmax(-ell), "soft")


def cost(r) -> float:
    """Probability mass on the strategies that involve the human."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3,):
        raise ValueError("strategy distribution must have exactly 3 entries")
    return float(r[1] + r[2])


def _strategy_term(r: np.ndarray, q: np.ndarray, kind: str) -> float:
    rc = np.clip(r, _LOG_FLOOR, 1.0)
    if kind == "hard":
        return float(-(q * np.log(rc)).sum())
    qc = np.clip(q, _LOG_FLOOR, 1.0)
    return float((q * (np.log(qc) - np.log(rc))).sum())


def surrogate_loss(r, q: PseudoLabel, y_hat_logits, y: int, alpha: float) -> float:
    """Strategy supervision plus weighted classification loss for one instance."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3,):
        raise ValueError("strategy distribution must have exactly 3 entries")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    return _strategy_term(r, q.q, q.kind) + alpha * cross_entropy(y, np.asarray(y_hat_logits, dtype=np.float64))


def total_objective(surrogate: float, r, lam: float) -> float:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return float(surrogate) + lam * cost(r)


@dataclass
class GateTrainConfig:
    lam: float = 0.0
    alpha: float = 1.0
    beta: float = 0.5
    pseudo_labels: str = "hard"  # "hard" | "soft"
    epochs: int = 45
    batch_size: int = 64
    learning_rate: float = 0.15
    momentum: float = 0.9
    seed: int = 0
    defer_only: bool = False
    gate_input: str = "concept"  # "concept" | "image"
    # small gate: routing is a per-region decision, and extra capacity only
    # memorizes which training instances the frozen model happened to get right
    hidden_units: int = 24
    # step-size scale on the fusion weight matrix (bias always trains at the
    # full rate). Routed training rows are a skewed sample of what each route
    # sees at evaluation time, so the weight blocks stay at their evidence
    # prior by default while the bias is free to learn class structure.
    fusion_weight_scale: float = 0.0

    def __post_init__(self):
        if self.lam < 0 or self.alpha < 0 or self.beta < 0:
            raise ValueError("lam, alpha and beta must be non-negative")
        if self.pseudo_labels not in ("hard", "soft"):
            raise ValueError("pseudo_labels must be 'hard' or 'soft'")
        if self.gate_input not in ("concept", "image"):
            raise ValueError("gate_input must be 'concept' or 'image'")
        if self.epochs <= 0 or self.batch_size <= 0 or self.learning_rate <= 0:
            raise ValueError("epochs, batch size and learning rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.fusion_weight_scale < 0:
            raise ValueError("fusion_weight_scale must be non-negative")


@dataclass
class GateEpochStats:
    epoch: int
    total: float
    strategy: float
    task: float
    cost: float


def _hard_q_rows(ai_correct: np.ndarray, expert_correct: np.ndarray, defer_only: bool) -> np.ndarray:
    n = ai_correct.shape[0]
    q = np.zeros((n, 3))
    q[ai_correct, 0] = 1.0
    defer = ~ai_correct & expert_correct
    both_wrong = ~ai_correct & ~expert_correct
    q[defer, 2] = 1.0
    if defer_only:
        # with AI+Human masked, the "neither is right" default falls to the
        # remaining human-involving strategy
        q[both_wrong, 2] = 1.0
    else:
        q[both_wrong, 1] = 1.0
    return q


def _soft_q_rows(
    F: np.ndarray, M1h: np.ndarray, Y: np.ndarray, fusion: FusionNet, beta: float, defer_only: bool
) -> np.ndarray:
    both = np.concatenate([F, M1h], axis=1)
    fused_logits = fusion.predict(both)

    def ce_rows(logits: np.ndarray) -> np.ndarray:
        z = logits - logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1))
        return lse - z[np.arange(z.shape[0]), Y]

    ell = np.stack(
        [ce_rows(F), ce_rows(fused_logits) + beta, ce_rows(EXPERT_LOGIT_SCALE * M1h) + beta], axis=1
    )
    if defer_only:
        ell[:, 1] = np.inf
    z = -ell
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def stage2_loss_and_gradients(
    gating: GatingNet,
    fusion: FusionNet,
    gate_in: np.ndarray,
    q: np.ndarray,
    routes: np.ndarray,
    fused: np.ndarray,
    F: np.ndarray,
    Y: np.ndarray,
    config: GateTrainConfig,
    accumulate: bool = True,
) -> tuple[float, float, float, float]:
    """Surrogate + cost objective on one batch with remembered passes.

    Routing is fixed by the pseudo-labels, so the strategy and cost terms
    drive the gate while the classification term drives the fusion head.
    The collaboration output of an AI-only-routed instance is the frozen
    model's own prediction (same as at evaluation time), so those rows
    contribute a constant to the classification term and no fusion
    gradient; the fusion head learns only from the routes it serves.
    """
    B = gate_in.shape[0]
    logits = gating.stack.forward(gate_in, remember=accumulate)
    r = gating.distribution_from_logits(logits)
    rc = np.clip(r, _LOG_FLOOR, 1.0)
    if config.pseudo_labels == "hard":
        strategy_term = float(-(q * np.log(rc)).mean(axis=0).sum())
    else:
        qc = np.clip(q, _LOG_FLOOR, 1.0)
        strategy_term = float((q * (np.log(qc) - np.log(rc))).sum(axis=1).mean())
    cost_term = float((r[:, 1] + r[:, 2]).mean())

    human = routes != StrategyId.AI_ONLY
    ce_rows = np.zeros(B)
    ai_rows = ~human
    if ai_rows.any():
        z = F[ai_rows]
        zs = z - z.max(axis=1, keepdims=True)
        ce_rows[ai_rows] = np.log(np.exp(zs).sum(axis=1)) - zs[np.arange(int(ai_rows.sum())), Y[ai_rows]]
    if human.any():
        y_hat = fusion.stack.forward(fused[human], remember=accumulate)
        zs = y_hat - y_hat.max(axis=1, keepdims=True)
        ce_rows[human] = np.log(np.exp(zs).sum(axis=1)) - zs[np.arange(int(human.sum())), Y[human]]
    task_term = float(ce_rows.mean())
    total = strategy_term + config.alpha * task_term + config.lam * cost_term

    if accumulate:
        # d/dlogits of both CE(q, softmax) and KL(q || softmax) is (r - q)
        d_logits = (r - q) / B
        cost_dir = np.array([0.0, 1.0, 1.0])
        inner = r @ cost_dir
        d_logits += (config.lam / B) * r * (cost_dir[None, :] - inner[:, None])
        if gating.defer_only:
            d_logits[:, StrategyId.AI_HUMAN - 1] = 0.0
        gating.stack.backward(d_logits)

        if human.any():
            p_hat = softmax(y_hat)
            y1h = np.zeros_like(p_hat)
            y1h[np.arange(p_hat.shape[0]), Y[human]] = 1.0
            fusion.stack.backward(config.alpha * (p_hat - y1h) / B)
    return total, strategy_term, task_term, cost_term


def prepare_stage2_inputs(
    model: DcbmModel, dataset, expert: SimulatedExpert, gate_input: str
) -> dict[str, np.ndarray]:
    """Frozen-model quantities reused across every stage-2 epoch."""
    F = model.label_logits(dataset.X)
    ai_pred = np.argmax(F, axis=1)
    M = expert.labels_for(dataset.Y)
    return {
        "F": F,
        "ai_correct": ai_pred == dataset.Y,
        "M": M,
        "M1h": onehot_rows(M, dataset.n_classes),
        "expert_correct": M == dataset.Y,
        "gate_in": model.activations(dataset.X).probabilities if gate_input == "concept" else dataset.X,
    }


def train_gate(
    gating: GatingNet,
    fusion: FusionNet,
    model: DcbmModel,
    bundle: SplitBundle,
    expert: SimulatedExpert,
    config: GateTrainConfig,
) -> tuple[GatingNet, FusionNet, list[GateEpochStats]]:
    """Stage-2 training of the gate and fusion head against a frozen model."""
    if not model.frozen:
        raise RuntimeError("stage-2 training requires a frozen stage-1 model")
    if gating.defer_only != config.defer_only:
        raise ValueError("gating net and config disagree on defer_only")
    if gating.input_mode != config.gate_input:
        raise ValueError("gating net and config disagree on the input mode")
    expected_in = model.n_concepts if config.gate_input == "concept" else model.n_features
    if gating.input_dim != expected_in:
        raise ValueError(f"gating input dim {gating.input_dim}, expected {expected_in}")
    if fusion.n_classes != model.n_classes:
        raise ValueError("fusion head class count does not match the model")

    train = bundle.train
    pre = prepare_stage2_inputs(model, train, expert, config.gate_input)
    hard_q = _hard_q_rows(pre["ai_correct"], pre["expert_correct"], config.defer_only)
    hard_routes = chosen_strategies(hard_q)
    hard_fused = fused_rows(hard_routes, pre["F"], pre["M1h"])

    rng = np.random.default_rng(config.seed)
    opt = SgdOptimizer([gating.stack, fusion.stack], config.learning_rate, config.momentum)
    history: list[GateEpochStats] = []
    for epoch in range(config.epochs):
        order = rng.permutation(train.n)
        sums = np.zeros(4)
        batches = 0
        for start in range(0, train.n, config.batch_size):
            idx = order[start : start + config.batch_size]
            if config.pseudo_labels == "hard":
                q = hard_q[idx]
                routes = hard_routes[idx]
                fused = hard_fused[idx]
            else:
                # recomputed against the current fusion head, used as a
                # fixed target (no gradient flows through q)
                q = _soft_q_rows(
                    pre["F"][idx], pre["M1h"][idx], train.Y[idx], fusion, config.beta, config.defer_only
                )
                routes = chosen_strategies(q)
                fused = fused_rows(routes, pre["F"][idx], pre["M1h"][idx])
            gating.stack.zero_gradients()
            fusion.stack.zero_gradients()
            try:
                totals = stage2_loss_and_gradients(
                    gating, fusion, pre["gate_in"][idx], q, routes, fused, pre["F"][idx], train.Y[idx], config
                )
            except ValueError as exc:
                raise TrainingDiverged(f"stage-2 blow-up at epoch {epoch}, batch {batches}: {exc}") from exc
            if not np.isfinite(totals[0]):
                raise TrainingDiverged(f"non-finite stage-2 loss at epoch {epoch}, batch {batches}")
            for layer in fusion.stack.layers:
                layer.grad_weight *= config.fusion_weight_scale
            opt.step()
            sums += totals
            batches += 1
        history.append(GateEpochStats(epoch, *(sums / batches)))
    gating.stack.frozen = True
    fusion.stack.frozen = True
    gating.stack.clear_cache()
    fusion.stack.clear_cache()
    return gating, fusion, history


# --- checkpoints ------------------------------------------------------------


def save_gate_checkpoint(gating: GatingNet, fusion: FusionNet, path, config: GateTrainConfig | None = None) -> None:
    from .cbm import _stack_layer_spec, _write_stack

    cfg = config or GateTrainConfig()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        write_header(
            fh,
            {
                "stage": "gate",
                "input_mode": gating.input_mode,
                "defer_only": "1" if gating.defer_only else "0",
                "n_classes": str(fusion.n_classes),
                "input_dim": str(gating.input_dim),
                "lam": repr(cfg.lam),
                "alpha": repr(cfg.alpha),
                "beta": repr(cfg.beta),
                "pseudo_labels": cfg.pseudo_labels,
                "seed": str(cfg.seed),
                "gate_stack": _stack_layer_spec(gating.stack),
                "fusion_stack": _stack_layer_spec(fusion.stack),
            },
        )
        _write_stack(fh, gating.stack)
        _write_stack(fh, fusion.stack)


def load_gate_checkpoint(path) -> tuple[GatingNet, FusionNet, dict[str, str]]:
    from .cbm import _read_stack

    with open(path, "rb") as fh:
        read_magic(fh, CHECKPOINT_MAGIC)
        fields = read_header(fh)
        if fields.get("stage") != "gate":
            raise FormatError("malformed_header", f"not a gate checkpoint: stage={fields.get('stage')!r}")
        gate_stack = _read_stack(fh, fields["gate_stack"])
        fusion_stack = _read_stack(fh, fields["fusion_stack"])
        gating = GatingNet(gate_stack, input_mode=fields.get("input_mode", "concept"), defer_only=fields.get("defer_only") == "1")
        fusion = FusionNet(fusion_stack)
        if header_int(fields, "input_dim") != gating.input_dim:
            raise FormatError("dimension_mismatch", "gate input dim disagrees with parameter blocks")
        if header_int(fields, "n_classes") != fusion.n_classes:
            raise FormatError("dimension_mismatch", "class count disagrees with parameter blocks")
        gating.stack.frozen = True
        fusion.stack.frozen = True
        return gating, fusion, fields
