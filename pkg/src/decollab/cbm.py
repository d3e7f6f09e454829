"""Decoupled concept bottleneck classifier and its stage-1 training.

The model carries two pathways: an explicit one that predicts annotated
concepts and classifies from them through a single affine head (kept
single-layer so concept edits translate directly into label changes), and
an implicit one that adds latent task signal the concepts miss. Label
logits are the literal sum of the two head outputs, and a Jensen-Shannon
term keeps the full output distribution close to the concept-only one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .container import (
    FormatError,
    header_int,
    read_f64_block,
    read_header,
    read_magic,
    write_f64_block,
    write_header,
)
from .dataio import SplitBundle
from .numerics import (
    EPS,
    DifferentiableStack,
    SgdOptimizer,
    cross_entropy_mean,
    glorot_stack,
    softmax,
    softmax_vjp,
)

CHECKPOINT_MAGIC = b"DECOCK01"

_PROB_FLOOR = 1e-12


class TrainingDiverged(RuntimeError):
    """Raised when a training loss stops being finite."""


@dataclass
class ConceptActivations:
    logits: np.ndarray        # (n, d) explicit concept logits
    probabilities: np.ndarray  # sigmoid of the logits, clamped into (0, 1)
    implicit: np.ndarray       # (n, h) latent pathway output

    @property
    def n_concepts(self) -> int:
        return self.logits.shape[1]


@dataclass
class CbmTrainConfig:
    # stage 1 converges fast at desk scale; longer schedules mostly memorize
    # instance noise, which corrupts the correctness flags stage 2 trains on
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    concept_weight: float = 1.0
    js_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.concept_weight < 0 or self.js_weight < 0:
            raise ValueError("loss weights must be non-negative")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return np.clip(out, _PROB_FLOOR, 1.0 - _PROB_FLOOR)


class DcbmModel:
    """Explicit encoder/head plus implicit encoder/head with additive logits."""

    def __init__(
        self,
        concept_encoder: DifferentiableStack,
        implicit_encoder: DifferentiableStack,
        explicit_head: DifferentiableStack,
        implicit_head: DifferentiableStack,
    ):
        if len(explicit_head.layers) != 1 or explicit_head.layers[0].activation != "identity":
            raise ValueError("explicit head must be a single affine layer")
        if len(implicit_head.layers) != 1 or implicit_head.layers[0].activation != "identity":
            raise ValueError("implicit head must be a single affine layer")
        if concept_encoder.output_dim != explicit_head.input_dim:
            raise ValueError("concept encoder and explicit head disagree on d")
        if implicit_encoder.output_dim != implicit_head.input_dim:
            raise ValueError("implicit encoder and implicit head disagree on h")
        if concept_encoder.input_dim != implicit_encoder.input_dim:
            raise ValueError("both encoders must consume the same features")
        if explicit_head.output_dim != implicit_head.output_dim:
            raise ValueError("heads must agree on the class count")
        self.concept_encoder = concept_encoder
        self.implicit_encoder = implicit_encoder
        self.explicit_head = explicit_head
        self.implicit_head = implicit_head
        self.frozen = False

    @property
    def n_features(self) -> int:
        return self.concept_encoder.input_dim

    @property
    def n_concepts(self) -> int:
        return self.concept_encoder.output_dim

    @property
    def implicit_dim(self) -> int:
        return self.implicit_encoder.output_dim

    @property
    def n_classes(self) -> int:
        return self.explicit_head.output_dim

    def stacks(self) -> list[DifferentiableStack]:
        return [self.concept_encoder, self.implicit_encoder, self.explicit_head, self.implicit_head]

    def freeze(self) -> None:
        self.frozen = True
        for s in self.stacks():
            s.frozen = True
            s.clear_cache()

    def activations(self, x) -> ConceptActivations:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        logits = self.concept_encoder(x)
        implicit = self.implicit_encoder(x)
        return ConceptActivations(logits=logits, probabilities=_sigmoid(logits), implicit=implicit)

    def explicit_label_logits(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return self.explicit_head(self.concept_encoder(x))

    def implicit_label_logits(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return self.implicit_head(self.implicit_encoder(x))

    def label_logits(self, x) -> np.ndarray:
        """Full prediction: explicit head output plus implicit head output."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        acts = self.activations(x)
        return self.explicit_head(acts.logits) + self.implicit_head(acts.implicit)

    def logits_from_concepts(self, concept_logits, implicit_contrib) -> np.ndarray:
        """Label logits for edited concept logits, implicit contribution held fixed."""
        concept_logits = np.atleast_2d(np.asarray(concept_logits, dtype=np.float64))
        return self.explicit_head(concept_logits) + np.atleast_2d(implicit_contrib)


def predict_concepts(model: DcbmModel, x) -> ConceptActivations:
    return model.activations(x)


def predict_label(model: DcbmModel, x) -> np.ndarray:
    return model.label_logits(x)


def new_model(
    n_features: int,
    n_concepts: int,
    n_classes: int,
    implicit_dim: int = 16,
    hidden_units: int = 64,
    seed: int = 0,
) -> DcbmModel:
    rng = np.random.default_rng(seed)
    g = glorot_stack([n_features, hidden_units, n_concepts], ["relu", "identity"], rng)
    g_imp = glorot_stack([n_features, hidden_units, implicit_dim], ["relu", "identity"], rng)
    f = glorot_stack([n_concepts, n_classes], ["identity"], rng)
    f_imp = glorot_stack([implicit_dim, n_classes], ["identity"], rng)
    return DcbmModel(g, g_imp, f, f_imp)


def _js_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    m = 0.5 * (p + q)
    lp = np.log(np.maximum(p, EPS)) - np.log(np.maximum(m, EPS))
    lq = np.log(np.maximum(q, EPS)) - np.log(np.maximum(m, EPS))
    return 0.5 * (p * lp).sum(axis=1) + 0.5 * (q * lq).sum(axis=1)


def js_alignment_loss(model: DcbmModel, x) -> float:
    """Mean JS divergence between the concept-only and full output distributions."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    explicit = model.explicit_label_logits(x)
    full = explicit + model.implicit_label_logits(x)
    return float(_js_rows(softmax(explicit), softmax(full)).mean())


def concept_loss(activations: ConceptActivations, c_true) -> float:
    """Mean binary cross-entropy over every concept entry."""
    c = np.asarray(c_true)
    if c.shape != activations.probabilities.shape:
        raise ValueError("concept annotation shape mismatch")
    if c.size and not np.isin(c, (0, 1)).all():
        raise ValueError("concept annotations must be binary")
    p = np.clip(activations.probabilities, _PROB_FLOOR, 1.0 - _PROB_FLOOR)
    c = c.astype(np.float64)
    return float(-(c * np.log(p) + (1.0 - c) * np.log(1.0 - p)).mean())


@dataclass
class EpochStats:
    epoch: int
    total: float
    task: float
    concept: float
    alignment: float


def stage1_loss_and_gradients(
    model: DcbmModel,
    X: np.ndarray,
    C: np.ndarray,
    Y: np.ndarray,
    concept_weight: float,
    js_weight: float,
    accumulate: bool = True,
) -> tuple[float, float, float, float]:
    """One remembered forward/backward pass of the stage-1 objective.

    Returns (total, task, concept, alignment) batch means; parameter
    gradients are accumulated into the model's stacks.
    """
    B = X.shape[0]
    a = model.concept_encoder.forward(X, remember=accumulate)
    imp = model.implicit_encoder.forward(X, remember=accumulate)
    e = model.explicit_head.forward(a, remember=accumulate)
    t = model.implicit_head.forward(imp, remember=accumulate)
    full = e + t

    y_onehot = np.zeros_like(full)
    y_onehot[np.arange(B), Y] = 1.0
    p_full = softmax(full)
    task = cross_entropy_mean(Y, full)

    probs = _sigmoid(a)
    cfloat = C.astype(np.float64)
    concept = float(-(cfloat * np.log(probs) + (1.0 - cfloat) * np.log(1.0 - probs)).mean())

    p_exp = softmax(e)
    m = 0.5 * (p_exp + p_full)
    align = float(_js_rows(p_exp, p_full).mean())

    total = task + concept_weight * concept + js_weight * align
    if not accumulate:
        return total, task, concept, align

    d_full = (p_full - y_onehot) / B
    g_exp_side = 0.5 * (np.log(np.maximum(p_exp, EPS)) - np.log(np.maximum(m, EPS)))
    g_full_side = 0.5 * (np.log(np.maximum(p_full, EPS)) - np.log(np.maximum(m, EPS)))
    d_full = d_full + (js_weight / B) * softmax_vjp(p_full, g_full_side)
    d_e = d_full + (js_weight / B) * softmax_vjp(p_exp, g_exp_side)

    da_from_head = model.explicit_head.backward(d_e)
    dimp_from_head = model.implicit_head.backward(d_full)
    da = da_from_head + concept_weight * (probs - cfloat) / C.size
    model.concept_encoder.backward(da)
    model.implicit_encoder.backward(dimp_from_head)
    return total, task, concept, align


def train_cbm(model: DcbmModel, bundle: SplitBundle, config: CbmTrainConfig) -> tuple[DcbmModel, list[EpochStats]]:
    """Stage-1 training; the returned model is frozen for downstream use."""
    if model.frozen:
        raise RuntimeError("model is frozen")
    train = bundle.train
    if train.n_features != model.n_features or train.n_concepts != model.n_concepts:
        raise ValueError("bundle dimensions do not match the model")
    if train.n_classes != model.n_classes:
        raise ValueError("bundle class count does not match the model")

    rng = np.random.default_rng(config.seed)
    opt = SgdOptimizer(model.stacks(), config.learning_rate, config.momentum)
    history: list[EpochStats] = []
    for epoch in range(config.epochs):
        order = rng.permutation(train.n)
        sums = np.zeros(4)
        batches = 0
        for start in range(0, train.n, config.batch_size):
            idx = order[start : start + config.batch_size]
            for s in model.stacks():
                s.zero_gradients()
            try:
                total, task, concept, align = stage1_loss_and_gradients(
                    model, train.X[idx], train.C[idx], train.Y[idx], config.concept_weight, config.js_weight
                )
            except ValueError as exc:
                raise TrainingDiverged(f"stage-1 blow-up at epoch {epoch}, batch {batches}: {exc}") from exc
            if not np.isfinite(total):
                raise TrainingDiverged(f"non-finite stage-1 loss at epoch {epoch}, batch {batches}")
            opt.step()
            sums += (total, task, concept, align)
            batches += 1
        history.append(EpochStats(epoch, *(sums / batches)))
    model.freeze()
    return model, history


# --- checkpoints ------------------------------------------------------------


def _stack_layer_spec(stack: DifferentiableStack) -> str:
    return ";".join(f"{l.fan_in}x{l.fan_out}:{l.activation}" for l in stack.layers)


def _write_stack(fh, stack: DifferentiableStack) -> None:
    for layer in stack.layers:
        write_f64_block(fh, layer.weight)
        write_f64_block(fh, layer.bias)


def _read_stack(fh, spec: str) -> DifferentiableStack:
    from .numerics import AffineLayer

    layers = []
    for part in spec.split(";"):
        dims, _, act = part.partition(":")
        fan_in, _, fan_out = dims.partition("x")
        w = read_f64_block(fh, (int(fan_in), int(fan_out)))
        b = read_f64_block(fh, (int(fan_out),))
        layers.append(AffineLayer(w, b, act))
    return DifferentiableStack(layers)


def save_cbm_checkpoint(model: DcbmModel, path, seed: int = 0) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        write_header(
            fh,
            {
                "stage": "cbm",
                "n_features": str(model.n_features),
                "n_concepts": str(model.n_concepts),
                "implicit_dim": str(model.implicit_dim),
                "n_classes": str(model.n_classes),
                "seed": str(seed),
                "frozen": "1" if model.frozen else "0",
                "g": _stack_layer_spec(model.concept_encoder),
                "g_imp": _stack_layer_spec(model.implicit_encoder),
                "f": _stack_layer_spec(model.explicit_head),
                "f_imp": _stack_layer_spec(model.implicit_head),
            },
        )
        for stack in model.stacks():
            _write_stack(fh, stack)


def load_cbm_checkpoint(path) -> DcbmModel:
    with open(path, "rb") as fh:
        read_magic(fh, CHECKPOINT_MAGIC)
        fields = read_header(fh)
        if fields.get("stage") != "cbm":
            raise FormatError("malformed_header", f"not a model checkpoint: stage={fields.get('stage')!r}")
        stacks = [_read_stack(fh, fields[key]) for key in ("g", "g_imp", "f", "f_imp")]
        model = DcbmModel(*stacks)
        for key, expected in (
            ("n_features", model.n_features),
            ("n_concepts", model.n_concepts),
            ("implicit_dim", model.implicit_dim),
            ("n_classes", model.n_classes),
        ):
            if header_int(fields, key) != expected:
                raise FormatError("dimension_mismatch", f"{key} header disagrees with parameter blocks")
        if fields.get("frozen") == "1":
            model.freeze()
        return model
