"""Concept-driven defer-and-complement decision routing.

A two-stage system: a decoupled concept bottleneck classifier (explicit
concept pathway plus implicit latent pathway), then a concept-conditioned
gating network that routes each instance to AI-only, AI+Human, or
Defer-to-Human and a fusion head that combines model logits with expert
input. Includes accuracy-coverage sweeps, test-time concept intervention,
a CLI, and an HTTP JSON service.
"""

from .cbm import (
    CbmTrainConfig,
    ConceptActivations,
    DcbmModel,
    TrainingDiverged,
    concept_loss,
    js_alignment_loss,
    load_cbm_checkpoint,
    new_model,
    predict_concepts,
    predict_label,
    save_cbm_checkpoint,
    train_cbm,
)
from .dataio import (
    SplitBundle,
    SyntheticConfig,
    TripletDataset,
    generate_synthetic,
    load_dataset,
    nearest_template_labels,
    save_dataset,
)
from .evaluation import (
    ConceptStrategyHeatmap,
    CoverageCurve,
    CoveragePoint,
    EvalReport,
    concept_strategy_heatmap,
    emit_report,
    evaluate,
    sweep_lambda,
)
from .expert import SimulatedExpert, expert_onehot
from .intervene import (
    ConceptEdit,
    GroupConflictError,
    InterventionRequest,
    PercentileBounds,
    RectificationResult,
    backward_rectify,
    compute_percentile_bounds,
    forward_intervene,
)
from .numerics import (
    DifferentiableStack,
    SgdOptimizer,
    cross_entropy,
    js_divergence,
    kl_divergence,
    softmax,
)
from .strategy import (
    FusionNet,
    GateTrainConfig,
    GatingNet,
    PseudoLabel,
    StrategyId,
    cost,
    fusion_predict,
    gate,
    hard_pseudo_label,
    load_gate_checkpoint,
    new_fusion_net,
    new_gating_net,
    route_and_fuse,
    save_gate_checkpoint,
    soft_pseudo_label,
    strategy_penalties,
    surrogate_loss,
    total_objective,
    train_gate,
)

__version__ = "0.1.0"
