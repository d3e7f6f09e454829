// Payload types mirrored from the HTTP JSON API (docs/http-api.md).

export type StrategyId = 1 | 2 | 3;

export interface ConceptView {
  index: number;
  name: string;
  group: number | null;
  logit: number;
  probability: number;
  intervened: boolean;
}

export interface StrategyView {
  distribution: [number, number, number];
  chosen: StrategyId;
}

export interface PredictionView {
  label: number;
  confidence: number;
  logits: number[];
}

export interface InstanceView {
  id: number;
  n_classes: number;
  true_label: number;
  features: number[];
  concepts: ConceptView[];
  strategy: StrategyView;
  prediction: PredictionView;
}

export interface ConceptEdit {
  concept: number;
  target: "on" | "off";
}

export interface InterveneResponse {
  instance_id: number;
  before: PredictionView;
  after: PredictionView;
  changed_concepts: number[];
  concepts: ConceptView[];
  strategy_before: StrategyView;
  strategy_after: StrategyView;
}

export interface ExpertResponse {
  instance_id: number;
  expert_label: number;
  chosen_strategy: StrategyId;
  strategy_distribution: [number, number, number];
  fused: PredictionView;
}

export interface CurvePoint {
  lambda: number;
  human_participation_ratio: number;
  system_accuracy: number;
}

export interface CurveResponse {
  rho: number;
  points: CurvePoint[];
}

export interface BoundsResponse {
  low: number[];
  high: number[];
}

export interface ApiErrorPayload {
  error: {
    code: string;
    message: string;
    group?: number[];
  };
}
