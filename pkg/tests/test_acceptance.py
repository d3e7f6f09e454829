"""Acceptance gate: seeded synthetic regressions and exact property checks.

Each test covers one acceptance criterion at its stated tolerance and
prints a single PASS line on success (run with -s or check -v output).
Shared trained models come from session fixtures in conftest.
"""

import itertools
import math
import time
from dataclasses import replace

import numpy as np
from scipy import stats

from decollab.cbm import new_model, stage1_loss_and_gradients
from decollab.cli import main
from decollab.evaluation import evaluate, sweep_lambda
from decollab.expert import SimulatedExpert, expert_onehot, onehot_rows
from decollab.intervene import (
    ConceptEdit,
    InterventionRequest,
    backward_rectify,
    compute_percentile_bounds,
    forward_intervene,
)
from decollab.numerics import (
    AffineLayer,
    DifferentiableStack,
    finite_difference_gradients,
    js_divergence,
    kl_divergence,
    max_relative_error,
)
from decollab.strategy import (
    GateTrainConfig,
    GatingNet,
    FusionNet,
    StrategyId,
    _hard_q_rows,
    chosen_strategies,
    cost,
    fused_rows,
    hard_pseudo_label,
    new_fusion_net,
    new_gating_net,
    route_and_fuse,
    stage2_loss_and_gradients,
    total_objective,
    train_gate,
)

from conftest import BENCH_SEED

LN2 = math.log(2.0)
LAMBDA_GRID = [0.0, 0.1, 0.3, 1.0, 3.0, 10.0]


def report_pass(name: str) -> None:
    print(f"ACCEPTANCE PASS: {name}")


class TestGradientOracle:
    def test_stage1_and_stage2_gradients(self):
        started = time.monotonic()
        rng = np.random.default_rng(31)

        # stage 1: task CE + concept BCE + distribution-alignment JS
        model = new_model(n_features=6, n_concepts=4, n_classes=3, implicit_dim=3, hidden_units=5, seed=1)
        X = rng.normal(size=(5, 6))
        C = rng.integers(0, 2, size=(5, 4))
        Y = rng.integers(0, 3, size=5)
        for w_c, w_js in ((1.0, 1.0), (0.5, 2.0)):
            def s1_loss():
                return stage1_loss_and_gradients(model, X, C, Y, w_c, w_js, accumulate=False)[0]

            for s in model.stacks():
                s.zero_gradients()
            stage1_loss_and_gradients(model, X, C, Y, w_c, w_js)
            analytic = [g.copy() for s in model.stacks() for g in s.gradients()]
            numeric = finite_difference_gradients(s1_loss, [p for s in model.stacks() for p in s.parameters()])
            assert max_relative_error(analytic, numeric) < 1e-4

        # stage 2: strategy supervision + classification + cost, hard/soft, masked
        frozen = new_model(n_features=6, n_concepts=4, n_classes=3, implicit_dim=3, hidden_units=5, seed=2)
        frozen.freeze()
        X2 = rng.normal(size=(10, 6))
        Y2 = rng.integers(0, 3, size=10)
        F = frozen.label_logits(X2)
        M1h = onehot_rows(rng.integers(0, 3, size=10), 3)
        gate_in = frozen.activations(X2).probabilities
        for defer_only, kind, lam, alpha in (
            (False, "hard", 0.7, 1.0),
            (False, "soft", 0.3, 2.0),
            (True, "hard", 1.5, 1.0),
        ):
            q = _hard_q_rows(np.argmax(F, 1) == Y2, np.argmax(M1h, 1) == Y2, defer_only)
            if kind == "soft":
                q = rng.dirichlet(np.ones(3), size=10)
            routes = chosen_strategies(q)
            fused = fused_rows(routes, F, M1h)
            gating = new_gating_net(4, hidden_units=5, seed=3, defer_only=defer_only)
            fusion = new_fusion_net(3, seed=3)
            config = GateTrainConfig(lam=lam, alpha=alpha, pseudo_labels=kind, defer_only=defer_only)

            def s2_loss():
                return stage2_loss_and_gradients(
                    gating, fusion, gate_in, q, routes, fused, F, Y2, config, accumulate=False
                )[0]

            gating.stack.zero_gradients()
            fusion.stack.zero_gradients()
            stage2_loss_and_gradients(gating, fusion, gate_in, q, routes, fused, F, Y2, config)
            stacks = [gating.stack, fusion.stack]
            analytic = [g.copy() for s in stacks for g in s.gradients()]
            numeric = finite_difference_gradients(s2_loss, [p for s in stacks for p in s.parameters()])
            assert max_relative_error(analytic, numeric) < 1e-4

        elapsed = time.monotonic() - started
        assert elapsed < 60.0
        report_pass(f"gradient oracle (max rel err < 1e-4, {elapsed:.1f}s < 60s)")


class TestPseudoLabelTruthTable:
    def test_all_four_combinations(self):
        expected = {
            (True, True): [1.0, 0.0, 0.0],
            (True, False): [1.0, 0.0, 0.0],
            (False, True): [0.0, 0.0, 1.0],
            (False, False): [0.0, 1.0, 0.0],
        }
        for combo, q in expected.items():
            np.testing.assert_array_equal(hard_pseudo_label(*combo).q, q)
        report_pass("pseudo-label truth table (4/4 exact)")


class TestDivergenceSuite:
    def test_thousand_pairs(self):
        rng = np.random.default_rng(BENCH_SEED)
        for _ in range(1000):
            n = int(rng.integers(2, 9))
            p = rng.dirichlet(np.ones(n))
            q = rng.dirichlet(np.ones(n))
            assert kl_divergence(p, q) >= 0.0
            js = js_divergence(p, q)
            assert 0.0 <= js <= LN2 + 1e-9
            assert abs(js - js_divergence(q, p)) <= 1e-12
            assert js_divergence(p, p) <= 1e-9
        report_pass("divergence suite (1000 pairs: KL>=0, JS symmetric in [0, ln2], JS(p,p)=0)")


class TestRoutingZeroBlocks:
    def test_bitwise_zero_blocks(self):
        rng = np.random.default_rng(BENCH_SEED)
        for _ in range(500):
            k = int(rng.integers(2, 8))
            r = rng.dirichlet(np.ones(3))
            f = rng.normal(size=k) * 10
            m = expert_onehot(int(rng.integers(k)), k)
            fused, chosen = route_and_fuse(r, f, m)
            if chosen == StrategyId.AI_ONLY:
                assert np.all(fused[k:] == 0.0) and np.array_equal(fused[:k], f)
            elif chosen == StrategyId.DEFER:
                assert np.all(fused[:k] == 0.0) and np.array_equal(fused[k:], m)
            else:
                assert np.array_equal(fused, np.concatenate([f, m]))
        report_pass("routing zero-block structure (bitwise, 500 random cases)")


class TestCostArithmetic:
    def test_endpoints_and_linearity(self):
        assert cost([1.0, 0.0, 0.0]) == 0.0
        assert cost([0.0, 0.3, 0.7]) == 1.0
        rng = np.random.default_rng(BENCH_SEED)
        for _ in range(200):
            r = rng.dirichlet(np.ones(3))
            assert cost(r) == r[1] + r[2]
            base = float(rng.random())
            for lam in (0.0, 0.5, 1.0, 2.0, 8.0):
                assert total_objective(base, r, lam) == base + lam * cost(r)
        report_pass("cost endpoints and total-loss linearity in lambda (exact arithmetic)")


class TestLambdaTradeoff:
    def test_spearman_non_positive(self, bundle_kappa06, model_kappa06):
        started = time.monotonic()
        expert = SimulatedExpert(noise_rate=0.3, n_classes=10, seed=BENCH_SEED)
        config = GateTrainConfig(seed=BENCH_SEED)
        curve, _ = sweep_lambda(model_kappa06, bundle_kappa06, expert, config, LAMBDA_GRID)
        lams = [p.lam for p in curve.points]
        parts = [p.participation_ratio for p in curve.points]
        rho = stats.spearmanr(lams, parts).statistic
        elapsed = time.monotonic() - started
        assert rho <= 0.0
        assert max(parts) > min(parts)
        assert elapsed < 600.0
        report_pass(f"lambda trade-off (spearman {rho:.3f} <= 0, participation {parts}, {elapsed:.0f}s < 600s)")


class TestNoisyExpertRobustness:
    def test_full_vs_defer_only_at_comparable_coverage(self, bundle_kappa06, model_kappa06):
        expert = SimulatedExpert(noise_rate=0.5, n_classes=10, seed=BENCH_SEED)
        base = GateTrainConfig(seed=BENCH_SEED)
        full_curve, _ = sweep_lambda(model_kappa06, bundle_kappa06, expert, base, LAMBDA_GRID)
        defer_curve, _ = sweep_lambda(
            model_kappa06, bundle_kappa06, expert, replace(base, defer_only=True), LAMBDA_GRID
        )
        best = max(full_curve.points, key=lambda p: p.participation_ratio)
        comparable = [
            p for p in defer_curve.points if abs(p.participation_ratio - best.participation_ratio) <= 0.02
        ]
        assert comparable, "no deferral-only sweep point within 0.02 coverage of the full model"
        assert all(best.system_accuracy >= p.system_accuracy for p in comparable)
        report_pass(
            f"noisy-expert robustness (full ({best.participation_ratio:.3f}, {best.system_accuracy:.4f}) >= "
            f"defer-only at comparable coverage {[(round(p.participation_ratio, 3), round(p.system_accuracy, 4)) for p in comparable]})"
        )


class TestPerfectExpertSanity:
    def test_system_beats_both_baselines(self, bundle_kappa03, model_kappa03):
        expert = SimulatedExpert(noise_rate=0.0, n_classes=10, seed=BENCH_SEED)
        config = GateTrainConfig(lam=0.0, seed=BENCH_SEED)
        gating = new_gating_net(12, seed=BENCH_SEED)
        fusion = new_fusion_net(10, seed=BENCH_SEED)
        gating, fusion, _ = train_gate(gating, fusion, model_kappa03, bundle_kappa03, expert, config)
        report = evaluate(model_kappa03, gating, fusion, expert, bundle_kappa03.test, 0.0)
        floor = max(report.ai_accuracy, report.expert_accuracy) - 0.01
        assert report.system_accuracy >= floor
        report_pass(
            f"perfect-expert sanity (system {report.system_accuracy:.4f} >= "
            f"max(AI {report.ai_accuracy:.4f}, expert {report.expert_accuracy:.4f}) - 1pp)"
        )


class TestInterventionEfficacy:
    def test_ground_truth_forward_intervention(self, bundle_kappa1, model_kappa1):
        bounds = compute_percentile_bounds(model_kappa1, bundle_kappa1.train)
        test = bundle_kappa1.test
        acts = model_kappa1.activations(test.X)
        baseline_concept_errors = int(((acts.probabilities > 0.5).astype(int) != test.C).sum())
        pre = post = 0
        for i in range(test.n):
            edits = [ConceptEdit(j, "on" if test.C[i, j] else "off") for j in range(test.n_concepts)]
            result = forward_intervene(model_kappa1, InterventionRequest(x=test.X[i], edits=edits), bounds)
            pre += result.before_label == test.Y[i]
            post += result.after_label == test.Y[i]
        assert post >= pre
        assert baseline_concept_errors > 0 and post > pre
        report_pass(
            f"forward intervention (post {post}/{test.n} > pre {pre}/{test.n}, "
            f"{baseline_concept_errors} baseline concept errors)"
        )

    def test_rectification_matches_exhaustive_oracle(self, bundle_kappa1, model_kappa1):
        bounds = compute_percentile_bounds(model_kappa1, bundle_kappa1.train)
        test = bundle_kappa1.test
        pred = np.argmax(model_kappa1.label_logits(test.X), axis=1)
        wrong = np.nonzero(pred != test.Y)[0]
        assert wrong.size > 0
        d = test.n_concepts
        assert d <= 12
        states = np.array(list(itertools.product((0, 1), repeat=d)), dtype=np.int64)
        feasible = greedy_ok = 0
        for idx in wrong:
            x = test.X[idx]
            y_true = int(test.Y[idx])
            acts = model_kappa1.activations(x)
            original = acts.logits[0]
            implicit_contrib = model_kappa1.implicit_head(acts.implicit)
            original_state = (original > 0).astype(np.int64)
            rendered = np.where(
                states == original_state[None, :],
                original[None, :],
                np.where(states == 1, bounds.high[None, :], bounds.low[None, :]),
            )
            logits = model_kappa1.logits_from_concepts(
                rendered, np.repeat(implicit_contrib, states.shape[0], axis=0)
            )
            if not (np.argmax(logits, axis=1) == y_true).any():
                continue
            feasible += 1
            greedy_ok += backward_rectify(model_kappa1, x, y_true, bounds).success
        assert feasible > 0
        assert greedy_ok / feasible >= 0.90
        report_pass(f"backward rectification (greedy {greedy_ok}/{feasible} >= 90% of oracle-feasible cases)")


class TestCoverageEndpoints:
    def _forced_gate(self, strategy, input_dim):
        bias = np.full(3, -1000.0)
        bias[int(strategy) - 1] = 1000.0
        return GatingNet(DifferentiableStack([AffineLayer(np.zeros((input_dim, 3)), bias, "identity")]))

    def test_forced_strategies(self, bundle_kappa06, model_kappa06):
        k = model_kappa06.n_classes
        expert = SimulatedExpert(noise_rate=0.3, n_classes=k, seed=BENCH_SEED)
        w = np.zeros((2 * k, k))
        w[k:, :] = 10.0 * np.eye(k)
        passthrough = FusionNet(DifferentiableStack([AffineLayer(w, np.zeros(k), "identity")]))

        ai_report = evaluate(
            model_kappa06, self._forced_gate(StrategyId.AI_ONLY, 12), passthrough, expert, bundle_kappa06.test, 0.0
        )
        assert ai_report.system_accuracy == ai_report.ai_accuracy
        assert ai_report.participation_ratio == 0.0

        defer_report = evaluate(
            model_kappa06, self._forced_gate(StrategyId.DEFER, 12), passthrough, expert, bundle_kappa06.test, 0.0
        )
        sigma = math.sqrt(0.3 * 0.7 / bundle_kappa06.test.n)
        assert abs(defer_report.system_accuracy - 0.7) <= 3 * sigma
        report_pass(
            f"coverage endpoints (forced AI == standalone {ai_report.ai_accuracy:.4f} exactly; "
            f"forced defer {defer_report.system_accuracy:.4f} within 3 sigma of 0.7)"
        )


class TestDeterminism:
    def test_pipeline_rerun_bitwise_identical(self, tmp_path):
        def run(out):
            args = [
                "--synthetic", "--kappa", "0.6", "--seed", str(BENCH_SEED), "--out", str(out),
            ]
            assert main(["train-cbm", *args]) == 0
            assert main([
                "train-gate", "--dataset", str(out / "dataset.dcds"), "--cbm", str(out / "cbm.dcck"),
                "--rho", "0.3", "--lambda", "0.3", "--seed", str(BENCH_SEED), "--out", str(out),
            ]) == 0
            assert main([
                "evaluate", "--dataset", str(out / "dataset.dcds"), "--cbm", str(out / "cbm.dcck"),
                "--gate", str(out / "gate.dcck"), "--rho", "0.3", "--seed", str(BENCH_SEED),
                "--heatmap", "--out", str(out),
            ]) == 0

        a, b = tmp_path / "a", tmp_path / "b"
        started = time.monotonic()
        run(a)
        first_run = time.monotonic() - started
        run(b)
        assert first_run < 300.0  # full pipeline on the default config, one core
        names = ["dataset.dcds", "cbm.dcck", "gate.dcck", "cbm_history.csv", "gate_history.csv", "report.csv", "heatmap.csv"]
        for name in names:
            assert (a / name).read_bytes() == (b / name).read_bytes(), name
        report_pass(f"determinism (bitwise-identical rerun: {', '.join(names)}; pipeline {first_run:.0f}s < 300s)")
