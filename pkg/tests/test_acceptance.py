"""Acceptance suite: one test per release criterion, at pinned tolerances.

Run with ``pytest tests/test_acceptance.py -s`` to see one PASS line per
criterion; any failed criterion fails its test.
"""

import itertools
import json
import math
import time

import numpy as np
import pytest
import scipy.sparse as sp

from semreopt.cli import run as cli_run
from semreopt.consistency import ConsistencyMatrix
from semreopt.errors import ConvergenceError
from semreopt.frequency import (
    MODE_PAPER_LITERAL,
    MODE_PER_IMAGE,
    collect_stats,
    frequency_consistency,
)
from semreopt.graph import ConceptGraph, RwrConfig, graph_consistency, rwr_steady_state
from semreopt.hybrid import HybridConfig, build_cooccurrence_graph, hybrid_consistency
from semreopt.metrics import EvalConfig, average_precision, evaluate
from semreopt.model import (
    BoundingBox,
    Detection,
    GroundTruthInstance,
    ImageDetections,
    LabelVocabulary,
)
from semreopt.reopt import ReoptConfig, energy, minimize, minimize_with_stats
from semreopt.search import SweepSpec, run_sweep, run_trial

import fixtures
import oracles


def _report(name: str, detail: str = "") -> None:
    suffix = f" ({detail})" if detail else ""
    print(f"[PASS] {name}{suffix}")


def solver_instances(n=200, seed=1234):
    """The shared random instance set: B <= 6, L <= 5, eps cycling the set."""
    rng = np.random.default_rng(seed)
    eps_cycle = (0.25, 0.5, 0.75, 0.9)
    out = []
    for k in range(n):
        nb = int(rng.integers(1, 7))
        nl = int(rng.integers(1, 6))
        p = rng.uniform(0.0, 1.0, size=(nb, nl))
        half = rng.uniform(0.0, 1.0, size=(nl, nl))
        s = (half + half.T) / 2.0
        out.append((p, s, eps_cycle[k % len(eps_cycle)]))
    return out


SOLVER_CFG = dict(solver_tolerance=1e-10, solver_max_iterations=500_000)


class TestSolverCriteria:
    def test_solver_matches_dense_oracle(self):
        instances = solver_instances()
        # numba warm-up outside the timed region
        p0, s0, e0 = instances[0]
        minimize(p0, s0, ReoptConfig(epsilon=e0, **SOLVER_CFG))
        solver_time = 0.0
        worst_dx = 0.0
        worst_grad = 0.0
        for p, s, eps in instances:
            cfg = ReoptConfig(epsilon=eps, **SOLVER_CFG)
            t0 = time.perf_counter()
            x = minimize(p, s, cfg)
            solver_time += time.perf_counter() - t0
            expected = np.clip(oracles.stationary_point_from_energy(p, s, eps), 0.0, 1.0)
            worst_dx = max(worst_dx, float(np.abs(x - expected).max()))
            np.testing.assert_allclose(x, expected, atol=1e-6)
            grad = oracles.finite_difference_gradient(
                lambda v: oracles.energy_brute(v, p, s, eps), x, step=1e-6
            )
            s_row = s.sum(axis=1)
            solved = np.broadcast_to(s_row[None, :] > 0, x.shape)
            if solved.any():
                g = float(np.abs(grad[solved]).max())
                worst_grad = max(worst_grad, g)
                assert g <= 1e-5
        assert solver_time <= 10.0
        _report(
            "solver correctness (200 instances)",
            f"max |x - oracle| {worst_dx:.2e}, max fd-grad {worst_grad:.2e}, "
            f"solver time {solver_time:.2f}s",
        )

    def test_epsilon_one_identity(self):
        worst = 0.0
        for p, s, _ in solver_instances():
            cfg = ReoptConfig(epsilon=1.0, allow_epsilon_above_one=True, **SOLVER_CFG)
            x = minimize(p, s, cfg)
            worst = max(worst, float(np.abs(x - p).max()))
            np.testing.assert_allclose(x, p, atol=1e-9)
        _report("epsilon=1 identity", f"max deviation {worst:.2e}")

    def test_energy_descent(self):
        for p, s, eps in solver_instances():
            cfg = ReoptConfig(epsilon=eps, **SOLVER_CFG)
            x = minimize(p, s, cfg)
            assert energy(x, p, s, eps) <= energy(p, p, s, eps)
        _report("energy descent on every instance")

    def test_epsilon_above_one_regime(self):
        rng = np.random.default_rng(77)
        converged = failed = 0
        for k in range(100):
            eps = 1.1 if k % 2 == 0 else 1.5
            nb = int(rng.integers(1, 7))
            nl = int(rng.integers(1, 6))
            p = rng.uniform(size=(nb, nl))
            half = rng.uniform(size=(nl, nl))
            s = (half + half.T) / 2.0
            cfg = ReoptConfig(
                epsilon=eps,
                allow_epsilon_above_one=True,
                solver_tolerance=1e-8,
                solver_max_iterations=20_000,
            )
            try:
                x, _, residual = minimize_with_stats(p, s, cfg)
            except ConvergenceError as exc:
                failed += 1
                assert np.isfinite(exc.iterations)
                continue
            converged += 1
            assert np.all(np.isfinite(x))
            assert residual <= cfg.solver_tolerance
        _report(
            "epsilon>1 regime (100 instances)",
            f"{converged} converged, {failed} failed loudly, none returned non-finite",
        )


class TestFrequencyCriterion:
    def test_hand_fixture_formula(self):
        vocab = LabelVocabulary(labels=("car", "person"))
        box = BoundingBox(0, 0, 5, 5)
        gt = [
            GroundTruthInstance("I1", box, 0),
            GroundTruthInstance("I1", box, 0),
            GroundTruthInstance("I1", box, 1),
            GroundTruthInstance("I2", box, 0),
        ]
        per_image = collect_stats(gt, vocab, mode=MODE_PER_IMAGE)
        matrix = frequency_consistency(per_image, vocab)
        expected = math.log(8.0 / 3.0)
        assert matrix.values[0, 1] == pytest.approx(expected, abs=1e-12)
        assert matrix.values[0, 1] == pytest.approx(0.98083, abs=1e-5)
        literal = collect_stats(gt, vocab, mode=MODE_PAPER_LITERAL)
        assert literal.pair_counts[0, 0] == 3
        _report(
            "frequency formula",
            f"S(car,person)={matrix.values[0, 1]:.5f}, handshake n(car,car)=3",
        )


class TestRwrCriterion:
    def test_two_node_and_dense_agreement(self):
        graph = ConceptGraph(nodes=("A", "B"), edges=((0, 1, 1.0),))
        cfg = RwrConfig(restart_prob=0.15, tolerance=1e-12)
        r = rwr_steady_state(graph, 0, cfg)
        closed_form = 0.15 / (1.0 - 0.85**2)
        assert abs(r[0] - closed_form) <= 1e-8
        assert abs(r.sum() - 1.0) <= 1e-9

        # fixed-point residual at the returned vector
        indptr, indices, data, inv_deg, dangling = graph._csr
        adj = sp.csr_matrix((data, indices, indptr), shape=(2, 2))
        step = 0.85 * (adj @ (r * inv_deg))
        step[0] += 0.15 + 0.85 * float(r[dangling].sum())
        assert np.abs(r - step).sum() <= cfg.tolerance

        rng = np.random.default_rng(4321)
        worst = 0.0
        for _ in range(50):
            n = int(rng.integers(2, 51))
            edges = []
            for i in range(n):
                for j in range(i + 1, n):
                    if rng.uniform() < 0.15:
                        edges.append((i, j, float(rng.uniform(0.1, 2.0))))
            g = ConceptGraph(nodes=tuple(f"n{i}" for i in range(n)), edges=tuple(edges))
            start = int(rng.integers(0, n))
            got = rwr_steady_state(g, start, RwrConfig(tolerance=1e-12))
            expected = oracles.rwr_dense_solve(n, edges, start, 0.15)
            worst = max(worst, float(np.abs(got - expected).max()))
            np.testing.assert_allclose(got, expected, atol=1e-8)
            assert abs(got.sum() - 1.0) <= 1e-9
        _report(
            "random walk with restart",
            f"closed form ok, 50 random graphs max |power - dense| {worst:.2e}",
        )


class TestHybridCriterion:
    def test_compositionality_and_gamma_monotonicity(self):
        rng = np.random.default_rng(888)
        for _ in range(20):
            n_labels = int(rng.integers(2, 8))
            vocab = LabelVocabulary(labels=tuple(f"c{i}" for i in range(n_labels)))
            gt = [
                GroundTruthInstance(
                    f"I{rng.integers(0, 8)}", BoundingBox(0, 0, 3, 3), int(rng.integers(0, n_labels))
                )
                for _ in range(int(rng.integers(8, 50)))
            ]
            stats = collect_stats(gt, vocab)
            cfg = HybridConfig(
                gamma=float(rng.integers(0, 4)),
                edge_weighting="binary" if rng.uniform() < 0.5 else "count",
            )
            fused = hybrid_consistency(stats, vocab, cfg)
            walk_vocab = LabelVocabulary(
                labels=vocab.labels, concept_map={l: l for l in vocab.labels}
            )
            composed = graph_consistency(
                build_cooccurrence_graph(stats, vocab, cfg), walk_vocab, cfg.rwr,
                symmetrize=cfg.symmetrize,
            )
            assert np.array_equal(fused.values, composed.values)  # bit-for-bit

        # gamma monotonicity on an edge-count sweep
        vocab = LabelVocabulary(labels=tuple(f"c{i}" for i in range(6)))
        gt = [
            GroundTruthInstance(
                f"I{rng.integers(0, 6)}", BoundingBox(0, 0, 3, 3), int(rng.integers(0, 6))
            )
            for _ in range(80)
        ]
        stats = collect_stats(gt, vocab)
        edge_counts = []
        for gamma in (0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0):
            graph = build_cooccurrence_graph(stats, vocab, HybridConfig(gamma=gamma))
            edge_counts.append(len(graph.edges))
        assert all(b <= a for a, b in zip(edge_counts, edge_counts[1:]))
        _report(
            "hybrid compositionality",
            f"20 fixtures bit-identical; edge counts over gamma sweep {edge_counts}",
        )


class TestEvaluatorCriterion:
    def test_hand_fixture_and_invariance(self):
        single = EvalConfig(iou_thresholds=(0.5,), recall_points=101)
        records = [(0.9, "a", 0, True), (0.8, "a", 1, False), (0.7, "a", 2, True)]
        ap = average_precision(records, n_gt=2, cfg=single)
        assert ap == pytest.approx(0.8350, abs=1e-4)

        vocab = LabelVocabulary(labels=("car", "person"))

        def det(cls, score, box):
            scores = [0.0, 0.0]
            scores[cls] = score
            return Detection(box=BoundingBox(*box), scores=np.asarray(scores))

        perfect_gt = [
            GroundTruthInstance("img0", BoundingBox(0, 0, 10, 10), 0),
            GroundTruthInstance("img0", BoundingBox(30, 30, 8, 8), 1),
        ]
        perfect = ImageDetections(
            "img0", 100, 100,
            (det(0, 0.9, (0, 0, 10, 10)), det(1, 0.8, (30, 30, 8, 8))),
        )
        report = evaluate([perfect], perfect_gt, EvalConfig(), vocab=vocab)
        assert report.map == pytest.approx(1.0)
        assert report.mean_recall == pytest.approx(1.0)

        # permutation invariance, 50 shuffles
        rng = np.random.default_rng(3030)
        images, gts = [], []
        for i in range(6):
            dets = []
            for _ in range(int(rng.integers(1, 8))):
                box = (float(rng.uniform(0, 150)), float(rng.uniform(0, 150)), 12.0, 12.0)
                cls = int(rng.integers(0, 2))
                if rng.uniform() < 0.7:
                    gts.append(GroundTruthInstance(f"im{i}", BoundingBox(*box), cls))
                dets.append(det(cls, float(rng.uniform(0.05, 1.0)), box))
            images.append(ImageDetections(f"im{i}", 200, 200, tuple(dets)))
        baseline = evaluate(images, gts, EvalConfig(), vocab=vocab)
        for _ in range(50):
            perm_images = [images[k] for k in rng.permutation(len(images))]
            shuffled = []
            for im in perm_images:
                ds = list(im.detections)
                rng.shuffle(ds)
                shuffled.append(
                    ImageDetections(im.image_id, im.image_width, im.image_height, tuple(ds))
                )
            perm_gt = [gts[k] for k in rng.permutation(len(gts))]
            report = evaluate(shuffled, perm_gt, EvalConfig(), vocab=vocab)
            assert report.map == pytest.approx(baseline.map, abs=1e-12)
            assert report.mean_recall == pytest.approx(baseline.mean_recall, abs=1e-12)
        _report("evaluator", f"hand AP {ap:.6f}, perfect fixture 1.0/1.0, 50 shuffles invariant")


class TestEndToEndDeterminism:
    def test_pipeline_byte_identical(self, tmp_path):
        det_path, gt_path = fixtures.write_dataset(tmp_path, seed=7, n_images=20)
        outputs = []
        for tag, threads in (("run1_t1", "1"), ("run2_t1", "1"), ("run3_t4", "4")):
            s_path = tmp_path / f"s_{tag}.json"
            out_path = tmp_path / f"reopt_{tag}.json"
            deltas_path = tmp_path / f"deltas_{tag}.csv"
            report_path = tmp_path / f"report_{tag}.json"
            assert cli_run([
                "--threads", threads, "build-consistency", "--method", "frequency",
                "--annotations", str(gt_path), "--out", str(s_path),
            ]) == 0
            assert cli_run([
                "--threads", threads, "reoptimize",
                "--detections", str(det_path), "--consistency", str(s_path),
                "--epsilon", "0.7", "--top-k", "100", "--neighbor-boxes", "4",
                "--classes-considered", "3", "--score-threshold", "0.05",
                "--out", str(out_path), "--deltas", str(deltas_path),
            ]) == 0
            assert cli_run([
                "--threads", threads, "evaluate", "--detections", str(out_path),
                "--ground-truth", str(gt_path), "--report", str(report_path),
            ]) == 0
            outputs.append(
                (s_path.read_bytes(), out_path.read_bytes(),
                 deltas_path.read_bytes(), report_path.read_bytes())
            )
        assert outputs[0] == outputs[1] == outputs[2]
        _report("end-to-end determinism", "byte-identical across runs and threads {1, 4}")


class TestSweepCriterion:
    def test_reproducibility(self):
        det_payload, gt_payload = fixtures.synthetic_dataset(seed=5, n_images=8)
        vocab = LabelVocabulary(labels=fixtures.LABELS)
        images = [
            ImageDetections(
                img["image_id"], img["width"], img["height"],
                tuple(
                    Detection(box=BoundingBox(*d["bbox"]), scores=np.asarray(d["scores"]))
                    for d in img["detections"]
                ),
            )
            for img in det_payload["images"]
        ]
        id_by_num = {g["id"]: f"img{g['id'] - 1:03d}" for g in gt_payload["images"]}
        gt = [
            GroundTruthInstance(
                id_by_num[a["image_id"]], BoundingBox(*a["bbox"]), a["category_id"] - 1
            )
            for a in gt_payload["annotations"]
        ]
        stats = collect_stats(gt, vocab)
        matrix = frequency_consistency(stats, vocab)
        spec = SweepSpec(
            epsilon=(0.2, 0.95),
            top_k=(100,),
            neighbor_boxes=(3, 99),
            classes_considered=(2, 4),
            post_score_threshold=(0.0, 0.1),
            budget=10,
            seed=42,
        )
        a = run_sweep(images, gt, matrix, spec)
        b = run_sweep(images, gt, matrix, spec)
        table_a = [(r.trial_id, r.params, r.status, r.objective_value) for r in a]
        table_b = [(r.trial_id, r.params, r.status, r.objective_value) for r in b]
        assert table_a == table_b
        best = a[0]
        objective, _, _ = run_trial(best.params, images, gt, matrix, spec)
        assert abs(objective - best.objective_value) <= 1e-12
        _report(
            "sweep reproducibility",
            f"identical tables; best objective {best.objective_value:.6f} re-evaluated exactly",
        )
