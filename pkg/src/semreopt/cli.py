"""Command-line entry point.

One binary, one subcommand per pipeline stage; consistency-matrix files are
the universal handoff artifact between stages. Exit codes: 0 success, 1
validation/configuration error (including usage errors), 2 runtime error
(non-convergence, I/O). Diagnostics go to stderr; data goes to files or
stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import consistency as consistency_io
from . import frequency, graph, hybrid, metrics, model, reopt, search
from .errors import ConvergenceError, SemreoptError, ValidationError

logger = logging.getLogger("semreopt")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; the contract here is exit 1
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="reopt", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="warning",
                        choices=["debug", "info", "warning", "error"])
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker threads for per-image stages")
    parser.add_argument("--seed", type=int, default=0, help="seed for seeded stages")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("crop-graph", help="filter a knowledge-graph dump to positive relations")
    p.add_argument("--input", required=True)
    p.add_argument("--format", default="tsv", choices=["tsv", "conceptnet"])
    p.add_argument("--language", default="en")
    p.add_argument("--relations", default=None,
                   help="comma-separated positive relation names (default: built-in set)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("build-consistency", help="build a consistency matrix")
    p.add_argument("--method", required=True, choices=["frequency", "knowledge-graph", "hybrid"])
    p.add_argument("--annotations", help="COCO-style ground truth (frequency/hybrid)")
    p.add_argument("--graph", help="graph TSV (knowledge-graph)")
    p.add_argument("--vocab", help="vocabulary JSON; defaults to annotation categories")
    p.add_argument("--mode", default=frequency.MODE_PER_IMAGE,
                   choices=[frequency.MODE_PER_IMAGE, frequency.MODE_PAPER_LITERAL])
    p.add_argument("--log-base", default=frequency.LOG_NATURAL,
                   choices=[frequency.LOG_NATURAL, frequency.LOG_BASE10])
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--edge-weighting", default=hybrid.EDGE_BINARY,
                   choices=[hybrid.EDGE_BINARY, hybrid.EDGE_COUNT])
    p.add_argument("--restart-prob", type=float, default=0.15)
    p.add_argument("--rwr-tolerance", type=float, default=1e-9)
    p.add_argument("--rwr-max-iterations", type=int, default=10_000)
    p.add_argument("--symmetrize", default=graph.SYMMETRIZE_MEAN,
                   choices=[graph.SYMMETRIZE_MEAN, graph.SYMMETRIZE_MAX])
    p.add_argument("--on-missing-concept", default=graph.MISSING_CONCEPT_WARN,
                   choices=[graph.MISSING_CONCEPT_WARN, graph.MISSING_CONCEPT_ERROR])
    p.add_argument("--out", required=True)
    p.add_argument("--csv", help="also emit an inspection CSV")

    p = sub.add_parser("reoptimize", help="re-optimize detection scores")
    p.add_argument("--detections", required=True)
    p.add_argument("--consistency", required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--top-k", type=int, default=100)
    p.add_argument("--neighbor-boxes", type=int, default=None)
    p.add_argument("--classes-considered", type=int, default=None)
    p.add_argument("--score-threshold", type=float, default=0.0)
    p.add_argument("--solver-tolerance", type=float, default=1e-8)
    p.add_argument("--solver-max-iterations", type=int, default=10_000)
    p.add_argument("--allow-epsilon-above-one", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--deltas", help="sidecar CSV of per-entry score changes")

    p = sub.add_parser("evaluate", help="evaluate detections against ground truth")
    _add_eval_args(p)
    p.add_argument("--detections", required=True)
    p.add_argument("--compare", help="baseline detections; print a delta table")
    p.add_argument("--report", help="write the machine-readable JSON report here")

    p = sub.add_parser("compare", help="baseline vs re-optimized delta table")
    _add_eval_args(p)
    p.add_argument("--baseline", required=True)
    p.add_argument("--reoptimized", required=True)
    p.add_argument("--report", help="write both reports as JSON here")

    p = sub.add_parser("score-stats", help="statistics of confidence-score changes")
    p.add_argument("--before", required=True)
    p.add_argument("--after", required=True)
    p.add_argument("--top-k", type=int, default=100)
    p.add_argument("--vocab")
    p.add_argument("--out", help="write stats CSV here")

    p = sub.add_parser("sweep", help="hyperparameter search")
    p.add_argument("--detections", required=True)
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--consistency", required=True)
    p.add_argument("--annotations",
                   help="ground truth for rebuilding hybrid matrices during gamma search")
    p.add_argument("--spec", required=True, help="JSON sweep specification")
    p.add_argument("--out", required=True, help="trials CSV")

    return parser


def _add_eval_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--vocab", help="vocabulary JSON; defaults to the detections file's")
    p.add_argument("--iou-thresholds",
                   help="comma-separated IoU thresholds (default 0.50:0.95 step 0.05)")
    p.add_argument("--recall-points", type=int, default=101)
    p.add_argument("--max-detections", type=int, default=100)


def _load_detections_with_vocab(path: str, vocab: model.LabelVocabulary | None):
    if vocab is None:
        raw = json.loads(Path(path).read_text())
        if "vocabulary" not in raw:
            raise ValidationError(
                f"{path}: no embedded vocabulary; pass --vocab explicitly"
            )
        vocab = model.LabelVocabulary(labels=tuple(raw["vocabulary"]))
    return model.load_detections(path, vocab), vocab


def _eval_config(args) -> metrics.EvalConfig:
    kwargs = {"recall_points": args.recall_points, "max_detections": args.max_detections}
    if args.iou_thresholds:
        kwargs["iou_thresholds"] = tuple(
            float(v) for v in args.iou_thresholds.split(",") if v.strip()
        )
    return metrics.EvalConfig(**kwargs)


def _cmd_crop_graph(args) -> int:
    if args.relations:
        relations = frozenset(r.strip() for r in args.relations.split(",") if r.strip())
    else:
        relations = graph.DEFAULT_POSITIVE_RELATIONS
    edge_iter = (
        graph.iter_tsv_edges(args.input)
        if args.format == "tsv"
        else graph.iter_conceptnet_edges(args.input)
    )
    cropped = graph.crop_graph(edge_iter, args.language, relations)
    graph.write_graph_tsv(cropped, args.out)
    logger.info("cropped graph: %d nodes, %d edges", cropped.num_nodes, len(cropped.edges))
    return 0


def _cmd_build_consistency(args) -> int:
    rwr_cfg = graph.RwrConfig(
        restart_prob=args.restart_prob,
        tolerance=args.rwr_tolerance,
        max_iterations=args.rwr_max_iterations,
    )
    if args.method in ("frequency", "hybrid"):
        if not args.annotations:
            raise ValidationError(f"--method {args.method} requires --annotations")
        vocab = (
            model.load_vocabulary(args.vocab)
            if args.vocab
            else model.vocabulary_from_ground_truth(args.annotations)
        )
        gt = model.load_ground_truth(args.annotations, vocab)
        stats = frequency.collect_stats(gt, vocab, mode=args.mode)
        if args.method == "frequency":
            matrix = frequency.frequency_consistency(stats, vocab, log_base=args.log_base)
        else:
            cfg = hybrid.HybridConfig(
                gamma=args.gamma,
                edge_weighting=args.edge_weighting,
                rwr=rwr_cfg,
                symmetrize=args.symmetrize,
            )
            matrix = hybrid.hybrid_consistency(stats, vocab, cfg)
    else:
        if not args.graph or not args.vocab:
            raise ValidationError("--method knowledge-graph requires --graph and --vocab")
        vocab = model.load_vocabulary(args.vocab)
        concept_graph = graph.crop_graph(graph.iter_tsv_edges(args.graph))
        matrix = graph.graph_consistency(
            concept_graph,
            vocab,
            rwr_cfg,
            symmetrize=args.symmetrize,
            on_missing=args.on_missing_concept,
        )
    consistency_io.write_consistency(matrix, args.out)
    if args.csv:
        consistency_io.write_consistency_csv(matrix, args.csv)
    return 0


def _cmd_reoptimize(args) -> int:
    matrix = consistency_io.load_consistency(args.consistency)
    images = model.load_detections(args.detections, matrix.vocab)
    cfg = reopt.ReoptConfig(
        epsilon=args.epsilon,
        top_k_detections=args.top_k,
        neighbor_boxes=args.neighbor_boxes,
        classes_considered=args.classes_considered,
        post_score_threshold=args.score_threshold,
        solver_tolerance=args.solver_tolerance,
        solver_max_iterations=args.solver_max_iterations,
        allow_epsilon_above_one=args.allow_epsilon_above_one,
    )
    result = reopt.reoptimize_images(images, matrix, cfg, threads=max(1, args.threads))
    model.write_detections(result.images, matrix.vocab, args.out)
    if args.deltas:
        with open(args.deltas, "w") as fh:
            fh.write("image_id,det_index,class,before,after\n")
            for d in result.per_detection_deltas:
                fh.write(
                    f"{d.image_id},{d.det_index},{matrix.vocab.labels[d.class_id]},"
                    f"{d.before!r},{d.after!r}\n"
                )
    total_iters = sum(s.iterations for s in result.solver_stats)
    logger.info("re-optimized %d images (%d solver iterations)", len(result.images), total_iters)
    return 0


def _cmd_evaluate(args) -> int:
    vocab = model.load_vocabulary(args.vocab) if args.vocab else None
    dets, vocab = _load_detections_with_vocab(args.detections, vocab)
    gt = model.load_ground_truth(args.ground_truth, vocab)
    cfg = _eval_config(args)
    report = metrics.evaluate(dets, gt, cfg, vocab=vocab)
    if args.compare:
        base_dets, _ = _load_detections_with_vocab(args.compare, vocab)
        base_report = metrics.evaluate(base_dets, gt, cfg, vocab=vocab)
        print(metrics.format_comparison(base_report, report, cfg.max_detections))
    else:
        print(metrics.format_report(report, cfg.max_detections))
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return 0


def _cmd_compare(args) -> int:
    vocab = model.load_vocabulary(args.vocab) if args.vocab else None
    base_dets, vocab = _load_detections_with_vocab(args.baseline, vocab)
    new_dets, _ = _load_detections_with_vocab(args.reoptimized, vocab)
    gt = model.load_ground_truth(args.ground_truth, vocab)
    cfg = _eval_config(args)
    base_report = metrics.evaluate(base_dets, gt, cfg, vocab=vocab)
    new_report = metrics.evaluate(new_dets, gt, cfg, vocab=vocab)
    print(metrics.format_comparison(base_report, new_report, cfg.max_detections))
    if args.report:
        payload = {"baseline": base_report.to_dict(), "reoptimized": new_report.to_dict()}
        Path(args.report).write_text(json.dumps(payload, indent=2) + "\n")
    return 0


def _cmd_score_stats(args) -> int:
    vocab = model.load_vocabulary(args.vocab) if args.vocab else None
    before, vocab = _load_detections_with_vocab(args.before, vocab)
    after, _ = _load_detections_with_vocab(args.after, vocab)
    stats = metrics.score_change_stats(before, after, top_k=args.top_k, vocab=vocab)
    csv_text = metrics.score_stats_csv(stats)
    if args.out:
        Path(args.out).write_text(csv_text)
    print(csv_text, end="")
    return 0


def _cmd_sweep(args) -> int:
    spec = search.SweepSpec.from_json(args.spec)
    matrix = consistency_io.load_consistency(args.consistency)
    dets = model.load_detections(args.detections, matrix.vocab)
    gt = model.load_ground_truth(args.ground_truth, matrix.vocab)
    stats = None
    if args.annotations:
        ann = model.load_ground_truth(args.annotations, matrix.vocab)
        stats = frequency.collect_stats(ann, matrix.vocab)
    records = search.run_sweep(
        dets, gt, matrix, spec, stats=stats, threads=max(1, args.threads)
    )
    Path(args.out).write_text(search.trials_to_csv(records))
    best = records[0]
    logger.info(
        "best trial %d: objective=%.6f params=%s",
        best.trial_id,
        best.objective_value if best.objective_value is not None else float("nan"),
        best.params.as_dict(),
    )
    return 0


_COMMANDS = {
    "crop-graph": _cmd_crop_graph,
    "build-consistency": _cmd_build_consistency,
    "reoptimize": _cmd_reoptimize,
    "evaluate": _cmd_evaluate,
    "compare": _cmd_compare,
    "score-stats": _cmd_score_stats,
    "sweep": _cmd_sweep,
}


def run(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"reopt: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper()), stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if not args.command:
        parser.print_help(sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"reopt: error: {exc}", file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"reopt: error: {exc}", file=sys.stderr)
        return 1
    except ConvergenceError as exc:
        print(f"reopt: solver error: {exc}", file=sys.stderr)
        return 2
    except (OSError, SemreoptError) as exc:
        print(f"reopt: runtime error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
