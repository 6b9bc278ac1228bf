"""Backbone-agnostic re-optimization of object-detection score vectors
using semantic-consistency knowledge."""

from .consistency import (
    SOURCE_FREQUENCY,
    SOURCE_HYBRID,
    SOURCE_KNOWLEDGE_GRAPH,
    ConsistencyMatrix,
    load_consistency,
    write_consistency,
)
from .errors import (
    AlignmentError,
    ConfigError,
    ConvergenceError,
    EmptyStatisticsError,
    EvaluationError,
    ParseError,
    SemreoptError,
    ValidationError,
    VocabularyMismatchError,
)
from .frequency import CoOccurrenceStats, collect_stats, frequency_consistency
from .graph import (
    ConceptGraph,
    RwrConfig,
    crop_graph,
    graph_consistency,
    rwr_steady_state,
)
from .hybrid import HybridConfig, build_cooccurrence_graph, hybrid_consistency
from .metrics import (
    EvalConfig,
    EvalReport,
    ScoreChangeStats,
    average_precision,
    evaluate,
    match_detections,
    score_change_stats,
)
from .model import (
    BoundingBox,
    Detection,
    GroundTruthInstance,
    ImageDetections,
    LabelVocabulary,
    load_detections,
    load_ground_truth,
    load_vocabulary,
    top_k_by_score,
    write_detections,
)
from .reopt import (
    ReoptConfig,
    ReoptResult,
    ScoreDelta,
    energy,
    minimize,
    minimize_with_stats,
    reoptimize_image,
    reoptimize_images,
    solve_direct,
)
from .search import SweepSpec, TrialRecord, run_sweep

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "BoundingBox",
    "ConceptGraph",
    "ConfigError",
    "ConsistencyMatrix",
    "ConvergenceError",
    "CoOccurrenceStats",
    "Detection",
    "EmptyStatisticsError",
    "EvalConfig",
    "EvalReport",
    "EvaluationError",
    "GroundTruthInstance",
    "HybridConfig",
    "ImageDetections",
    "LabelVocabulary",
    "ParseError",
    "ReoptConfig",
    "ReoptResult",
    "RwrConfig",
    "ScoreChangeStats",
    "ScoreDelta",
    "SemreoptError",
    "SweepSpec",
    "TrialRecord",
    "ValidationError",
    "VocabularyMismatchError",
    "average_precision",
    "build_cooccurrence_graph",
    "collect_stats",
    "crop_graph",
    "energy",
    "evaluate",
    "frequency_consistency",
    "graph_consistency",
    "hybrid_consistency",
    "load_consistency",
    "load_detections",
    "load_ground_truth",
    "load_vocabulary",
    "match_detections",
    "minimize",
    "minimize_with_stats",
    "reoptimize_image",
    "reoptimize_images",
    "rwr_steady_state",
    "run_sweep",
    "score_change_stats",
    "solve_direct",
    "top_k_by_score",
    "write_consistency",
    "write_detections",
    "__version__",
]
