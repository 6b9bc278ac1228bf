"""Hybrid consistency: a co-occurrence graph from annotation statistics,
walked exactly like an external knowledge graph.

Dataset labels become graph vertices; two vertices are connected when their
co-occurrence count strictly exceeds the threshold gamma. The consistency
matrix is then the random-walk proximity on that graph, so domain-specific
statistics drive the walk instead of encyclopedic edges.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .consistency import SOURCE_HYBRID, ConsistencyMatrix
from .errors import ConfigError, VocabularyMismatchError
from .frequency import CoOccurrenceStats
from .graph import SYMMETRIZE_MEAN, ConceptGraph, RwrConfig, graph_consistency
from .model import LabelVocabulary

EDGE_BINARY = "binary"
EDGE_COUNT = "count"


@dataclass(frozen=True)
class HybridConfig:
    gamma: float = 0.0
    edge_weighting: str = EDGE_BINARY
    rwr: RwrConfig = field(default_factory=RwrConfig)
    symmetrize: str = SYMMETRIZE_MEAN

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")
        if self.edge_weighting not in (EDGE_BINARY, EDGE_COUNT):
            raise ConfigError(f"unknown edge weighting {self.edge_weighting!r}")


def build_cooccurrence_graph(
    stats: CoOccurrenceStats, vocab: LabelVocabulary, cfg: HybridConfig | None = None
) -> ConceptGraph:
    """One vertex per label; an edge where the pair count exceeds gamma.

    "Exceeds" is strict: a count equal to gamma produces no edge. Isolated
    labels keep their vertex. Binary weighting gives every edge weight 1;
    count weighting carries the pair count as the weight.
    """
    cfg = cfg or HybridConfig()
    if stats.num_classes != len(vocab):
        raise VocabularyMismatchError(
            f"stats cover {stats.num_classes} classes, vocabulary has {len(vocab)}"
        )
    edges = []
    pairs = stats.pair_counts
    for i in range(len(vocab)):
        for j in range(i + 1, len(vocab)):
            count = int(pairs[i, j])
            if count > cfg.gamma:
                weight = 1.0 if cfg.edge_weighting == EDGE_BINARY else float(count)
                edges.append((i, j, weight))
    return ConceptGraph(nodes=tuple(vocab.labels), edges=tuple(edges))


def hybrid_consistency(
    stats: CoOccurrenceStats, vocab: LabelVocabulary, cfg: HybridConfig | None = None
) -> ConsistencyMatrix:
    """Compose the co-occurrence graph with the graph-walk consistency."""
    cfg = cfg or HybridConfig()
    graph = build_cooccurrence_graph(stats, vocab, cfg)
    walk_vocab = LabelVocabulary(
        labels=vocab.labels,
        concept_map={label: label for label in vocab.labels},
        background=vocab.background,
    )
    base = graph_consistency(graph, walk_vocab, cfg.rwr, symmetrize=cfg.symmetrize)
    return ConsistencyMatrix(values=base.values, vocab=vocab, source_tag=SOURCE_HYBRID)
