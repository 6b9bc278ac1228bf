"""Concept graphs, knowledge-graph cropping and random walk with restart.

A walker starts at a concept node and, at every step, either follows a
weighted edge or teleports back to its start node with the restart
probability. Its steady-state visit distribution measures proximity of
every other concept to the start. Proximities from each vocabulary label's
concept are assembled and symmetrized into a consistency matrix.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .consistency import SOURCE_KNOWLEDGE_GRAPH, ConsistencyMatrix
from .errors import ConfigError, ConvergenceError, ParseError, ValidationError
from .model import LabelVocabulary

logger = logging.getLogger(__name__)

# Default relation whitelist for ConceptNet-style dumps. Negating relations
# (Antonym, DistinctFrom, Not*, ObstructedBy) are deliberately absent.
DEFAULT_POSITIVE_RELATIONS = frozenset(
    {
        "RelatedTo",
        "IsA",
        "PartOf",
        "AtLocation",
        "UsedFor",
        "CapableOf",
        "HasA",
        "Synonym",
        "SimilarTo",
        "HasContext",
        "MadeOf",
        "HasProperty",
        "CausesDesire",
        "Causes",
        "HasSubevent",
        "HasPrerequisite",
    }
)

SYMMETRIZE_MEAN = "mean"
SYMMETRIZE_MAX = "max"

MISSING_CONCEPT_WARN = "warn"
MISSING_CONCEPT_ERROR = "error"


@dataclass(frozen=True, eq=False)
class ConceptGraph:
    """Undirected weighted graph over concept-id strings.

    Edges are stored once per unordered pair with the lower node index
    first; weights are strictly positive.
    """

    nodes: tuple[str, ...]
    edges: tuple[tuple[int, int, float], ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        n = len(self.nodes)
        seen = set()
        norm = []
        for i, j, w in self.edges:
            if not (0 <= i < n and 0 <= j < n):
                raise ValidationError(f"edge ({i}, {j}) references unknown node")
            if i == j:
                raise ValidationError(f"self-loop on node {self.nodes[i]!r}")
            if w <= 0:
                raise ValidationError(f"edge ({i}, {j}) has non-positive weight {w}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValidationError(f"duplicate undirected edge {key}")
            seen.add(key)
            norm.append((key[0], key[1], float(w)))
        object.__setattr__(self, "edges", tuple(norm))

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @cached_property
    def node_index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.nodes)}

    @cached_property
    def _csr(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Symmetric CSR adjacency plus inverse degrees and dangling mask."""
        n = self.num_nodes
        if self.edges:
            rows = np.fromiter((e[0] for e in self.edges), dtype=np.int64)
            cols = np.fromiter((e[1] for e in self.edges), dtype=np.int64)
            w = np.fromiter((e[2] for e in self.edges), dtype=np.float64)
            adj = sp.coo_matrix(
                (np.concatenate([w, w]), (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
                shape=(n, n),
            ).tocsr()
        else:
            adj = sp.csr_matrix((n, n), dtype=np.float64)
        degree = np.asarray(adj.sum(axis=1)).ravel()
        dangling = degree == 0.0
        inv_deg = np.zeros(n)
        np.divide(1.0, degree, out=inv_deg, where=~dangling)
        return (
            adj.indptr.astype(np.int64),
            adj.indices.astype(np.int64),
            adj.data.astype(np.float64),
            inv_deg,
            dangling,
        )


@dataclass(frozen=True)
class RwrConfig:
    """Random-walk-with-restart parameters."""

    restart_prob: float = 0.15
    tolerance: float = 1e-9
    max_iterations: int = 10_000

    def __post_init__(self):
        if not 0.0 < self.restart_prob < 1.0:
            raise ConfigError(f"restart_prob must be in (0, 1), got {self.restart_prob}")
        if self.tolerance <= 0.0:
            raise ConfigError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")


def rwr_steady_state(graph: ConceptGraph, start: int, cfg: RwrConfig | None = None) -> np.ndarray:
    """Steady-state visit distribution of a restarting walker.

    Returns r with r = c * e_start + (1 - c) * W r, where W is the
    column-stochastic transition built from edge weights. Dangling nodes
    send their whole transition mass back to the start node, which keeps W
    stochastic and r a probability vector. Solved by exact power iteration.
    """
    cfg = cfg or RwrConfig()
    if graph.num_nodes == 0:
        raise ValidationError("graph has no nodes")
    if not 0 <= start < graph.num_nodes:
        raise ValidationError(f"start node {start} out of range")
    indptr, indices, data, inv_deg, dangling = graph._csr
    r, iterations, residual, status = _kernels.rwr_power_iteration(
        indptr,
        indices,
        data,
        inv_deg,
        dangling,
        start,
        cfg.restart_prob,
        cfg.tolerance,
        cfg.max_iterations,
    )
    if status != _kernels.JACOBI_CONVERGED:
        raise ConvergenceError(
            "random walk did not reach steady state",
            residual=float(residual),
            iterations=int(iterations),
        )
    return r


def graph_consistency(
    graph: ConceptGraph,
    vocab: LabelVocabulary,
    cfg: RwrConfig | None = None,
    symmetrize: str = SYMMETRIZE_MEAN,
    on_missing: str = MISSING_CONCEPT_WARN,
) -> ConsistencyMatrix:
    """Consistency matrix from walks started at each label's concept.

    The raw proximity R[l, l'] (probability of sitting at concept l' in the
    steady state of a walk restarted at concept l) is asymmetric; the matrix
    is symmetrized by the elementwise mean (default) or max. Labels whose
    concept is absent from the graph get a zero row and column.
    """
    if symmetrize not in (SYMMETRIZE_MEAN, SYMMETRIZE_MAX):
        raise ConfigError(f"unknown symmetrize mode {symmetrize!r}")
    if on_missing not in (MISSING_CONCEPT_WARN, MISSING_CONCEPT_ERROR):
        raise ConfigError(f"unknown missing-concept policy {on_missing!r}")
    if vocab.concept_map is None:
        raise ValidationError("vocabulary has no concept_map; cannot map labels to graph nodes")
    cfg = cfg or RwrConfig()

    node_of: list[int | None] = []
    for label in vocab.labels:
        concept = vocab.concept_map[label]
        idx = graph.node_index.get(concept)
        if idx is None:
            if on_missing == MISSING_CONCEPT_ERROR:
                raise ValidationError(f"concept {concept!r} (label {label!r}) not in graph")
            logger.warning("concept %r (label %r) not in graph; zero row/column", concept, label)
        node_of.append(idx)

    n_labels = len(vocab)
    raw = np.zeros((n_labels, n_labels))
    for l, idx in enumerate(node_of):
        if idx is None:
            continue
        r = rwr_steady_state(graph, idx, cfg)
        for l2, idx2 in enumerate(node_of):
            if idx2 is not None:
                raw[l, l2] = r[idx2]

    if symmetrize == SYMMETRIZE_MEAN:
        values = (raw + raw.T) / 2.0
    else:
        values = np.maximum(raw, raw.T)
    return ConsistencyMatrix(values=values, vocab=vocab, source_tag=SOURCE_KNOWLEDGE_GRAPH)


# ---------------------------------------------------------------------------
# knowledge-graph dump cropping
# ---------------------------------------------------------------------------


def _relation_name(relation: str) -> str:
    return relation[3:] if relation.startswith("/r/") else relation


def _carries_language(concept: str, language_tag: str) -> bool:
    # ConceptNet URIs are /c/<lang>/<term>[/...]; bare concept ids carry no
    # language information and pass any tag.
    if not language_tag or not concept.startswith("/c/"):
        return True
    parts = concept.split("/")
    return len(parts) > 2 and parts[2] == language_tag


def crop_graph(
    raw_edges: Iterable[tuple[str, str, str, float]],
    language_tag: str = "en",
    positive_relations: frozenset[str] | set[str] = DEFAULT_POSITIVE_RELATIONS,
) -> ConceptGraph:
    """Filter an edge stream down to positive relations in one language.

    Keeps edges whose relation is whitelisted and whose endpoints both carry
    the language tag, discards self-loops and non-positive weights, and
    collapses parallel edges (either direction) by summing their weights.
    Node ids are assigned in first-appearance order.
    """
    if any(not r for r in positive_relations):
        raise ValidationError("positive relation names must be non-empty")
    node_ids: dict[str, int] = {}
    weights: dict[tuple[int, int], float] = {}

    def node_id(name: str) -> int:
        if name not in node_ids:
            node_ids[name] = len(node_ids)
        return node_ids[name]

    for a, relation, b, weight in raw_edges:
        if _relation_name(relation) not in positive_relations:
            continue
        if not (_carries_language(a, language_tag) and _carries_language(b, language_tag)):
            continue
        if a == b or weight <= 0:
            continue
        i, j = node_id(a), node_id(b)
        key = (min(i, j), max(i, j))
        weights[key] = weights.get(key, 0.0) + float(weight)

    if not node_ids:
        logger.warning("cropping produced an empty graph")
    nodes = tuple(node_ids)
    edges = tuple((i, j, w) for (i, j), w in sorted(weights.items()))
    return ConceptGraph(nodes=nodes, edges=edges)


def iter_tsv_edges(path: str | Path) -> Iterator[tuple[str, str, str, float]]:
    """Yield edges from the simple TSV format: a<TAB>relation<TAB>b<TAB>weight."""
    path = Path(path)
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ParseError(
                    f"expected 4 tab-separated fields, got {len(parts)}",
                    path=str(path),
                    record=f"line {line_no}",
                )
            a, relation, b, weight = parts
            try:
                w = float(weight)
            except ValueError:
                raise ParseError(
                    f"bad weight {weight!r}", path=str(path), record=f"line {line_no}"
                ) from None
            yield a, relation, b, w


def iter_conceptnet_edges(path: str | Path) -> Iterator[tuple[str, str, str, float]]:
    """Yield edges from a ConceptNet5 assertion dump.

    Rows are tab-separated: assertion URI, relation URI, start URI, end URI,
    JSON metadata; the weight is read from the metadata (default 1.0).
    """
    path = Path(path)
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < 5:
                raise ParseError(
                    f"expected >= 5 tab-separated fields, got {len(parts)}",
                    path=str(path),
                    record=f"line {line_no}",
                )
            relation, start, end = parts[1], parts[2], parts[3]
            try:
                meta = json.loads(parts[4])
                weight = float(meta.get("weight", 1.0))
            except (json.JSONDecodeError, TypeError, ValueError):
                raise ParseError(
                    "bad JSON metadata column", path=str(path), record=f"line {line_no}"
                ) from None
            yield start, relation, end, weight


def write_graph_tsv(graph: ConceptGraph, path: str | Path) -> None:
    """Emit the graph in the simple TSV format.

    Relation identity is lost by cropping, so edges are written with the
    generic positive relation RelatedTo, which keeps the file re-croppable.
    """
    with open(path, "w") as fh:
        for i, j, w in graph.edges:
            fh.write(f"{graph.nodes[i]}\tRelatedTo\t{graph.nodes[j]}\t{w!r}\n")
