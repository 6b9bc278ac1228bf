"""Shared consistency-matrix type and its serialization.

All three builders (frequency, knowledge-graph, hybrid) emit the same
carrier so downstream stages never care where the knowledge came from.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .model import LabelVocabulary

SOURCE_FREQUENCY = "frequency"
SOURCE_KNOWLEDGE_GRAPH = "knowledge_graph"
SOURCE_HYBRID = "hybrid"
_SOURCES = frozenset({SOURCE_FREQUENCY, SOURCE_KNOWLEDGE_GRAPH, SOURCE_HYBRID})


@dataclass(frozen=True, eq=False)
class ConsistencyMatrix:
    """Symmetric nonnegative L x L matrix of pairwise class consistency."""

    values: np.ndarray
    vocab: LabelVocabulary
    source_tag: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        n = len(self.vocab)
        if values.shape != (n, n):
            raise ValidationError(
                f"consistency matrix shape {values.shape} does not match vocabulary size {n}"
            )
        if not np.all(np.isfinite(values)):
            raise ValidationError("consistency values must be finite")
        if np.any(values < 0.0):
            raise ValidationError("consistency values must be nonnegative")
        if not np.array_equal(values, values.T):
            raise ValidationError("consistency matrix must be symmetric")
        if self.source_tag not in _SOURCES:
            raise ValidationError(f"unknown source tag {self.source_tag!r}")
        values.flags.writeable = False

    def row_sums(self) -> np.ndarray:
        return self.values.sum(axis=1)


def write_consistency(matrix: ConsistencyMatrix, path: str | Path) -> None:
    payload = {
        "labels": list(matrix.vocab.labels),
        "source": matrix.source_tag,
        "values": [[float(v) for v in row] for row in matrix.values],
    }
    Path(path).write_text(json.dumps(payload) + "\n")


def load_consistency(path: str | Path) -> ConsistencyMatrix:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", path=str(path)) from exc
    for key in ("labels", "source", "values"):
        if key not in raw:
            raise ParseError(f"consistency file missing {key!r}", path=str(path))
    vocab = LabelVocabulary(labels=tuple(raw["labels"]))
    return ConsistencyMatrix(
        values=np.asarray(raw["values"], dtype=np.float64),
        vocab=vocab,
        source_tag=raw["source"],
    )


def write_consistency_csv(matrix: ConsistencyMatrix, path: str | Path) -> None:
    """Inspection-friendly CSV with a label header row and column."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([""] + list(matrix.vocab.labels))
        for label, row in zip(matrix.vocab.labels, matrix.values):
            writer.writerow([label] + [repr(float(v)) for v in row])
