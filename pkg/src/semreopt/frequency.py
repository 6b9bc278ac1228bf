"""Frequency-based consistency from annotation co-occurrence statistics.

The consistency of two classes is a floored pointwise-mutual-information
score over instance counts:

    S[l, l'] = max(log(n(l, l') * N / (n(l) * n(l'))), 0)

where n(l) counts instances of class l across the dataset, n(l, l') counts
co-occurring instance pairs, and N is the total instance count. Same-class
co-occurrence uses the handshake count n*(n-1)/2; two conventions for it
are supported (see ``collect_stats``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .consistency import SOURCE_FREQUENCY, ConsistencyMatrix
from .errors import EmptyStatisticsError, ValidationError, VocabularyMismatchError
from .model import GroundTruthInstance, LabelVocabulary, group_by_image

MODE_PER_IMAGE = "per_image"
MODE_PAPER_LITERAL = "paper_literal"

LOG_NATURAL = "natural"
LOG_BASE10 = "base10"


@dataclass(frozen=True, eq=False)
class CoOccurrenceStats:
    """Per-class instance counts and symmetric pair counts."""

    instance_counts: np.ndarray  # (L,) int64
    pair_counts: np.ndarray  # (L, L) int64, symmetric
    total_instances: int

    def __post_init__(self):
        counts = np.asarray(self.instance_counts, dtype=np.int64)
        pairs = np.asarray(self.pair_counts, dtype=np.int64)
        object.__setattr__(self, "instance_counts", counts)
        object.__setattr__(self, "pair_counts", pairs)
        if counts.ndim != 1 or pairs.shape != (counts.size, counts.size):
            raise ValidationError("stats dimensions disagree")
        if np.any(counts < 0) or np.any(pairs < 0):
            raise ValidationError("counts must be nonnegative")
        if not np.array_equal(pairs, pairs.T):
            raise ValidationError("pair counts must be symmetric")
        if int(counts.sum()) != self.total_instances:
            raise ValidationError("instance counts must sum to total_instances")
        counts.flags.writeable = False
        pairs.flags.writeable = False

    @property
    def num_classes(self) -> int:
        return int(self.instance_counts.size)


def collect_stats(
    gt: Iterable[GroundTruthInstance],
    vocab: LabelVocabulary,
    mode: str = MODE_PER_IMAGE,
) -> CoOccurrenceStats:
    """Count instances and within-image co-occurrences.

    Off-diagonal pair counts are, in both modes, the number of cross-class
    instance pairs sharing an image: sum over images of c_l * c_l'.

    The diagonal (same-class) handshake count differs:

    * ``per_image``: sum over images of c_l * (c_l - 1) / 2 — pairs that
      actually share an image.
    * ``paper_literal``: n(l) * (n(l) - 1) / 2 from the global count,
      pairing instances across unrelated images as well.
    """
    if mode not in (MODE_PER_IMAGE, MODE_PAPER_LITERAL):
        raise ValidationError(f"unknown co-occurrence mode {mode!r}")
    n_labels = len(vocab)
    instance_counts = np.zeros(n_labels, dtype=np.int64)
    pair_counts = np.zeros((n_labels, n_labels), dtype=np.int64)

    for instances in group_by_image(gt).values():
        per_image = np.zeros(n_labels, dtype=np.int64)
        for inst in instances:
            if not 0 <= inst.class_id < n_labels:
                raise VocabularyMismatchError(
                    f"class_id {inst.class_id} out of range for {n_labels} classes"
                )
            per_image[inst.class_id] += 1
        instance_counts += per_image
        cross = np.outer(per_image, per_image)
        np.fill_diagonal(cross, per_image * (per_image - 1) // 2)
        pair_counts += cross

    if mode == MODE_PAPER_LITERAL:
        np.fill_diagonal(pair_counts, instance_counts * (instance_counts - 1) // 2)

    return CoOccurrenceStats(
        instance_counts=instance_counts,
        pair_counts=pair_counts,
        total_instances=int(instance_counts.sum()),
    )


def frequency_consistency(
    stats: CoOccurrenceStats,
    vocab: LabelVocabulary,
    log_base: str = LOG_NATURAL,
) -> ConsistencyMatrix:
    """Floored-PMI consistency matrix from co-occurrence statistics.

    Entries where any involved count is zero are defined as 0: no evidence
    means no consistency, matching the intent of the max(., 0) floor. The
    log base only rescales the matrix globally; natural log is the default.
    """
    if log_base not in (LOG_NATURAL, LOG_BASE10):
        raise ValidationError(f"unknown log base {log_base!r}")
    if stats.num_classes != len(vocab):
        raise VocabularyMismatchError(
            f"stats cover {stats.num_classes} classes, vocabulary has {len(vocab)}"
        )
    if stats.total_instances == 0:
        raise EmptyStatisticsError("no instances: cannot derive frequency consistency")

    n = stats.instance_counts.astype(np.float64)
    pairs = stats.pair_counts.astype(np.float64)
    total = float(stats.total_instances)
    denom = np.outer(n, n)
    defined = (denom > 0.0) & (pairs > 0.0)

    values = np.zeros_like(pairs)
    log = np.log if log_base == LOG_NATURAL else np.log10
    ratio = np.ones_like(pairs)
    np.divide(pairs * total, denom, out=ratio, where=defined)
    values[defined] = np.maximum(log(ratio[defined]), 0.0)

    return ConsistencyMatrix(values=values, vocab=vocab, source_tag=SOURCE_FREQUENCY)
