"""AUC-style average precision, recall, size breakdowns and score-change stats.

Average precision follows the interpolated-envelope convention: per class
and IoU threshold, precision is made monotone from the right and sampled at
evenly spaced recall values in [0, 1]; samples are averaged, then averaged
over IoU thresholds. All metrics are computed over each image's top
``max_detections`` detections.

A detection's class is the argmax of its score vector (background class
excluded when declared) and its confidence is that max score. Matching is
greedy in descending confidence, class-gated, each ground truth matched at
most once. Ties break by lowest original index; across images, by image id.

Size-stratified AP uses ignore semantics: ground truth outside the area
range can absorb a detection without counting it as a true or false
positive, and unmatched detections whose own area is outside the range are
dropped rather than penalized.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import AlignmentError, ConfigError, EvaluationError, ValidationError
from .model import (
    Detection,
    GroundTruthInstance,
    ImageDetections,
    LabelVocabulary,
    group_by_image,
    predicted_class,
    ranking_score,
    top_k_by_score,
)
from .reopt import ReoptResult

DEFAULT_IOU_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
DEFAULT_AREA_RANGES = (
    ("small", 0.0, 32.0**2),
    ("medium", 32.0**2, 96.0**2),
    ("large", 96.0**2, float("inf")),
)
FULL_RANGE = (0.0, float("inf"))


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, ...] = DEFAULT_IOU_THRESHOLDS
    recall_points: int = 101
    max_detections: int = 100
    area_ranges: tuple[tuple[str, float, float], ...] = DEFAULT_AREA_RANGES

    def __post_init__(self):
        thrs = tuple(self.iou_thresholds)
        object.__setattr__(self, "iou_thresholds", thrs)
        object.__setattr__(self, "area_ranges", tuple(self.area_ranges))
        if not thrs or any(not 0.0 < t <= 1.0 for t in thrs):
            raise ConfigError("iou_thresholds must lie in (0, 1]")
        if list(thrs) != sorted(set(thrs)):
            raise ConfigError("iou_thresholds must be sorted ascending and unique")
        if self.recall_points < 2:
            raise ConfigError("recall_points must be >= 2")
        if self.max_detections < 0:
            raise ConfigError("max_detections must be >= 0")


@dataclass(frozen=True)
class PerClassMetrics:
    label: str
    ap: float
    recall: float


@dataclass(frozen=True)
class MatchCounts:
    matched_detections: int
    unmatched_detections: int
    matched_ground_truth: int
    total_ground_truth: int
    total_detections: int


@dataclass(frozen=True)
class EvalReport:
    map: float
    mean_recall: float
    per_class: tuple[PerClassMetrics, ...]
    per_size: tuple[tuple[str, float | None], ...]
    counts: MatchCounts

    def to_dict(self) -> dict:
        return {
            "map": self.map,
            "mean_recall": self.mean_recall,
            "per_class": [
                {"label": m.label, "ap": m.ap, "recall": m.recall} for m in self.per_class
            ],
            "per_size": [{"name": name, "ap": ap} for name, ap in self.per_size],
            "counts": {
                "matched_detections": self.counts.matched_detections,
                "unmatched_detections": self.counts.unmatched_detections,
                "matched_ground_truth": self.counts.matched_ground_truth,
                "total_ground_truth": self.counts.total_ground_truth,
                "total_detections": self.counts.total_detections,
            },
        }


@dataclass(frozen=True)
class ScoreChangeStats:
    mean: float
    max: float
    min: float
    std_dev: float
    count: int


# ---------------------------------------------------------------------------
# matching
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _PreparedImage:
    image_id: str
    det_classes: np.ndarray  # (D,) int
    det_scores: np.ndarray  # (D,) float
    det_boxes: np.ndarray  # (D, 4)
    det_areas: np.ndarray  # (D,)
    match_order: np.ndarray  # det indices by descending score, ties by index
    gt_classes: np.ndarray  # (G,) int
    gt_boxes: np.ndarray  # (G, 4)
    gt_areas: np.ndarray  # (G,)
    iou: np.ndarray  # (D, G)


def _prepare_image(
    dets: ImageDetections | None,
    gt: Sequence[GroundTruthInstance],
    vocab: LabelVocabulary,
    image_id: str,
) -> _PreparedImage:
    detections = dets.detections if dets is not None else ()
    n_det = len(detections)
    det_classes = np.array([predicted_class(d, vocab) for d in detections], dtype=np.int64)
    det_scores = np.array([ranking_score(d, vocab) for d in detections], dtype=np.float64)
    det_boxes = (
        np.stack([d.box.as_array() for d in detections]) if n_det else np.zeros((0, 4))
    )
    det_areas = det_boxes[:, 2] * det_boxes[:, 3] if n_det else np.zeros(0)
    match_order = np.array(
        sorted(range(n_det), key=lambda i: (-det_scores[i], i)), dtype=np.int64
    )
    gt_classes = np.array([g.class_id for g in gt], dtype=np.int64)
    gt_boxes = np.stack([g.box.as_array() for g in gt]) if gt else np.zeros((0, 4))
    gt_areas = gt_boxes[:, 2] * gt_boxes[:, 3] if len(gt) else np.zeros(0)
    iou = (
        _kernels.iou_matrix(det_boxes, gt_boxes)
        if n_det and len(gt)
        else np.zeros((n_det, len(gt)))
    )
    return _PreparedImage(
        image_id, det_classes, det_scores, det_boxes, det_areas, match_order,
        gt_classes, gt_boxes, gt_areas, iou,
    )


_TP, _FP, _IGNORED = 0, 1, 2


def _greedy_match(
    img: _PreparedImage, iou_threshold: float, area_lo: float, area_hi: float
) -> tuple[np.ndarray, np.ndarray]:
    """Match one image at one threshold within one area range.

    Returns (det_outcome, det_match): outcome codes per detection and the
    matched ground-truth index (-1 if none).
    """
    n_det = img.det_classes.size
    n_gt = img.gt_classes.size
    gt_ignored = ~((img.gt_areas >= area_lo) & (img.gt_areas < area_hi))
    gt_used = np.zeros(n_gt, dtype=bool)
    outcome = np.full(n_det, _FP, dtype=np.int64)
    det_match = np.full(n_det, -1, dtype=np.int64)

    for i in img.match_order:
        cls = img.det_classes[i]
        best_j, best_iou = -1, -1.0
        best_ign_j, best_ign_iou = -1, -1.0
        for j in range(n_gt):
            if gt_used[j] or img.gt_classes[j] != cls:
                continue
            iou = img.iou[i, j]
            if iou < iou_threshold:
                continue
            if gt_ignored[j]:
                if iou > best_ign_iou:
                    best_ign_j, best_ign_iou = j, iou
            elif iou > best_iou:
                best_j, best_iou = j, iou
        if best_j >= 0:
            gt_used[best_j] = True
            outcome[i] = _TP
            det_match[i] = best_j
        elif best_ign_j >= 0:
            gt_used[best_ign_j] = True
            outcome[i] = _IGNORED
            det_match[i] = best_ign_j
        elif not (area_lo <= img.det_areas[i] < area_hi):
            outcome[i] = _IGNORED
    return outcome, det_match


def match_detections(
    dets: ImageDetections,
    gt: Sequence[GroundTruthInstance],
    iou_threshold: float,
    vocab: LabelVocabulary | None = None,
) -> list[tuple[int, int | None]]:
    """Greedy same-class matching of one image's detections to ground truth.

    Detections are processed in descending score order (ties by original
    index); each matches the unmatched same-class ground truth with the
    highest IoU at or above the threshold. Returns one (detection index,
    ground-truth index or None) pair per detection, in detection order.
    """
    if vocab is None:
        n_classes = max(
            [d.scores.size for d in dets.detections]
            + [int(g.class_id) + 1 for g in gt]
            + [1]
        )
        vocab = LabelVocabulary(labels=tuple(f"class_{i}" for i in range(n_classes)))
    img = _prepare_image(dets, list(gt), vocab, dets.image_id)
    outcome, det_match = _greedy_match(img, iou_threshold, *FULL_RANGE)
    return [
        (i, int(det_match[i]) if outcome[i] == _TP else None)
        for i in range(len(dets.detections))
    ]


# ---------------------------------------------------------------------------
# average precision
# ---------------------------------------------------------------------------


def _envelope_ap(
    scores: np.ndarray, is_tp: np.ndarray, n_gt: int, recall_points: int
) -> tuple[float, float]:
    """(AP, max recall) from score-sorted match records of one class."""
    if scores.size == 0:
        return 0.0, 0.0
    tp_cum = np.cumsum(is_tp)
    fp_cum = np.cumsum(~is_tp)
    recall = tp_cum / n_gt
    precision = tp_cum / (tp_cum + fp_cum)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    sample_recalls = np.linspace(0.0, 1.0, recall_points)
    idx = np.searchsorted(recall, sample_recalls, side="left")
    sampled = np.where(idx < recall.size, envelope[np.minimum(idx, recall.size - 1)], 0.0)
    return float(sampled.mean()), float(recall[-1])


def average_precision(
    records: Sequence[tuple[float, str, int, bool]],
    n_gt: int,
    cfg: EvalConfig,
) -> float | None:
    """AP of one class at one IoU threshold from dataset-wide match records.

    Records are (score, image_id, detection index, is_true_positive);
    ordering is established here. Classes without ground truth have no
    defined AP and yield None.
    """
    if n_gt == 0:
        return None
    ordered = sorted(records, key=lambda r: (-r[0], r[1], r[2]))
    scores = np.array([r[0] for r in ordered], dtype=np.float64)
    is_tp = np.array([r[3] for r in ordered], dtype=bool)
    ap, _ = _envelope_ap(scores, is_tp, n_gt, cfg.recall_points)
    return ap


def _range_metrics(
    prepared: Sequence[_PreparedImage],
    cfg: EvalConfig,
    area_lo: float,
    area_hi: float,
    n_classes: int,
) -> tuple[list[float | None], list[float | None], MatchCounts]:
    """Per-class AP and recall (averaged over IoU thresholds) in one range."""
    gt_per_class = np.zeros(n_classes, dtype=np.int64)
    for img in prepared:
        for j in range(img.gt_classes.size):
            if area_lo <= img.gt_areas[j] < area_hi:
                gt_per_class[img.gt_classes[j]] += 1

    ap_sums = np.zeros(n_classes)
    recall_sums = np.zeros(n_classes)
    counts: MatchCounts | None = None
    for thr_no, thr in enumerate(cfg.iou_thresholds):
        records: list[list[tuple[float, str, int, bool]]] = [[] for _ in range(n_classes)]
        tp_thr = fp_thr = 0
        for img in prepared:
            outcome, _ = _greedy_match(img, thr, area_lo, area_hi)
            for i in range(img.det_classes.size):
                if outcome[i] == _IGNORED:
                    continue
                is_tp = outcome[i] == _TP
                records[img.det_classes[i]].append(
                    (float(img.det_scores[i]), img.image_id, i, is_tp)
                )
                tp_thr += is_tp
                fp_thr += not is_tp
        if thr_no == 0:
            total_det = sum(img.det_classes.size for img in prepared)
            counts = MatchCounts(
                matched_detections=int(tp_thr),
                unmatched_detections=int(fp_thr),
                matched_ground_truth=int(tp_thr),
                total_ground_truth=int(gt_per_class.sum()),
                total_detections=int(total_det),
            )
        for cls in range(n_classes):
            if gt_per_class[cls] == 0:
                continue
            ordered = sorted(records[cls], key=lambda r: (-r[0], r[1], r[2]))
            scores = np.array([r[0] for r in ordered], dtype=np.float64)
            is_tp = np.array([r[3] for r in ordered], dtype=bool)
            ap, max_recall = _envelope_ap(scores, is_tp, int(gt_per_class[cls]), cfg.recall_points)
            ap_sums[cls] += ap
            recall_sums[cls] += max_recall

    n_thr = len(cfg.iou_thresholds)
    aps = [
        float(ap_sums[c]) / n_thr if gt_per_class[c] > 0 else None for c in range(n_classes)
    ]
    recalls = [
        float(recall_sums[c]) / n_thr if gt_per_class[c] > 0 else None
        for c in range(n_classes)
    ]
    assert counts is not None
    return aps, recalls, counts


def evaluate(
    dets: Sequence[ImageDetections],
    gt: Sequence[GroundTruthInstance],
    cfg: EvalConfig | None = None,
    vocab: LabelVocabulary | None = None,
) -> EvalReport:
    """Full metric bundle over a dataset.

    mAP and mean recall average over classes that have ground truth;
    per-size APs restrict ground truth to each configured area range.
    """
    cfg = cfg or EvalConfig()
    if not gt:
        raise EvaluationError("no ground-truth instances: nothing to evaluate")
    if vocab is None:
        n_classes = max(
            [int(g.class_id) + 1 for g in gt] + [d.scores.size for img in dets for d in img.detections]
        )
        vocab = LabelVocabulary(labels=tuple(f"class_{i}" for i in range(n_classes)))
    n_classes = len(vocab)
    for g in gt:
        if not 0 <= g.class_id < n_classes:
            raise ValidationError(f"ground-truth class_id {g.class_id} out of range")

    gt_by_image = group_by_image(gt)
    prepared: list[_PreparedImage] = []
    seen = set()
    for img in dets:
        if img.image_id in seen:
            raise ValidationError(f"duplicate image_id {img.image_id!r} in detections")
        seen.add(img.image_id)
        capped = top_k_by_score(img, cfg.max_detections, vocab=vocab)
        prepared.append(
            _prepare_image(capped, gt_by_image.get(img.image_id, []), vocab, img.image_id)
        )
    for image_id, instances in gt_by_image.items():
        if image_id not in seen:
            prepared.append(_prepare_image(None, instances, vocab, image_id))

    aps, recalls, counts = _range_metrics(prepared, cfg, *FULL_RANGE, n_classes)
    per_class = tuple(
        PerClassMetrics(vocab.labels[c], aps[c], recalls[c])
        for c in range(n_classes)
        if aps[c] is not None
    )
    if not per_class:
        raise EvaluationError("no class has ground truth: nothing to evaluate")
    map_value = float(np.mean([m.ap for m in per_class]))
    mean_recall = float(np.mean([m.recall for m in per_class]))

    per_size = []
    for name, lo, hi in cfg.area_ranges:
        range_aps, _, _ = _range_metrics(prepared, cfg, lo, hi, n_classes)
        defined = [a for a in range_aps if a is not None]
        per_size.append((name, float(np.mean(defined)) if defined else None))

    return EvalReport(
        map=map_value,
        mean_recall=mean_recall,
        per_class=per_class,
        per_size=tuple(per_size),
        counts=counts,
    )


# ---------------------------------------------------------------------------
# confidence-score change statistics
# ---------------------------------------------------------------------------


def _after_index(
    before: Sequence[ImageDetections],
    after: ReoptResult | Sequence[ImageDetections],
) -> dict[str, dict[int, Detection]]:
    """Map image_id -> {original detection index -> after detection}.

    For a ReoptResult the original indices are carried directly; for a plain
    detection list they are recovered by exact box identity (boxes are never
    modified by re-optimization).
    """
    before_by_id = {img.image_id: img for img in before}
    out: dict[str, dict[int, Detection]] = {}
    if isinstance(after, ReoptResult):
        for img, kept in zip(after.images, after.kept_indices):
            if img.image_id not in before_by_id:
                raise AlignmentError(f"after-image {img.image_id!r} not present in before set")
            n_before = len(before_by_id[img.image_id].detections)
            if any(not 0 <= k < n_before for k in kept):
                raise AlignmentError(f"after-image {img.image_id!r} references unknown detections")
            out[img.image_id] = {k: det for k, det in zip(kept, img.detections)}
        return out
    for img in after:
        ref = before_by_id.get(img.image_id)
        if ref is None:
            raise AlignmentError(f"after-image {img.image_id!r} not present in before set")
        used = np.zeros(len(ref.detections), dtype=bool)
        mapping: dict[int, Detection] = {}
        for det in img.detections:
            found = -1
            for i, bdet in enumerate(ref.detections):
                if not used[i] and bdet.box == det.box:
                    found = i
                    break
            if found < 0:
                raise AlignmentError(
                    f"after-image {img.image_id!r}: detection box {det.box} has no "
                    "counterpart in the before set"
                )
            used[found] = True
            mapping[found] = det
        out[img.image_id] = mapping
    return out


def score_change_stats(
    before: Sequence[ImageDetections],
    after: ReoptResult | Sequence[ImageDetections],
    top_k: int = 100,
    vocab: LabelVocabulary | None = None,
) -> ScoreChangeStats:
    """Descriptive statistics of max-score changes on the top-k detections.

    Per image, the top_k detections by before-score are selected; for each
    one surviving re-optimization, the delta of its max class score is
    recorded. Standard deviation is the population convention (divide by n).
    """
    if top_k < 0:
        raise ValidationError("top_k must be >= 0")
    index = _after_index(before, after)
    deltas: list[float] = []
    for img in before:
        mapping = index.get(img.image_id)
        if mapping is None:
            continue
        if vocab is None:
            ranks = [float(d.scores.max()) if d.scores.size else 0.0 for d in img.detections]
        else:
            ranks = [ranking_score(d, vocab) for d in img.detections]
        order = sorted(range(len(ranks)), key=lambda i: (-ranks[i], i))[:top_k]
        for i in order:
            det_after = mapping.get(i)
            if det_after is None:
                continue
            if vocab is None:
                rank_after = float(det_after.scores.max()) if det_after.scores.size else 0.0
            else:
                rank_after = ranking_score(det_after, vocab)
            deltas.append(rank_after - ranks[i])
    if not deltas:
        return ScoreChangeStats(mean=0.0, max=0.0, min=0.0, std_dev=0.0, count=0)
    arr = np.array(deltas)
    return ScoreChangeStats(
        mean=float(arr.mean()),
        max=float(arr.max()),
        min=float(arr.min()),
        std_dev=float(arr.std()),
        count=int(arr.size),
    )


# ---------------------------------------------------------------------------
# report formatting
# ---------------------------------------------------------------------------


def _pct(value: float | None) -> str:
    return "-" if value is None else f"{100.0 * value:.2f}"


def format_report(report: EvalReport, max_detections: int = 100) -> str:
    lines = [
        f"{'metric':<14}{'value':>8}",
        f"{'mAP@' + str(max_detections):<14}{_pct(report.map):>8}",
        f"{'Recall@' + str(max_detections):<14}{_pct(report.mean_recall):>8}",
    ]
    for name, ap in report.per_size:
        lines.append(f"{name.capitalize():<14}{_pct(ap):>8}")
    lines.append("")
    lines.append(f"{'class':<14}{'AP':>8}{'Recall':>8}")
    for m in report.per_class:
        lines.append(f"{m.label:<14}{_pct(m.ap):>8}{_pct(m.recall):>8}")
    c = report.counts
    lines.append("")
    lines.append(
        f"matched {c.matched_detections}/{c.total_detections} detections, "
        f"{c.matched_ground_truth}/{c.total_ground_truth} ground truths "
        f"(IoU {DEFAULT_IOU_THRESHOLDS[0]:.2f} tier)"
    )
    return "\n".join(lines)


def _delta(new: float | None, base: float | None) -> str:
    if new is None or base is None:
        return "-"
    return f"{100.0 * new:.2f} ({100.0 * (new - base):+.2f})"


def format_comparison(
    baseline: EvalReport, reoptimized: EvalReport, max_detections: int = 100
) -> str:
    """Baseline vs re-optimized table; brackets hold the difference."""
    header = f"{'':<12}{'mAP@' + str(max_detections):>16}{'Recall@' + str(max_detections):>18}"
    size_names = [name for name, _ in baseline.per_size]
    for name in size_names:
        header += f"{name.capitalize():>16}"
    base_sizes = dict(baseline.per_size)
    new_sizes = dict(reoptimized.per_size)
    row_base = f"{'Baseline':<12}{_pct(baseline.map):>16}{_pct(baseline.mean_recall):>18}"
    for name in size_names:
        row_base += f"{_pct(base_sizes[name]):>16}"
    row_new = (
        f"{'Re-Op':<12}{_delta(reoptimized.map, baseline.map):>16}"
        f"{_delta(reoptimized.mean_recall, baseline.mean_recall):>18}"
    )
    for name in size_names:
        row_new += f"{_delta(new_sizes.get(name), base_sizes.get(name)):>16}"
    lines = [header, row_base, row_new, ""]
    base_by_label = {m.label: m for m in baseline.per_class}
    lines.append(f"{'class':<14}{'AP':>18}{'Recall':>18}")
    for m in reoptimized.per_class:
        b = base_by_label.get(m.label)
        if b is None:
            continue
        lines.append(
            f"{m.label:<14}{_delta(m.ap, b.ap):>18}{_delta(m.recall, b.recall):>18}"
        )
    return "\n".join(lines)


def score_stats_csv(stats: ScoreChangeStats) -> str:
    return (
        "mean,max,min,std_dev,count\n"
        f"{stats.mean!r},{stats.max!r},{stats.min!r},{stats.std_dev!r},{stats.count}\n"
    )
