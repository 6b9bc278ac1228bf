"""Detection data model and interchange formats.

The engine is backbone-agnostic: any detector that can emit the detections
interchange JSON (one dense per-class score vector per box) can feed it.

Interchange formats:

* Detections: ``{"vocabulary": [...], "images": [{"image_id": ..., "width": W,
  "height": H, "detections": [{"bbox": [x, y, w, h], "scores": [...]}]}]}``
* Ground truth: COCO-style instances JSON; only ``images``, ``annotations``
  (``bbox``, ``category_id``, ``image_id``) and ``categories`` (``id``,
  ``name``) are read.
* Vocabulary: ``{"labels": [...], "concept_map": {...}, "background": ...}``
  where ``concept_map`` and ``background`` are optional.

Boxes are (x, y, w, h) in pixels, top-left corner plus width/height.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError, ValidationError, VocabularyMismatchError


@dataclass(frozen=True)
class LabelVocabulary:
    """Ordered class names; index is the class id."""

    labels: tuple[str, ...]
    concept_map: dict[str, str] | None = None
    background: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if not self.labels:
            raise ValidationError("vocabulary must contain at least one label")
        if len(set(self.labels)) != len(self.labels):
            raise ValidationError("vocabulary labels must be unique")
        if any(not lbl for lbl in self.labels):
            raise ValidationError("vocabulary labels must be non-empty strings")
        if self.concept_map is not None and set(self.concept_map) != set(self.labels):
            raise ValidationError("concept_map keys must equal the label set")
        if self.background is not None and self.background not in self.labels:
            raise ValidationError(f"background class {self.background!r} not in labels")

    def __len__(self) -> int:
        return len(self.labels)

    def index_of(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise VocabularyMismatchError(f"unknown class {label!r}") from None

    @property
    def background_index(self) -> int | None:
        return None if self.background is None else self.labels.index(self.background)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box: top-left corner, width and height in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h)):
            raise ValidationError(f"box coordinates must be finite: {self}")
        if self.w <= 0 or self.h <= 0:
            raise ValidationError(f"box must have positive width and height: {self}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w, self.h], dtype=np.float64)

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "BoundingBox":
        return cls(x1, y1, x2 - x1, y2 - y1)


@dataclass(frozen=True, eq=False)
class Detection:
    """One box plus the backbone's full per-class score vector."""

    box: BoundingBox
    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        object.__setattr__(self, "scores", scores)
        scores.flags.writeable = False

    def __eq__(self, other) -> bool:
        if not isinstance(other, Detection):
            return NotImplemented
        return self.box == other.box and np.array_equal(self.scores, other.scores)

    def __hash__(self):
        return hash((self.box, self.scores.tobytes()))


@dataclass(frozen=True)
class ImageDetections:
    """All detections of one image."""

    image_id: str
    image_width: int
    image_height: int
    detections: tuple[Detection, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "detections", tuple(self.detections))
        if not self.image_id:
            raise ValidationError("image_id must be non-empty")


@dataclass(frozen=True)
class GroundTruthInstance:
    """One annotated object instance."""

    image_id: str
    box: BoundingBox
    class_id: int


def ranking_score(det: Detection, vocab: LabelVocabulary) -> float:
    """Max class score, ignoring a declared background class."""
    bg = vocab.background_index
    if bg is None:
        return float(det.scores.max()) if det.scores.size else 0.0
    kept = np.delete(det.scores, bg)
    return float(kept.max()) if kept.size else 0.0


def predicted_class(det: Detection, vocab: LabelVocabulary) -> int:
    """Argmax class id, ignoring a declared background class; ties go to the lowest id."""
    bg = vocab.background_index
    scores = det.scores
    if bg is None:
        return int(scores.argmax())
    masked = scores.copy()
    masked[bg] = -np.inf
    return int(masked.argmax())


def top_k_by_score(dets: ImageDetections, k: int, vocab: LabelVocabulary | None = None) -> ImageDetections:
    """Keep the k highest-ranked detections, preserving original order.

    Ranking is by max class score (background excluded when the vocabulary
    declares one); ties keep the earlier detection.
    """
    if k < 0:
        raise ValidationError("k must be >= 0")
    if len(dets.detections) <= k:
        return dets
    if vocab is None:
        scores = [float(d.scores.max()) if d.scores.size else 0.0 for d in dets.detections]
    else:
        scores = [ranking_score(d, vocab) for d in dets.detections]
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    kept = sorted(order[:k])
    return ImageDetections(
        image_id=dets.image_id,
        image_width=dets.image_width,
        image_height=dets.image_height,
        detections=tuple(dets.detections[i] for i in kept),
    )


# ---------------------------------------------------------------------------
# vocabulary I/O
# ---------------------------------------------------------------------------


def load_vocabulary(path: str | Path) -> LabelVocabulary:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", path=str(path)) from exc
    if not isinstance(raw, dict) or "labels" not in raw:
        raise ParseError("vocabulary file must be an object with a 'labels' array", path=str(path))
    return LabelVocabulary(
        labels=tuple(raw["labels"]),
        concept_map=raw.get("concept_map"),
        background=raw.get("background"),
    )


def write_vocabulary(vocab: LabelVocabulary, path: str | Path) -> None:
    data: dict = {"labels": list(vocab.labels)}
    if vocab.concept_map is not None:
        data["concept_map"] = dict(vocab.concept_map)
    if vocab.background is not None:
        data["background"] = vocab.background
    Path(path).write_text(json.dumps(data, indent=2) + "\n")


# ---------------------------------------------------------------------------
# detections interchange I/O
# ---------------------------------------------------------------------------


def load_detections(path: str | Path, vocab: LabelVocabulary) -> list[ImageDetections]:
    """Read the detections interchange file, validating against the vocabulary."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", path=str(path)) from exc
    if not isinstance(raw, dict) or "images" not in raw:
        raise ParseError("detections file must be an object with an 'images' array", path=str(path))
    file_vocab = raw.get("vocabulary")
    if file_vocab is not None and tuple(file_vocab) != vocab.labels:
        raise VocabularyMismatchError(
            f"file vocabulary {list(file_vocab)!r} does not match expected {list(vocab.labels)!r}"
        )
    n_labels = len(vocab)
    images: list[ImageDetections] = []
    for img_no, img in enumerate(raw["images"]):
        try:
            image_id = str(img["image_id"])
            width = int(img["width"])
            height = int(img["height"])
            records = img.get("detections", [])
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed image record: {exc}", path=str(path), record=img_no) from exc
        dets = []
        for det_no, rec in enumerate(records):
            try:
                bbox = rec["bbox"]
                scores = rec["scores"]
            except (KeyError, TypeError) as exc:
                raise ParseError(
                    f"malformed detection record: {exc}", path=str(path), record=f"{img_no}/{det_no}"
                ) from exc
            if len(scores) != n_labels:
                raise VocabularyMismatchError(
                    f"image {image_id!r} detection {det_no}: score vector has length "
                    f"{len(scores)}, vocabulary has {n_labels} classes"
                )
            arr = np.asarray(scores, dtype=np.float64)
            if np.any(arr < 0.0) or np.any(arr > 1.0) or not np.all(np.isfinite(arr)):
                bad = int(np.argmax((arr < 0.0) | (arr > 1.0) | ~np.isfinite(arr)))
                raise ValidationError(
                    f"image {image_id!r} detection {det_no}: score[{bad}]={arr[bad]!r} outside [0, 1]"
                )
            dets.append(Detection(box=BoundingBox(*[float(v) for v in bbox]), scores=arr))
        images.append(ImageDetections(image_id, width, height, tuple(dets)))
    return images


def write_detections(images: Sequence[ImageDetections], vocab: LabelVocabulary, path: str | Path) -> None:
    """Serialize detections; floats keep full (shortest round-trip) precision."""
    payload = {
        "vocabulary": list(vocab.labels),
        "images": [
            {
                "image_id": img.image_id,
                "width": img.image_width,
                "height": img.image_height,
                "detections": [
                    {
                        "bbox": [d.box.x, d.box.y, d.box.w, d.box.h],
                        "scores": [float(s) for s in d.scores],
                    }
                    for d in img.detections
                ],
            }
            for img in images
        ],
    }
    Path(path).write_text(json.dumps(payload) + "\n")


# ---------------------------------------------------------------------------
# COCO-style ground truth
# ---------------------------------------------------------------------------


def _coco_image_id(entry: dict) -> str:
    name = entry.get("file_name")
    if name:
        return Path(str(name)).stem
    return str(entry["id"])


def load_ground_truth(path: str | Path, vocab: LabelVocabulary) -> list[GroundTruthInstance]:
    """Read COCO-style instance annotations, resolving category names to vocab ids.

    Image ids become file-name stems when the ``images`` table carries file
    names, otherwise the stringified numeric id.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", path=str(path)) from exc
    if not isinstance(raw, dict) or "annotations" not in raw:
        raise ParseError("ground-truth file must be an object with an 'annotations' array", path=str(path))

    cat_to_class: dict[object, int] = {}
    for cat in raw.get("categories", []):
        name = cat["name"]
        if name not in vocab.labels:
            raise VocabularyMismatchError(f"ground-truth category {name!r} not in vocabulary")
        cat_to_class[cat["id"]] = vocab.index_of(name)

    id_to_image = {img["id"]: _coco_image_id(img) for img in raw.get("images", [])}

    instances: list[GroundTruthInstance] = []
    for ann_no, ann in enumerate(raw["annotations"]):
        try:
            cat_id = ann["category_id"]
            bbox = ann["bbox"]
            img_key = ann["image_id"]
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed annotation: {exc}", path=str(path), record=ann_no) from exc
        if cat_id not in cat_to_class:
            raise VocabularyMismatchError(f"annotation {ann_no}: unknown category_id {cat_id!r}")
        try:
            box = BoundingBox(*[float(v) for v in bbox])
        except ValidationError as exc:
            raise ValidationError(f"annotation {ann_no}: {exc}") from exc
        instances.append(
            GroundTruthInstance(
                image_id=id_to_image.get(img_key, str(img_key)),
                box=box,
                class_id=cat_to_class[cat_id],
            )
        )
    return instances


def vocabulary_from_ground_truth(path: str | Path) -> LabelVocabulary:
    """Build a vocabulary from a COCO file's categories, ordered by category id."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", path=str(path)) from exc
    cats = raw.get("categories")
    if not cats:
        raise ParseError("ground-truth file has no categories", path=str(path))
    ordered = sorted(cats, key=lambda c: c["id"])
    return LabelVocabulary(labels=tuple(c["name"] for c in ordered))


def group_by_image(instances: Iterable[GroundTruthInstance]) -> dict[str, list[GroundTruthInstance]]:
    grouped: dict[str, list[GroundTruthInstance]] = {}
    for inst in instances:
        grouped.setdefault(inst.image_id, []).append(inst)
    return grouped
