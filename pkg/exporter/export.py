#!/usr/bin/env python3
"""Run a detection backbone over an image directory and emit the dense
score-vector interchange JSON consumed by the re-optimization engine.

The engine needs a full per-class score vector per box, so each backbone's
native output is densified (see backbones.py) and remapped from the model's
class space onto the evaluation vocabulary by class name. Vocabulary labels
absent from the model keep a zero column; model classes absent from the
vocabulary lose their mass (per-class lists) or their columns (logits).

Usage:
    export.py --model {frcnn|detr} --images DIR --vocab vocab.json --out dets.json
              [--weights download|none|PATH] [--device cpu] [--seed 0]
              [--score-floor 0.0] [--min-size 800] [--max-size 1333]
              [--summary summary.json]

Determinism: given fixed weights (or a fixed --seed for random ones) and
CPU inference, output is reproducible run to run.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from backbones import DENSIFY_LISTS, load_backbone

logger = logging.getLogger("exporter")

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}


@dataclass
class ExportJob:
    model_name: str
    image_dir: Path
    vocab_path: Path
    output: Path
    device: str = "cpu"
    weights: str = "download"
    seed: int = 0
    score_floor: float = 0.0
    min_size: int = 800
    max_size: int = 1333
    summary_path: Path | None = None


@dataclass
class ExportSummary:
    model: str
    densification: str
    images_found: int = 0
    images_exported: int = 0
    skipped_images: list = field(default_factory=list)
    detections_total: int = 0
    per_image_counts: dict = field(default_factory=dict)
    degenerate_boxes_dropped: int = 0
    unmapped_class_detections_dropped: int = 0
    unmapped_vocab_labels: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def load_vocabulary(path: Path) -> list[str]:
    raw = json.loads(path.read_text())
    labels = raw["labels"] if isinstance(raw, dict) else raw
    if not labels or len(set(labels)) != len(labels):
        raise ValueError(f"{path}: labels must be a non-empty unique list")
    return list(labels)


def map_vocabulary(labels: list[str], model_classes: list[str]) -> tuple[np.ndarray, list[str]]:
    """Column index into the model's class space per vocab label (-1 if absent)."""
    lookup = {}
    for idx, name in enumerate(model_classes):
        if name not in ("N/A", "__background__") and name not in lookup:
            lookup[name] = idx
    mapping = np.array([lookup.get(label, -1) for label in labels], dtype=np.int64)
    unmapped = [label for label, idx in zip(labels, mapping) if idx < 0]
    return mapping, unmapped


def remap_scores(dense_model_scores: np.ndarray, mapping: np.ndarray) -> np.ndarray:
    out = np.zeros((dense_model_scores.shape[0], mapping.size))
    for col, src in enumerate(mapping):
        if src >= 0:
            out[:, col] = dense_model_scores[:, src]
    return out


def export_detections(job: ExportJob) -> ExportSummary:
    labels = load_vocabulary(job.vocab_path)
    if not job.image_dir.is_dir():
        raise FileNotFoundError(f"image directory not found: {job.image_dir}")
    backbone = load_backbone(
        job.model_name,
        weights=job.weights,
        device=job.device,
        min_size=job.min_size,
        max_size=job.max_size,
        seed=job.seed,
    )
    mapping, unmapped = map_vocabulary(labels, backbone.class_names)
    summary = ExportSummary(model=backbone.name, densification=backbone.densify,
                            unmapped_vocab_labels=unmapped)
    if unmapped:
        logger.warning("vocabulary labels with no model class: %s", unmapped)

    paths = sorted(
        (p for p in job.image_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES),
        key=lambda p: p.stem,
    )
    summary.images_found = len(paths)
    images_payload = []
    for path in paths:
        try:
            with Image.open(path) as img:
                rgb = np.asarray(img.convert("RGB"))
        except (OSError, UnidentifiedImageError) as exc:
            logger.warning("skipping %s: %s", path.name, exc)
            summary.skipped_images.append(path.name)
            continue
        boxes, model_scores, dropped = backbone.infer(rgb)
        summary.degenerate_boxes_dropped += dropped
        scores = remap_scores(model_scores, mapping)
        if backbone.densify == DENSIFY_LISTS and len(scores):
            # a filtered-list detection whose class is outside the vocabulary
            # densifies to an all-zero vector; drop it rather than emit noise
            keep = scores.max(axis=1) > 0.0
            summary.unmapped_class_detections_dropped += int((~keep).sum())
            boxes, scores = boxes[keep], scores[keep]
        if job.score_floor > 0.0 and len(scores):
            keep = scores.max(axis=1) >= job.score_floor
            boxes, scores = boxes[keep], scores[keep]
        detections = [
            {
                "bbox": [float(v) for v in box],
                "scores": [float(v) for v in row],
            }
            for box, row in zip(boxes, scores)
        ]
        image_id = path.stem
        images_payload.append(
            {
                "image_id": image_id,
                "width": int(rgb.shape[1]),
                "height": int(rgb.shape[0]),
                "detections": detections,
            }
        )
        summary.per_image_counts[image_id] = len(detections)
        summary.detections_total += len(detections)
        summary.images_exported += 1

    job.output.write_text(
        json.dumps({"vocabulary": labels, "images": images_payload}) + "\n"
    )
    logger.info(
        "exported %d/%d images, %d detections -> %s",
        summary.images_exported, summary.images_found, summary.detections_total, job.output,
    )
    if job.summary_path is not None:
        job.summary_path.write_text(json.dumps(summary.to_dict(), indent=2) + "\n")
    return summary


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    parser.add_argument("--model", required=True, choices=["frcnn", "detr"])
    parser.add_argument("--images", required=True, type=Path)
    parser.add_argument("--vocab", required=True, type=Path)
    parser.add_argument("--out", required=True, type=Path)
    parser.add_argument("--weights", default="download",
                        help="'download' (pretrained), 'none' (random init) or a state-dict path")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--score-floor", type=float, default=0.0)
    parser.add_argument("--min-size", type=int, default=800)
    parser.add_argument("--max-size", type=int, default=1333)
    parser.add_argument("--summary", type=Path, default=None)
    parser.add_argument("--log-level", default="info")
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper()), stream=sys.stderr)
    job = ExportJob(
        model_name=args.model,
        image_dir=args.images,
        vocab_path=args.vocab,
        output=args.out,
        device=args.device,
        weights=args.weights,
        seed=args.seed,
        score_floor=args.score_floor,
        min_size=args.min_size,
        max_size=args.max_size,
        summary_path=args.summary,
    )
    try:
        export_detections(job)
    except (FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"export: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
