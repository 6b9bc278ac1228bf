"""Synthetic dataset builders shared by the CLI and acceptance tests."""

from __future__ import annotations

import json

import numpy as np

LABELS = ("car", "person", "rider", "bicycle")

# co-occurrence structure for ground-truth sampling: each image draws one
# theme and classes within it, so the frequency matrix is far from uniform
THEMES = (
    (0, 0, 1),       # cars with a pedestrian
    (1, 2, 3),       # person, rider, bicycle
    (0, 0, 0, 2, 3), # traffic with a cyclist
)


def synthetic_dataset(seed=0, n_images=20, spurious_rate=0.3):
    """Detections + COCO ground truth payloads for a correlated scene mix.

    Detections carry dense score vectors peaked at the true class with
    noise; a few spurious boxes have flat noisy scores.
    """
    rng = np.random.default_rng(seed)
    n_labels = len(LABELS)
    gt_images, annotations, det_images = [], [], []
    ann_id = 1
    for i in range(n_images):
        image_id = f"img{i:03d}"
        gt_images.append(
            {"id": i + 1, "file_name": f"{image_id}.png", "width": 400, "height": 300}
        )
        theme = THEMES[int(rng.integers(0, len(THEMES)))]
        n_objects = int(rng.integers(1, len(theme) + 1))
        classes = [theme[int(rng.integers(0, len(theme)))] for _ in range(n_objects)]
        detections = []
        for cls in classes:
            x = float(rng.uniform(0, 340))
            y = float(rng.uniform(0, 240))
            w = float(rng.uniform(12, 60))
            h = float(rng.uniform(12, 60))
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": i + 1,
                    "category_id": cls + 1,
                    "bbox": [x, y, w, h],
                }
            )
            ann_id += 1
            scores = rng.uniform(0.0, 0.25, size=n_labels)
            scores[cls] = rng.uniform(0.55, 0.95)
            jitter = rng.uniform(-2.0, 2.0, size=2)
            detections.append(
                {
                    "bbox": [x + float(jitter[0]), y + float(jitter[1]), w, h],
                    "scores": [float(v) for v in scores],
                }
            )
        for _ in range(int(rng.uniform() < spurious_rate)):
            detections.append(
                {
                    "bbox": [float(rng.uniform(0, 300)), float(rng.uniform(0, 200)),
                             float(rng.uniform(5, 30)), float(rng.uniform(5, 30))],
                    "scores": [float(v) for v in rng.uniform(0.05, 0.45, size=n_labels)],
                }
            )
        det_images.append(
            {
                "image_id": image_id,
                "width": 400,
                "height": 300,
                "detections": detections,
            }
        )
    detections_payload = {"vocabulary": list(LABELS), "images": det_images}
    gt_payload = {
        "images": gt_images,
        "annotations": annotations,
        "categories": [{"id": c + 1, "name": name} for c, name in enumerate(LABELS)],
    }
    return detections_payload, gt_payload


def write_dataset(tmp_path, seed=0, n_images=20):
    """Write the synthetic dataset; returns (detections path, gt path)."""
    dets, gt = synthetic_dataset(seed=seed, n_images=n_images)
    det_path = tmp_path / "detections.json"
    gt_path = tmp_path / "ground_truth.json"
    det_path.write_text(json.dumps(dets))
    gt_path.write_text(json.dumps(gt))
    return det_path, gt_path


def write_concept_fixture(tmp_path):
    """A small ConceptNet-style TSV plus a vocabulary with a concept map."""
    lines = [
        "/c/en/car\tRelatedTo\t/c/en/person\t1.0",
        "/c/en/car\tRelatedTo\t/c/en/bicycle\t0.5",
        "/c/en/person\tIsA\t/c/en/rider\t1.5",
        "/c/en/rider\tRelatedTo\t/c/en/bicycle\t2.0",
        "/c/en/car\tAntonym\t/c/en/walk\t1.0",
        "/c/de/auto\tRelatedTo\t/c/en/car\t1.0",
    ]
    graph_path = tmp_path / "graph.tsv"
    graph_path.write_text("\n".join(lines) + "\n")
    vocab_path = tmp_path / "vocab.json"
    vocab_path.write_text(
        json.dumps(
            {
                "labels": list(LABELS),
                "concept_map": {name: f"/c/en/{name}" for name in LABELS},
            }
        )
    )
    return graph_path, vocab_path
