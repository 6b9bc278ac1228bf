"""Backbone adapters: run a pretrained detector and normalize its output.

Every adapter yields, per image, a pair (boxes, scores):

* boxes: (N, 4) float array, (x, y, w, h) pixels, positive sizes only
* scores: (N, C) float array over the MODEL's class-name space, each entry
  in [0, 1]

The two supported architectures differ in what they expose, which is why
two densification policies exist:

* the two-stage detector emits a filtered per-class list (one label+score
  per box after its internal NMS), densified by scattering the single
  score into an otherwise-zero vector (``per_class_lists``);
* the transformer detector exposes full class logits per query, densified
  by a softmax over the class axis (``logits_softmax``).
"""

from __future__ import annotations

import logging

import numpy as np
import torch

logger = logging.getLogger("exporter")

# 91-entry COCO category table indexed by model class id; index 0 is the
# two-stage detector's background slot, "N/A" are ids unused by COCO.
COCO91_NAMES = [
    "__background__", "person", "bicycle", "car", "motorcycle", "airplane",
    "bus", "train", "truck", "boat", "traffic light", "fire hydrant", "N/A",
    "stop sign", "parking meter", "bench", "bird", "cat", "dog", "horse",
    "sheep", "cow", "elephant", "bear", "zebra", "giraffe", "N/A", "backpack",
    "umbrella", "N/A", "N/A", "handbag", "tie", "suitcase", "frisbee", "skis",
    "snowboard", "sports ball", "kite", "baseball bat", "baseball glove",
    "skateboard", "surfboard", "tennis racket", "bottle", "N/A", "wine glass",
    "cup", "fork", "knife", "spoon", "bowl", "banana", "apple", "sandwich",
    "orange", "broccoli", "carrot", "hot dog", "pizza", "donut", "cake",
    "chair", "couch", "potted plant", "bed", "N/A", "dining table", "N/A",
    "N/A", "toilet", "N/A", "tv", "laptop", "mouse", "remote", "keyboard",
    "cell phone", "microwave", "oven", "toaster", "sink", "refrigerator",
    "N/A", "book", "clock", "vase", "scissors", "teddy bear", "hair drier",
    "toothbrush",
]

DENSIFY_LOGITS = "logits_softmax"
DENSIFY_LISTS = "per_class_lists"


def _xyxy_to_xywh(boxes: np.ndarray) -> np.ndarray:
    out = boxes.copy()
    out[:, 2] = boxes[:, 2] - boxes[:, 0]
    out[:, 3] = boxes[:, 3] - boxes[:, 1]
    return out


def _drop_degenerate(boxes: np.ndarray, scores: np.ndarray):
    keep = (boxes[:, 2] > 0) & (boxes[:, 3] > 0) & np.isfinite(boxes).all(axis=1)
    dropped = int(len(keep) - keep.sum())
    return boxes[keep], scores[keep], dropped


class FrcnnBackbone:
    """Region-proposal two-stage detector (torchvision Faster R-CNN).

    Its post-processing emits one (box, label, score) triple per surviving
    proposal, so only ``per_class_lists`` densification is possible.
    """

    name = "frcnn"
    densify = DENSIFY_LISTS

    def __init__(self, weights: str = "download", device: str = "cpu",
                 min_size: int = 800, max_size: int = 1333, seed: int = 0):
        from torchvision.models.detection import (
            FasterRCNN_ResNet50_FPN_Weights,
            fasterrcnn_resnet50_fpn,
        )

        self.class_names = list(COCO91_NAMES)
        torch.manual_seed(seed)
        if weights == "download":
            w = FasterRCNN_ResNet50_FPN_Weights.COCO_V1
            self.class_names = ["__background__"] + list(w.meta["categories"])[1:]
            model = fasterrcnn_resnet50_fpn(weights=w, min_size=min_size, max_size=max_size)
        elif weights == "none":
            model = fasterrcnn_resnet50_fpn(
                weights=None, weights_backbone=None,
                min_size=min_size, max_size=max_size, num_classes=len(COCO91_NAMES),
            )
        else:
            model = fasterrcnn_resnet50_fpn(
                weights=None, weights_backbone=None,
                min_size=min_size, max_size=max_size, num_classes=len(COCO91_NAMES),
            )
            state = torch.load(weights, map_location="cpu", weights_only=True)
            model.load_state_dict(state)
        self.device = torch.device(device)
        self.model = model.eval().to(self.device)

    @torch.no_grad()
    def infer(self, image: np.ndarray):
        tensor = torch.from_numpy(image.astype(np.float32) / 255.0).permute(2, 0, 1)
        out = self.model([tensor.to(self.device)])[0]
        boxes = _xyxy_to_xywh(out["boxes"].cpu().numpy().astype(np.float64))
        labels = out["labels"].cpu().numpy()
        raw_scores = out["scores"].cpu().numpy()
        dense = np.zeros((len(labels), len(self.class_names)))
        for row, (label, score) in enumerate(zip(labels, raw_scores)):
            dense[row, int(label)] = float(np.clip(score, 0.0, 1.0))
        return _drop_degenerate(boxes, dense)


class DetrBackbone:
    """Transformer detector (DETR); every query carries full class logits."""

    name = "detr"
    densify = DENSIFY_LOGITS

    def __init__(self, weights: str = "download", device: str = "cpu",
                 min_size: int = 800, max_size: int = 1333, seed: int = 0):
        from transformers import (
            DetrConfig,
            DetrForObjectDetection,
            DetrImageProcessor,
            ResNetConfig,
        )

        torch.manual_seed(seed)
        if weights == "download":
            model = DetrForObjectDetection.from_pretrained("facebook/detr-resnet-50")
            self.processor = DetrImageProcessor.from_pretrained("facebook/detr-resnet-50")
            id2label = model.config.id2label
            n = max(id2label) + 1
            self.class_names = [id2label.get(i, "N/A") for i in range(n)]
        else:
            config = DetrConfig(
                use_timm_backbone=False,
                backbone_config=ResNetConfig(out_features=["stage4"]),
                num_labels=len(COCO91_NAMES),
            )
            model = DetrForObjectDetection(config)
            if weights != "none":
                state = torch.load(weights, map_location="cpu", weights_only=True)
                model.load_state_dict(state)
            self.processor = DetrImageProcessor(
                do_resize=True, size={"shortest_edge": min_size, "longest_edge": max_size}
            )
            # label ids line up with the COCO table; index 0 stays unused
            self.class_names = list(COCO91_NAMES)
        self.device = torch.device(device)
        self.model = model.eval().to(self.device)

    @torch.no_grad()
    def infer(self, image: np.ndarray):
        height, width = image.shape[:2]
        inputs = self.processor(images=image, return_tensors="pt").to(self.device)
        out = self.model(**inputs)
        # softmax over classes + no-object; the no-object column is dropped,
        # leaving per-class probabilities in [0, 1]
        probs = out.logits.softmax(-1)[0, :, :-1].cpu().numpy().astype(np.float64)
        boxes_cxcywh = out.pred_boxes[0].cpu().numpy().astype(np.float64)
        boxes = np.empty_like(boxes_cxcywh)
        boxes[:, 0] = (boxes_cxcywh[:, 0] - boxes_cxcywh[:, 2] / 2.0) * width
        boxes[:, 1] = (boxes_cxcywh[:, 1] - boxes_cxcywh[:, 3] / 2.0) * height
        boxes[:, 2] = boxes_cxcywh[:, 2] * width
        boxes[:, 3] = boxes_cxcywh[:, 3] * height
        return _drop_degenerate(boxes, np.clip(probs, 0.0, 1.0))


BACKBONES = {"frcnn": FrcnnBackbone, "detr": DetrBackbone}


def load_backbone(name: str, **kwargs):
    if name not in BACKBONES:
        raise ValueError(f"unsupported model {name!r}; choose from {sorted(BACKBONES)}")
    try:
        return BACKBONES[name](**kwargs)
    except Exception as exc:  # model load failure is a hard error
        raise RuntimeError(f"failed to load backbone {name!r}: {exc}") from exc
